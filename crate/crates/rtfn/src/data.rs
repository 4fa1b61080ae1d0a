//! Dataset loading, normalization, and synthetic fixtures.
//!
//! Two on-disk formats are supported: the univariate tab-separated format
//! (`label<TAB>v1<TAB>...<TAB>vL`, one series per line) and a long-format
//! multivariate CSV with header `series_id,dim,label,v1,...,vL` where every
//! series id appears once per dimension. Both are UTF-8 with LF or CRLF
//! line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Equal-length series with optional labels, stored as `[N,C,L]`.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    pub x: Tensor,
    /// Contiguous labels in `[0, num_classes)`, when present.
    pub y: Option<Vec<usize>>,
    pub num_classes: usize,
    pub name: String,
    pub split: Split,
    /// Label values as they appeared in the source file, for round-trip
    /// writes.
    pub orig_labels: Option<Vec<f64>>,
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn length(&self) -> usize {
        self.x.shape()[2]
    }

    /// Copy the selected samples into a `[idx.len(), C, L]` batch.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Option<Vec<usize>>)> {
        let (n, c, l) = self.x.dims3("gather")?;
        let stride = c * l;
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            if i >= n {
                return Err(Error::Data(format!("sample index {i} out of range for {n}")));
            }
            data.extend_from_slice(&self.x.data()[i * stride..(i + 1) * stride]);
        }
        let labels = self
            .y
            .as_ref()
            .map(|y| idx.iter().map(|&i| y[i]).collect());
        Ok((Tensor::new(vec![idx.len(), c, l], data)?, labels))
    }
}

/// Stable mapping from raw label values to contiguous class indices:
/// sorted unique originals map to `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    sorted: Vec<f64>,
}

impl LabelMap {
    pub fn from_raw(raw: &[f64]) -> Self {
        let mut sorted = raw.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
        sorted.dedup();
        Self { sorted }
    }

    pub fn classes(&self) -> usize {
        self.sorted.len()
    }

    pub fn index_of(&self, raw: f64) -> Option<usize> {
        self.sorted
            .binary_search_by(|v| v.partial_cmp(&raw).expect("labels are finite"))
            .ok()
    }

    pub fn original(&self, index: usize) -> Option<f64> {
        self.sorted.get(index).copied()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}

fn parse_field(path: &Path, line_no: usize, token: &str, what: &str) -> Result<f64> {
    let v: f64 = token.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("non-numeric {what} token {token:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("non-finite {what} token {token:?}"),
        });
    }
    Ok(v)
}

/// Parse a univariate TSV file into raw labels plus a `[N,1,L]` tensor.
fn parse_ucr_tsv(path: &Path) -> Result<(Vec<f64>, Tensor)> {
    let lines = read_lines(path);
    let lines = lines?;
    let mut raw_labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut series_len: Option<usize> = None;

    for (i, line) in lines.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty line".into(),
            });
        }
        let mut fields = line.split('\t');
        let label_tok = fields.next().expect("split yields at least one field");
        raw_labels.push(parse_field(path, line_no, label_tok, "label")?);
        let start = values.len();
        for tok in fields {
            values.push(parse_field(path, line_no, tok, "value")?);
        }
        let this_len = values.len() - start;
        if this_len == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "series has no values".into(),
            });
        }
        match series_len {
            None => series_len = Some(this_len),
            Some(l) if l != this_len => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("ragged row: expected {l} values, found {this_len}"),
                })
            }
            _ => {}
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty file".into(),
        });
    }
    let l = series_len.expect("nonempty");
    let n = raw_labels.len();
    Ok((raw_labels, Tensor::new(vec![n, 1, l], values)?))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Load a univariate TSV file; labels are remapped to `[0,K)` by sorted
/// order of the values appearing in this file.
pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let (raw, x) = parse_ucr_tsv(path)?;
    let map = LabelMap::from_raw(&raw);
    finish_labeled(path, raw, x, &map)
}

/// Load a univariate TSV file reusing an existing label mapping (the train
/// split's); a label absent from the map is an error.
pub fn load_ucr_tsv_with_map(path: impl AsRef<Path>, map: &LabelMap) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let (raw, x) = parse_ucr_tsv(path)?;
    finish_labeled(path, raw, x, map)
}

fn finish_labeled(path: &Path, raw: Vec<f64>, x: Tensor, map: &LabelMap) -> Result<SeriesDataset> {
    let mut y = Vec::with_capacity(raw.len());
    for (i, &r) in raw.iter().enumerate() {
        y.push(map.index_of(r).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("label {r} not present in the training label map"),
        })?);
    }
    Ok(SeriesDataset {
        x,
        y: Some(y),
        num_classes: map.classes(),
        name: dataset_name(path),
        split: Split::Train,
        orig_labels: Some(raw),
    })
}

/// Load a train/test TSV pair, remapping test labels through the train map.
pub fn load_ucr_pair(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<(SeriesDataset, SeriesDataset)> {
    let train = load_ucr_tsv(train_path)?;
    let map = LabelMap::from_raw(train.orig_labels.as_ref().expect("loader sets originals"));
    let mut test = load_ucr_tsv_with_map(test_path, &map)?;
    test.split = Split::Test;
    if test.length() != train.length() || test.channels() != train.channels() {
        return Err(Error::Data(format!(
            "train/test shape mismatch: [{},{}] vs [{},{}]",
            train.channels(),
            train.length(),
            test.channels(),
            test.length()
        )));
    }
    Ok((train, test))
}

/// Write a dataset back to the univariate TSV format using the original
/// label values. Values print in shortest round-trip form, so a reload
/// reproduces them exactly.
pub fn write_ucr_tsv(ds: &SeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds.channels() != 1 {
        return Err(Error::Data(format!(
            "TSV format is univariate; dataset has {} channels",
            ds.channels()
        )));
    }
    let (n, _, l) = ds.x.dims3("write_ucr_tsv")?;
    let mut out = String::new();
    for i in 0..n {
        let label = match (&ds.orig_labels, &ds.y) {
            (Some(raw), _) => raw[i],
            (None, Some(y)) => y[i] as f64,
            (None, None) => {
                return Err(Error::Data("cannot write an unlabeled dataset as TSV".into()))
            }
        };
        write!(out, "{label}").expect("string write");
        for t in 0..l {
            write!(out, "\t{}", ds.x.data()[i * l + t]).expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a long-format multivariate CSV (`series_id,dim,label,v1,...,vL`).
/// Series keep first-appearance order; the series×dim grid must be
/// complete and labels consistent within one series id.
pub fn load_multivariate_csv(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let (order, rows, l) = parse_multivariate_rows(path)?;

    let raw: Vec<f64> = order.iter().map(|id| rows[id].label).collect();
    let map = LabelMap::from_raw(&raw);
    assemble_multivariate(path, order, rows, l, &map)
}

/// As [`load_multivariate_csv`], reusing an existing label map.
pub fn load_multivariate_csv_with_map(
    path: impl AsRef<Path>,
    map: &LabelMap,
) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let (order, rows, l) = parse_multivariate_rows(path)?;
    assemble_multivariate(path, order, rows, l, map)
}

struct MultiSeries {
    label: f64,
    dims: BTreeMap<usize, Vec<f64>>,
    first_line: usize,
}

type MultiRows = (Vec<String>, BTreeMap<String, MultiSeries>, usize);

fn parse_multivariate_rows(path: &Path) -> Result<MultiRows> {
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    let (_, header) = iter.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() < 4 || head[0] != "series_id" || head[1] != "dim" || head[2] != "label" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "header must be series_id,dim,label,v1,...,vL".into(),
        });
    }
    let l = head.len() - 3;

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, MultiSeries> = BTreeMap::new();
    for (i, line) in iter {
        let line_no = i + 1;
        if line.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty line".into(),
            });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + l {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected {} fields, found {}", 3 + l, fields.len()),
            });
        }
        let id = fields[0].trim().to_string();
        let dim: usize = fields[1].trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("bad dim {:?}", fields[1]),
        })?;
        let label = parse_field(path, line_no, fields[2], "label")?;
        let mut vals = Vec::with_capacity(l);
        for tok in &fields[3..] {
            vals.push(parse_field(path, line_no, tok, "value")?);
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            MultiSeries {
                label,
                dims: BTreeMap::new(),
                first_line: line_no,
            }
        });
        if entry.label != label {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!(
                    "series {id} has inconsistent labels {} and {label}",
                    entry.label
                ),
            });
        }
        if entry.dims.insert(dim, vals).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("duplicate (series {id}, dim {dim}) row"),
            });
        }
    }
    if order.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no data rows".into(),
        });
    }
    Ok((order, rows, l))
}

fn assemble_multivariate(
    path: &Path,
    order: Vec<String>,
    rows: BTreeMap<String, MultiSeries>,
    l: usize,
    map: &LabelMap,
) -> Result<SeriesDataset> {
    let c = 1 + rows
        .values()
        .flat_map(|s| s.dims.keys().copied())
        .max()
        .expect("nonempty");
    let n = order.len();
    let mut data = vec![0.0; n * c * l];
    let mut raw = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (si, id) in order.iter().enumerate() {
        let series = &rows[id];
        for d in 0..c {
            let vals = series.dims.get(&d).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: series.first_line,
                msg: format!("series {id} is missing dim {d}"),
            })?;
            data[(si * c + d) * l..(si * c + d + 1) * l].copy_from_slice(vals);
        }
        raw.push(series.label);
        y.push(map.index_of(series.label).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: series.first_line,
            msg: format!("label {} not present in the training label map", series.label),
        })?);
    }
    Ok(SeriesDataset {
        x: Tensor::new(vec![n, c, l], data)?,
        y: Some(y),
        num_classes: map.classes(),
        name: dataset_name(path),
        split: Split::Train,
        orig_labels: Some(raw),
    })
}

/// Per-channel standardization statistics, computed on the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standardize per channel: `(x − mean)/std`. With `stats` omitted the
/// statistics come from this (train) split and are returned for reuse on
/// the test split; a constant channel gets std 1 so it maps to zero.
pub fn znormalize(
    ds: &SeriesDataset,
    stats: Option<&NormalizationStats>,
) -> Result<(SeriesDataset, NormalizationStats)> {
    let (n, c, l) = ds.x.dims3("znormalize")?;
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != c || s.std.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "znormalize",
                    lhs: vec![c],
                    rhs: vec![s.mean.len()],
                });
            }
            s.clone()
        }
        None => {
            let m = (n * l) as f64;
            let mut mean = vec![0.0; c];
            let mut std = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for i in 0..n {
                    sum += ds.x.data()[(i * c + ch) * l..(i * c + ch + 1) * l]
                        .iter()
                        .sum::<f64>();
                }
                let mu = sum / m;
                let mut sq = 0.0;
                for i in 0..n {
                    sq += ds.x.data()[(i * c + ch) * l..(i * c + ch + 1) * l]
                        .iter()
                        .map(|&v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                let sd = (sq / m).sqrt();
                std[ch] = if sd > 0.0 { sd } else { 1.0 };
            }
            NormalizationStats { mean, std }
        }
    };
    let mut data = ds.x.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let inv = 1.0 / stats.std[ch];
            let mu = stats.mean[ch];
            for v in &mut data[(i * c + ch) * l..(i * c + ch + 1) * l] {
                *v = (*v - mu) * inv;
            }
        }
    }
    let out = SeriesDataset {
        x: Tensor::new(vec![n, c, l], data)?,
        y: ds.y.clone(),
        num_classes: ds.num_classes,
        name: ds.name.clone(),
        split: ds.split,
        orig_labels: ds.orig_labels.clone(),
    };
    Ok((out, stats))
}

/// Synthetic dataset family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Feature-space Gaussians lifted to constant series; labeled.
    Blobs,
    /// Unlabeled mixtures of three sinusoids.
    Sinusoids,
    /// Two balanced classes of sinusoids whose frequencies differ by 2x.
    Separable,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "sinusoids" => Ok(Self::Sinusoids),
            "separable" => Ok(Self::Separable),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub length: usize,
    pub channels: usize,
    /// Blob count for `Blobs`; ignored by the sinusoid kinds.
    pub classes: usize,
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            length: 32,
            channels: 1,
            classes: 2,
            noise: 0.05,
        }
    }
}

/// Seeded synthetic datasets used by the tests and the CLI demos.
pub fn make_synthetic(
    kind: SyntheticKind,
    n: usize,
    cfg: &SyntheticConfig,
    rng: &mut Rng,
) -> Result<SeriesDataset> {
    if n == 0 || cfg.length == 0 || cfg.channels == 0 {
        return Err(Error::Config("synthetic datasets need n, length, channels > 0".into()));
    }
    let (c, l) = (cfg.channels, cfg.length);
    let mut data = vec![0.0; n * c * l];
    match kind {
        SyntheticKind::Separable => {
            // Class 0 completes 2 cycles, class 1 completes 4. Phases stay
            // within [0, π/3) so same-class curves remain closer in
            // Euclidean distance than cross-class ones.
            let half = n.div_ceil(2);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let class = usize::from(i >= half);
                y.push(class);
                let cycles = if class == 0 { 2.0 } else { 4.0 };
                for ch in 0..c {
                    let phase = rng.uniform(0.0, std::f64::consts::PI / 3.0);
                    for t in 0..l {
                        let arg =
                            2.0 * std::f64::consts::PI * cycles * t as f64 / l as f64 + phase;
                        data[(i * c + ch) * l + t] = arg.sin() + rng.normal(0.0, cfg.noise);
                    }
                }
            }
            Ok(SeriesDataset {
                x: Tensor::new(vec![n, c, l], data)?,
                y: Some(y),
                num_classes: 2,
                name: "separable".into(),
                split: Split::Train,
                orig_labels: None,
            })
        }
        SyntheticKind::Sinusoids => {
            let freqs = [1.0, 2.0, 4.0];
            for i in 0..n {
                for ch in 0..c {
                    let amps: Vec<f64> = freqs.iter().map(|_| rng.uniform(0.5, 1.0)).collect();
                    let phases: Vec<f64> =
                        freqs.iter().map(|_| rng.uniform(0.0, 2.0 * std::f64::consts::PI)).collect();
                    for t in 0..l {
                        let mut v = 0.0;
                        for (fi, &f) in freqs.iter().enumerate() {
                            v += amps[fi]
                                * (2.0 * std::f64::consts::PI * f * t as f64 / l as f64
                                    + phases[fi])
                                    .sin();
                        }
                        data[(i * c + ch) * l + t] = v + rng.normal(0.0, cfg.noise);
                    }
                }
            }
            Ok(SeriesDataset {
                x: Tensor::new(vec![n, c, l], data)?,
                y: None,
                num_classes: freqs.len(),
                name: "sinusoids".into(),
                split: Split::Train,
                orig_labels: None,
            })
        }
        SyntheticKind::Blobs => {
            let k = cfg.classes.max(1);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let class = i * k / n; // balanced blocks
                y.push(class);
                for ch in 0..c {
                    // Centers 10σ apart along every coordinate.
                    let v = 10.0 * class as f64 + rng.normal(0.0, 1.0);
                    for t in 0..l {
                        data[(i * c + ch) * l + t] = v;
                    }
                }
            }
            Ok(SeriesDataset {
                x: Tensor::new(vec![n, c, l], data)?,
                y: Some(y),
                num_classes: k,
                name: "blobs".into(),
                split: Split::Train,
                orig_labels: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_temp(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn minimal_tsv_file() {
        let f = write_temp("1\t0.5\t0.6\n2\t0.1\t0.2\n");
        let ds = load_ucr_tsv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.length(), 2);
        assert_eq!(ds.channels(), 1);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.y.as_ref().unwrap(), &[0, 1]);
    }

    #[test]
    fn tsv_crlf_tolerated() {
        let f = write_temp("1\t0.5\t0.6\r\n2\t0.1\t0.2\r\n");
        let ds = load_ucr_tsv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.x.data()[3], 0.2);
    }

    #[test]
    fn tsv_label_remap_is_sorted_and_stable() {
        let f = write_temp("5\t1.0\n-1\t2.0\n5\t3.0\n2\t4.0\n");
        let ds = load_ucr_tsv(f.path()).unwrap();
        // Sorted uniques -1, 2, 5 map to 0, 1, 2.
        assert_eq!(ds.y.as_ref().unwrap(), &[2, 0, 2, 1]);
        assert_eq!(ds.num_classes, 3);
    }

    #[test]
    fn tsv_ragged_row_names_line() {
        let f = write_temp("1\t0.5\t0.6\n2\t0.1\n");
        match load_ucr_tsv(f.path()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("ragged"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tsv_non_numeric_token_names_line() {
        let f = write_temp("1\t0.5\n2\tabc\n");
        match load_ucr_tsv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tsv_nan_token_rejected() {
        let f = write_temp("1\tNaN\n");
        assert!(load_ucr_tsv(f.path()).is_err());
    }

    #[test]
    fn tsv_empty_file_rejected() {
        let f = write_temp("");
        assert!(load_ucr_tsv(f.path()).is_err());
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let mut rng = Rng::with_stream(1, rng::STREAM_DATA);
        let mut content = String::new();
        for i in 0..5 {
            content.push_str(&format!("{}", (i % 2) + 1));
            for _ in 0..7 {
                content.push_str(&format!("\t{}", rng.uniform(-3.0, 3.0)));
            }
            content.push('\n');
        }
        let f = write_temp(&content);
        let ds = load_ucr_tsv(f.path()).unwrap();
        let out = NamedTempFile::new().unwrap();
        write_ucr_tsv(&ds, out.path()).unwrap();
        let ds2 = load_ucr_tsv(out.path()).unwrap();
        assert_eq!(ds.x, ds2.x);
        assert_eq!(ds.orig_labels, ds2.orig_labels);
    }

    #[test]
    fn unseen_test_label_is_an_error() {
        let train = write_temp("1\t0.5\n2\t0.7\n");
        let test = write_temp("3\t0.9\n");
        assert!(load_ucr_pair(train.path(), test.path()).is_err());
    }

    #[test]
    fn multivariate_minimal() {
        let f = write_temp("series_id,dim,label,v1,v2,v3\ns0,0,1,1.0,2.0,3.0\ns0,1,1,4.0,5.0,6.0\n");
        let ds = load_multivariate_csv(f.path()).unwrap();
        assert_eq!(ds.x.shape(), &[1, 2, 3]);
        assert_eq!(ds.x.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn multivariate_basic_motions_shape() {
        // 40 series x 6 dims x length 100, 4 classes.
        let mut content = String::from("series_id,dim,label");
        for t in 1..=100 {
            content.push_str(&format!(",v{t}"));
        }
        content.push('\n');
        let mut rng = Rng::with_stream(2, rng::STREAM_DATA);
        for s in 0..40 {
            let label = s % 4;
            for d in 0..6 {
                content.push_str(&format!("s{s},{d},{label}"));
                for _ in 0..100 {
                    content.push_str(&format!(",{:.4}", rng.uniform(-1.0, 1.0)));
                }
                content.push('\n');
            }
        }
        let f = write_temp(&content);
        let ds = load_multivariate_csv(f.path()).unwrap();
        assert_eq!(ds.x.shape(), &[40, 6, 100]);
        assert_eq!(ds.num_classes, 4);
    }

    #[test]
    fn multivariate_missing_dim_names_series() {
        let f = write_temp("series_id,dim,label,v1\ns0,0,1,1.0\ns1,0,1,1.0\ns1,1,1,2.0\n");
        match load_multivariate_csv(f.path()) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("s0"), "{msg}"),
            other => panic!("expected completeness error, got {other:?}"),
        }
    }

    #[test]
    fn multivariate_inconsistent_label_rejected() {
        let f = write_temp("series_id,dim,label,v1\ns0,0,1,1.0\ns0,1,2,2.0\n");
        assert!(load_multivariate_csv(f.path()).is_err());
    }

    #[test]
    fn znormalize_train_stats() {
        let mut rng = Rng::with_stream(3, rng::STREAM_DATA);
        let ds = make_synthetic(SyntheticKind::Sinusoids, 8, &SyntheticConfig::default(), &mut rng)
            .unwrap();
        let (norm, stats) = znormalize(&ds, None).unwrap();
        let (n, c, l) = norm.x.dims3("t").unwrap();
        for ch in 0..c {
            let mut vals = Vec::new();
            for i in 0..n {
                vals.extend_from_slice(&norm.x.data()[(i * c + ch) * l..(i * c + ch + 1) * l]);
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd =
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
        assert_eq!(stats.mean.len(), c);
    }

    #[test]
    fn znormalize_constant_channel_goes_to_zero() {
        let ds = SeriesDataset {
            x: Tensor::full(&[3, 1, 4], 5.0),
            y: None,
            num_classes: 1,
            name: "const".into(),
            split: Split::Train,
            orig_labels: None,
        };
        let (norm, stats) = znormalize(&ds, None).unwrap();
        assert!(norm.x.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.std, vec![1.0]);
    }

    #[test]
    fn znormalize_reusing_train_stats_leaves_test_shifted() {
        let mut rng = Rng::with_stream(4, rng::STREAM_DATA);
        let train =
            make_synthetic(SyntheticKind::Sinusoids, 8, &SyntheticConfig::default(), &mut rng)
                .unwrap();
        let mut test =
            make_synthetic(SyntheticKind::Sinusoids, 8, &SyntheticConfig::default(), &mut rng)
                .unwrap();
        // Shift the test split so its own mean is far from the train mean.
        for v in test.x.data_mut() {
            *v += 3.0;
        }
        let (_, stats) = znormalize(&train, None).unwrap();
        let (test_norm, _) = znormalize(&test, Some(&stats)).unwrap();
        let m = test_norm.x.data().iter().sum::<f64>() / test_norm.x.numel() as f64;
        assert!(m.abs() > 0.5, "test mean should stay off-zero, got {m}");
    }

    #[test]
    fn znormalize_channel_mismatch() {
        let ds = SeriesDataset {
            x: Tensor::zeros(&[2, 2, 3]),
            y: None,
            num_classes: 1,
            name: "x".into(),
            split: Split::Train,
            orig_labels: None,
        };
        let stats = NormalizationStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(znormalize(&ds, Some(&stats)).is_err());
    }

    #[test]
    fn separable_is_balanced_and_reproducible() {
        let make = || {
            let mut rng = Rng::with_stream(9, rng::STREAM_DATA);
            make_synthetic(SyntheticKind::Separable, 16, &SyntheticConfig::default(), &mut rng)
                .unwrap()
        };
        let ds = make();
        let y = ds.y.as_ref().unwrap();
        assert_eq!(y.iter().filter(|&&c| c == 0).count(), 8);
        assert_eq!(y.iter().filter(|&&c| c == 1).count(), 8);
        let ds2 = make();
        assert_eq!(ds.x, ds2.x);
    }

    #[test]
    fn separable_is_one_nn_separable() {
        let mut rng = Rng::with_stream(10, rng::STREAM_DATA);
        let ds = make_synthetic(SyntheticKind::Separable, 16, &SyntheticConfig::default(), &mut rng)
            .unwrap();
        let y = ds.y.as_ref().unwrap();
        let l = ds.length();
        // Leave-one-out 1-NN with Euclidean distance.
        for i in 0..ds.len() {
            let xi = &ds.x.data()[i * l..(i + 1) * l];
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..ds.len() {
                if i == j {
                    continue;
                }
                let xj = &ds.x.data()[j * l..(j + 1) * l];
                let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(y[i], y[best], "sample {i} misclassified by 1-NN");
        }
    }

    #[test]
    fn blobs_are_balanced_labeled_constant_series() {
        let mut rng = Rng::with_stream(11, rng::STREAM_DATA);
        let cfg = SyntheticConfig {
            channels: 4,
            classes: 2,
            ..SyntheticConfig::default()
        };
        let ds = make_synthetic(SyntheticKind::Blobs, 20, &cfg, &mut rng).unwrap();
        assert_eq!(ds.x.shape(), &[20, 4, 32]);
        let y = ds.y.as_ref().unwrap();
        assert_eq!(y.iter().filter(|&&c| c == 0).count(), 10);
        // Constant over time.
        let l = ds.length();
        for i in 0..ds.len() {
            for ch in 0..4 {
                let row = &ds.x.data()[(i * 4 + ch) * l..(i * 4 + ch + 1) * l];
                assert!(row.iter().all(|&v| v == row[0]));
            }
        }
    }

    #[test]
    fn unknown_synthetic_kind_errors() {
        assert!("spirals".parse::<SyntheticKind>().is_err());
        assert!("separable".parse::<SyntheticKind>().is_ok());
    }
}
