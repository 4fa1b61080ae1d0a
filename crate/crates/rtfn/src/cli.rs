//! Command implementations behind the `rtfn` binary: train, cluster,
//! gradcheck, and report, plus the flat key=value run-configuration format
//! and the run manifest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! divergence (non-finite loss), 5 gradient-check failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::cluster::{self, KmeansOpts};
use crate::data::{self, SeriesDataset, Split, SyntheticConfig, SyntheticKind};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::model::{Decoder, Purpose, RtfnConfig, RtfnModel};
use crate::rng::{self, Rng};
use crate::train::{self, LossRecord, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

/// Where a run reads its series from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// TSV (univariate) or long-format CSV (multivariate) files, relative
    /// to the `--data` directory.
    Files {
        train_file: String,
        test_file: Option<String>,
        multivariate: bool,
    },
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        cfg: SyntheticConfig,
    },
}

/// Which split the clustering pipeline trains on and clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterSplit {
    Train,
    Test,
    All,
}

/// Fully parsed run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: DataSource,
    pub lstman_depth: usize,
    pub hidden: usize,
    pub tfn_channels: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub bn_decay: f64,
    pub train: TrainConfig,
    pub normalize: bool,
    pub kmeans_k: Option<usize>,
    pub cluster_split: ClusterSplit,
    pub algorithm: String,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_normalize: bool,
    pub lstman_depth: Option<usize>,
}

const KNOWN_KEYS: &[&str] = &[
    "train_file",
    "test_file",
    "multivariate",
    "synthetic",
    "synthetic_n",
    "synthetic_len",
    "synthetic_channels",
    "synthetic_classes",
    "synthetic_noise",
    "lstman_depth",
    "hidden",
    "tfn_channels",
    "dropout",
    "alpha",
    "bn_decay",
    "epochs",
    "batch_size",
    "lr0",
    "lr_decay_rate",
    "lr_floor",
    "decay_period_epochs",
    "momentum",
    "rms_rho",
    "rms_eps",
    "l2_coeff",
    "seed",
    "normalize",
    "kmeans_k",
    "cluster_split",
    "algorithm",
];

/// Parse the flat `key=value` config format. `#` starts a comment; keys
/// outside the known set, duplicate keys, and unparsable values are hard
/// errors.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{line_no}: expected key=value", path.display()))
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "{}:{line_no}: unknown key {k:?}",
                path.display()
            )));
        }
        if map.insert(k.clone(), (line_no, v)).is_some() {
            return Err(Error::Config(format!(
                "{}:{line_no}: duplicate key {k:?}",
                path.display()
            )));
        }
    }

    let mut take = |k: &str| map.remove(k).map(|(_, v)| v);
    macro_rules! parse {
        ($k:expr, $default:expr) => {
            match take($k) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {}: {v:?}", $k)))?,
                None => $default,
            }
        };
    }

    let train_file: Option<String> = take("train_file");
    let synthetic: Option<String> = take("synthetic");
    let source = match (train_file, synthetic) {
        (Some(train_file), None) => DataSource::Files {
            train_file,
            test_file: take("test_file"),
            multivariate: parse!("multivariate", false),
        },
        (None, Some(kind)) => DataSource::Synthetic {
            kind: kind.parse()?,
            n: parse!("synthetic_n", 16),
            cfg: SyntheticConfig {
                length: parse!("synthetic_len", 32),
                channels: parse!("synthetic_channels", 1),
                classes: parse!("synthetic_classes", 2),
                noise: parse!("synthetic_noise", 0.05),
            },
        },
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "config sets both train_file and synthetic; pick one".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "config must set either train_file or synthetic".into(),
            ))
        }
    };

    let seed: u64 = parse!("seed", 42);
    let batch_size: usize = parse!("batch_size", 0);
    let cfg = RunConfig {
        source,
        lstman_depth: parse!("lstman_depth", 2),
        hidden: parse!("hidden", 128),
        tfn_channels: parse!("tfn_channels", 128),
        dropout: parse!("dropout", 0.5),
        alpha: parse!("alpha", 0.1),
        bn_decay: parse!("bn_decay", 0.9),
        train: TrainConfig {
            lr0: parse!("lr0", 0.01),
            lr_decay_rate: parse!("lr_decay_rate", 0.1),
            lr_floor: parse!("lr_floor", 1e-4),
            decay_period_epochs: parse!("decay_period_epochs", 50),
            epochs: parse!("epochs", 500),
            batch_size: if batch_size == 0 { None } else { Some(batch_size) },
            momentum: parse!("momentum", 0.9),
            rms_rho: parse!("rms_rho", 0.9),
            rms_eps: parse!("rms_eps", 1e-8),
            l2_coeff: parse!("l2_coeff", 1e-4),
            seed,
        },
        normalize: parse!("normalize", true),
        kmeans_k: match take("kmeans_k") {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value for kmeans_k: {v:?}")))?,
            ),
            None => None,
        },
        cluster_split: match take("cluster_split").as_deref() {
            None | Some("train") => ClusterSplit::Train,
            Some("test") => ClusterSplit::Test,
            Some("all") => ClusterSplit::All,
            Some(other) => {
                return Err(Error::Config(format!(
                    "cluster_split must be train, test, or all, got {other:?}"
                )))
            }
        },
        algorithm: take("algorithm").unwrap_or_else(|| "rtfn".into()),
    };

    if let Some((line, key)) = map.iter().next().map(|(k, v)| (v.0, k.clone())) {
        // Keys consumed out of order leave stragglers only when a data
        // source key was given for the wrong source kind.
        return Err(Error::Config(format!(
            "{}:{line}: key {key:?} does not apply to this data source",
            path.display()
        )));
    }

    Ok(cfg)
}

impl RunConfig {
    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.train.seed = seed;
        }
        if ov.no_normalize {
            self.normalize = false;
        }
        if let Some(depth) = ov.lstman_depth {
            self.lstman_depth = depth;
        }
    }

    fn model_config(&self, ds: &SeriesDataset) -> RtfnConfig {
        RtfnConfig {
            num_classes: ds.num_classes,
            input_channels: ds.channels(),
            series_length: ds.length(),
            lstman_depth: self.lstman_depth,
            hidden: self.hidden,
            tfn_channels: self.tfn_channels,
            dropout: self.dropout,
            alpha: self.alpha,
            bn_decay: self.bn_decay,
            seed: self.train.seed,
        }
    }

    /// Echo every resolved setting into manifest entries.
    fn manifest_entries(&self) -> Vec<(String, String)> {
        let mut e = Vec::new();
        match &self.source {
            DataSource::Files {
                train_file,
                test_file,
                multivariate,
            } => {
                e.push(("train_file".into(), train_file.clone()));
                if let Some(t) = test_file {
                    e.push(("test_file".into(), t.clone()));
                }
                e.push(("multivariate".into(), multivariate.to_string()));
            }
            DataSource::Synthetic { kind, n, cfg } => {
                e.push(("synthetic".into(), format!("{kind:?}").to_lowercase()));
                e.push(("synthetic_n".into(), n.to_string()));
                e.push(("synthetic_len".into(), cfg.length.to_string()));
                e.push(("synthetic_channels".into(), cfg.channels.to_string()));
                e.push(("synthetic_classes".into(), cfg.classes.to_string()));
                e.push(("synthetic_noise".into(), cfg.noise.to_string()));
            }
        }
        e.push(("lstman_depth".into(), self.lstman_depth.to_string()));
        e.push(("hidden".into(), self.hidden.to_string()));
        e.push(("tfn_channels".into(), self.tfn_channels.to_string()));
        e.push(("dropout".into(), self.dropout.to_string()));
        e.push(("alpha".into(), self.alpha.to_string()));
        e.push(("bn_decay".into(), self.bn_decay.to_string()));
        e.push(("epochs".into(), self.train.epochs.to_string()));
        e.push((
            "batch_size".into(),
            self.train.batch_size.map_or("auto".into(), |b| b.to_string()),
        ));
        e.push(("lr0".into(), self.train.lr0.to_string()));
        e.push(("lr_decay_rate".into(), self.train.lr_decay_rate.to_string()));
        e.push(("lr_floor".into(), self.train.lr_floor.to_string()));
        e.push((
            "decay_period_epochs".into(),
            self.train.decay_period_epochs.to_string(),
        ));
        e.push(("momentum".into(), self.train.momentum.to_string()));
        e.push(("rms_rho".into(), self.train.rms_rho.to_string()));
        e.push(("rms_eps".into(), self.train.rms_eps.to_string()));
        e.push(("l2_coeff".into(), self.train.l2_coeff.to_string()));
        e.push(("seed".into(), self.train.seed.to_string()));
        e.push(("normalize".into(), self.normalize.to_string()));
        e.push(("algorithm".into(), self.algorithm.clone()));
        e
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

struct LoadedData {
    train: SeriesDataset,
    test: Option<SeriesDataset>,
    checksums: Vec<(String, String)>,
}

fn load_data(cfg: &RunConfig, data_dir: &Path) -> Result<LoadedData> {
    match &cfg.source {
        DataSource::Files {
            train_file,
            test_file,
            multivariate,
        } => {
            let train_path = data_dir.join(train_file);
            let mut checksums = vec![("train_checksum".into(), sha256_file(&train_path)?)];
            let (train, test) = if *multivariate {
                let train = data::load_multivariate_csv(&train_path)?;
                let map = data::LabelMap::from_raw(
                    train.orig_labels.as_ref().expect("loader sets originals"),
                );
                let test = match test_file {
                    Some(t) => {
                        let test_path = data_dir.join(t);
                        checksums.push(("test_checksum".into(), sha256_file(&test_path)?));
                        let mut ds = data::load_multivariate_csv_with_map(&test_path, &map)?;
                        ds.split = Split::Test;
                        Some(ds)
                    }
                    None => None,
                };
                (train, test)
            } else {
                match test_file {
                    Some(t) => {
                        let test_path = data_dir.join(t);
                        checksums.push(("test_checksum".into(), sha256_file(&test_path)?));
                        let (train, test) = data::load_ucr_pair(&train_path, &test_path)?;
                        (train, Some(test))
                    }
                    None => (data::load_ucr_tsv(&train_path)?, None),
                }
            };
            Ok(LoadedData {
                train,
                test,
                checksums,
            })
        }
        DataSource::Synthetic { kind, n, cfg: scfg } => {
            let mut rng = Rng::with_stream(cfg.train.seed, rng::STREAM_DATA);
            let train = data::make_synthetic(*kind, *n, scfg, &mut rng)?;
            Ok(LoadedData {
                train,
                test: None,
                checksums: vec![(
                    "train_checksum".into(),
                    format!("synthetic:{kind:?}:{n}").to_lowercase(),
                )],
            })
        }
    }
}

fn normalize_pair(
    cfg: &RunConfig,
    train: SeriesDataset,
    test: Option<SeriesDataset>,
) -> Result<(SeriesDataset, Option<SeriesDataset>)> {
    if !cfg.normalize {
        return Ok((train, test));
    }
    let (train, stats) = data::znormalize(&train, None)?;
    let test = match test {
        Some(t) => Some(data::znormalize(&t, Some(&stats))?.0),
        None => None,
    };
    Ok((train, test))
}

fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        writeln!(out, "{k}={v}").expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse a manifest back into a key→value map.
pub fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::from(LossRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite { .. } => EXIT_DIVERGED,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } => EXIT_DATA,
        _ => EXIT_DATA,
    }
}

fn run_to_exit(result: Result<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Train a supervised model; writes `manifest.txt`, `loss.csv`, and
/// `model.ckpt` into `out_dir` and prints the final metric as `top1=...`.
pub fn cmd_train(config_path: &Path, data_dir: &Path, out_dir: &Path, ov: &Overrides) -> i32 {
    run_to_exit(train_impl(config_path, data_dir, out_dir, ov))
}

fn train_impl(config_path: &Path, data_dir: &Path, out_dir: &Path, ov: &Overrides) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg = parse_config(config_path)?;
    cfg.apply(ov);

    let loaded = load_data(&cfg, data_dir)?;
    let (train_ds, test_ds) = normalize_pair(&cfg, loaded.train, loaded.test)?;

    let model_cfg = cfg.model_config(&train_ds);
    let mut init_rng = Rng::with_stream(model_cfg.seed, rng::STREAM_INIT);
    let mut model = RtfnModel::new(&model_cfg, Purpose::Supervised, &mut init_rng)?;
    let records = train::train_supervised(&mut model, &train_ds, test_ds.as_ref(), &cfg.train)?;

    let metric = records.last().map(|r| r.eval_metric).unwrap_or(f64::NAN);
    println!("top1={metric}");

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_loss_csv(&out_dir.join("loss.csv"), &records)?;
    checkpoint::save_model(out_dir.join("model.ckpt"), &model, None)?;

    let mut entries = vec![
        ("toolkit_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("command".into(), "train".into()),
        ("dataset".into(), train_ds.name.clone()),
    ];
    entries.extend(loaded.checksums);
    entries.extend(cfg.manifest_entries());
    entries.push(("param_count".into(), model.param_count().to_string()));
    entries.push(("epochs_run".into(), records.len().to_string()));
    entries.push((
        "final_train_loss".into(),
        records.last().map(|r| r.train_loss.to_string()).unwrap_or_default(),
    ));
    entries.push(("metric".into(), "top1".into()));
    entries.push(("metric_value".into(), metric.to_string()));
    entries.push(("wall_ms".into(), t0.elapsed().as_millis().to_string()));
    write_manifest(&out_dir.join("manifest.txt"), &entries)
}

/// Train the autoencoder, cluster the features with k-means, and score the
/// Rand index against held-out labels. Prints `ri=...`.
pub fn cmd_cluster(config_path: &Path, data_dir: &Path, out_dir: &Path, ov: &Overrides) -> i32 {
    run_to_exit(cluster_impl(config_path, data_dir, out_dir, ov))
}

fn cluster_impl(config_path: &Path, data_dir: &Path, out_dir: &Path, ov: &Overrides) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg = parse_config(config_path)?;
    cfg.apply(ov);

    let loaded = load_data(&cfg, data_dir)?;
    let (train_ds, test_ds) = normalize_pair(&cfg, loaded.train, loaded.test)?;

    // The clustering pipeline sees one unlabeled pool.
    let pool = match (cfg.cluster_split, &test_ds) {
        (ClusterSplit::Train, _) | (ClusterSplit::Test, None) => train_ds.clone(),
        (ClusterSplit::Test, Some(t)) => t.clone(),
        (ClusterSplit::All, None) => train_ds.clone(),
        (ClusterSplit::All, Some(t)) => concat_datasets(&train_ds, t)?,
    };
    let labels = pool
        .y
        .clone()
        .ok_or_else(|| Error::Data("clustering evaluation needs labels to score against".into()))?;

    let model_cfg = cfg.model_config(&pool);
    let mut init_rng = Rng::with_stream(model_cfg.seed, rng::STREAM_INIT);
    let mut model = RtfnModel::new(&model_cfg, Purpose::Encoder, &mut init_rng)?;
    let mut decoder = Decoder::new(&model_cfg, &mut init_rng);
    let records = train::train_autoencoder(&mut model, &mut decoder, &pool, &cfg.train)?;

    let feats = train::extract_features(&mut model, &pool)?;
    let k = cfg.kmeans_k.unwrap_or(pool.num_classes);
    let mut kmeans_rng = Rng::with_stream(cfg.train.seed, rng::STREAM_KMEANS);
    let assignment = cluster::kmeans_with(&feats, k, &mut kmeans_rng, KmeansOpts::default())?;
    let ri = cluster::rand_index(&labels, &assignment.labels)?;
    println!("ri={ri}");

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_loss_csv(&out_dir.join("loss.csv"), &records)?;
    checkpoint::save_model(out_dir.join("model.ckpt"), &model, Some(&decoder))?;

    let mut entries = vec![
        ("toolkit_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("command".into(), "cluster".into()),
        ("dataset".into(), pool.name.clone()),
        ("kmeans_k".into(), k.to_string()),
        (
            "cluster_split".into(),
            format!("{:?}", cfg.cluster_split).to_lowercase(),
        ),
    ];
    entries.extend(loaded.checksums);
    entries.extend(cfg.manifest_entries());
    entries.push(("param_count".into(), (model.param_count() + decoder.param_count()).to_string()));
    entries.push(("epochs_run".into(), records.len().to_string()));
    entries.push((
        "final_train_loss".into(),
        records.last().map(|r| r.train_loss.to_string()).unwrap_or_default(),
    ));
    entries.push(("metric".into(), "ri".into()));
    entries.push(("metric_value".into(), ri.to_string()));
    entries.push(("wall_ms".into(), t0.elapsed().as_millis().to_string()));
    write_manifest(&out_dir.join("manifest.txt"), &entries)
}

fn concat_datasets(a: &SeriesDataset, b: &SeriesDataset) -> Result<SeriesDataset> {
    if a.channels() != b.channels() || a.length() != b.length() {
        return Err(Error::Data("cannot concatenate datasets of different shapes".into()));
    }
    let x = crate::tensor::concat(&[&a.x, &b.x], 0)?;
    let y = match (&a.y, &b.y) {
        (Some(ya), Some(yb)) => {
            let mut y = ya.clone();
            y.extend_from_slice(yb);
            Some(y)
        }
        _ => None,
    };
    let orig = match (&a.orig_labels, &b.orig_labels) {
        (Some(oa), Some(ob)) => {
            let mut o = oa.clone();
            o.extend_from_slice(ob);
            Some(o)
        }
        _ => None,
    };
    Ok(SeriesDataset {
        x,
        y,
        num_classes: a.num_classes.max(b.num_classes),
        name: a.name.clone(),
        split: Split::Train,
        orig_labels: orig,
    })
}

/// Run the gradient suite and print one line per component; exits 5 on the
/// first failure. `corrupt` deliberately breaks one component so the
/// failure path can be tested.
pub fn cmd_gradcheck(corrupt: Option<&str>) -> i32 {
    let reports = match gradcheck::run_suite(corrupt) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_GRADCHECK;
        }
    };
    let mut failed: Option<&str> = None;
    for r in &reports {
        println!(
            "{:<24} max_rel_err={:<12.3e} tol={:<8.0e} {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() && failed.is_none() {
            failed = Some(r.name);
        }
    }
    match failed {
        None => EXIT_OK,
        Some(name) => {
            eprintln!("gradient check failed for component {name}");
            EXIT_GRADCHECK
        }
    }
}

/// Build a win/tie/lose leaderboard from run manifests matching a glob
/// pattern. Datasets not covered by every algorithm are dropped; repeated
/// (algorithm, dataset) runs contribute their mean metric.
pub fn cmd_report(manifests_glob: &str, use_gap: bool, csv_out: Option<&Path>) -> i32 {
    run_to_exit(report_impl(manifests_glob, use_gap, csv_out))
}

fn report_impl(manifests_glob: &str, use_gap: bool, csv_out: Option<&Path>) -> Result<()> {
    let paths: Vec<PathBuf> = glob::glob(manifests_glob)
        .map_err(|e| Error::Data(format!("bad glob pattern {manifests_glob:?}: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Data(format!("glob error: {e}")))?;
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no manifests match {manifests_glob:?}"
        )));
    }

    // (algorithm, dataset) -> metrics.
    let mut runs: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for p in &paths {
        let m = parse_manifest(p)?;
        let get = |k: &str| -> Result<String> {
            m.get(k)
                .cloned()
                .ok_or_else(|| Error::Data(format!("{}: manifest missing {k}", p.display())))
        };
        let algorithm = get("algorithm")?;
        let dataset = get("dataset")?;
        let value: f64 = get("metric_value")?
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad metric_value", p.display())))?;
        runs.entry((algorithm, dataset)).or_default().push(value);
    }

    let mut algorithms: Vec<String> = runs.keys().map(|(a, _)| a.clone()).collect();
    algorithms.sort();
    algorithms.dedup();
    let mut datasets: Vec<String> = runs.keys().map(|(_, d)| d.clone()).collect();
    datasets.sort();
    datasets.dedup();
    // Keep only datasets every algorithm has run.
    datasets.retain(|d| {
        algorithms
            .iter()
            .all(|a| runs.contains_key(&(a.clone(), d.clone())))
    });
    if datasets.is_empty() {
        return Err(Error::Data(
            "no dataset is covered by every algorithm; nothing to rank".into(),
        ));
    }

    let accuracy: Vec<Vec<f64>> = algorithms
        .iter()
        .map(|a| {
            datasets
                .iter()
                .map(|d| {
                    let vals = &runs[&(a.clone(), d.clone())];
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect()
        })
        .collect();

    let board = cluster::leaderboard(&algorithms, &accuracy)?;
    print!("{}", board.to_table(use_gap));
    let csv = board.to_csv(use_gap);
    match csv_out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}
