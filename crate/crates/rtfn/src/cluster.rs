//! K-means clustering and the evaluation metrics: top-1 accuracy, Rand
//! index, and the cross-dataset win/tie/lose leaderboard.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Result of one clustering run.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// Cluster index per point, each in `[0, k)`.
    pub labels: Vec<usize>,
    /// `[k, d]` centroid matrix.
    pub centroids: Tensor,
    /// Total squared distance of points to their assigned centroids.
    pub inertia: f64,
}

/// Tuning knobs for [`kmeans_with`].
#[derive(Debug, Clone, Copy)]
pub struct KmeansOpts {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KmeansOpts {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of 10 seeded restarts by
/// inertia (ties favor the earlier restart).
pub fn kmeans(points: &Tensor, k: usize, rng: &mut Rng) -> Result<ClusterAssignment> {
    kmeans_with(points, k, rng, KmeansOpts::default())
}

pub fn kmeans_with(
    points: &Tensor,
    k: usize,
    rng: &mut Rng,
    opts: KmeansOpts,
) -> Result<ClusterAssignment> {
    let (s, _d) = points.dims2("kmeans")?;
    if k == 0 || s < k {
        return Err(Error::invalid(
            "kmeans",
            format!("need s >= k >= 1, got s = {s}, k = {k}"),
        ));
    }
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..opts.restarts.max(1) {
        let (assignment, _) = lloyd_once(points, k, rng, opts.max_iter, opts.tol)?;
        let better = match &best {
            None => true,
            Some(b) => assignment.inertia < b.inertia,
        };
        if better {
            best = Some(assignment);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One seeded run; also returns the inertia after every Lloyd iteration
/// (used to verify monotonicity).
pub(crate) fn lloyd_once(
    points: &Tensor,
    k: usize,
    rng: &mut Rng,
    max_iter: usize,
    tol: f64,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let (s, d) = points.dims2("kmeans")?;
    let x = points.data();
    let row = |i: usize| &x[i * d..(i + 1) * d];

    // k-means++ seeding: D²-weighted sampling of successive centers.
    let mut centroids = vec![0.0; k * d];
    let first = rng.index(s);
    centroids[..d].copy_from_slice(row(first));
    let mut dist2 = vec![0.0; s];
    for i in 0..s {
        dist2[i] = sqdist(row(i), &centroids[..d]);
    }
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform(0.0, total);
            let mut chosen = s - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid.
            rng.index(s)
        };
        centroids[c * d..(c + 1) * d].copy_from_slice(row(pick));
        for i in 0..s {
            let nd = sqdist(row(i), &centroids[c * d..(c + 1) * d]);
            if nd < dist2[i] {
                dist2[i] = nd;
            }
        }
    }

    let mut labels = vec![0usize; s];
    let mut inertia = f64::INFINITY;
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        // Assignment step; ties go to the lowest cluster index.
        for i in 0..s {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sqdist(row(i), &centroids[c * d..(c + 1) * d]);
                if dd < best_d {
                    best_d = dd;
                    best_c = c;
                }
            }
            labels[i] = best_c;
        }

        // Update step.
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..s {
            counts[labels[i]] += 1;
            for (acc, &v) in sums[labels[i] * d..(labels[i] + 1) * d].iter_mut().zip(row(i)) {
                *acc += v;
            }
        }
        // Empty clusters steal the point farthest from its centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (mut far_i, mut far_d) = (0, -1.0);
            for i in 0..s {
                let dd = sqdist(row(i), &centroids[labels[i] * d..(labels[i] + 1) * d]);
                if dd > far_d && counts[labels[i]] > 1 {
                    far_d = dd;
                    far_i = i;
                }
            }
            let old = labels[far_i];
            counts[old] -= 1;
            for (acc, &v) in sums[old * d..(old + 1) * d].iter_mut().zip(row(far_i)) {
                *acc -= v;
            }
            labels[far_i] = c;
            counts[c] = 1;
            for (acc, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(row(far_i)) {
                *acc += v;
            }
        }

        let mut shift: f64 = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let mut cs = 0.0;
            for j in 0..d {
                let nc = sums[c * d + j] * inv;
                let diff = nc - centroids[c * d + j];
                cs += diff * diff;
                centroids[c * d + j] = nc;
            }
            shift = shift.max(cs.sqrt());
        }

        // Inertia after the update (what the next assignment would see is
        // no larger than this).
        let mut post = 0.0;
        for i in 0..s {
            post += sqdist(row(i), &centroids[labels[i] * d..(labels[i] + 1) * d]);
        }
        trace.push(post);
        inertia = post;

        if shift < tol {
            break;
        }
    }

    Ok((
        ClusterAssignment {
            labels,
            centroids: Tensor::new(vec![k, d], centroids)?,
            inertia,
        },
        trace,
    ))
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Rand index: the fraction of point pairs on which two labelings agree
/// (both same-cluster or both different-cluster). Computed from the
/// contingency table in O(s + table).
pub fn rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(
            "rand_index",
            format!("length mismatch: {} vs {}", truth.len(), pred.len()),
        ));
    }
    let s = truth.len();
    if s < 2 {
        return Err(Error::invalid("rand_index", "need at least 2 points"));
    }
    use std::collections::HashMap;
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *joint.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    let choose2 = |n: u64| n * (n.saturating_sub(1)) / 2;
    let total = choose2(s as u64);
    let same_both: u64 = joint.values().map(|&n| choose2(n)).sum();
    let same_truth: u64 = rows.values().map(|&n| choose2(n)).sum();
    let same_pred: u64 = cols.values().map(|&n| choose2(n)).sum();
    // Pairs split in both labelings; grouped so the intermediate value
    // cannot underflow when one labeling is a single cluster.
    let diff_both = (total + same_both) - same_truth - same_pred;
    Ok((same_both + diff_both) as f64 / total as f64)
}

/// Fraction of positions where the prediction matches the truth.
pub fn top1_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(
            "top1_accuracy",
            format!("length mismatch: {} vs {}", truth.len(), pred.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::invalid("top1_accuracy", "empty label vectors"));
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// One leaderboard row.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderRow {
    pub algorithm: String,
    pub win: usize,
    pub tie: usize,
    pub lose: usize,
    /// win + tie.
    pub best: usize,
    pub total: usize,
    /// Mean ordinal rank (1 = best; ties share the minimum rank of the
    /// tied block).
    pub avg_rank: f64,
    /// Mean gap to the per-dataset best accuracy.
    pub avg_gap: f64,
}

#[derive(Debug, Clone)]
pub struct LeaderBoard {
    pub rows: Vec<LeaderRow>,
}

impl LeaderBoard {
    pub const CSV_HEADER: &'static str = "algorithm,win,tie,lose,best,total,avg_rank";

    /// CSV with the standard columns. `use_gap` swaps the mean-gap variant
    /// into the avg_rank column.
    pub fn to_csv(&self, use_gap: bool) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let rank = if use_gap { r.avg_gap } else { r.avg_rank };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.algorithm, r.win, r.tie, r.lose, r.best, r.total, rank
            ));
        }
        out
    }

    /// Fixed-width table for terminal output.
    pub fn to_table(&self, use_gap: bool) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.algorithm.len())
            .chain(["algorithm".len()])
            .max()
            .unwrap_or(9);
        let head = if use_gap { "avg_gap" } else { "avg_rank" };
        let mut out = format!(
            "{:name_w$}  {:>4}  {:>4}  {:>4}  {:>4}  {:>5}  {:>8}\n",
            "algorithm", "win", "tie", "lose", "best", "total", head
        );
        for r in &self.rows {
            let rank = if use_gap { r.avg_gap } else { r.avg_rank };
            out.push_str(&format!(
                "{:name_w$}  {:>4}  {:>4}  {:>4}  {:>4}  {:>5}  {:>8.4}\n",
                r.algorithm, r.win, r.tie, r.lose, r.best, r.total, rank
            ));
        }
        out
    }
}

/// Build the leaderboard from an `algorithms × datasets` accuracy matrix.
/// An algorithm wins a dataset when it is strictly best alone, ties when it
/// shares the best value, and loses otherwise.
pub fn leaderboard(algorithms: &[String], accuracy: &[Vec<f64>]) -> Result<LeaderBoard> {
    if algorithms.is_empty() || accuracy.is_empty() {
        return Err(Error::invalid("leaderboard", "empty result matrix"));
    }
    if algorithms.len() != accuracy.len() {
        return Err(Error::invalid(
            "leaderboard",
            format!(
                "{} algorithms but {} accuracy rows",
                algorithms.len(),
                accuracy.len()
            ),
        ));
    }
    let n_ds = accuracy[0].len();
    if n_ds == 0 || accuracy.iter().any(|r| r.len() != n_ds) {
        return Err(Error::invalid(
            "leaderboard",
            "accuracy rows must be nonempty and equal-length",
        ));
    }

    let n_alg = algorithms.len();
    let mut rows: Vec<LeaderRow> = algorithms
        .iter()
        .map(|a| LeaderRow {
            algorithm: a.clone(),
            win: 0,
            tie: 0,
            lose: 0,
            best: 0,
            total: n_ds,
            avg_rank: 0.0,
            avg_gap: 0.0,
        })
        .collect();

    for ds in 0..n_ds {
        let col: Vec<f64> = (0..n_alg).map(|a| accuracy[a][ds]).collect();
        let best = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n_best = col.iter().filter(|&&v| v == best).count();
        for a in 0..n_alg {
            if col[a] == best {
                if n_best == 1 {
                    rows[a].win += 1;
                } else {
                    rows[a].tie += 1;
                }
            } else {
                rows[a].lose += 1;
            }
            // Rank 1 + number of strictly better algorithms: tied blocks
            // share the minimum rank.
            let rank = 1 + col.iter().filter(|&&v| v > col[a]).count();
            rows[a].avg_rank += rank as f64;
            rows[a].avg_gap += best - col[a];
        }
    }
    for r in &mut rows {
        r.best = r.win + r.tie;
        r.avg_rank /= n_ds as f64;
        r.avg_gap /= n_ds as f64;
    }
    Ok(LeaderBoard { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(s²) pair enumeration, the definitional Rand index.
    fn rand_index_oracle(truth: &[usize], pred: &[usize]) -> f64 {
        let s = truth.len();
        let mut agree = 0u64;
        let mut total = 0u64;
        for i in 0..s {
            for j in (i + 1)..s {
                total += 1;
                let same_t = truth[i] == truth[j];
                let same_p = pred[i] == pred[j];
                if same_t == same_p {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn rand_index_perfect_agreement_up_to_relabeling() {
        let truth = vec![0, 0, 1, 1, 2];
        let pred = vec![2, 2, 0, 0, 1];
        assert_eq!(rand_index(&truth, &pred).unwrap(), 1.0);
    }

    #[test]
    fn rand_index_hand_case_half() {
        // 3 agreeing pairs of 6.
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 0, 1, 0];
        assert_eq!(rand_index(&truth, &pred).unwrap(), 0.5);
    }

    #[test]
    fn rand_index_single_disagreeing_pair() {
        assert_eq!(rand_index(&[0, 1], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn rand_index_matches_bruteforce_on_random_labelings() {
        let mut rng = Rng::new(55);
        for _ in 0..100 {
            let s = 2 + rng.index(49);
            let kt = 1 + rng.index(5);
            let kp = 1 + rng.index(5);
            let truth: Vec<usize> = (0..s).map(|_| rng.index(kt)).collect();
            let pred: Vec<usize> = (0..s).map(|_| rng.index(kp)).collect();
            let got = rand_index(&truth, &pred).unwrap();
            let want = rand_index_oracle(&truth, &pred);
            assert_eq!(got, want, "s={s} truth={truth:?} pred={pred:?}");
        }
    }

    #[test]
    fn rand_index_symmetry_and_relabel_invariance() {
        let mut rng = Rng::new(56);
        for _ in 0..50 {
            let s = 2 + rng.index(30);
            let truth: Vec<usize> = (0..s).map(|_| rng.index(4)).collect();
            let pred: Vec<usize> = (0..s).map(|_| rng.index(4)).collect();
            let a = rand_index(&truth, &pred).unwrap();
            let b = rand_index(&pred, &truth).unwrap();
            assert_eq!(a, b);
            // Bijective relabeling of pred: 0↔3, 1↔2.
            let relabeled: Vec<usize> = pred.iter().map(|&p| 3 - p).collect();
            assert_eq!(rand_index(&truth, &relabeled).unwrap(), a);
        }
    }

    #[test]
    fn rand_index_errors() {
        assert!(rand_index(&[0], &[0]).is_err());
        assert!(rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn top1_cases() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[1, 2], &[2, 1]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(top1_accuracy(&[], &[]).is_err());
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
    }

    fn points(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn kmeans_k1_gives_mean_and_total_scatter() {
        let p = points(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]);
        let mut rng = Rng::new(1);
        let a = kmeans(&p, 1, &mut rng).unwrap();
        assert_eq!(a.centroids.data(), &[1.0, 1.0]);
        // Each point is √2 from the mean: inertia = 4 · 2.
        assert!((a.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_two_separated_pairs() {
        let p = points(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ]);
        let mut rng = Rng::new(2);
        let a = kmeans(&p, 2, &mut rng).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
        // Within-pair spread: each point 0.5 from its centroid → 4 · 0.25.
        assert!((a.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_s_zero_inertia() {
        let p = points(&[vec![0.0], vec![1.0], vec![5.0]]);
        let mut rng = Rng::new(3);
        let a = kmeans(&p, 3, &mut rng).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut sorted = a.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let p = points(&[vec![0.0], vec![1.0]]);
        let mut rng = Rng::new(4);
        assert!(kmeans(&p, 0, &mut rng).is_err());
        assert!(kmeans(&p, 3, &mut rng).is_err());
    }

    #[test]
    fn kmeans_inertia_non_increasing_within_restart() {
        let mut rng = Rng::new(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let p = points(&rows);
        for _ in 0..5 {
            let (_, trace) = lloyd_once(&p, 4, &mut rng, 300, 1e-9).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia increased: {w:?}");
            }
        }
    }

    #[test]
    fn kmeans_separated_blobs_recovered() {
        // Two Gaussian blobs with centers 10σ apart.
        let mut rng = Rng::new(6);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = usize::from(i >= 30);
            truth.push(c);
            rows.push(vec![
                10.0 * c as f64 + rng.normal(0.0, 1.0),
                10.0 * c as f64 + rng.normal(0.0, 1.0),
            ]);
        }
        let p = points(&rows);
        let a = kmeans(&p, 2, &mut rng).unwrap();
        let ri = rand_index(&truth, &a.labels).unwrap();
        assert!(ri >= 0.99, "RI = {ri}");
    }

    #[test]
    fn kmeans_is_deterministic_given_seed() {
        let mut rows = Vec::new();
        let mut gen = Rng::new(7);
        for _ in 0..30 {
            rows.push(vec![gen.uniform(-5.0, 5.0), gen.uniform(-5.0, 5.0)]);
        }
        let p = points(&rows);
        let run = || {
            let mut rng = Rng::new(99);
            kmeans(&p, 3, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn leaderboard_single_algorithm_wins_everything() {
        let lb = leaderboard(&["only".into()], &[vec![0.8, 0.9, 0.7]]).unwrap();
        let r = &lb.rows[0];
        assert_eq!(r.win, 3);
        assert_eq!(r.best, 3);
        assert_eq!(r.avg_rank, 1.0);
        assert_eq!(r.avg_gap, 0.0);
    }

    #[test]
    fn leaderboard_identical_columns_all_tie() {
        let lb = leaderboard(
            &["a".into(), "b".into()],
            &[vec![0.5, 0.6], vec![0.5, 0.6]],
        )
        .unwrap();
        for r in &lb.rows {
            assert_eq!(r.win, 0);
            assert_eq!(r.tie, 2);
            assert_eq!(r.lose, 0);
            assert_eq!(r.avg_rank, 1.0);
        }
    }

    #[test]
    fn leaderboard_hand_ranked_three_by_two() {
        // ds0: a=0.9 > b=0.8 > c=0.7; ds1: a=0.5, b=0.9, c=0.9.
        let lb = leaderboard(
            &["a".into(), "b".into(), "c".into()],
            &[vec![0.9, 0.5], vec![0.8, 0.9], vec![0.7, 0.9]],
        )
        .unwrap();
        let a = &lb.rows[0];
        let b = &lb.rows[1];
        let c = &lb.rows[2];
        assert_eq!((a.win, a.tie, a.lose), (1, 0, 1));
        assert_eq!((b.win, b.tie, b.lose), (0, 1, 1));
        assert_eq!((c.win, c.tie, c.lose), (0, 1, 1));
        // Ranks: ds0 → a1 b2 c3; ds1 → a3, b and c share rank 1.
        assert_eq!(a.avg_rank, 2.0);
        assert_eq!(b.avg_rank, 1.5);
        assert_eq!(c.avg_rank, 2.0);
        // Gaps: a: (0 + 0.4)/2; b: (0.1 + 0)/2; c: (0.2 + 0)/2.
        assert!((a.avg_gap - 0.2).abs() < 1e-12);
        assert!((b.avg_gap - 0.05).abs() < 1e-12);
        assert!((c.avg_gap - 0.1).abs() < 1e-12);
        // win + tie + lose = total for every row.
        for r in &lb.rows {
            assert_eq!(r.win + r.tie + r.lose, r.total);
        }
    }

    #[test]
    fn leaderboard_rejects_empty_or_ragged() {
        assert!(leaderboard(&[], &[]).is_err());
        assert!(leaderboard(&["a".into()], &[vec![]]).is_err());
        assert!(
            leaderboard(&["a".into(), "b".into()], &[vec![0.5], vec![0.5, 0.6]]).is_err()
        );
    }
}
