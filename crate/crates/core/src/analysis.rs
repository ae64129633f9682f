//! How well discrepancy scores rank samples by their true loss.

use std::fmt;

use crate::discrepancy::DiscrepancyScore;
use crate::error::{Error, Result};
use crate::io::CsvTable;

pub const DEFAULT_NUM_BUCKETS: usize = 20;
pub const DEFAULT_TOP_LOSS_FRACTION: f64 = 0.25;

/// Sampling fractions reported by default: 5 %, 10 %, ..., 100 %.
pub fn default_sampling_fractions() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// A rank correlation, or `Undefined` when either input is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    Undefined,
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(*v),
            Correlation::Undefined => None,
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Correlation::Value(v) => write!(f, "{v}"),
            Correlation::Undefined => f.write_str("undefined"),
        }
    }
}

/// 1-based ranks; tied values share the mean of their positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Value((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::argument(format!(
            "spearman needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::argument("spearman needs at least two points"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in spearman input".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Positions of `scores` sorted by value descending, then sample index.
fn descending_order(scores: &[DiscrepancyScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .value
            .total_cmp(&scores[i].value)
            .then(scores[i].sample_index.cmp(&scores[j].sample_index))
    });
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    /// Percentile range of the score ranking, 0 = highest score.
    pub from_pct: f64,
    pub to_pct: f64,
    pub count: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
}

impl BucketReport {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["bucket", "from_pct", "to_pct", "count", "mean_loss"]);
        for (i, b) in self.buckets.iter().enumerate() {
            t.row(&[&i, &b.from_pct, &b.to_pct, &b.count, &b.mean_loss]);
        }
        t
    }
}

fn check_aligned(scores: &[DiscrepancyScore], losses: &[f64]) -> Result<()> {
    if scores.len() != losses.len() {
        return Err(Error::argument(format!(
            "{} scores but {} losses",
            scores.len(),
            losses.len()
        )));
    }
    if scores.iter().any(|s| s.value.is_nan()) || losses.iter().any(|l| l.is_nan()) {
        return Err(Error::Numeric("NaN score or loss".into()));
    }
    Ok(())
}

/// Sorts samples by score (highest first), splits them into `num_buckets`
/// near-equal groups and averages the true loss in each.
pub fn bucket_mean_loss(
    scores: &[DiscrepancyScore],
    real_losses: &[f64],
    num_buckets: usize,
) -> Result<BucketReport> {
    check_aligned(scores, real_losses)?;
    if num_buckets < 2 {
        return Err(Error::argument("num_buckets must be at least 2"));
    }
    let n = scores.len();
    if n < num_buckets {
        return Err(Error::argument(format!(
            "{n} samples cannot fill {num_buckets} buckets"
        )));
    }
    let order = descending_order(scores);
    let buckets = (0..num_buckets)
        .map(|j| {
            let (lo, hi) = (j * n / num_buckets, (j + 1) * n / num_buckets);
            let sum: f64 = order[lo..hi].iter().map(|&k| real_losses[k]).sum();
            Bucket {
                from_pct: 100.0 * j as f64 / num_buckets as f64,
                to_pct: 100.0 * (j + 1) as f64 / num_buckets as f64,
                count: hi - lo,
                mean_loss: sum / (hi - lo) as f64,
            }
        })
        .collect();
    Ok(BucketReport { buckets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureCurve {
    pub top_loss_fraction: f64,
    pub sampling_fractions: Vec<f64>,
    /// Share of the top-loss set recovered at each sampling fraction.
    pub captured: Vec<f64>,
}

impl CaptureCurve {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["sampling_fraction", "top_loss_fraction", "captured"]);
        for (p, c) in self.sampling_fractions.iter().zip(&self.captured) {
            t.row(&[p, &self.top_loss_fraction, c]);
        }
        t
    }
}

fn prefix_len(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// For each sampling fraction `p`, the share of the top-`q` samples by true
/// loss that appear among the top-`p` samples by score.
pub fn capture_curve(
    scores: &[DiscrepancyScore],
    real_losses: &[f64],
    top_loss_fraction: f64,
    sampling_fractions: &[f64],
) -> Result<CaptureCurve> {
    check_aligned(scores, real_losses)?;
    if scores.is_empty() {
        return Err(Error::argument("capture curve needs at least one sample"));
    }
    let in_unit = |f: f64| f > 0.0 && f <= 1.0;
    if !in_unit(top_loss_fraction) || !sampling_fractions.iter().all(|&p| in_unit(p)) {
        return Err(Error::argument("fractions must lie in (0, 1]"));
    }
    let n = scores.len();
    let mut by_loss: Vec<usize> = (0..n).collect();
    by_loss.sort_by(|&i, &j| {
        real_losses[j]
            .total_cmp(&real_losses[i])
            .then(scores[i].sample_index.cmp(&scores[j].sample_index))
    });
    let top_q = prefix_len(top_loss_fraction, n);
    let mut is_top = vec![false; n];
    for &k in &by_loss[..top_q] {
        is_top[k] = true;
    }
    // hits[m] = number of top-loss samples among the first m by score
    let by_score = descending_order(scores);
    let mut hits = vec![0usize; n + 1];
    for (m, &k) in by_score.iter().enumerate() {
        hits[m + 1] = hits[m] + is_top[k] as usize;
    }
    let captured = sampling_fractions
        .iter()
        .map(|&p| hits[prefix_len(p, n)] as f64 / top_q as f64)
        .collect();
    Ok(CaptureCurve {
        top_loss_fraction,
        sampling_fractions: sampling_fractions.to_vec(),
        captured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn scores(values: &[f64]) -> Vec<DiscrepancyScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| DiscrepancyScore {
                sample_index: i,
                value: v,
            })
            .collect()
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            spearman(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap(),
            Correlation::Value(1.0)
        );
        assert_eq!(
            spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            Correlation::Value(-1.0)
        );
        assert_eq!(spearman(&a, &[5.0; 4]).unwrap(), Correlation::Undefined);
        assert_eq!(Correlation::Undefined.to_string(), "undefined");
        assert!(spearman(&a, &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_matches_rank_difference_formula() {
        // without ties, rho = 1 - 6 * sum d^2 / (n (n^2 - 1))
        let a = [0.3, 1.7, -0.2, 5.0, 2.2, 0.9];
        let b = [2.0, 0.1, 0.5, 3.0, 4.0, -1.0];
        let ra = [2.0, 4.0, 1.0, 6.0, 5.0, 3.0];
        let rb = [4.0, 2.0, 3.0, 5.0, 6.0, 1.0];
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        let want = 1.0 - 6.0 * d2 / (6.0 * 35.0);
        let got = spearman(&a, &b).unwrap().value().unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[2.0, 1.0, 2.0, 3.0]),
            vec![2.5, 1.0, 2.5, 4.0]
        );
    }

    #[test]
    fn perfect_estimator_orders_buckets() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = bucket_mean_loss(&scores(&v), &v, 2).unwrap();
        assert!(r.buckets[0].mean_loss > r.buckets[1].mean_loss);
        let flat = bucket_mean_loss(&scores(&v), &[0.7; 100], 5).unwrap();
        assert!(flat
            .buckets
            .iter()
            .all(|b| (b.mean_loss - 0.7).abs() < 1e-12));
        assert!(bucket_mean_loss(&scores(&v), &v[1..], 2).is_err());
        assert!(bucket_mean_loss(&scores(&v), &v, 1).is_err());
    }

    #[test]
    fn buckets_match_brute_force() {
        let mut rng = crate::seeding::rng_for(5);
        let n = 1003;
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let l: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let r = bucket_mean_loss(&scores(&s), &l, DEFAULT_NUM_BUCKETS).unwrap();
        // independent oracle: for each sample count how many scores beat it
        let rank = |i: usize| s.iter().filter(|&&x| x > s[i]).count();
        for (j, b) in r.buckets.iter().enumerate() {
            let (lo, hi) = (j * n / 20, (j + 1) * n / 20);
            let members: Vec<usize> = (0..n).filter(|&i| (lo..hi).contains(&rank(i))).collect();
            let mean = members.iter().map(|&i| l[i]).sum::<f64>() / members.len() as f64;
            assert_eq!(b.count, members.len());
            assert!((b.mean_loss - mean).abs() < 1e-12);
        }
        let sizes: Vec<usize> = r.buckets.iter().map(|b| b.count).collect();
        assert_eq!(sizes.iter().sum::<usize>(), n);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn capture_trivial_cases() {
        let v: Vec<f64> = (0..40).map(|i| (i * 7 % 40) as f64).collect();
        let c = capture_curve(&scores(&v), &v, 0.25, &[0.25, 1.0]).unwrap();
        assert_eq!(c.captured, vec![1.0, 1.0]);
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        let c = capture_curve(&scores(&rev), &v, 0.25, &[0.25, 1.0]).unwrap();
        assert_eq!(c.captured, vec![0.0, 1.0]);
        assert!(capture_curve(&scores(&v), &v, 0.0, &[0.5]).is_err());
        assert!(capture_curve(&scores(&v), &v, 0.25, &[1.5]).is_err());
    }

    #[test]
    fn random_scores_capture_at_chance() {
        // top-q set of 2500 among 10000; sampling 2500 at random hits a
        // hypergeometric count with mean 625, i.e. capture 0.25
        let mut rng = crate::seeding::rng_for(11);
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let l: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let c = capture_curve(&scores(&s), &l, 0.25, &[0.25]).unwrap();
        assert!((c.captured[0] - 0.25).abs() <= 0.03, "{}", c.captured[0]);
    }

    proptest! {
        #[test]
        fn capture_is_monotone_and_bounded(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200),
            q in 0.01f64..1.0,
        ) {
            let (s, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let c = capture_curve(&scores(&s), &l, q, &default_sampling_fractions()).unwrap();
            for w in c.captured.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(c.captured.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert_eq!(*c.captured.last().unwrap(), 1.0);
        }

        #[test]
        fn rank_statistics_ignore_monotone_transforms(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 20..200),
        ) {
            let (s, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(
                bucket_mean_loss(&scores(&s), &l, 4).unwrap(),
                bucket_mean_loss(&scores(&t), &l, 4).unwrap()
            );
            prop_assert_eq!(
                capture_curve(&scores(&s), &l, 0.3, &[0.1, 0.5]).unwrap(),
                capture_curve(&scores(&t), &l, 0.3, &[0.1, 0.5]).unwrap()
            );
            prop_assert_eq!(spearman(&s, &l).unwrap(), spearman(&t, &l).unwrap());
        }

        #[test]
        fn spearman_is_bounded_and_symmetric(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..100),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = spearman(&a, &b).unwrap();
            prop_assert_eq!(ab, spearman(&b, &a).unwrap());
            if let Some(v) = ab.value() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
