//! Discrimination and calibration metrics.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least 2 values for an interval, got {0}")]
    TooFewValues(usize),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvaluationError> {
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvaluationError::NonFiniteScore(s));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(EvaluationError::SingleClass);
    }
    Ok((pos, labels.len() - pos))
}

/// AUC by the Mann–Whitney statistic with midranks for ties, plus the ROC
/// points at every distinct threshold.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvaluationError> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, in integers: a tie group occupying
    // ranks start+1 ..= end has midrank (start + 1 + end) / 2.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += group_pos * (start as u64 + 1 + end as u64);
        start = end;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    let auc = twice_u as f64 / (2 * p * q) as f64;

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let threshold = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == threshold {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points, auc })
}

/// Mean with a two-sided Student t interval at `level`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<(f64, f64, f64), EvaluationError> {
    if values.len() < 2 {
        return Err(EvaluationError::TooFewValues(values.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvaluationError::InvalidLevel(level));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * (var / n).sqrt();
    Ok((mean, mean - half, mean + half))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BinScheme {
    #[default]
    EqualWidth,
    Quantile,
}

impl BinScheme {
    pub fn key(self) -> &'static str {
        match self {
            BinScheme::EqualWidth => "equal_width",
            BinScheme::Quantile => "quantile",
        }
    }

    pub fn from_key(key: &str) -> Option<BinScheme> {
        match key {
            "equal_width" => Some(BinScheme::EqualWidth),
            "quantile" => Some(BinScheme::Quantile),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationBin {
    /// Mean predicted probability; `None` for an empty bin.
    pub mean_pred: Option<f64>,
    /// Observed positive fraction; `None` for an empty bin.
    pub obs_frac: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCurve {
    pub scheme: BinScheme,
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationCurve {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Count-weighted mean of |mean predicted − observed| over populated bins.
    pub fn mean_abs_gap(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter_map(|b| Some(b.count as f64 * (b.mean_pred? - b.obs_frac?).abs()))
            .sum::<f64>()
            / total as f64
    }
}

pub fn calibration_bins(
    scores: &[f64],
    labels: &[bool],
    n_bins: usize,
    scheme: BinScheme,
) -> Result<CalibrationCurve, EvaluationError> {
    if n_bins < 2 {
        return Err(EvaluationError::TooFewBins(n_bins));
    }
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvaluationError::NonFiniteScore(s));
    }
    let n = scores.len();
    let bin_of: Vec<usize> = match scheme {
        BinScheme::EqualWidth => scores
            .iter()
            .map(|&s| ((s.clamp(0.0, 1.0) * n_bins as f64).floor() as usize).min(n_bins - 1))
            .collect(),
        BinScheme::Quantile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            let mut bins = vec![0; n];
            let mut start = 0;
            while start < n {
                // Tied scores share the bin of the first member.
                let bin = start * n_bins / n;
                let mut end = start;
                while end < n && scores[order[end]] == scores[order[start]] {
                    bins[order[end]] = bin;
                    end += 1;
                }
                start = end;
            }
            bins
        }
    };
    let mut sums = vec![(0.0, 0usize, 0usize); n_bins];
    for i in 0..n {
        let s = &mut sums[bin_of[i]];
        s.0 += scores[i];
        s.1 += labels[i] as usize;
        s.2 += 1;
    }
    let bins = sums
        .into_iter()
        .map(|(total, pos, count)| CalibrationBin {
            mean_pred: (count > 0).then(|| total / count as f64),
            obs_frac: (count > 0).then(|| pos as f64 / count as f64),
            count,
        })
        .collect();
    Ok(CalibrationCurve { scheme, bins })
}

/// Mean AUC and interval across resample iterations for one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    /// With a single value the interval collapses to that value.
    pub fn from_values(values: Vec<f64>, level: f64) -> Result<MetricSummary, EvaluationError> {
        let (mean, lower, upper) = match values.len() {
            0 => return Err(EvaluationError::TooFewValues(0)),
            1 => (values[0], values[0], values[0]),
            _ => mean_ci(&values, level)?,
        };
        Ok(MetricSummary {
            mean,
            lower,
            upper,
            values,
        })
    }

    /// Restricts the interval to `[lo, hi]`, for metrics with a bounded range.
    pub fn clamped(mut self, lo: f64, hi: f64) -> MetricSummary {
        self.lower = self.lower.clamp(lo, hi);
        self.upper = self.upper.clamp(lo, hi);
        self
    }

    /// `0.914 (0.910-0.918)`.
    pub fn display(&self) -> String {
        format!("{:.3} ({:.3}-{:.3})", self.mean, self.lower, self.upper)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucRecord {
    pub outcome: String,
    pub feature_class: String,
    pub iteration: usize,
    pub algorithm: String,
    pub auc: f64,
}

pub const AUC_HEADER: &str = "outcome,feature_class,iteration,algorithm,auc";
pub const CALIBRATION_HEADER: &str = "outcome,feature_class,bin,mean_pred,obs_frac,count";

pub fn write_auc_records<W: Write>(mut w: W, records: &[AucRecord]) -> std::io::Result<()> {
    writeln!(w, "{AUC_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:.6}",
            r.outcome, r.feature_class, r.iteration, r.algorithm, r.auc
        )?;
    }
    Ok(())
}

/// One block of rows per (outcome, feature class) curve. Empty bins leave
/// `mean_pred` and `obs_frac` blank.
pub fn write_calibration<W: Write>(mut w: W, curves: &[(String, String, CalibrationCurve)]) -> std::io::Result<()> {
    writeln!(w, "{CALIBRATION_HEADER}")?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (outcome, class, curve) in curves {
        for (b, bin) in curve.bins.iter().enumerate() {
            writeln!(
                w,
                "{outcome},{class},{b},{},{},{}",
                fmt(bin.mean_pred),
                fmt(bin.obs_frac),
                bin.count
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u64;
        let mut p = 0u64;
        for i in 0..scores.len() {
            if !labels[i] {
                continue;
            }
            p += 1;
            for j in 0..scores.len() {
                if labels[j] {
                    continue;
                }
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
        let q = labels.len() as u64 - p;
        twice as f64 / (2 * p * q) as f64
    }

    #[test]
    fn auc_examples() {
        let r = auc_roc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap().auc, 1.0);
        let tied = auc_roc(&[0.3; 5], &[true, false, true, false, false]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc_roc(&[0.1, 0.2], &[true, true]), Err(EvaluationError::SingleClass));
    }

    #[test]
    fn mean_ci_examples() {
        let (m, lo, hi) = mean_ci(&[0.8, 0.8, 0.8], 0.95).unwrap();
        assert!((m - 0.8).abs() < 1e-15 && (lo - 0.8).abs() < 1e-15 && (hi - 0.8).abs() < 1e-15);
        let (m, lo, hi) = mean_ci(&[0.79, 0.81], 0.95).unwrap();
        assert!((m - 0.8).abs() < 1e-12);
        assert!(((m - lo) - (hi - m)).abs() < 1e-12);
        // t_{1, 0.975} = 12.7062; sd/√n = 0.01.
        assert!((hi - m - 0.127062).abs() < 1e-5);
        assert_eq!(mean_ci(&[1.0], 0.95), Err(EvaluationError::TooFewValues(1)));
    }

    #[test]
    fn calibration_examples() {
        let c = calibration_bins(&[0.99; 4], &[false; 4], 10, BinScheme::EqualWidth).unwrap();
        assert_eq!(c.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(c.bins[9].count, 4);
        assert_eq!(c.bins[9].obs_frac, Some(0.0));
        assert_eq!(c.bins[0].obs_frac, None);
        assert!((c.mean_abs_gap() - 0.99).abs() < 1e-12);
        assert_eq!(calibration_bins(&[1.0], &[true], 10, BinScheme::EqualWidth).unwrap().bins[9].count, 1);
        assert_eq!(
            calibration_bins(&[0.5], &[true], 1, BinScheme::Quantile),
            Err(EvaluationError::TooFewBins(1))
        );
    }

    #[test]
    fn calibration_export_format() {
        let c = calibration_bins(&[0.05, 0.15], &[true, false], 2, BinScheme::EqualWidth).unwrap();
        let mut out = Vec::new();
        write_calibration(&mut out, &[("death".into(), "combined".into(), c)]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "outcome,feature_class,bin,mean_pred,obs_frac,count\n\
             death,combined,0,0.100000,0.500000,2\n\
             death,combined,1,,,0\n"
        );
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 19.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((scores, labels) in scored_labels()) {
            let pos = labels.iter().filter(|&&y| y).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let r = auc_roc(&scores, &labels).unwrap();
            prop_assert_eq!(r.auc, brute_auc(&scores, &labels));
            prop_assert!((r.trapezoid_area() - r.auc).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|y| !y).collect();
            prop_assert!((auc_roc(&scores, &flipped).unwrap().auc + r.auc - 1.0).abs() < 1e-12);
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc_roc(&transformed, &labels).unwrap().auc, r.auc);
            prop_assert!(r.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            prop_assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
        }

        #[test]
        fn quantile_bins_balance(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>() * 0.5) / n as f64).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let c = calibration_bins(&scores, &labels, k, BinScheme::Quantile).unwrap();
            prop_assert_eq!(c.total(), n);
            let counts: Vec<usize> = c.bins.iter().map(|b| b.count).collect();
            let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
            if n >= k {
                prop_assert!(hi - lo <= 1, "{:?}", counts);
            }
            for b in &c.bins {
                if let Some(o) = b.obs_frac {
                    prop_assert!((0.0..=1.0).contains(&o));
                }
            }
        }
    }
}
