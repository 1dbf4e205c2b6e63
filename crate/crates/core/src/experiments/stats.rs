use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::TrialResult;
use crate::error::{Error, Result};

/// Mean and population standard deviation (divisor `n`) of one config's
/// trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub config_id: String,
    pub encoding: String,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub dr: f64,
    pub n_trials: usize,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top5_mean: f64,
    pub top5_std: f64,
}

/// Sorting before summing makes the result independent of input order.
fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups results by `config_id` (sorted) and summarizes top-1/top-5.
pub fn aggregate(results: &[TrialResult]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<&str, Vec<&TrialResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.config_id.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(id, members)| {
            let first = members
                .first()
                .ok_or_else(|| Error::InvalidArgument(format!("empty group {id}")))?;
            let (top1_mean, top1_std) =
                mean_std(&mut members.iter().map(|r| r.top1).collect::<Vec<_>>());
            let (top5_mean, top5_std) =
                mean_std(&mut members.iter().map(|r| r.top5).collect::<Vec<_>>());
            Ok(AggregateRow {
                config_id: id.to_string(),
                encoding: first.encoding.clone(),
                epsilon: first.epsilon,
                alpha: first.alpha,
                dr: first.dr,
                n_trials: members.len(),
                top1_mean,
                top1_std,
                top5_mean,
                top5_std,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    /// Mean rank of each method (1 = best), in input column order.
    pub avg_ranks: Vec<f64>,
    pub chi2_f: f64,
    /// `None` when `N(k−1) = χ²_F` and the statistic is undefined.
    pub f_f: Option<f64>,
    /// Upper tail of `F(k−1, (k−1)(N−1))` at `f_f`.
    pub p_value: Option<f64>,
    /// Column indices sorted by average rank, best first.
    pub order: Vec<usize>,
    pub n_rows: usize,
    pub n_methods: usize,
}

/// Ranks of one row, highest score ranked 1, ties sharing the mean rank.
fn rank_row(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && row[idx[end]] == row[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Friedman rank statistic with the Iman–Davenport F correction.
///
/// `scores` has one row per data set / setting and one column per method;
/// higher scores are better.
pub fn friedman_iman_davenport(scores: &[Vec<f64>]) -> Result<FriedmanResult> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    let k = scores[0].len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 methods, got {k}"
        )));
    }
    for (i, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: row.len(),
                context: format!("score row {i}"),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score row {i}")));
        }
    }
    let mut sums = vec![0.0; k];
    for row in scores {
        for (s, r) in sums.iter_mut().zip(rank_row(row)) {
            *s += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let avg_ranks: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let sum_sq: f64 = avg_ranks.iter().map(|r| r * r).sum();
    let chi2_f = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0) * (kf + 1.0) / 4.0);
    let denom = nf * (kf - 1.0) - chi2_f;
    let f_f = (denom != 0.0).then(|| (nf - 1.0) * chi2_f / denom);
    let p_value = f_f.and_then(|f| {
        let dist = FisherSnedecor::new(kf - 1.0, (kf - 1.0) * (nf - 1.0)).ok()?;
        Some(if f <= 0.0 { 1.0 } else { dist.sf(f) })
    });
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| avg_ranks[a].total_cmp(&avg_ranks[b]).then(a.cmp(&b)));
    Ok(FriedmanResult {
        avg_ranks,
        chi2_f,
        f_f,
        p_value,
        order,
        n_rows: n,
        n_methods: k,
    })
}
