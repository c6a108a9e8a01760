//! Evaluation statistics: k-NN classification over arbitrary distance
//! functions, error rates, McNemar's test, equal error rate, and
//! histogram exports. Everything here is deterministic and pure.

use crate::error::{CoreError, Result};
use crate::math;
use crate::series::TimeSeries;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

/// Query-by-reference distances, row-major `[n_queries, n_refs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n_queries: usize,
    n_refs: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n_queries: usize, n_refs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_queries * n_refs {
            return Err(CoreError::ShapeMismatch {
                context: "distance matrix",
                left: vec![n_queries, n_refs],
                right: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::NonFinite {
                context: "distance matrix",
            });
        }
        Ok(Self {
            n_queries,
            n_refs,
            values,
        })
    }

    /// Fills the matrix by evaluating `dist` on every (query, reference)
    /// pair.
    pub fn from_fn(
        queries: &[TimeSeries],
        refs: &[TimeSeries],
        mut dist: impl FnMut(&TimeSeries, &TimeSeries) -> Result<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(queries.len() * refs.len());
        for q in queries {
            for r in refs {
                values.push(dist(q, r)?);
            }
        }
        Self::new(queries.len(), refs.len(), values)
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_refs(&self) -> usize {
        self.n_refs
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.n_refs..(q + 1) * self.n_refs]
    }
}

/// Majority vote among the `k` nearest references.
///
/// Determinism contract: neighbors are ordered by (distance, reference
/// index); vote ties resolve by smaller summed distance within the tied
/// labels, then by smaller label id.
pub fn knn_classify(dist: &DistanceMatrix, train_labels: &[usize], k: usize) -> Result<Vec<usize>> {
    if train_labels.len() != dist.n_refs() {
        return Err(CoreError::ShapeMismatch {
            context: "knn labels",
            left: vec![dist.n_refs()],
            right: vec![train_labels.len()],
        });
    }
    if k == 0 || k > dist.n_refs() {
        return Err(CoreError::InvalidArgument {
            context: "knn_classify",
            detail: alloc::format!("k = {k} must lie in 1..={}", dist.n_refs()),
        });
    }
    let mut predictions = Vec::with_capacity(dist.n_queries());
    let mut order: Vec<usize> = Vec::new();
    for q in 0..dist.n_queries() {
        let row = dist.row(q);
        order.clear();
        order.extend(0..row.len());
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite distances").then(a.cmp(&b)));
        let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for &idx in &order[..k] {
            let entry = votes.entry(train_labels[idx]).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += row[idx];
        }
        let mut best: Option<(usize, usize, f64)> = None; // (label, count, sum)
        for (&label, &(count, sum)) in &votes {
            let better = match best {
                None => true,
                Some((bl, bc, bs)) => {
                    count > bc || (count == bc && (sum < bs || (sum == bs && label < bl)))
                }
            };
            if better {
                best = Some((label, count, sum));
            }
        }
        predictions.push(best.expect("k >= 1 guarantees a vote").0);
    }
    Ok(predictions)
}

/// Fraction of mismatches between predictions and ground truth.
pub fn error_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(CoreError::ShapeMismatch {
            context: "error rate",
            left: vec![predicted.len()],
            right: vec![truth.len()],
        });
    }
    if predicted.is_empty() {
        return Err(CoreError::EmptyInput { context: "error rate" });
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

/// Paired-correctness counts for two methods on the same test set:
/// `n01` = method 1 wrong where method 2 right, `n10` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable2x2 {
    pub n00: usize,
    pub n01: usize,
    pub n10: usize,
    pub n11: usize,
}

impl ContingencyTable2x2 {
    /// Builds the table from two prediction vectors and the truth.
    pub fn from_predictions(pred1: &[usize], pred2: &[usize], truth: &[usize]) -> Result<Self> {
        if pred1.len() != truth.len() || pred2.len() != truth.len() {
            return Err(CoreError::ShapeMismatch {
                context: "contingency table",
                left: vec![pred1.len(), pred2.len()],
                right: vec![truth.len()],
            });
        }
        let mut t = Self {
            n00: 0,
            n01: 0,
            n10: 0,
            n11: 0,
        };
        for ((p1, p2), tr) in pred1.iter().zip(pred2).zip(truth) {
            match (p1 == tr, p2 == tr) {
                (true, true) => t.n11 += 1,
                (false, true) => t.n01 += 1,
                (true, false) => t.n10 += 1,
                (false, false) => t.n00 += 1,
            }
        }
        Ok(t)
    }
}

/// Which McNemar variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McnemarMode {
    /// Two-sided exact binomial test on the discordant counts.
    Exact,
    /// Chi-squared with continuity correction, 1 degree of freedom.
    CorrectedChi2,
}

/// McNemar test outcome. `statistic` is present only for the
/// chi-squared mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McnemarOutcome {
    pub statistic: Option<f64>,
    pub p_value: f64,
}

/// McNemar's test on the discordant cells of a paired table.
///
/// Exact mode: `p = 2 * P(X <= min(n01, n10))` for
/// `X ~ Binomial(n01 + n10, 1/2)`, capped at 1. Corrected mode: the
/// statistic `(|n01 − n10| − 1)^2 / (n01 + n10)` against chi-squared
/// with one degree of freedom.
pub fn mcnemar(table: ContingencyTable2x2, mode: McnemarMode) -> Result<McnemarOutcome> {
    let n = table.n01 + table.n10;
    if n == 0 {
        return Err(CoreError::InvalidArgument {
            context: "mcnemar",
            detail: alloc::format!("no discordant pairs; the test is undefined"),
        });
    }
    match mode {
        McnemarMode::Exact => {
            let m = table.n01.min(table.n10);
            // Accumulate the binomial tail by term ratios:
            // C(n,0)/2^n is a power of two (exact), and each step
            // multiplies by (n-i+1)/i, so small tables come out exact
            // rather than through ln-gamma rounding.
            let mut coeff = 1.0;
            for _ in 0..n {
                coeff *= 0.5;
            }
            let mut tail = coeff;
            for i in 1..=m {
                coeff = coeff * (n - i + 1) as f64 / i as f64;
                tail += coeff;
            }
            let p = (2.0 * tail).min(1.0);
            Ok(McnemarOutcome {
                statistic: None,
                p_value: p,
            })
        }
        McnemarMode::CorrectedChi2 => {
            let diff = math::abs(table.n01 as f64 - table.n10 as f64);
            let stat = (diff - 1.0) * (diff - 1.0) / n as f64;
            let p = math::erfc(math::sqrt(stat / 2.0));
            Ok(McnemarOutcome {
                statistic: Some(stat),
                p_value: p,
            })
        }
    }
}

/// Equal error rate of a verification score set, where smaller scores
/// mean "accept".
///
/// Operating points are evaluated at every distinct score: acceptance at
/// threshold `t` means `score <= t`, `FAR(t)` is the accepted fraction
/// of forgeries and `FRR(t)` the rejected fraction of genuines. The EER
/// is taken where the two rates cross, linearly interpolating between
/// the adjacent operating points when no point gives exact equality.
pub fn eer(genuine: &[f64], forgery: &[f64]) -> Result<f64> {
    if genuine.is_empty() || forgery.is_empty() {
        return Err(CoreError::EmptyInput {
            context: "eer score populations",
        });
    }
    if genuine.iter().chain(forgery).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { context: "eer scores" });
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(forgery).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();

    let rates_at = |t: f64| -> (f64, f64) {
        let far = forgery.iter().filter(|&&s| s <= t).count() as f64 / forgery.len() as f64;
        let frr = genuine.iter().filter(|&&s| s > t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };

    // Below every score: nothing accepted.
    let (mut far_prev, mut frr_prev) = (0.0, 1.0);
    for &t in &thresholds {
        let (far, frr) = rates_at(t);
        if frr == far {
            return Ok(far);
        }
        if frr < far {
            // Crossed between the previous and this operating point;
            // intersect the connecting segment with FAR = FRR.
            let num = frr_prev - far_prev;
            let den = (frr_prev - far_prev) + (far - frr);
            let s = num / den;
            return Ok(far_prev + s * (far - far_prev));
        }
        far_prev = far;
        frr_prev = frr;
    }
    // Unreachable: at the largest score FAR = 1, FRR = 0.
    Err(CoreError::InvalidArgument {
        context: "eer",
        detail: alloc::format!("rates never crossed; scores are inconsistent"),
    })
}

/// Shared-edge histograms of two score populations, each normalized to
/// unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning the joint range of both populations.
    pub edges: Vec<f64>,
    /// Same-population densities per bin.
    pub same: Vec<f64>,
    /// Different-population densities per bin.
    pub diff: Vec<f64>,
}

/// Bins both populations over their joint range and normalizes each to
/// integrate to one.
pub fn histogram_export(same_dists: &[f64], diff_dists: &[f64], bins: usize) -> Result<Histogram> {
    if same_dists.is_empty() || diff_dists.is_empty() {
        return Err(CoreError::EmptyInput {
            context: "histogram populations",
        });
    }
    if bins == 0 {
        return Err(CoreError::InvalidArgument {
            context: "histogram_export",
            detail: alloc::format!("need at least one bin"),
        });
    }
    let all = same_dists.iter().chain(diff_dists);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in all {
        if !v.is_finite() {
            return Err(CoreError::NonFinite { context: "histogram" });
        }
        lo = if v < lo { v } else { lo };
        hi = if v > hi { v } else { hi };
    }
    // A degenerate single-point range still needs positive bin width.
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let fill = |xs: &[f64]| -> Vec<f64> {
        let mut counts = vec![0.0; bins];
        for &x in xs {
            let mut b = ((x - lo) / width) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1.0;
        }
        let norm = xs.len() as f64 * width;
        for c in &mut counts {
            *c /= norm;
        }
        counts
    };
    Ok(Histogram {
        edges,
        same: fill(same_dists),
        diff: fill(diff_dists),
    })
}

/// Averaged-reference verification scores for a subject-labeled dataset
/// with genuineness flags.
///
/// The first `refs_per_subject` genuine samples of each subject (in
/// dataset order) become references. Every remaining sample of that
/// subject is scored by its mean distance to those references;
/// references themselves are excluded from scoring. Returns the genuine
/// and forgery score populations.
pub fn verification_scores(
    samples: &[TimeSeries],
    refs_per_subject: usize,
    mut dist: impl FnMut(&TimeSeries, &TimeSeries) -> Result<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if refs_per_subject == 0 {
        return Err(CoreError::InvalidArgument {
            context: "verification_scores",
            detail: alloc::format!("need at least one reference per subject"),
        });
    }
    let mut subjects: BTreeMap<usize, Vec<&TimeSeries>> = BTreeMap::new();
    for s in samples {
        let label = s.label.ok_or(CoreError::DegenerateClasses {
            detail: alloc::string::String::from("verification sample without a subject label"),
        })?;
        if s.genuine.is_none() {
            return Err(CoreError::DegenerateClasses {
                detail: alloc::string::String::from("verification sample without a genuineness flag"),
            });
        }
        subjects.entry(label).or_default().push(s);
    }
    let mut genuine_scores = Vec::new();
    let mut forgery_scores = Vec::new();
    for (label, members) in &subjects {
        let refs: Vec<&&TimeSeries> = members
            .iter()
            .filter(|s| s.genuine == Some(true))
            .take(refs_per_subject)
            .collect();
        if refs.len() < refs_per_subject {
            return Err(CoreError::DegenerateClasses {
                detail: alloc::string::String::from("subject has fewer genuine samples than references requested"),
            });
        }
        for s in members {
            if refs.iter().any(|r| core::ptr::eq(**r, *s)) {
                continue;
            }
            let mut sum = 0.0;
            for r in &refs {
                sum += dist(s, r)?;
            }
            let score = sum / refs.len() as f64;
            if s.genuine == Some(true) {
                genuine_scores.push(score);
            } else {
                forgery_scores.push(score);
            }
        }
        let _ = label;
    }
    if genuine_scores.is_empty() || forgery_scores.is_empty() {
        return Err(CoreError::DegenerateClasses {
            detail: alloc::string::String::from("verification needs both genuine tests and forgeries"),
        });
    }
    Ok((genuine_scores, forgery_scores))
}
