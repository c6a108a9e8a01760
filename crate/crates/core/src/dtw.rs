//! Classical dynamic time warping: plain and windowed DTW with path
//! extraction, soft-DTW, and the binary path matrix used as the
//! pre-training target.

use crate::error::{CoreError, Result};
use crate::math;
use crate::series::TimeSeries;
use alloc::vec;
use alloc::vec::Vec;

/// Local cost between frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Squared Euclidean distance (the default; consistent with the
    /// squared-Frobenius training losses).
    SqEuclid,
    /// Plain Euclidean distance.
    Euclid,
}

impl Metric {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        match self {
            Metric::SqEuclid => sq,
            Metric::Euclid => math::sqrt(sq),
        }
    }
}

/// Admissibility constraints on warping paths.
///
/// A Sakoe-Chiba band of half-width `w`: cell `(i,j)` (1-based) is
/// admissible iff `|j − i·J/I| ≤ w`. For equal lengths this is the
/// classical `|i−j| ≤ w`; for unequal lengths the band follows the scaled
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpConstraints {
    window: Option<usize>,
}

impl WarpConstraints {
    /// No constraint: every monotone path is admissible.
    pub fn unlimited() -> Self {
        Self { window: None }
    }

    /// Band of half-width `w` around the scaled diagonal.
    pub fn window(w: usize) -> Self {
        Self { window: Some(w) }
    }

    pub fn window_width(&self) -> Option<usize> {
        self.window
    }

    /// Whether 1-based cell `(i,j)` may appear on a path for an `I x J`
    /// problem.
    pub fn admissible(&self, i: usize, j: usize, i_len: usize, j_len: usize) -> bool {
        match self.window {
            None => true,
            Some(w) => {
                let diag = i as f64 * j_len as f64 / i_len as f64;
                math::abs(j as f64 - diag) <= w as f64
            }
        }
    }
}

/// Smoothing configuration for soft-DTW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftDtwConfig {
    gamma: f64,
}

impl SoftDtwConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CoreError::InvalidArgument {
                context: "soft_dtw",
                detail: alloc::format!("gamma must be a positive real, got {gamma}"),
            });
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// A monotone boundary-to-boundary warping path, stored as 1-based index
/// pairs from `(1,1)` to `(I,J)`; consecutive steps differ by `(1,0)`,
/// `(0,1)`, or `(1,1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPath {
    steps: Vec<(usize, usize)>,
}

impl WarpPath {
    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The path as a binary `I x J` matrix (row-major), 1 at each step.
    pub fn matrix_form(&self, i_len: usize, j_len: usize) -> Vec<f64> {
        let mut m = vec![0.0; i_len * j_len];
        for &(i, j) in &self.steps {
            m[(i - 1) * j_len + (j - 1)] = 1.0;
        }
        m
    }
}

/// Pairwise local costs: entry `(i,j)` is the metric between frame `i`
/// of `a` and frame `j` of `b`, row-major `I x J`.
pub fn local_cost_matrix(a: &TimeSeries, b: &TimeSeries, metric: Metric) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "local cost dimensions",
            left: vec![a.len(), a.dim()],
            right: vec![b.len(), b.dim()],
        });
    }
    let (i_len, j_len) = (a.len(), b.len());
    let mut cost = vec![0.0; i_len * j_len];
    for i in 0..i_len {
        let fa = a.frame(i);
        for j in 0..j_len {
            cost[i * j_len + j] = metric.between(fa, b.frame(j));
        }
    }
    Ok(cost)
}

/// Dynamic-programming DTW distance with one argmin path.
///
/// The recurrence accumulates `D[i][j] = cost(i,j) + min(D[i−1][j−1],
/// D[i−1][j], D[i][j−1])` over admissible cells. When the window admits
/// no boundary-to-boundary path the call errors rather than widening.
/// Backtrace ties resolve diagonal first, then `(i−1,j)`, then `(i,j−1)`,
/// fixed for determinism.
pub fn dtw(
    a: &TimeSeries,
    b: &TimeSeries,
    constraints: WarpConstraints,
    metric: Metric,
) -> Result<(f64, WarpPath)> {
    let cost = local_cost_matrix(a, b, metric)?;
    let (i_len, j_len) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; (i_len + 1) * (j_len + 1)];
    let stride = j_len + 1;
    acc[0] = 0.0;
    for i in 1..=i_len {
        for j in 1..=j_len {
            if !constraints.admissible(i, j, i_len, j_len) {
                continue;
            }
            let prev = min3(
                acc[(i - 1) * stride + (j - 1)],
                acc[(i - 1) * stride + j],
                acc[i * stride + (j - 1)],
            );
            if prev.is_finite() {
                acc[i * stride + j] = cost[(i - 1) * j_len + (j - 1)] + prev;
            }
        }
    }
    let distance = acc[i_len * stride + j_len];
    if !distance.is_finite() {
        return Err(CoreError::WindowTooNarrow {
            width: constraints.window_width().unwrap_or(0),
            rows: i_len,
            cols: j_len,
        });
    }

    let mut steps = Vec::with_capacity(i_len + j_len);
    let (mut i, mut j) = (i_len, j_len);
    while i > 1 || j > 1 {
        steps.push((i, j));
        // Re-take the min over the same three predecessor cells the DP
        // saw; comparing accumulator values directly keeps the choice
        // bit-exact. Priority on ties is part of the contract: diagonal,
        // then (i-1,j), then (i,j-1).
        let diag = if i > 1 && j > 1 {
            acc[(i - 1) * stride + (j - 1)]
        } else {
            f64::INFINITY
        };
        let up = if i > 1 { acc[(i - 1) * stride + j] } else { f64::INFINITY };
        let left = if j > 1 { acc[i * stride + (j - 1)] } else { f64::INFINITY };
        let best = min3(diag, up, left);
        if diag == best {
            i -= 1;
            j -= 1;
        } else if up == best {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    steps.push((1, 1));
    steps.reverse();
    Ok((distance, WarpPath { steps }))
}

/// Forward-only soft-DTW value. The `min` of the DTW recurrence becomes
/// `softmin_γ(a,b,c) = −γ·log(e^{−a/γ}+e^{−b/γ}+e^{−c/γ})`, evaluated
/// with a min-shift so large ratios never overflow. Always at most the
/// hard DTW distance; no windowing (it is a baseline distance here).
pub fn soft_dtw(a: &TimeSeries, b: &TimeSeries, config: SoftDtwConfig, metric: Metric) -> Result<f64> {
    let cost = local_cost_matrix(a, b, metric)?;
    let (i_len, j_len) = (a.len(), b.len());
    let gamma = config.gamma();
    let stride = j_len + 1;
    let mut acc = vec![f64::INFINITY; (i_len + 1) * (j_len + 1)];
    acc[0] = 0.0;
    for i in 1..=i_len {
        for j in 1..=j_len {
            let prev = softmin3(
                acc[(i - 1) * stride + (j - 1)],
                acc[(i - 1) * stride + j],
                acc[i * stride + (j - 1)],
                gamma,
            );
            acc[i * stride + j] = cost[(i - 1) * j_len + (j - 1)] + prev;
        }
    }
    Ok(acc[i_len * stride + j_len])
}

/// The binary pre-training target: the DTW path of the pair as an
/// `I x J` matrix. Continuity of the path guarantees every row has at
/// least one 1.
pub fn dtw_target_matrix(
    a: &TimeSeries,
    b: &TimeSeries,
    constraints: WarpConstraints,
    metric: Metric,
) -> Result<Vec<f64>> {
    let (_, path) = dtw(a, b, constraints, metric)?;
    Ok(path.matrix_form(a.len(), b.len()))
}

fn min3(a: f64, b: f64, c: f64) -> f64 {
    let m = if b < a { b } else { a };
    if c < m {
        c
    } else {
        m
    }
}

fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = min3(a, b, c);
    if !m.is_finite() {
        return m;
    }
    let sum = math::exp(-(a - m) / gamma) + math::exp(-(b - m) / gamma) + math::exp(-(c - m) / gamma);
    m - gamma * math::ln(sum)
}
