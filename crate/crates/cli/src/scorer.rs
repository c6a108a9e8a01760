//! One distance interface over the evaluation surfaces: classical
//! warping baselines or a trained checkpoint (attention distance,
//! behind the frozen encoder when the checkpoint carries one).

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use attwarp_core::attention::CorrespondenceMatrices;
use attwarp_core::dtw::{dtw, soft_dtw, Metric, SoftDtwConfig, WarpConstraints};
use attwarp_core::eval::DistanceMatrix;
use attwarp_core::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Dtw,
    SoftDtw,
}

impl std::str::FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dtw" => Ok(Baseline::Dtw),
            "soft-dtw" => Ok(Baseline::SoftDtw),
            other => Err(format!("unknown baseline {other:?} (expected dtw or soft-dtw)")),
        }
    }
}

pub enum Scorer {
    Dtw { constraints: WarpConstraints },
    SoftDtw { config: SoftDtwConfig },
    Model(Checkpoint),
}

impl Scorer {
    pub fn baseline(kind: Baseline, window: Option<usize>, gamma: f64) -> Result<Self> {
        match kind {
            Baseline::Dtw => {
                let constraints = match window {
                    Some(w) => WarpConstraints::window(w),
                    None => WarpConstraints::unlimited(),
                };
                Ok(Scorer::Dtw { constraints })
            }
            Baseline::SoftDtw => {
                if window.is_some() {
                    return Err(CliError::usage("--window applies only to the dtw baseline"));
                }
                Ok(Scorer::SoftDtw {
                    config: SoftDtwConfig::new(gamma)?,
                })
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Dtw { .. } => "dtw",
            Scorer::SoftDtw { .. } => "soft-dtw",
            Scorer::Model(_) => "checkpoint",
        }
    }

    /// Checkpoint scorers embed once up front so the pairwise loops see
    /// only the attention input space; baselines pass series through.
    pub fn transform(&self, samples: &[TimeSeries]) -> Result<Vec<TimeSeries>> {
        match self {
            Scorer::Model(ckpt) => match &ckpt.encoder {
                Some(enc) => Ok(samples
                    .iter()
                    .map(|s| enc.embed(s))
                    .collect::<attwarp_core::error::Result<_>>()?),
                None => Ok(samples.to_vec()),
            },
            _ => Ok(samples.to_vec()),
        }
    }

    /// Distance between two already-transformed series. Returns the
    /// core error type so it composes with core evaluation closures;
    /// command code converts at the boundary.
    pub fn distance(&self, a: &TimeSeries, b: &TimeSeries) -> attwarp_core::error::Result<f64> {
        match self {
            Scorer::Dtw { constraints } => Ok(dtw(a, b, *constraints, Metric::SqEuclid)?.0),
            Scorer::SoftDtw { config } => soft_dtw(a, b, *config, Metric::SqEuclid),
            Scorer::Model(ckpt) => ckpt.model.pair_distance(a, b),
        }
    }

    /// Correspondence matrices for one transformed pair; checkpoint
    /// scorers only.
    pub fn attend(&self, a: &TimeSeries, b: &TimeSeries) -> Result<CorrespondenceMatrices> {
        match self {
            Scorer::Model(ckpt) => Ok(ckpt.model.attend(a, b)?),
            _ => Err(CliError::usage(
                "attention matrices require --checkpoint; baselines have none",
            )),
        }
    }
}

/// Full query-by-reference distance matrix, optionally sharded over
/// `workers` threads. Each cell is computed independently, so the
/// worker count cannot change any value — only wall-clock time.
pub fn distance_matrix(
    scorer: &Scorer,
    queries: &[TimeSeries],
    refs: &[TimeSeries],
    workers: usize,
) -> Result<DistanceMatrix> {
    let n_q = queries.len();
    let n_r = refs.len();
    if n_q == 0 || n_r == 0 {
        return Err(CliError::data(
            "distance matrix needs at least one query and one reference",
        ));
    }
    let mut values = vec![0.0; n_q * n_r];
    let workers = workers.max(1).min(n_q);
    if workers == 1 {
        for (q, query) in queries.iter().enumerate() {
            for (r, reference) in refs.iter().enumerate() {
                values[q * n_r + r] = scorer.distance(query, reference)?;
            }
        }
    } else {
        let chunk = n_q.div_ceil(workers);
        let mut failure: Option<CliError> = None;
        std::thread::scope(|scope| {
            let handles: Vec<_> = values
                .chunks_mut(chunk * n_r)
                .enumerate()
                .map(|(w, slab)| {
                    scope.spawn(move || -> Result<()> {
                        let q0 = w * chunk;
                        for (dq, row) in slab.chunks_mut(n_r).enumerate() {
                            let query = &queries[q0 + dq];
                            for (r, reference) in refs.iter().enumerate() {
                                row[r] = scorer.distance(query, reference)?;
                            }
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                if let Err(e) = h.join().expect("distance worker panicked") {
                    failure.get_or_insert(e);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(DistanceMatrix::new(n_q, n_r, values)?)
}
