//! Pair sampling for contrastive training: same-class and
//! different-class pairs drawn uniformly over the eligible ordered
//! pairs, mixed at a configured ratio, plus a label-blind sampler for
//! the mimic pre-training phase.

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// One sampled ordered pair, as indices into the source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub same_class: bool,
}

/// A batch of pairs for one training iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pairs: Vec<PairSample>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PairSample> {
        self.pairs.iter()
    }

    /// `(same_class, different_class)` counts.
    pub fn composition(&self) -> (usize, usize) {
        let same = self.pairs.iter().filter(|p| p.same_class).count();
        (same, self.pairs.len() - same)
    }
}

/// Per-class index lists; also the error report when the structure is
/// too degenerate to sample from.
fn classes_of(ds: &Dataset) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, s) in ds.samples().iter().enumerate() {
        let label = s.label.ok_or_else(|| CoreError::DegenerateClasses {
            detail: String::from("contrastive sampling needs a label on every sample"),
        })?;
        classes.entry(label).or_default().push(idx);
    }
    Ok(classes)
}

/// Samples `batch_size` pairs honoring the `same:diff` ratio, both
/// kinds uniform over their eligible ordered pairs (with replacement
/// across draws). The same-class count is `batch·same/(same+diff)`
/// rounded to nearest.
pub fn sample_pairs(
    ds: &Dataset,
    rng: &mut Rng,
    batch_size: usize,
    ratio: (usize, usize),
) -> Result<PairBatch> {
    let (r_same, r_diff) = ratio;
    if r_same == 0 || r_diff == 0 || batch_size == 0 {
        return Err(CoreError::InvalidArgument {
            context: "sample_pairs",
            detail: alloc::format!(
                "ratio components and batch size must be positive, got {r_same}:{r_diff}, batch {batch_size}"
            ),
        });
    }
    let classes = classes_of(ds)?;
    let n = ds.len();

    // Same-class draws: pick a class with probability proportional to
    // its number of ordered pairs, then a pair within it.
    let weights: Vec<(usize, usize)> = classes
        .values()
        .map(|members| members.len() * members.len().saturating_sub(1))
        .enumerate()
        .collect();
    let total_same: usize = weights.iter().map(|(_, w)| w).sum();
    if total_same == 0 {
        return Err(CoreError::DegenerateClasses {
            detail: alloc::format!(
                "no same-class pair exists: {} classes, all singletons",
                classes.len()
            ),
        });
    }
    if classes.len() < 2 {
        return Err(CoreError::DegenerateClasses {
            detail: alloc::format!(
                "no different-class pair exists: dataset has a single class of {n} samples"
            ),
        });
    }
    let class_lists: Vec<&Vec<usize>> = classes.values().collect();

    let frac = r_same as f64 / (r_same + r_diff) as f64;
    let n_same = ((batch_size as f64 * frac + 0.5) as usize).min(batch_size);
    let n_diff = batch_size - n_same;

    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..n_same {
        let mut pick = rng.index(total_same);
        let mut chosen = 0;
        for &(c, w) in &weights {
            if pick < w {
                chosen = c;
                break;
            }
            pick -= w;
        }
        let members = class_lists[chosen];
        let m = members.len();
        let k = rng.index(m * (m - 1));
        let a = k / (m - 1);
        let r = k % (m - 1);
        let b = if r >= a { r + 1 } else { r };
        pairs.push(PairSample {
            a: members[a],
            b: members[b],
            same_class: true,
        });
    }
    for _ in 0..n_diff {
        // Rejection over ordered pairs keeps the draw uniform across
        // every different-class pair regardless of class imbalance.
        loop {
            let a = rng.index(n);
            let r = rng.index(n - 1);
            let b = if r >= a { r + 1 } else { r };
            if ds.samples()[a].label != ds.samples()[b].label {
                pairs.push(PairSample {
                    a,
                    b,
                    same_class: false,
                });
                break;
            }
        }
    }
    Ok(PairBatch { pairs })
}

/// Label-blind pair draws for pre-training: uniform over all ordered
/// pairs of distinct samples. The `same_class` flag is still filled in
/// when both labels exist, purely for trace bookkeeping.
pub fn sample_pairs_blind(ds: &Dataset, rng: &mut Rng, batch_size: usize) -> Result<PairBatch> {
    let n = ds.len();
    if n < 2 {
        return Err(CoreError::EmptyInput {
            context: "label-blind pair sampling",
        });
    }
    if batch_size == 0 {
        return Err(CoreError::InvalidArgument {
            context: "sample_pairs_blind",
            detail: alloc::format!("batch size must be positive"),
        });
    }
    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let a = rng.index(n);
        let r = rng.index(n - 1);
        let b = if r >= a { r + 1 } else { r };
        let same_class = match (ds.samples()[a].label, ds.samples()[b].label) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        };
        pairs.push(PairSample { a, b, same_class });
    }
    Ok(PairBatch { pairs })
}
