//! Dataset containers, normalization, resampling, splitting, and
//! synthetic data for desk-scale verification.

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::Rng;
use crate::series::TimeSeries;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// A named collection of series sharing a channel count. Per-sample
/// lengths may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    samples: Vec<TimeSeries>,
}

impl Dataset {
    /// Builds a dataset, requiring at least one sample and a uniform
    /// channel count.
    pub fn new(name: impl Into<String>, samples: Vec<TimeSeries>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::EmptyInput { context: "dataset" });
        }
        let dim = samples[0].dim();
        if samples.iter().any(|s| s.dim() != dim) {
            return Err(CoreError::ShapeMismatch {
                context: "dataset channel count",
                left: vec![dim],
                right: vec![samples.iter().map(|s| s.dim()).find(|&d| d != dim).unwrap_or(dim)],
            });
        }
        Ok(Self {
            name: name.into(),
            dim,
            samples,
        })
    }

    /// An empty subset carrier with this dataset's name and channel
    /// count; produced by [`split`] for zero-fraction parts.
    fn empty_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            dim: self.dim,
            samples: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TimeSeries] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TimeSeries> {
        self.samples
    }

    /// Distinct labels in ascending order (unlabeled samples ignored).
    pub fn labels(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self.samples.iter().filter_map(|s| s.label).collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// How to partition a dataset. Fractions apply to sample counts and may
/// leave a remainder, which becomes the test part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.train_fraction >= 0.0
            && self.val_fraction >= 0.0
            && self.train_fraction + self.val_fraction <= 1.0 + 1e-12;
        if !ok {
            return Err(CoreError::InvalidArgument {
                context: "split",
                detail: alloc::format!(
                    "fractions ({}, {}) must be nonnegative and sum to at most 1",
                    self.train_fraction,
                    self.val_fraction
                ),
            });
        }
        Ok(())
    }
}

/// The three disjoint parts of a split; `val` and `test` may be empty.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seed-deterministic partition of a dataset.
///
/// Stratified mode shuffles and cuts each label group separately so
/// class proportions carry into every part; a single-sample class goes
/// to train (documented fallback). Unlabeled samples form their own
/// group. The parts are disjoint and their union is the input.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).split("split");
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_label: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
        for (i, s) in ds.samples().iter().enumerate() {
            by_label.entry(s.label).or_default().push(i);
        }
        by_label.into_values().collect()
    } else {
        vec![(0..ds.len()).collect()]
    };

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        rng.shuffle(&mut group);
        let n = group.len();
        let mut n_train = round_count(spec.train_fraction, n);
        if n == 1 && spec.stratified && spec.train_fraction > 0.0 {
            n_train = 1; // single-sample classes cannot be split
        }
        let n_val = round_count(spec.val_fraction, n).min(n - n_train);
        for (pos, &idx) in group.iter().enumerate() {
            if pos < n_train {
                train.push(idx);
            } else if pos < n_train + n_val {
                val.push(idx);
            } else {
                test.push(idx);
            }
        }
    }

    let take = |indices: &[usize]| -> Dataset {
        if indices.is_empty() {
            return ds.empty_like();
        }
        let samples = indices.iter().map(|&i| ds.samples()[i].clone()).collect();
        Dataset {
            name: ds.name().into(),
            dim: ds.dim(),
            samples,
        }
    };
    Ok(Split {
        train: take(&train),
        val: take(&val),
        test: take(&test),
    })
}

fn round_count(fraction: f64, n: usize) -> usize {
    let c = math::floor(fraction * n as f64 + 0.5) as usize;
    c.min(n)
}

/// Per-sample, per-channel standardization to zero mean and unit
/// variance (population). Channels whose variance is at most `eps` map
/// to all zeros instead of exploding.
pub fn znormalize(ds: &Dataset, eps: f64) -> Dataset {
    transform_samples(ds, |s| znormalize_series(s, eps))
}

fn znormalize_series(s: &TimeSeries, eps: f64) -> TimeSeries {
    let (len, dim) = (s.len(), s.dim());
    let mut out = s.clone();
    for d in 0..dim {
        let mean = (0..len).map(|i| s.frame(i)[d]).sum::<f64>() / len as f64;
        let var = (0..len).map(|i| (s.frame(i)[d] - mean) * (s.frame(i)[d] - mean)).sum::<f64>() / len as f64;
        if var <= eps {
            for i in 0..len {
                out.values_mut()[i * dim + d] = 0.0;
            }
        } else {
            let inv = 1.0 / math::sqrt(var);
            for i in 0..len {
                out.values_mut()[i * dim + d] = (s.frame(i)[d] - mean) * inv;
            }
        }
    }
    out
}

/// Dataset-level alternative to [`znormalize`]: channel statistics are
/// pooled over every frame of every sample before standardizing.
pub fn znormalize_pooled(ds: &Dataset, eps: f64) -> Dataset {
    let dim = ds.dim();
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for s in ds.samples() {
        for i in 0..s.len() {
            for d in 0..dim {
                mean[d] += s.frame(i)[d];
            }
        }
        count += s.len();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dim];
    for s in ds.samples() {
        for i in 0..s.len() {
            for d in 0..dim {
                let diff = s.frame(i)[d] - mean[d];
                var[d] += diff * diff;
            }
        }
    }
    for v in &mut var {
        *v /= count as f64;
    }
    transform_samples(ds, |s| {
        let mut out = s.clone();
        for d in 0..dim {
            if var[d] <= eps {
                for i in 0..s.len() {
                    out.values_mut()[i * dim + d] = 0.0;
                }
            } else {
                let inv = 1.0 / math::sqrt(var[d]);
                for i in 0..s.len() {
                    out.values_mut()[i * dim + d] = (s.frame(i)[d] - mean[d]) * inv;
                }
            }
        }
        out
    })
}

/// Per-sample, per-channel affine map of the observed min/max onto
/// `[lo, hi]`; constant channels map to the midpoint.
pub fn range_normalize(ds: &Dataset, lo: f64, hi: f64) -> Result<Dataset> {
    if !(lo < hi) {
        return Err(CoreError::InvalidArgument {
            context: "range_normalize",
            detail: alloc::format!("need lo < hi, got [{lo}, {hi}]"),
        });
    }
    Ok(transform_samples(ds, |s| {
        let (len, dim) = (s.len(), s.dim());
        let mut out = s.clone();
        for d in 0..dim {
            let mut mn = f64::INFINITY;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..len {
                let v = s.frame(i)[d];
                mn = if v < mn { v } else { mn };
                mx = if v > mx { v } else { mx };
            }
            if mx == mn {
                for i in 0..len {
                    out.values_mut()[i * dim + d] = (lo + hi) / 2.0;
                }
            } else {
                let scale = (hi - lo) / (mx - mn);
                for i in 0..len {
                    out.values_mut()[i * dim + d] = lo + (s.frame(i)[d] - mn) * scale;
                }
            }
        }
        out
    }))
}

fn transform_samples(ds: &Dataset, f: impl Fn(&TimeSeries) -> TimeSeries) -> Dataset {
    Dataset {
        name: ds.name().into(),
        dim: ds.dim(),
        samples: ds.samples().iter().map(f).collect(),
    }
}

/// Piecewise-linear resampling to `target_len` frames at uniform
/// positions; endpoints are preserved exactly, and a same-length request
/// returns a clone.
pub fn resample_linear(x: &TimeSeries, target_len: usize) -> Result<TimeSeries> {
    if target_len < 2 {
        return Err(CoreError::InvalidArgument {
            context: "resample_linear",
            detail: alloc::format!("target length {target_len} must be at least 2"),
        });
    }
    if target_len == x.len() {
        return Ok(x.clone());
    }
    let (len, dim) = (x.len(), x.dim());
    let mut values = vec![0.0; target_len * dim];
    for k in 0..target_len {
        let pos = k as f64 * (len - 1) as f64 / (target_len - 1) as f64;
        let i0 = math::floor(pos) as usize;
        let i0 = i0.min(len - 2);
        let t = pos - i0 as f64;
        for d in 0..dim {
            let a = x.frame(i0)[d];
            let b = x.frame(i0 + 1)[d];
            values[k * dim + d] = a + t * (b - a);
        }
    }
    let mut out = TimeSeries::new(values, target_len, dim)?;
    out.label = x.label;
    out.id = x.id.clone();
    out.genuine = x.genuine;
    Ok(out)
}

/// A smooth prototype: a sum of three random-phase sinusoids evaluated
/// on [0,1].
fn sinusoid_prototype(rng: &mut Rng) -> impl Fn(f64) -> f64 {
    let mut parts = [(0.0, 0.0, 0.0); 3];
    for p in &mut parts {
        let amp = rng.uniform_in(0.5, 1.5);
        let freq = rng.uniform_in(0.5, 3.0);
        let phase = rng.uniform_in(0.0, 2.0 * core::f64::consts::PI);
        *p = (amp, freq, phase);
    }
    move |t: f64| {
        parts
            .iter()
            .map(|&(amp, freq, phase)| amp * math::sin(2.0 * core::f64::consts::PI * freq * t + phase))
            .sum()
    }
}

/// A random smooth monotone warp of [0,1]: the normalized cumulative sum
/// of positive increments `exp(strength * z_i)`, which is the identity
/// at strength 0.
fn monotone_warp(rng: &mut Rng, length: usize, strength: f64) -> Vec<f64> {
    let mut increments = vec![0.0; length - 1];
    for inc in &mut increments {
        *inc = math::exp(strength * rng.normal());
    }
    let total: f64 = increments.iter().sum();
    let mut positions = vec![0.0; length];
    let mut acc = 0.0;
    for (i, &inc) in increments.iter().enumerate() {
        acc += inc;
        positions[i + 1] = acc / total;
    }
    positions[length - 1] = 1.0;
    positions
}

/// Synthetic classification data: each class is a smooth prototype and
/// each sample is that prototype seen through a random monotone time
/// warp plus white noise. Fully determined by the generator's seed.
pub fn synth_warped_classes(
    rng: &mut Rng,
    n_classes: usize,
    n_per_class: usize,
    length: usize,
    warp_strength: f64,
    noise: f64,
) -> Result<Dataset> {
    if n_classes == 0 || n_per_class == 0 || length < 2 {
        return Err(CoreError::InvalidArgument {
            context: "synth_warped_classes",
            detail: alloc::format!("need classes >= 1, samples >= 1, length >= 2"),
        });
    }
    let prototypes: Vec<_> = (0..n_classes).map(|_| sinusoid_prototype(rng)).collect();
    let mut samples = Vec::with_capacity(n_classes * n_per_class);
    for (class, proto) in prototypes.iter().enumerate() {
        for k in 0..n_per_class {
            let warp = monotone_warp(rng, length, warp_strength);
            let values: Vec<f64> = warp.iter().map(|&t| proto(t) + noise * rng.normal()).collect();
            samples.push(
                TimeSeries::new(values, length, 1)?
                    .with_label(class)
                    .with_id(alloc::format!("c{class}-{k}")),
            );
        }
    }
    Dataset::new("synth-warped", samples)
}

/// Synthetic verification data: every subject has a prototype; genuine
/// samples warp and noise it, forgeries warp an interpolation
/// `(1-weight)*own + weight*other` toward another subject's prototype.
/// Weight 0 makes forgeries indistinguishable from genuine samples;
/// weight 1 makes them other subjects outright.
pub fn synth_subjects(
    rng: &mut Rng,
    n_subjects: usize,
    genuine_per: usize,
    forgery_per: usize,
    length: usize,
    forgery_weight: f64,
) -> Result<Dataset> {
    if n_subjects < 2 || genuine_per == 0 || forgery_per == 0 || length < 2 {
        return Err(CoreError::InvalidArgument {
            context: "synth_subjects",
            detail: alloc::format!("need >= 2 subjects, positive sample counts, length >= 2"),
        });
    }
    if !(0.0..=1.0).contains(&forgery_weight) {
        return Err(CoreError::InvalidArgument {
            context: "synth_subjects",
            detail: alloc::format!("forgery weight {forgery_weight} must lie in [0, 1]"),
        });
    }
    const WARP: f64 = 0.35;
    const NOISE: f64 = 0.05;
    let prototypes: Vec<_> = (0..n_subjects).map(|_| sinusoid_prototype(rng)).collect();
    let mut samples = Vec::new();
    for subject in 0..n_subjects {
        for k in 0..genuine_per {
            let warp = monotone_warp(rng, length, WARP);
            let values: Vec<f64> = warp
                .iter()
                .map(|&t| prototypes[subject](t) + NOISE * rng.normal())
                .collect();
            samples.push(
                TimeSeries::new(values, length, 1)?
                    .with_label(subject)
                    .with_id(alloc::format!("s{subject}-g{k}"))
                    .with_genuine(true),
            );
        }
        for k in 0..forgery_per {
            let other = {
                let pick = rng.index(n_subjects - 1);
                if pick >= subject {
                    pick + 1
                } else {
                    pick
                }
            };
            let warp = monotone_warp(rng, length, WARP);
            let values: Vec<f64> = warp
                .iter()
                .map(|&t| {
                    let blended = (1.0 - forgery_weight) * prototypes[subject](t) + forgery_weight * prototypes[other](t);
                    blended + NOISE * rng.normal()
                })
                .collect();
            samples.push(
                TimeSeries::new(values, length, 1)?
                    .with_label(subject)
                    .with_id(alloc::format!("s{subject}-f{k}"))
                    .with_genuine(false),
            );
        }
    }
    Dataset::new("synth-subjects", samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(per_class: usize) -> Dataset {
        let mut samples = Vec::new();
        for class in 0..2 {
            for k in 0..per_class {
                let base = class as f64 * 10.0 + k as f64;
                samples.push(
                    TimeSeries::univariate(vec![base, base + 1.0, base + 2.0])
                        .unwrap()
                        .with_label(class),
                );
            }
        }
        Dataset::new("toy", samples).unwrap()
    }

    #[test]
    fn dataset_rejects_mixed_channel_counts() {
        let a = TimeSeries::univariate(vec![0.0, 1.0]).unwrap();
        let b = TimeSeries::new(vec![0.0; 4], 2, 2).unwrap();
        assert!(Dataset::new("bad", vec![a, b]).is_err());
    }

    #[test]
    fn znormalize_gives_zero_mean_unit_variance() {
        let ds = Dataset::new(
            "z",
            vec![TimeSeries::univariate(vec![1.0, 2.0, 3.0]).unwrap()],
        )
        .unwrap();
        let z = znormalize(&ds, 1e-12);
        let v = z.samples()[0].values();
        let mean: f64 = v.iter().sum::<f64>() / 3.0;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn znormalize_maps_constant_channels_to_zero() {
        let ds = Dataset::new(
            "z",
            vec![TimeSeries::univariate(vec![4.0, 4.0, 4.0]).unwrap()],
        )
        .unwrap();
        let z = znormalize(&ds, 1e-12);
        assert_eq!(z.samples()[0].values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn znormalize_is_idempotent_up_to_eps() {
        let ds = Dataset::new(
            "z",
            vec![TimeSeries::univariate(vec![0.5, -1.5, 3.0, 0.25]).unwrap()],
        )
        .unwrap();
        let once = znormalize(&ds, 1e-12);
        let twice = znormalize(&once, 1e-12);
        for (a, b) in once.samples()[0].values().iter().zip(twice.samples()[0].values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn range_normalize_hits_both_endpoints() {
        let ds = Dataset::new(
            "r",
            vec![TimeSeries::univariate(vec![0.0, 5.0, 10.0]).unwrap()],
        )
        .unwrap();
        let r = range_normalize(&ds, -1.0, 1.0).unwrap();
        assert_eq!(r.samples()[0].values(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn range_normalize_sends_constants_to_the_midpoint() {
        let ds = Dataset::new(
            "r",
            vec![TimeSeries::univariate(vec![7.0, 7.0]).unwrap()],
        )
        .unwrap();
        let r = range_normalize(&ds, -1.0, 1.0).unwrap();
        assert_eq!(r.samples()[0].values(), &[0.0, 0.0]);
    }

    #[test]
    fn resample_identity_when_lengths_match() {
        let x = TimeSeries::univariate(vec![1.0, 4.0, 2.0]).unwrap();
        let y = resample_linear(&x, 3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn resample_interpolates_midpoints() {
        let x = TimeSeries::univariate(vec![0.0, 2.0]).unwrap();
        let y = resample_linear(&x, 3).unwrap();
        assert_eq!(y.values(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn resample_preserves_monotonicity() {
        let x = TimeSeries::univariate(vec![0.0, 1.0, 1.5, 4.0, 9.0]).unwrap();
        let y = resample_linear(&x, 11).unwrap();
        for w in y.values().windows(2) {
            assert!(w[0] <= w[1], "resampled series lost monotonicity: {w:?}");
        }
    }

    #[test]
    fn resample_rejects_degenerate_targets() {
        let x = TimeSeries::univariate(vec![0.0, 1.0]).unwrap();
        assert!(resample_linear(&x, 1).is_err());
    }

    #[test]
    fn split_all_train_keeps_everything() {
        let ds = toy_dataset(5);
        let spec = SplitSpec {
            train_fraction: 1.0,
            val_fraction: 0.0,
            seed: 1,
            stratified: true,
        };
        let parts = split(&ds, spec).unwrap();
        assert_eq!(parts.train.len(), 10);
        assert!(parts.val.is_empty());
        assert!(parts.test.is_empty());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let ds = toy_dataset(10);
        let spec = SplitSpec {
            train_fraction: 0.6,
            val_fraction: 0.2,
            seed: 42,
            stratified: true,
        };
        let a = split(&ds, spec).unwrap();
        let b = split(&ds, spec).unwrap();
        assert_eq!(a.train.samples(), b.train.samples());
        assert_eq!(a.val.samples(), b.val.samples());
        assert_eq!(a.test.samples(), b.test.samples());
    }

    #[test]
    fn stratified_split_keeps_class_proportions() {
        let ds = toy_dataset(10);
        let spec = SplitSpec {
            train_fraction: 0.8,
            val_fraction: 0.2,
            seed: 3,
            stratified: true,
        };
        let parts = split(&ds, spec).unwrap();
        for class in 0..2 {
            let in_train = parts.train.samples().iter().filter(|s| s.label == Some(class)).count();
            let in_val = parts.val.samples().iter().filter(|s| s.label == Some(class)).count();
            assert_eq!((in_train, in_val), (8, 2), "class {class}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy_dataset(7);
        let spec = SplitSpec {
            train_fraction: 0.5,
            val_fraction: 0.3,
            seed: 9,
            stratified: false,
        };
        let parts = split(&ds, spec).unwrap();
        let total = parts.train.len() + parts.val.len() + parts.test.len();
        assert_eq!(total, ds.len());
        // toy_dataset gives every sample a distinct value pattern, so the
        // multiset of first values across parts must match the input.
        let mut seen: Vec<u64> = Vec::new();
        for part in [&parts.train, &parts.val, &parts.test] {
            for s in part.samples() {
                seen.push(s.values()[0].to_bits());
            }
        }
        seen.sort_unstable();
        let mut expect: Vec<u64> = ds.samples().iter().map(|s| s.values()[0].to_bits()).collect();
        expect.sort_unstable();
        assert_eq!(seen, expect, "parts must partition the input exactly");
    }

    #[test]
    fn single_sample_class_falls_back_to_train() {
        let mut samples = vec![TimeSeries::univariate(vec![0.0, 1.0]).unwrap().with_label(0)];
        for k in 0..4 {
            samples.push(
                TimeSeries::univariate(vec![k as f64, k as f64 + 1.0])
                    .unwrap()
                    .with_label(1),
            );
        }
        let ds = Dataset::new("lonely", samples).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.5,
            val_fraction: 0.5,
            seed: 11,
            stratified: true,
        };
        let parts = split(&ds, spec).unwrap();
        let lonely_in_train = parts.train.samples().iter().filter(|s| s.label == Some(0)).count();
        assert_eq!(lonely_in_train, 1);
    }

    #[test]
    fn synth_without_warp_or_noise_repeats_the_prototype() {
        let mut rng = Rng::new(5);
        let ds = synth_warped_classes(&mut rng, 2, 4, 16, 0.0, 0.0).unwrap();
        for class in 0..2 {
            let members: Vec<_> = ds.samples().iter().filter(|s| s.label == Some(class)).collect();
            for m in &members[1..] {
                assert_eq!(m.values(), members[0].values(), "class {class} members must be identical");
            }
        }
    }

    #[test]
    fn synth_is_seed_deterministic_and_seed_sensitive() {
        let a = synth_warped_classes(&mut Rng::new(1), 2, 3, 12, 0.3, 0.02).unwrap();
        let b = synth_warped_classes(&mut Rng::new(1), 2, 3, 12, 0.3, 0.02).unwrap();
        let c = synth_warped_classes(&mut Rng::new(2), 2, 3, 12, 0.3, 0.02).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn synth_subjects_sets_genuine_flags_and_labels() {
        let ds = synth_subjects(&mut Rng::new(3), 3, 4, 2, 20, 0.5).unwrap();
        assert_eq!(ds.len(), 3 * 6);
        for s in ds.samples() {
            assert!(s.genuine.is_some());
            assert!(s.label.unwrap() < 3);
        }
        let genuine = ds.samples().iter().filter(|s| s.genuine == Some(true)).count();
        assert_eq!(genuine, 12);
    }

    #[test]
    fn monotone_warp_is_identity_at_zero_strength() {
        let warp = monotone_warp(&mut Rng::new(1), 5, 0.0);
        for (k, &p) in warp.iter().enumerate() {
            assert!((p - k as f64 / 4.0).abs() < 1e-12);
        }
    }
}
