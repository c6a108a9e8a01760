//! Turns a config data section into ready train/val/test datasets:
//! load, normalize, resample, then split (either seed-deterministic
//! fractions or explicit per-part files).

use crate::config::{DataSection, Normalize};
use crate::error::{CliError, Result};
use crate::io::load_dataset;
use attwarp_core::data::{self, Dataset, Split, SplitSpec};

const ZSCORE_EPS: f64 = 1e-8;

/// Normalization then optional resampling, in that order, so the
/// normalization statistics see the series as stored on disk.
fn preprocess(ds: Dataset, section: &DataSection) -> Result<Dataset> {
    let ds = match section.normalize {
        Normalize::None => ds,
        Normalize::Zscore => data::znormalize(&ds, ZSCORE_EPS),
        Normalize::ZscorePooled => data::znormalize_pooled(&ds, ZSCORE_EPS),
        Normalize::Range => data::range_normalize(&ds, -1.0, 1.0)?,
    };
    if section.resample == 0 {
        return Ok(ds);
    }
    let name = ds.name().to_string();
    let resampled = ds
        .into_samples()
        .into_iter()
        .map(|s| data::resample_linear(&s, section.resample))
        .collect::<attwarp_core::error::Result<Vec<_>>>()?;
    Ok(Dataset::new(name, resampled)?)
}

/// Loads and prepares the train/val/test datasets for a run. With
/// explicit `val_path`/`test_path` files each part is preprocessed
/// independently; otherwise the primary file is split by the run seed.
pub fn prepare(section: &DataSection, seed: u64) -> Result<Split> {
    let primary = preprocess(load_dataset(&section.path)?, section)?;
    match &section.val_path {
        Some(val_path) => {
            let val = preprocess(load_dataset(val_path)?, section)?;
            let test = match &section.test_path {
                Some(p) => preprocess(load_dataset(p)?, section)?,
                None => empty_like(&primary),
            };
            for (role, part) in [("val", &val), ("test", &test)] {
                if !part.is_empty() && part.dim() != primary.dim() {
                    return Err(CliError::data(format!(
                        "{role} data has {} channels but the training data has {}",
                        part.dim(),
                        primary.dim()
                    )));
                }
            }
            Ok(Split {
                train: primary,
                val,
                test,
            })
        }
        None => {
            if section.test_path.is_some() {
                return Err(CliError::data(
                    "test_path without val_path: explicit files must at least name a validation set",
                ));
            }
            let spec = SplitSpec {
                train_fraction: section.train_fraction,
                val_fraction: section.val_fraction,
                seed,
                stratified: section.stratified,
            };
            Ok(data::split(&primary, spec)?)
        }
    }
}

/// An empty dataset with the reference's channel count, via the split
/// machinery (the only public constructor that permits zero samples).
fn empty_like(reference: &Dataset) -> Dataset {
    let spec = SplitSpec {
        train_fraction: 1.0,
        val_fraction: 0.0,
        seed: 0,
        stratified: false,
    };
    data::split(reference, spec)
        .expect("full-train split of a nonempty dataset cannot fail")
        .test
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_ucr_tsv;
    use attwarp_core::rng::Rng;
    use attwarp_core::series::TimeSeries;

    fn section(path: std::path::PathBuf) -> DataSection {
        DataSection {
            path,
            val_path: None,
            test_path: None,
            train_fraction: 0.5,
            val_fraction: 0.25,
            stratified: true,
            normalize: Normalize::None,
            resample: 0,
        }
    }

    fn write_synth(dir: &std::path::Path, name: &str, seed: u64) -> std::path::PathBuf {
        let ds = data::synth_warped_classes(&mut Rng::new(seed), 2, 8, 16, 0.4, 0.05).unwrap();
        let path = dir.join(name);
        save_ucr_tsv(&path, &ds).unwrap();
        path
    }

    #[test]
    fn fraction_split_partitions_and_is_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_synth(dir.path(), "d.tsv", 3);
        let s = section(path);
        let a = prepare(&s, 11).unwrap();
        let b = prepare(&s, 11).unwrap();
        assert_eq!(a.train.len() + a.val.len() + a.test.len(), 16);
        let ids = |d: &Dataset| -> Vec<String> {
            d.samples().iter().map(|x| x.id.clone().unwrap()).collect()
        };
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn explicit_val_file_is_used_verbatim_and_test_defaults_empty() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_synth(dir.path(), "train.tsv", 3);
        let val = write_synth(dir.path(), "val.tsv", 4);
        let mut s = section(train);
        s.val_path = Some(val);
        let split = prepare(&s, 11).unwrap();
        assert_eq!(split.train.len(), 16);
        assert_eq!(split.val.len(), 16);
        assert!(split.test.is_empty());
        assert_eq!(split.test.dim(), 1);
    }

    #[test]
    fn zscore_and_resample_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            "two",
            vec![
                TimeSeries::univariate(vec![0.0, 2.0, 4.0, 6.0]).unwrap().with_label(0),
                TimeSeries::univariate(vec![1.0, 1.0, 3.0, 3.0]).unwrap().with_label(1),
            ],
        )
        .unwrap();
        let path = dir.path().join("d.tsv");
        save_ucr_tsv(&path, &ds).unwrap();
        let mut s = section(path);
        s.normalize = Normalize::Zscore;
        s.resample = 8;
        s.train_fraction = 1.0;
        s.val_fraction = 0.0;
        let split = prepare(&s, 0).unwrap();
        for sample in split.train.samples() {
            assert_eq!(sample.len(), 8);
            // Standardized before resampling: mean of the resampled grid
            // is not forced to zero, but the value range stays O(1).
            assert!(sample.values().iter().all(|v| v.abs() < 3.0));
        }
    }

    #[test]
    fn test_path_without_val_path_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_synth(dir.path(), "train.tsv", 3);
        let test = write_synth(dir.path(), "test.tsv", 4);
        let mut s = section(train);
        s.test_path = Some(test);
        assert!(prepare(&s, 0).is_err());
    }
}
