//! Dataset file formats: UCR-style TSV for univariate data and a JSON
//! carrier for multivariate or verification data. Loaders validate
//! eagerly and report the offending line or record — a malformed file
//! never yields a partial dataset.

use crate::error::{CliError, Result};
use attwarp_core::data::Dataset;
use attwarp_core::series::TimeSeries;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// One series per line: integer label first, then the values, separated
/// by tabs or spaces. All rows must have the same length.
pub fn load_ucr_tsv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let name = dataset_name(path);
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_text = fields.next().unwrap();
        let label: i64 = label_text.parse().map_err(|_| {
            located(path, lineno, format!("label `{label_text}` is not an integer"))
        })?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| located(path, lineno, format!("value `{f}` is not numeric")))
            })
            .collect::<Result<_>>()?;
        if values.len() < 2 {
            return Err(located(path, lineno, format!("needs at least 2 values, got {}", values.len())));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(located(
                    path,
                    lineno,
                    format!("ragged row: {} values where previous rows had {w}", values.len()),
                ));
            }
            Some(_) => {}
        }
        let sample = TimeSeries::univariate(values)
            .map_err(|e| located(path, lineno, e.to_string()))?
            .with_label(encode_label(label))
            .with_id(format!("{name}-{}", samples.len()));
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(CliError::data(format!("{}: no series found", path.display())));
    }
    Ok(Dataset::new(name, samples)?)
}

/// Writes a dataset in the same row format `load_ucr_tsv` reads. Values
/// print with round-trip precision, so save→load is bit-exact.
pub fn save_ucr_tsv(path: &Path, ds: &Dataset) -> Result<()> {
    if ds.dim() != 1 {
        return Err(CliError::data(format!(
            "TSV holds univariate data only; dataset `{}` has {} channels (use JSON)",
            ds.name(),
            ds.dim()
        )));
    }
    let mut out = String::new();
    for s in ds.samples() {
        let label = decode_label(s.label.unwrap_or(0));
        write!(out, "{label}").unwrap();
        for v in s.values() {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// UCR labels may be negative (e.g. ±1 two-class sets); dataset labels
/// are unsigned ids. A zig-zag map keeps both within `usize` losslessly.
fn encode_label(label: i64) -> usize {
    if label >= 0 {
        (label as usize) << 1
    } else {
        (((-label) as usize) << 1) - 1
    }
}

fn decode_label(id: usize) -> i64 {
    if id % 2 == 0 {
        (id >> 1) as i64
    } else {
        -(((id + 1) >> 1) as i64)
    }
}

/// JSON record: a label, optional stable id, optional genuineness flag
/// (for verification data), and one array per channel, all the same
/// length.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    genuine: Option<bool>,
    channels: Vec<Vec<f64>>,
}

/// Loads a JSON array of records with equal-length channel arrays.
pub fn load_multivariate_json(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let records: Vec<JsonRecord> = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::data(format!("{}: no records", path.display())));
    }
    let name = dataset_name(path);
    let mut samples = Vec::with_capacity(records.len());
    for (idx, rec) in records.into_iter().enumerate() {
        let dim = rec.channels.len();
        if dim == 0 {
            return Err(located_record(path, idx, "record has no channels".into()));
        }
        let len = rec.channels[0].len();
        for (c, channel) in rec.channels.iter().enumerate() {
            if channel.len() != len {
                return Err(located_record(
                    path,
                    idx,
                    format!("channel {c} has length {} where channel 0 has {len}", channel.len()),
                ));
            }
        }
        // Interleave channels into frame-major order.
        let mut values = Vec::with_capacity(len * dim);
        for i in 0..len {
            for channel in &rec.channels {
                values.push(channel[i]);
            }
        }
        let mut sample = TimeSeries::new(values, len, dim)
            .map_err(|e| located_record(path, idx, e.to_string()))?
            .with_label(rec.label)
            .with_id(rec.id.unwrap_or_else(|| format!("{name}-{idx}")));
        if let Some(g) = rec.genuine {
            sample = sample.with_genuine(g);
        }
        samples.push(sample);
    }
    Ok(Dataset::new(name, samples)?)
}

/// Writes a dataset as the JSON record array `load_multivariate_json`
/// reads.
pub fn save_multivariate_json(path: &Path, ds: &Dataset) -> Result<()> {
    let records: Vec<JsonRecord> = ds
        .samples()
        .iter()
        .map(|s| {
            let dim = s.dim();
            let mut channels = vec![Vec::with_capacity(s.len()); dim];
            for i in 0..s.len() {
                for (c, channel) in channels.iter_mut().enumerate() {
                    channel.push(s.frame(i)[c]);
                }
            }
            JsonRecord {
                label: s.label.unwrap_or(0),
                id: s.id.clone(),
                genuine: s.genuine,
                channels,
            }
        })
        .collect();
    let text = serde_json::to_string_pretty(&records)
        .map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Loads a dataset, picking the format from the file extension:
/// `.json` is the multivariate carrier, anything else is UCR TSV.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => load_multivariate_json(path),
        _ => load_ucr_tsv(path),
    }
}

/// Loads a file that must contain exactly one series (for `dist`).
pub fn load_single_series(path: &Path) -> Result<TimeSeries> {
    let ds = load_dataset(path)?;
    if ds.len() != 1 {
        return Err(CliError::data(format!(
            "{}: expected exactly one series, found {}",
            path.display(),
            ds.len()
        )));
    }
    Ok(ds.into_samples().into_iter().next().unwrap())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn located(path: &Path, lineno: usize, msg: String) -> CliError {
    CliError::data(format!("{}:{lineno}: {msg}", path.display()))
}

fn located_record(path: &Path, idx: usize, msg: String) -> CliError {
    CliError::data(format!("{}: record {idx}: {msg}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_label_first_rows() {
        let f = temp_file("1 0.0 1.0\n2 1.0 0.0\n", ".tsv");
        let ds = load_ucr_tsv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.samples()[0].values(), &[0.0, 1.0]);
        assert_eq!(ds.samples()[0].label, Some(encode_label(1)));
        assert_eq!(ds.samples()[1].label, Some(encode_label(2)));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = temp_file("", ".tsv");
        assert!(load_ucr_tsv(f.path()).is_err());
    }

    #[test]
    fn ragged_rows_report_the_line_number() {
        let f = temp_file("1 0.0 1.0\n2 1.0 0.0 3.0\n", ".tsv");
        let err = load_ucr_tsv(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn non_numeric_values_report_the_line_number() {
        let f = temp_file("1 0.0 oops\n", ".tsv");
        let err = load_ucr_tsv(f.path()).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn tsv_round_trip_is_bit_exact() {
        let f = temp_file("1 0.125 -3.75e-7 2.0\n-1 1.0 2.0 0.3333333333333333\n", ".tsv");
        let ds = load_ucr_tsv(f.path()).unwrap();
        let out = tempfile::Builder::new().suffix(".tsv").tempfile().unwrap();
        save_ucr_tsv(out.path(), &ds).unwrap();
        let back = load_ucr_tsv(out.path()).unwrap();
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.values(), b.values());
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn negative_labels_survive_the_round_trip() {
        for label in [-3i64, -1, 0, 1, 5] {
            assert_eq!(decode_label(encode_label(label)), label);
        }
    }

    #[test]
    fn json_record_shapes_into_frames() {
        let f = temp_file(
            r#"[{"label": 4, "channels": [[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]]}]"#,
            ".json",
        );
        let ds = load_multivariate_json(f.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
        let s = &ds.samples()[0];
        assert_eq!(s.len(), 3);
        // Channel order is preserved within each frame.
        assert_eq!(s.frame(0), &[1.0, 10.0]);
        assert_eq!(s.frame(2), &[3.0, 30.0]);
    }

    #[test]
    fn unequal_channel_lengths_are_rejected() {
        let f = temp_file(r#"[{"label": 0, "channels": [[1.0, 2.0], [1.0]]}]"#, ".json");
        let err = load_multivariate_json(f.path()).unwrap_err();
        assert!(err.to_string().contains("record 0"), "{err}");
    }

    #[test]
    fn missing_label_field_is_rejected() {
        let f = temp_file(r#"[{"channels": [[1.0, 2.0]]}]"#, ".json");
        assert!(load_multivariate_json(f.path()).is_err());
    }

    #[test]
    fn json_round_trip_preserves_metadata() {
        let f = temp_file(
            r#"[{"label": 2, "id": "s2-g0", "genuine": true, "channels": [[0.5, 1.5]]}]"#,
            ".json",
        );
        let ds = load_multivariate_json(f.path()).unwrap();
        let out = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        save_multivariate_json(out.path(), &ds).unwrap();
        let back = load_multivariate_json(out.path()).unwrap();
        let s = &back.samples()[0];
        assert_eq!(s.label, Some(2));
        assert_eq!(s.id.as_deref(), Some("s2-g0"));
        assert_eq!(s.genuine, Some(true));
        assert_eq!(s.values(), ds.samples()[0].values());
    }

    #[test]
    fn single_series_loader_rejects_multi_row_files() {
        let f = temp_file("1 0.0 1.0\n2 1.0 0.0\n", ".tsv");
        assert!(load_single_series(f.path()).is_err());
        let g = temp_file("1 0.0 1.0\n", ".tsv");
        assert_eq!(load_single_series(g.path()).unwrap().len(), 2);
    }
}
