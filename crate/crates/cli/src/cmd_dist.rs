//! `dist`: distance between two series files, printed as a key=value
//! line. With a checkpoint scorer, `--dump-attn` also writes both
//! correspondence matrices as CSV for plotting.

use crate::error::{CliError, Result};
use crate::io::load_single_series;
use crate::scorer::{Baseline, Scorer};
use attwarp_core::series::TimeSeries;
use attwarp_core::tensor::Tensor;
use clap::Args;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct DistArgs {
    /// File holding series A (single-row TSV or single-record JSON).
    pub a: PathBuf,
    /// File holding series B.
    pub b: PathBuf,
    /// Trained checkpoint to score with.
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Classical baseline: dtw or soft-dtw.
    #[arg(long)]
    pub baseline: Option<Baseline>,
    /// Warping window for the dtw baseline.
    #[arg(long)]
    pub window: Option<usize>,
    /// Smoothing temperature for the soft-dtw baseline.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Write both correspondence matrices to this CSV file
    /// (checkpoint scorers only).
    #[arg(long)]
    pub dump_attn: Option<PathBuf>,
}

pub fn run(args: &DistArgs) -> Result<()> {
    let scorer = crate::cmd_eval::build_scorer(
        args.checkpoint.as_deref(),
        args.baseline,
        args.window,
        args.gamma,
    )?;
    let a = load_single_series(&args.a)?;
    let b = load_single_series(&args.b)?;
    if a.dim() != b.dim() {
        return Err(CliError::data(format!(
            "series have different channel counts: {} in {}, {} in {}",
            a.dim(),
            args.a.display(),
            b.dim(),
            args.b.display()
        )));
    }
    let transformed = scorer.transform(&[a, b])?;
    let (a, b) = (&transformed[0], &transformed[1]);
    if let Some(path) = &args.dump_attn {
        write_attention_csv(path, &scorer, a, b)?;
        eprintln!("attention matrices written to {}", path.display());
    }
    let d = scorer.distance(a, b)?;
    println!("scorer={}", scorer.name());
    println!("distance={d}");
    Ok(())
}

/// CSV with both row-stochastic matrices, each preceded by a comment
/// line naming it and its dimensions: `# P_s I J` then I rows of J
/// values, then `# P_t J I` and its rows.
pub fn write_attention_csv(
    path: &Path,
    scorer: &Scorer,
    a: &TimeSeries,
    b: &TimeSeries,
) -> Result<()> {
    let m = scorer.attend(a, b)?;
    let mut out = String::new();
    push_matrix(&mut out, "P_s", &m.p_s);
    push_matrix(&mut out, "P_t", &m.p_t);
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn push_matrix(out: &mut String, name: &str, m: &Tensor) {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    out.push_str(&format!("# {name} {rows} {cols}\n"));
    for r in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|c| format!("{}", m.at2(r, c)))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
}
