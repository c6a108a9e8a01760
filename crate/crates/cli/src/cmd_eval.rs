//! `eval`: metrics over a trained checkpoint or a classical baseline.
//! Three modes — k-NN classification error, verification equal error
//! rate, and a paired McNemar comparison against another run's
//! prediction file. Machine-readable results go to stdout as key=value
//! lines; CSV exports (predictions, scores, histogram, attention
//! matrices) land in the output directory.

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use crate::io::load_dataset;
use crate::scorer::{distance_matrix, Baseline, Scorer};
use attwarp_core::data::Dataset;
use attwarp_core::eval::{
    eer, error_rate, histogram_export, knn_classify, mcnemar, verification_scores,
    ContingencyTable2x2, McnemarMode, McnemarOutcome,
};
use attwarp_core::series::TimeSeries;
use clap::Args;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Classical baseline: dtw or soft-dtw.
    #[arg(long)]
    pub baseline: Option<Baseline>,
    /// Warping window for the dtw baseline (admissible band half-width).
    #[arg(long)]
    pub window: Option<usize>,
    /// Smoothing temperature for the soft-dtw baseline.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Threads for the pairwise distance computation.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Directory for CSV exports.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// k-NN mode: neighbor count.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Reference (training) dataset for k-NN.
    #[arg(long, requires = "knn")]
    pub refs: Option<PathBuf>,
    /// Query (test) dataset for k-NN.
    #[arg(long, requires = "knn")]
    pub queries: Option<PathBuf>,
    /// File name for the per-query prediction CSV.
    #[arg(long, default_value = "predictions.csv", requires = "knn")]
    pub predictions: String,

    /// Verification mode: compute the equal error rate.
    #[arg(long, conflicts_with_all = ["knn", "mcnemar"])]
    pub eer: bool,
    /// Subject-labeled dataset with genuineness flags (EER mode).
    #[arg(long, requires = "eer")]
    pub data: Option<PathBuf>,
    /// Genuine references per subject (EER mode).
    #[arg(long, default_value_t = 2, requires = "eer")]
    pub refs_per_subject: usize,
    /// Histogram bin count (EER mode).
    #[arg(long, default_value_t = 20, requires = "eer")]
    pub bins: usize,

    /// McNemar mode: another run's prediction CSV to compare against
    /// (this invocation's k-NN flags produce the first column).
    #[arg(long, requires = "knn")]
    pub mcnemar: Option<PathBuf>,
    /// McNemar variant: exact or corrected.
    #[arg(long, default_value = "exact")]
    pub mcnemar_mode: String,

    /// Dump attention matrices for one pair, given as two indices
    /// "A,B" (query,reference in k-NN mode; sample,sample in EER mode).
    #[arg(long)]
    pub dump_attn: Option<String>,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let scorer = build_scorer(
        args.checkpoint.as_deref(),
        args.baseline,
        args.window,
        args.gamma,
    )?;
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", args.out_dir.display())))?;
    match (args.knn, args.eer) {
        (Some(k), false) => run_knn(args, &scorer, k),
        (None, true) => run_eer(args, &scorer),
        (None, false) => Err(CliError::usage(
            "pick an evaluation mode: --knn K or --eer",
        )),
        (Some(_), true) => unreachable!("clap rejects --knn with --eer"),
    }
}

pub fn build_scorer(
    checkpoint: Option<&Path>,
    baseline: Option<Baseline>,
    window: Option<usize>,
    gamma: f64,
) -> Result<Scorer> {
    match (checkpoint, baseline) {
        (Some(path), None) => {
            if window.is_some() {
                return Err(CliError::usage(
                    "--window applies only to the dtw baseline",
                ));
            }
            Ok(Scorer::Model(Checkpoint::load(path)?))
        }
        (None, Some(kind)) => Scorer::baseline(kind, window, gamma),
        _ => Err(CliError::usage(
            "exactly one of --checkpoint or --baseline must be given",
        )),
    }
}

/// The channel count the scorer expects of raw input series.
fn check_input_dim(scorer: &Scorer, ds: &Dataset, role: &str) -> Result<()> {
    let expected = match scorer {
        Scorer::Model(ckpt) => match &ckpt.encoder {
            Some(enc) => enc.config().dim,
            None => ckpt.model.arch().dim,
        },
        _ => return Ok(()),
    };
    if ds.dim() != expected {
        return Err(CliError::data(format!(
            "{role} data has {} channels but the checkpoint expects {expected}",
            ds.dim()
        )));
    }
    Ok(())
}

fn labels_of(ds: &Dataset, role: &str) -> Result<Vec<usize>> {
    ds.samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label.ok_or_else(|| {
                CliError::data(format!("{role} sample {i} has no class label"))
            })
        })
        .collect()
}

fn run_knn(args: &EvalArgs, scorer: &Scorer, k: usize) -> Result<()> {
    let refs_path = args
        .refs
        .as_ref()
        .ok_or_else(|| CliError::usage("--knn requires --refs"))?;
    let queries_path = args
        .queries
        .as_ref()
        .ok_or_else(|| CliError::usage("--knn requires --queries"))?;
    let refs = load_dataset(refs_path)?;
    let queries = load_dataset(queries_path)?;
    check_input_dim(scorer, &refs, "reference")?;
    check_input_dim(scorer, &queries, "query")?;
    if refs.dim() != queries.dim() {
        return Err(CliError::data(format!(
            "reference data has {} channels but query data has {}",
            refs.dim(),
            queries.dim()
        )));
    }
    let ref_labels = labels_of(&refs, "reference")?;
    let truth = labels_of(&queries, "query")?;

    let t_refs = scorer.transform(refs.samples())?;
    let t_queries = scorer.transform(queries.samples())?;
    if let Some(spec) = &args.dump_attn {
        dump_attention(args, scorer, spec, &t_queries, &t_refs)?;
    }
    let dist = distance_matrix(scorer, &t_queries, &t_refs, args.workers)?;
    let predicted = knn_classify(&dist, &ref_labels, k)?;
    let err = error_rate(&predicted, &truth)?;

    let pred_path = args.out_dir.join(&args.predictions);
    write_predictions(&pred_path, queries.samples(), &truth, &predicted)?;

    println!("scorer={}", scorer.name());
    println!("k={k}");
    println!("n_queries={}", truth.len());
    println!("error_rate={err}");
    eprintln!("predictions written to {}", pred_path.display());

    if let Some(other) = &args.mcnemar {
        run_mcnemar(args, &truth, &predicted, other)?;
    }
    Ok(())
}

fn run_eer(args: &EvalArgs, scorer: &Scorer) -> Result<()> {
    let data_path = args
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("--eer requires --data"))?;
    let ds = load_dataset(data_path)?;
    check_input_dim(scorer, &ds, "verification")?;
    let transformed = scorer.transform(ds.samples())?;
    if let Some(spec) = &args.dump_attn {
        dump_attention(args, scorer, spec, &transformed, &transformed)?;
    }
    let (genuine, forgery) =
        verification_scores(&transformed, args.refs_per_subject, |a, b| {
            scorer.distance(a, b)
        })?;
    let rate = eer(&genuine, &forgery)?;

    let scores_path = args.out_dir.join("scores.csv");
    let mut out = String::from("population,score\n");
    for s in &genuine {
        out.push_str(&format!("genuine,{s}\n"));
    }
    for s in &forgery {
        out.push_str(&format!("forgery,{s}\n"));
    }
    fs::write(&scores_path, out)
        .map_err(|e| CliError::data(format!("{}: {e}", scores_path.display())))?;

    let hist = histogram_export(&genuine, &forgery, args.bins)?;
    let hist_path = args.out_dir.join("histogram.csv");
    let mut out = String::from("lo,hi,genuine,forgery\n");
    for b in 0..args.bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            hist.edges[b],
            hist.edges[b + 1],
            hist.same[b],
            hist.diff[b]
        ));
    }
    fs::write(&hist_path, out)
        .map_err(|e| CliError::data(format!("{}: {e}", hist_path.display())))?;

    println!("scorer={}", scorer.name());
    println!("n_genuine={}", genuine.len());
    println!("n_forgery={}", forgery.len());
    println!("eer={rate}");
    eprintln!(
        "scores written to {}; histogram to {}",
        scores_path.display(),
        hist_path.display()
    );
    Ok(())
}

fn write_predictions(
    path: &Path,
    samples: &[TimeSeries],
    truth: &[usize],
    predicted: &[usize],
) -> Result<()> {
    let mut out = String::from("index,id,truth,predicted\n");
    for (i, ((s, t), p)) in samples.iter().zip(truth).zip(predicted).enumerate() {
        out.push_str(&format!(
            "{i},{},{t},{p}\n",
            s.id.as_deref().unwrap_or("")
        ));
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads a prediction CSV back as (truth, predicted) columns.
pub fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::data(format!(
                "{}:{}: expected 4 comma-separated fields, found {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |v: &str, what: &str| -> Result<usize> {
            v.parse().map_err(|_| {
                CliError::data(format!(
                    "{}:{}: {what} {v:?} is not a class index",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        truth.push(parse(fields[2], "truth")?);
        predicted.push(parse(fields[3], "predicted")?);
    }
    if truth.is_empty() {
        return Err(CliError::data(format!(
            "{}: no prediction rows",
            path.display()
        )));
    }
    Ok((truth, predicted))
}

fn run_mcnemar(
    args: &EvalArgs,
    truth: &[usize],
    ours: &[usize],
    other_path: &Path,
) -> Result<()> {
    let (other_truth, other_pred) = read_predictions(other_path)?;
    if other_truth.len() != truth.len() {
        return Err(CliError::data(format!(
            "prediction files disagree on query count: {} here, {} in {}",
            truth.len(),
            other_truth.len(),
            other_path.display()
        )));
    }
    if other_truth != truth {
        return Err(CliError::data(format!(
            "prediction files disagree on the truth column; {} was made on a different query set",
            other_path.display()
        )));
    }
    let mode = match args.mcnemar_mode.as_str() {
        "exact" => McnemarMode::Exact,
        "corrected" => McnemarMode::CorrectedChi2,
        other => {
            return Err(CliError::usage(format!(
                "unknown --mcnemar-mode {other:?} (expected exact or corrected)"
            )))
        }
    };
    let table = ContingencyTable2x2::from_predictions(ours, &other_pred, truth)?;
    let outcome = mcnemar(table, mode)?;
    let report = mcnemar_report(&table, mode, &outcome, truth.len());
    let report_path = args.out_dir.join("mcnemar.txt");
    let mut file = fs::File::create(&report_path)
        .map_err(|e| CliError::data(format!("{}: {e}", report_path.display())))?;
    file.write_all(report.as_bytes())
        .map_err(|e| CliError::data(format!("{}: {e}", report_path.display())))?;

    println!("n01={}", table.n01);
    println!("n10={}", table.n10);
    if let Some(stat) = outcome.statistic {
        println!("statistic={stat}");
    }
    println!("p_value={}", outcome.p_value);
    println!("significant_5pct={}", outcome.p_value < 0.05);
    eprintln!("report written to {}", report_path.display());
    Ok(())
}

fn mcnemar_report(
    table: &ContingencyTable2x2,
    mode: McnemarMode,
    outcome: &McnemarOutcome,
    n: usize,
) -> String {
    let mut r = String::new();
    r.push_str(&format!("paired comparison over {n} queries\n\n"));
    r.push_str(&format!("  both correct        {}\n", table.n11));
    r.push_str(&format!("  only this correct   {}\n", table.n10));
    r.push_str(&format!("  only other correct  {}\n", table.n01));
    r.push_str(&format!("  both wrong          {}\n\n", table.n00));
    let label = match mode {
        McnemarMode::Exact => "exact binomial, two-sided",
        McnemarMode::CorrectedChi2 => "chi-squared, continuity-corrected",
    };
    r.push_str(&format!("mcnemar test ({label})\n"));
    if let Some(stat) = outcome.statistic {
        r.push_str(&format!("  statistic  {stat}\n"));
    }
    r.push_str(&format!("  p-value    {}\n", outcome.p_value));
    r.push_str(&format!(
        "  difference {} significant at the 5% level\n",
        if outcome.p_value < 0.05 { "IS" } else { "is NOT" }
    ));
    r
}

fn dump_attention(
    args: &EvalArgs,
    scorer: &Scorer,
    spec: &str,
    left: &[TimeSeries],
    right: &[TimeSeries],
) -> Result<()> {
    let (a, b) = parse_pair(spec)?;
    if a >= left.len() || b >= right.len() {
        return Err(CliError::data(format!(
            "--dump-attn {a},{b} out of range ({} and {} samples)",
            left.len(),
            right.len()
        )));
    }
    let path = args.out_dir.join(format!("attention-{a}-{b}.csv"));
    crate::cmd_dist::write_attention_csv(&path, scorer, &left[a], &right[b])?;
    eprintln!("attention matrices written to {}", path.display());
    Ok(())
}

fn parse_pair(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() == 2 {
        if let (Ok(a), Ok(b)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
            return Ok((a, b));
        }
    }
    Err(CliError::usage(format!(
        "--dump-attn expects two comma-separated indices, got {spec:?}"
    )))
}
