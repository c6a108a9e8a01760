//! `synth`: deterministic synthetic datasets. Classification sets go
//! to TSV, subject/verification sets (which need genuineness flags) to
//! JSON. A sidecar manifest records the generator arguments and the
//! file digest; reruns with the same seed are byte-identical.

use crate::error::{CliError, Result};
use crate::io::{save_multivariate_json, save_ucr_tsv};
use attwarp_core::data::{synth_subjects, synth_warped_classes};
use attwarp_core::rng::Rng;
use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Classification mode: number of classes.
    #[arg(long, conflicts_with_all = ["subjects", "genuine_per", "forgery_per", "weight"])]
    pub classes: Option<usize>,
    /// Samples per class (classification mode).
    #[arg(long, requires = "classes")]
    pub per_class: Option<usize>,
    /// Warp strength in [0, 1] (classification mode).
    #[arg(long, default_value_t = 0.5, requires = "classes")]
    pub warp: f64,
    /// Additive noise level (classification mode).
    #[arg(long, default_value_t = 0.05, requires = "classes")]
    pub noise: f64,

    /// Verification mode: number of subjects.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Genuine samples per subject (verification mode).
    #[arg(long, requires = "subjects")]
    pub genuine_per: Option<usize>,
    /// Forgeries per subject (verification mode).
    #[arg(long, requires = "subjects")]
    pub forgery_per: Option<usize>,
    /// Forgery blend weight in [0, 1]: 0 = indistinguishable from
    /// genuine, 1 = a different subject outright (verification mode).
    #[arg(long, default_value_t = 0.5, requires = "subjects")]
    pub weight: f64,

    /// Series length.
    #[arg(long)]
    pub length: usize,
    /// Generator seed.
    #[arg(long)]
    pub seed: u64,
    /// Output file: .tsv for classification, .json for verification.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SynthManifest {
    generator: &'static str,
    seed: u64,
    length: usize,
    params: BTreeMap<&'static str, f64>,
    file: String,
    sha256: String,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let mut rng = Rng::new(args.seed);
    let (generator, params) = match (args.classes, args.subjects) {
        (Some(classes), None) => {
            let per_class = args
                .per_class
                .ok_or_else(|| CliError::usage("--classes requires --per-class"))?;
            let ds = synth_warped_classes(
                &mut rng,
                classes,
                per_class,
                args.length,
                args.warp,
                args.noise,
            )?;
            save_ucr_tsv(&args.out, &ds)?;
            let params = BTreeMap::from([
                ("classes", classes as f64),
                ("per_class", per_class as f64),
                ("warp", args.warp),
                ("noise", args.noise),
            ]);
            ("warped-classes", params)
        }
        (None, Some(subjects)) => {
            let genuine = args
                .genuine_per
                .ok_or_else(|| CliError::usage("--subjects requires --genuine-per"))?;
            let forgery = args
                .forgery_per
                .ok_or_else(|| CliError::usage("--subjects requires --forgery-per"))?;
            let ds = synth_subjects(&mut rng, subjects, genuine, forgery, args.length, args.weight)?;
            save_multivariate_json(&args.out, &ds)?;
            let params = BTreeMap::from([
                ("subjects", subjects as f64),
                ("genuine_per", genuine as f64),
                ("forgery_per", forgery as f64),
                ("weight", args.weight),
            ]);
            ("subjects", params)
        }
        _ => {
            return Err(CliError::usage(
                "exactly one of --classes or --subjects must be given",
            ))
        }
    };

    let bytes = fs::read(&args.out)
        .map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    let manifest = SynthManifest {
        generator,
        seed: args.seed,
        length: args.length,
        params,
        file: args
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    let manifest_path = args.out.with_extension("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(&manifest_path, text)
        .map_err(|e| CliError::data(format!("{}: {e}", manifest_path.display())))?;

    println!("samples={}", count_samples(generator, &manifest.params));
    println!("sha256={}", manifest.sha256);
    eprintln!(
        "wrote {} and {}",
        args.out.display(),
        manifest_path.display()
    );
    Ok(())
}

fn count_samples(generator: &str, params: &BTreeMap<&'static str, f64>) -> usize {
    match generator {
        "warped-classes" => (params["classes"] * params["per_class"]) as usize,
        _ => (params["subjects"] * (params["genuine_per"] + params["forgery_per"])) as usize,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
