//! `freebound <subcommand> --config <path> [--out <dir>] [--seed <n>]`.
//!
//! Each run writes its artifacts plus `run.json` into the output directory.
//! The process exit code is 0 iff every assertion passed.

pub mod config;
pub mod pipelines;
pub mod record;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimate::DEFAULT_SEED;
use config::{set_path, ExperimentConfig, Pipeline};
use pipelines::{Context, Outcome};
use record::{config_hash, now_ms, ArtifactSink, Assertion, RunRecord, RUN_SCHEMA, TOOL_VERSION};

#[derive(Debug, Parser)]
#[command(name = "freebound", version, about = "Free-boundary energy minimizers and their regularity moduli")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the energy for the configured boundary data.
    Solve(RunArgs),
    /// Build the renormalized modulus table.
    Modulus(RunArgs),
    /// Growth, Lipschitz and seminorm estimates at the free boundary.
    Estimate(RunArgs),
    /// Lattice identities and lemma checks on seeded inputs.
    VerifyLemmas(RunArgs),
    /// Cartesian sweep over config paths.
    Sweep(RunArgs),
}

impl Command {
    pub fn split(&self) -> (Pipeline, &RunArgs) {
        match self {
            Command::Solve(a) => (Pipeline::Solve, a),
            Command::Modulus(a) => (Pipeline::Modulus, a),
            Command::Estimate(a) => (Pipeline::Estimate, a),
            Command::VerifyLemmas(a) => (Pipeline::VerifyLemmas, a),
            Command::Sweep(a) => (Pipeline::Sweep, a),
        }
    }
}

/// Parses the arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (pipeline, args) = cli.command.split();
    match run_from_file(pipeline, &args.config, args.out.as_deref(), args.seed) {
        Ok(rec) => {
            for a in &rec.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            if let Some(e) = &rec.error {
                eprintln!("error: {e}");
            }
            i32::from(!rec.passed())
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Loads the config, applies overrides and runs. Errors raised inside the
/// pipeline are recorded in `run.json`; only configuration and I/O failures
/// before the output directory exists are returned as `Err`.
pub fn run_from_file(pipeline: Pipeline, path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<RunRecord> {
    let (_, raw) = ExperimentConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_value(pipeline, raw, &base, out, seed)
}

pub fn run_value(pipeline: Pipeline, mut raw: Value, base_dir: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<RunRecord> {
    if let Some(s) = seed {
        set_path(&mut raw, "seed", Value::from(s))?;
    }
    let config = ExperimentConfig::from_value(raw.clone())?;
    if let Some(declared) = config.pipeline.filter(|d| *d != pipeline) {
        return Err(Error::Config(format!(
            "config declares pipeline `{}` but `{}` was invoked",
            declared.name(),
            pipeline.name()
        )));
    }
    let out_dir = match (out, &config.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out").join(&config.name),
    };
    let seed = config.seed.unwrap_or(DEFAULT_SEED);
    let mut hashed = raw.clone();
    if let Some(obj) = hashed.as_object_mut() {
        obj.remove("output_dir");
        obj.insert("seed".into(), Value::from(seed));
    }
    let hash = config_hash(&hashed);
    let started = now_ms();
    let mut sink = ArtifactSink::new(out_dir);
    sink.write_json("config.json", &hashed)?;
    let ctx = Context {
        config: &config,
        config_hash: &hash,
        seed,
        base_dir,
    };
    let result = match pipeline {
        Pipeline::Solve => pipelines::solve(&ctx, &mut sink),
        Pipeline::Modulus => pipelines::modulus(&ctx, &mut sink),
        Pipeline::Estimate => pipelines::estimate(&ctx, &mut sink),
        Pipeline::VerifyLemmas => pipelines::verify_lemmas(&ctx, &mut sink),
        Pipeline::Sweep => sweep(&ctx, &raw, &mut sink),
    };
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e) => (Outcome::default(), Some(e.to_string())),
    };
    let mut artifacts = sink.written.clone();
    artifacts.push("run.json".into());
    let rec = RunRecord {
        schema: RUN_SCHEMA.into(),
        name: config.name.clone(),
        pipeline: pipeline.name().into(),
        config_hash: hash,
        tool_version: TOOL_VERSION.into(),
        seed: Some(seed),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        artifacts,
        assertions: outcome.assertions,
        metrics: outcome.metrics,
        error,
    };
    sink.write_json("run.json", &rec)?;
    Ok(rec)
}

/// Metric columns of `summary.csv`; blank where the sub-pipeline has none.
const SUMMARY_METRICS: [&str; 6] = [
    "fitted_exponent",
    "fitted_constant",
    "lipschitz_constant",
    "c1_constant",
    "log_lip_seminorm",
    "calibrated_delta",
];

fn csv_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.replace(',', ";"),
        other => other.to_string().replace(',', ";"),
    }
}

/// Runs the sub-pipeline on every point of the cartesian product of the axes,
/// each in its own subdirectory. Failing points are recorded, not fatal.
fn sweep(ctx: &Context<'_>, raw: &Value, sink: &mut ArtifactSink) -> Result<Outcome> {
    let p = &ctx.config.params;
    let axes = p
        .sweep
        .as_ref()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| Error::Config("sweep needs a non-empty `params.sweep`".into()))?;
    let sub = p.sweep_pipeline.unwrap_or(Pipeline::Estimate);
    if sub == Pipeline::Sweep {
        return Err(Error::Config("sweeps do not nest".into()));
    }
    if axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("every sweep axis needs at least one value".into()));
    }
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let points: Vec<Vec<&Value>> = (0..total)
        .map(|mut i| {
            let mut pt = Vec::with_capacity(axes.len());
            for a in axes.iter().rev() {
                pt.push(&a.values[i % a.values.len()]);
                i /= a.values.len();
            }
            pt.reverse();
            pt
        })
        .collect();

    let results: Vec<(String, std::result::Result<RunRecord, String>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| {
            let name = format!("{}_{i:03}", ctx.config.name);
            let run = || -> Result<RunRecord> {
                let mut v = raw.clone();
                for (a, val) in axes.iter().zip(pt) {
                    set_path(&mut v, &a.path, (*val).clone())?;
                }
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("output_dir");
                    obj.insert("name".into(), Value::from(name.clone()));
                    obj.insert("seed".into(), Value::from(ctx.seed));
                    obj.insert("pipeline".into(), serde_json::to_value(sub)?);
                    if let Some(params) = obj.get_mut("params").and_then(Value::as_object_mut) {
                        params.remove("sweep");
                        params.remove("sweep_pipeline");
                    }
                }
                run_value(sub, v, ctx.base_dir, Some(&sink.dir.join(&name)), None)
            };
            let res = run().map_err(|e| e.to_string());
            (name, res)
        })
        .collect();

    let mut csv = String::from("run");
    for a in axes {
        csv.push(',');
        csv.push_str(&a.path);
    }
    csv.push_str(",status");
    for m in SUMMARY_METRICS {
        csv.push(',');
        csv.push_str(m);
    }
    csv.push_str(",error\n");
    let mut out = Outcome::default();
    for ((name, res), pt) in results.iter().zip(&points) {
        csv.push_str(name);
        for v in pt {
            csv.push(',');
            csv.push_str(&csv_cell(v));
        }
        let (status, detail) = match res {
            Ok(r) if r.passed() => ("pass", String::new()),
            Ok(r) => (
                "fail",
                r.error.clone().unwrap_or_else(|| {
                    let failed: Vec<&str> = r.assertions.iter().filter(|a| !a.passed).map(|a| a.name.as_str()).collect();
                    failed.join(" ")
                }),
            ),
            Err(e) => ("error", e.clone()),
        };
        csv.push(',');
        csv.push_str(status);
        for m in SUMMARY_METRICS {
            csv.push(',');
            if let Some(v) = res.as_ref().ok().and_then(|r| r.metrics.get(m)) {
                csv.push_str(&v.to_string());
            }
        }
        csv.push_str(&format!(",{}\n", detail.replace([',', '\n'], ";")));
        out.assertions.push(Assertion::new(format!("point_{name}"), status == "pass", status));
    }
    sink.write("summary.csv", csv.as_bytes())?;
    Ok(out)
}
