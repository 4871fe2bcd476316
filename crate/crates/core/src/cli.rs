//! Command-line interface: `simulate`, `fit`, `study` and `verify`.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 no usable event
//! times, 4 numerical failure or failed verification assertions. Every run
//! writes a JSON manifest next to its main output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_bands, BootstrapConfig};
use crate::collider::{self, Forms, Suite, VerifyConfig};
use crate::data;
use crate::dpa::fit_dpa;
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::simgen::{self, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_EVENTS: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dynpath", version, about = "Dynamic path analysis for survival outcomes")]
pub struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, env = "DYNPATH_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one simulated trial as CSV.
    Simulate(SimulateArgs),
    /// Fit the direct/indirect decomposition to a CSV dataset.
    Fit(FitArgs),
    /// Run a replicated simulation study over measurement scenarios.
    Study(StudyArgs),
    /// Run the survival-selection Monte-Carlo checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulator config (JSON); the shipped default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "treatment")]
    pub treatment: String,
    #[arg(long, default_value = "med_value")]
    pub mediator: String,
    /// Baseline covariates to adjust for, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub adjust: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of bootstrap replicates; no bands when omitted.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `all` for every measurement, or `name=t1,t2,...` for a snapshot
    /// scenario (times may be fractions such as 12/52). Repeatable.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// independence, stability, collapsibility or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the survivor sample size.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Run only the proportional-hazards contrast (informational).
    #[arg(long)]
    pub multiplicative: bool,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; re-running them reproduces the outputs.
    pub args: Vec<String>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub counters: BTreeMap<String, f64>,
    pub version: String,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoUsableEventTimes { .. } => EXIT_NO_EVENTS,
        Error::RankDeficient
        | Error::Underdetermined { .. }
        | Error::NegativeHazard { .. }
        | Error::VanishingSurvivors { .. }
        | Error::BootstrapFailed { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let threads = cli.threads;
    let start = Instant::now();
    let result = rng::with_threads(threads, move || execute(cli.command, recorded, start));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, args: Vec<String>, start: Instant) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a, args, start),
        Command::Fit(a) => fit(a, args, start),
        Command::Study(a) => study(a, args, start),
        Command::Verify(a) => verify(a, args, start),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(manifest_path(out), text + "\n")?;
    Ok(())
}

/// Load a simulator config and the hash of its source text.
fn load_sim_config(path: Option<&Path>, n: Option<usize>, seed: Option<u64>) -> Result<(SimConfig, String)> {
    let (mut cfg, hash) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            (SimConfig::from_json(&text)?, sha256_hex(text.as_bytes()))
        }
        None => {
            let cfg = SimConfig::trial_default();
            let hash = sha256_hex(include_str!("../configs/trial_default.json").as_bytes());
            (cfg, hash)
        }
    };
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((cfg, hash))
}

fn simulate(a: SimulateArgs, args: Vec<String>, start: Instant) -> Result<i32> {
    let (cfg, hash) = load_sim_config(a.config.as_deref(), a.n, a.seed)?;
    let trial = simgen::simulate(&cfg)?;
    data::write_csv_path(&trial.dataset, &a.out)?;
    let counters = BTreeMap::from([
        ("subjects".to_string(), trial.dataset.len() as f64),
        ("events".to_string(), trial.dataset.event_count() as f64),
        ("censoring_fraction".to_string(), trial.censoring_fraction),
        ("clamped_hazard_steps".to_string(), trial.clamped as f64),
    ]);
    write_manifest(
        &a.out,
        &RunManifest {
            command: "simulate".into(),
            args,
            config_sha256: Some(hash),
            seed: Some(cfg.seed),
            inputs: a.config.iter().map(|p| display(p)).collect(),
            outputs: vec![display(&a.out)],
            wall_time_secs: start.elapsed().as_secs_f64(),
            counters,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    Ok(EXIT_OK)
}

/// Path of the long-format band file for a fit output.
pub fn bands_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_bands.csv"))
}

fn fit(a: FitArgs, args: Vec<String>, start: Instant) -> Result<i32> {
    let ds = data::read_csv_path(&a.data)?;
    let mut outputs = vec![display(&a.out)];
    let mut counters = BTreeMap::new();
    let result = match a.bootstrap {
        Some(b) => {
            let model = crate::dpa::PathModel::new(a.treatment.clone(), [a.mediator.clone()], a.adjust.clone());
            let cfg = BootstrapConfig {
                replicates: b,
                level: a.level,
                seed: a.seed,
                threads: 0,
            };
            let bands = bootstrap_bands(&ds, &model, &cfg)?;
            bands.write_wide_csv(create(&a.out)?)?;
            let long = bands_path(&a.out);
            bands.write_csv(create(&long)?)?;
            outputs.push(display(&long));
            counters.insert("bootstrap_discarded".to_string(), bands.discarded as f64);
            bands.fit
        }
        None => {
            let r = fit_dpa(&ds, &a.treatment, &a.mediator, &a.adjust)?;
            r.write_csv(create(&a.out)?)?;
            r
        }
    };
    counters.insert("event_times".into(), result.times.len() as f64);
    counters.insert("skipped_times".into(), result.skip_count() as f64);
    counters.insert("excluded_subjects".into(), result.diagnostics.excluded_subjects as f64);
    counters.insert("dropped_missing".into(), result.diagnostics.dropped_missing as f64);
    write_manifest(
        &a.out,
        &RunManifest {
            command: "fit".into(),
            args,
            config_sha256: None,
            seed: a.bootstrap.map(|_| a.seed),
            inputs: vec![display(&a.data)],
            outputs,
            wall_time_secs: start.elapsed().as_secs_f64(),
            counters,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    Ok(EXIT_OK)
}

/// A named measurement scenario; `None` keeps every measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub keep_times: Option<Vec<f64>>,
}

fn parse_time(s: &str) -> Result<f64> {
    let bad = || Error::invalid(format!("cannot parse time `{s}`"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            a / b
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

pub fn parse_scenario(spec: &str) -> Result<Scenario> {
    if spec == "all" {
        return Ok(Scenario {
            name: "all".into(),
            keep_times: None,
        });
    }
    let (name, times) = spec
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("scenario `{spec}` must be `all` or `name=t1,t2,...`")))?;
    let valid_name = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !valid_name || name == "all" {
        return Err(Error::invalid(format!("invalid scenario name `{name}`")));
    }
    let keep = times.split(',').map(parse_time).collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        name: name.into(),
        keep_times: Some(keep),
    })
}

fn write_curves(path: &Path, grid: &[f64], curves: &[Vec<f64>; 3]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["time", "direct", "indirect", "total"])?;
    for k in 0..grid.len() {
        w.write_record([
            grid[k].to_string(),
            curves[0][k].to_string(),
            curves[1][k].to_string(),
            curves[2][k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn study(a: StudyArgs, args: Vec<String>, start: Instant) -> Result<i32> {
    let (cfg, hash) = load_sim_config(a.config.as_deref(), a.n, a.seed)?;
    if a.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let specs = if a.scenarios.is_empty() {
        vec!["all".to_string(), "baseline_wk12=0,12/52".to_string()]
    } else {
        a.scenarios.clone()
    };
    let scenarios = specs.iter().map(|s| parse_scenario(s)).collect::<Result<Vec<_>>>()?;
    let mut names = std::collections::HashSet::new();
    for s in &scenarios {
        if !names.insert(s.name.as_str()) {
            return Err(Error::invalid(format!("duplicate scenario `{}`", s.name)));
        }
        if let Some(k) = &s.keep_times {
            if k.iter().any(|t| *t > cfg.grid.horizon + simgen::SNAPSHOT_TIME_TOL) {
                return Err(Error::invalid(format!("scenario `{}` keeps times beyond the horizon", s.name)));
            }
        }
    }
    std::fs::create_dir_all(&a.out)?;
    let grid = simgen::grid_times(&cfg);

    // reps[r][scenario] = curves on the grid
    let reps: Vec<Vec<[Vec<f64>; 3]>> = (0..a.reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let trial_cfg = SimConfig {
                seed: rng::derive_seed(cfg.seed, tags::STUDY, r as u64),
                ..cfg.clone()
            };
            let ds = simgen::generate_trial(&trial_cfg)?;
            scenarios
                .iter()
                .map(|s| {
                    let fitted = match &s.keep_times {
                        None => fit_dpa(&ds, "treatment", "med_value", &[] as &[&str])?,
                        Some(k) => fit_dpa(&simgen::snapshot(&ds, k)?, "treatment", "med_value", &[] as &[&str])?,
                    };
                    Ok(fitted.on_grid(&grid))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut outputs = Vec::new();
    let truth = simgen::true_curves(&cfg, &grid);
    let truth_path = a.out.join("truth.csv");
    truth.write_csv(create(&truth_path)?)?;
    outputs.push(display(&truth_path));
    for (si, s) in scenarios.iter().enumerate() {
        let mut mean: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for rep in &reps {
            for c in 0..3 {
                for (m, v) in mean[c].iter_mut().zip(&rep[si][c]) {
                    *m += v;
                }
            }
        }
        for curve in &mut mean {
            for m in curve.iter_mut() {
                *m /= a.reps as f64;
            }
        }
        let mean_path = a.out.join(format!("mean_{}.csv", s.name));
        write_curves(&mean_path, &grid, &mean)?;

        let reps_path = a.out.join(format!("reps_{}.csv", s.name));
        let mut w = csv::Writer::from_writer(create(&reps_path)?);
        w.write_record(["rep", "time", "direct", "indirect", "total"])?;
        for (r, rep) in reps.iter().enumerate() {
            let c = &rep[si];
            for k in 0..grid.len() {
                w.write_record([
                    r.to_string(),
                    grid[k].to_string(),
                    c[0][k].to_string(),
                    c[1][k].to_string(),
                    c[2][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        outputs.push(display(&mean_path));
        outputs.push(display(&reps_path));
    }
    let counters = BTreeMap::from([
        ("reps".to_string(), a.reps as f64),
        ("scenarios".to_string(), scenarios.len() as f64),
    ]);
    write_manifest(
        &a.out.join("study"),
        &RunManifest {
            command: "study".into(),
            args,
            config_sha256: Some(hash),
            seed: Some(cfg.seed),
            inputs: a.config.iter().map(|p| display(p)).collect(),
            outputs,
            wall_time_secs: start.elapsed().as_secs_f64(),
            counters,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs, args: Vec<String>, start: Instant) -> Result<i32> {
    let suites = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![a.suite.parse::<Suite>()?]
    };
    let (mut cfg, hash) = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            (VerifyConfig::from_json(&text)?, sha256_hex(text.as_bytes()))
        }
        None => (
            VerifyConfig::default_config(),
            sha256_hex(include_str!("../configs/verify_default.json").as_bytes()),
        ),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.draws {
        cfg.draws = d;
    }
    let forms = if a.multiplicative {
        Forms::MultiplicativeOnly
    } else {
        Forms::Both
    };
    let report = collider::verify(&cfg, &suites, forms)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    for f in report.failures() {
        eprintln!(
            "FAIL {} / {} at t = {}: estimate {} vs target {} (threshold {})",
            f.suite, f.name, f.time, f.estimate, f.target, f.threshold
        );
    }
    let failed = report.failures().count();
    let counters = BTreeMap::from([
        ("assertions".to_string(), report.assertions.len() as f64),
        ("failed".to_string(), failed as f64),
        (
            "informational".to_string(),
            report.assertions.iter().filter(|a| a.informational).count() as f64,
        ),
    ]);
    write_manifest(
        &a.out,
        &RunManifest {
            command: "verify".into(),
            args,
            config_sha256: Some(hash),
            seed: Some(cfg.seed),
            inputs: a.config.iter().map(|p| display(p)).collect(),
            outputs: vec![display(&a.out)],
            wall_time_secs: start.elapsed().as_secs_f64(),
            counters,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    Ok(if report.all_pass { EXIT_OK } else { EXIT_NUMERICAL })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_parsing() {
        assert_eq!(parse_scenario("all").unwrap().keep_times, None);
        let s = parse_scenario("wk12=0,12/52").unwrap();
        assert_eq!(s.name, "wk12");
        assert_eq!(s.keep_times.unwrap(), vec![0.0, 12.0 / 52.0]);
        assert!(parse_scenario("wk12").is_err());
        assert!(parse_scenario("x=0,abc").is_err());
        assert!(parse_scenario("a/b=0").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::UnknownLabel("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::NoUsableEventTimes { skipped: 0 }), EXIT_NO_EVENTS);
        assert_eq!(exit_code(&Error::RankDeficient), EXIT_NUMERICAL);
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.manifest.json"));
        assert_eq!(bands_path(Path::new("out/a.csv")), PathBuf::from("out/a_bands.csv"));
    }
}
