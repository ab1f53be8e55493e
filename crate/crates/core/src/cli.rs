//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid input (config, arguments, data
//! files), 3 for numerical failures (non-ergodic model, tail, step size),
//! 1 for other I/O errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimator::{build_gains, estimate, GainTables};
use crate::fisher::{parse_theta_grid, sweep, write_sweep_csv, ObserverMask};
use crate::io::{atomic_write, csv_bytes, RunManifest};
use crate::lindblad::{waiting_time_distributions, GridSpec};
use crate::model::ParameterizedModel;
use crate::stats::{mean, sample_variance};
use crate::trajectory::{batch_records, sort_intervals, DetectionRecord};

#[derive(Debug, Parser)]
#[command(name = "wtd-fisher", version, about = "Fisher information and Cramér-Rao bounds for multi-channel photon counting")]
pub struct Cli {
    /// Model configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file, or output directory for `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "WTD_FISHER_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct GridArgs {
    /// Largest waiting time on the grid; chosen from the tail when omitted.
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Number of τ bins.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: Option<u64>,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        if let Some(t) = self.tau_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidArgument(format!("--tau-max {t} must be positive")));
            }
        }
        Ok(GridSpec { tau_max: self.tau_max, n_bins: self.bins.map(|b| b as usize), ..GridSpec::auto() })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Waiting-time distributions at one parameter value.
    Wtd {
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Fisher information per unit time over a parameter sweep.
    Fisher {
        /// `start:stop:n`; defaults to the configured theta0.
        #[arg(long, allow_hyphen_values = true)]
        theta_grid: Option<String>,
        /// `all`, `alice`, `bob` or `custom:i,j,...`.
        #[arg(long, default_value = "all")]
        mask: String,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Simulated detection records and their interval histograms.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        /// Record duration.
        #[arg(short = 'T', long = "duration", allow_hyphen_values = true)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Output directory (overrides `--out`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Parameter estimates from a directory of records.
    Estimate {
        /// Precomputed gains file.
        #[arg(long, conflicts_with = "build_gains")]
        gains: Option<PathBuf>,
        /// Build gains from the config at theta0.
        #[arg(long)]
        build_gains: bool,
        /// Directory holding `record_*.csv` files.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "all")]
        mask: String,
        /// Also write the gains used to this file.
        #[arg(long)]
        save_gains: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::StepSize { .. } = e {
                eprintln!("hint: the time step is derived from the model rates; check for very large rates");
            }
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        // A pool may already exist when run is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339();
    let (config_path, pm) = load_config(cli.config.as_deref())?;

    let (outputs, parameters, manifest_path) = match &cli.command {
        Command::Wtd { theta, grid } => {
            let theta = theta.unwrap_or(pm.theta0());
            let spec = grid.spec()?;
            let model = pm.build(theta)?;
            let table = waiting_time_distributions(&model, &spec)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("wtd.csv"));
            table.write_csv(&out, Some(&model.fingerprint()))?;
            let params = json!({
                "parameter": pm.parameter(), "theta": theta,
                "tau_max": table.grid().tau_max, "n_bins": table.grid().n_bins,
            });
            let meta = crate::lindblad::WtdTable::metadata_path(&out);
            (vec![out.clone(), meta], params, out.with_extension("manifest.json"))
        }
        Command::Fisher { theta_grid, mask, grid } => {
            let mask: ObserverMask = mask.parse()?;
            let thetas = match theta_grid {
                Some(s) => parse_theta_grid(s)?,
                None => vec![pm.theta0()],
            };
            let spec = grid.spec()?;
            let channels = pm.model()?.channel_count();
            let points = sweep(&pm, &spec, &mask, &thetas)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("fisher.csv"));
            write_sweep_csv(&out, &points, channels)?;
            for p in &points {
                if let Err(msg) = &p.result {
                    eprintln!("warning: theta = {}: {msg}", p.theta);
                }
            }
            let params = json!({
                "parameter": pm.parameter(), "thetas": thetas, "mask": mask.to_string(),
                "tau_max": grid.tau_max, "bins": grid.bins,
            });
            (vec![out.clone()], params, out.with_extension("manifest.json"))
        }
        Command::Simulate { theta, duration, runs, out_dir, grid } => {
            let theta = theta.unwrap_or(pm.theta0());
            if !(duration.is_finite() && *duration > 0.0) {
                return Err(Error::InvalidArgument(format!("-T {duration} must be positive")));
            }
            let dir = out_dir.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| PathBuf::from("records"));
            let model = pm.build(theta)?;
            let tau_grid = grid.spec()?.resolve(&[&model])?;
            let records = batch_records(&pm, theta, *duration, *runs, cli.seed)?;
            let mut outputs = Vec::new();
            for (i, r) in records.iter().enumerate() {
                let rp = dir.join(format!("record_{i:04}.csv"));
                let hp = dir.join(format!("hist_{i:04}.csv"));
                r.write_csv(&rp)?;
                sort_intervals(r, tau_grid).write_csv(&hp)?;
                outputs.push(rp);
                outputs.push(hp);
            }
            std::fs::create_dir_all(&dir)?;
            let params = json!({
                "parameter": pm.parameter(), "theta": theta, "duration": duration, "runs": runs,
                "tau_max": tau_grid.tau_max, "n_bins": tau_grid.n_bins,
                "model_fingerprint": model.fingerprint(),
            });
            (outputs, params, dir.join("manifest.json"))
        }
        Command::Estimate { gains, build_gains: build, records, mask, save_gains, grid } => {
            let recs = read_records(records)?;
            let gains = match (gains, build) {
                (Some(path), false) => GainTables::read_csv(path)?,
                (None, true) => {
                    let duration = recs[0].1.duration;
                    if recs.iter().any(|(_, r)| (r.duration - duration).abs() > 1e-9 * duration) {
                        return Err(Error::InvalidArgument(
                            "records have different durations; build gains per duration".into(),
                        ));
                    }
                    let mask: ObserverMask = mask.parse()?;
                    build_gains(&pm, &grid.spec()?, duration, &mask)?
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "pass exactly one of --gains FILE or --build-gains".into(),
                    ))
                }
            };
            if let Some(p) = save_gains {
                gains.write_csv(p)?;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("estimates.csv"));
            let summary = write_estimates(&out, &gains, &recs)?;
            let mut outputs = vec![out.clone(), summary];
            outputs.extend(save_gains.iter().cloned());
            let params = json!({
                "parameter": pm.parameter(), "theta0": gains.theta0, "duration": gains.duration,
                "records": records, "n_records": recs.len(),
            });
            (outputs, params, out.with_extension("manifest.json"))
        }
    };

    let manifest = RunManifest {
        subcommand: subcommand_name(&cli.command).to_string(),
        config_path,
        parameters,
        seed: matches!(cli.command, Command::Simulate { .. }).then_some(cli.seed),
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&manifest_path)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Wtd { .. } => "wtd",
        Command::Fisher { .. } => "fisher",
        Command::Simulate { .. } => "simulate",
        Command::Estimate { .. } => "estimate",
    }
}

fn load_config(path: Option<&Path>) -> Result<(Option<PathBuf>, ParameterizedModel)> {
    let path = path.ok_or_else(|| Error::config("--config", "a model configuration file is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    Ok((Some(path.to_path_buf()), crate::config::load_model(&text)?))
}

fn read_records(dir: &Path) -> Result<Vec<(String, DetectionRecord)>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::InvalidArgument(format!("cannot read records dir {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("record") && name.ends_with(".csv")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no record_*.csv files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
            Ok((name, DetectionRecord::read_csv(p)?))
        })
        .collect()
}

/// Writes one row per record and a `<stem>_summary.csv` next to `out`.
fn write_estimates(out: &Path, gains: &GainTables, recs: &[(String, DetectionRecord)]) -> Result<PathBuf> {
    let mut estimates = Vec::with_capacity(recs.len());
    let bytes = csv_bytes(|w| {
        let mut header = vec!["record".to_string(), "estimate".into(), "beyond_validity".into()];
        header.extend((0..gains.channels).map(|m| format!("count_{m}")));
        w.write_record(&header)?;
        for (name, r) in recs {
            if r.channels != gains.channels {
                return Err(Error::GridMismatch(format!(
                    "{name} has {} channels, gains {}",
                    r.channels, gains.channels
                )));
            }
            let est = estimate(gains, &sort_intervals(r, gains.grid))?;
            estimates.push(est);
            let mut row = vec![name.clone(), format!("{est:e}"), (est.abs() > gains.validity_range).to_string()];
            row.extend(r.counts().iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    atomic_write(out, &bytes)?;

    let var = sample_variance(&estimates);
    let crb = 1.0 / gains.fisher_total;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let summary = csv_bytes(|w| {
        w.write_record(["n_records", "mean", "std_error", "var_emp", "var_crb", "ratio"])?;
        w.write_record([
            estimates.len().to_string(),
            format!("{:e}", mean(&estimates)),
            opt(var.map(|v| (v / estimates.len() as f64).sqrt())),
            opt(var),
            format!("{crb:e}"),
            opt(var.map(|v| v / crb)),
        ])?;
        Ok(())
    })?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("estimates");
    let path = out.with_file_name(format!("{stem}_summary.csv"));
    atomic_write(&path, &summary)?;
    Ok(path)
}
