//! Linear estimator of a small parameter shift from interval histograms
//! and photon counts.
//!
//! For a record of duration `T` with interval counts `n_{mm',i}` and
//! channel counts `N_m`,
//!
//! ```text
//! δθ̂ = Σ g_{mm'}(τ_i) n_{mm',i} + Σ C_{mm'} + Σ_m k_m N_m + Σ_m K_m
//! ```
//!
//! with `g = F⁻¹ ∂n̄/n̄`, `k_m = F⁻¹ ∂N̄_m (1/V_m − 1/N̄_m)` and offsets
//! chosen so that expected data at `theta0` estimate exactly zero.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fisher::{IntervalDensity, LocalExpansion, ObserverMask};
use crate::io::{atomic_write, csv_bytes};
use crate::lindblad::{waiting_time_distributions, GridSpec, TauGrid};
use crate::model::ParameterizedModel;
use crate::stats::{loglog_slope, mean, sample_variance};
use crate::trajectory::{batch_simulate, IntervalHistogram};

/// Gain functions and offsets for one probing time.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTables {
    pub grid: TauGrid,
    pub channels: usize,
    pub theta0: f64,
    pub duration: f64,
    /// Flat `M × M × n_bins`, `m` slowest; zero in bins under the floor.
    pub gains: Vec<f64>,
    /// `C_{mm'}`, flat `M × M`.
    pub offsets: Vec<f64>,
    pub count_gains: Vec<f64>,
    pub count_offsets: Vec<f64>,
    /// `N̄_m` at `theta0` for the probing time.
    pub expected_counts: Vec<f64>,
    /// `F` for the whole probing time.
    pub fisher_total: f64,
    /// Shift beyond which the second-order term exceeds half the first.
    pub validity_range: f64,
}

impl GainTables {
    pub fn fisher_total_per_time(&self) -> f64 {
        self.fisher_total / self.duration
    }

    pub fn gain(&self, m: usize, mp: usize, i: usize) -> f64 {
        self.gains[(m * self.channels + mp) * self.grid.n_bins + i]
    }

    /// Writes `kind,m,mprime,tau,value` rows; scalars use their name as kind.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let bytes = csv_bytes(|w| {
            w.write_record(["kind", "m", "mprime", "tau", "value"])?;
            let scalar = |w: &mut csv::Writer<&mut Vec<u8>>, k: &str, v: f64| {
                w.write_record([k, "", "", "", &format!("{v:e}")])
            };
            scalar(w, "tau_max", self.grid.tau_max)?;
            scalar(w, "n_bins", self.grid.n_bins as f64)?;
            scalar(w, "theta0", self.theta0)?;
            scalar(w, "duration", self.duration)?;
            scalar(w, "fisher_total", self.fisher_total)?;
            scalar(w, "validity_range", self.validity_range)?;
            let mc = self.channels;
            for m in 0..mc {
                for (kind, v) in [
                    ("count_gain", self.count_gains[m]),
                    ("count_offset", self.count_offsets[m]),
                    ("expected_count", self.expected_counts[m]),
                ] {
                    w.write_record([kind, &m.to_string(), "", "", &format!("{v:e}")])?;
                }
                for mp in 0..mc {
                    let (ms, mps) = (m.to_string(), mp.to_string());
                    w.write_record(["offset", &ms, &mps, "", &format!("{:e}", self.offsets[m * mc + mp])])?;
                    for i in 0..self.grid.n_bins {
                        w.write_record([
                            "gain",
                            &ms,
                            &mps,
                            &format!("{:e}", self.grid.center(i)),
                            &format!("{:e}", self.gain(m, mp, i)),
                        ])?;
                    }
                }
            }
            Ok(())
        })?;
        atomic_write(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let bad = |msg: String| Error::format(&shown, msg);
        let mut rdr = csv::Reader::from_path(path)?;
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["kind", "m", "mprime", "tau", "value"] {
            return Err(bad("expected header kind,m,mprime,tau,value".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?);
        }
        let mut scalars = std::collections::HashMap::new();
        let mut channels = 0;
        let value = |r: &csv::StringRecord| -> Result<f64> {
            r[4].parse().map_err(|_| bad(format!("bad value `{}`", &r[4])))
        };
        let index = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("bad index `{s}`"))) };
        for r in &rows {
            match &r[0] {
                "gain" | "offset" | "count_gain" | "count_offset" | "expected_count" => {
                    channels = channels.max(index(&r[1])? + 1);
                }
                k => {
                    scalars.insert(k.to_string(), value(r)?);
                }
            }
        }
        let scalar = |k: &str| scalars.get(k).copied().ok_or_else(|| bad(format!("missing `{k}` row")));
        let grid = TauGrid::new(scalar("tau_max")?, scalar("n_bins")? as usize)?;
        let mc = channels;
        let n = grid.n_bins;
        let mut t = GainTables {
            grid,
            channels: mc,
            theta0: scalar("theta0")?,
            duration: scalar("duration")?,
            gains: vec![0.0; mc * mc * n],
            offsets: vec![0.0; mc * mc],
            count_gains: vec![0.0; mc],
            count_offsets: vec![0.0; mc],
            expected_counts: vec![0.0; mc],
            fisher_total: scalar("fisher_total")?,
            validity_range: scalar("validity_range")?,
        };
        for r in &rows {
            let v = || value(r);
            match &r[0] {
                "gain" => {
                    let tau: f64 = r[3].parse().map_err(|_| bad(format!("bad tau `{}`", &r[3])))?;
                    let i = grid.bin_of(tau).ok_or_else(|| bad(format!("tau {tau} off grid")))?;
                    t.gains[(index(&r[1])? * mc + index(&r[2])?) * n + i] = v()?;
                }
                "offset" => t.offsets[index(&r[1])? * mc + index(&r[2])?] = v()?,
                "count_gain" => t.count_gains[index(&r[1])?] = v()?,
                "count_offset" => t.count_offsets[index(&r[1])?] = v()?,
                "expected_count" => t.expected_counts[index(&r[1])?] = v()?,
                _ => {}
            }
        }
        Ok(t)
    }
}

/// Builds gains at `pm.theta0()` for records of duration `duration`, as
/// seen through `mask`.
pub fn build_gains(
    pm: &ParameterizedModel,
    spec: &GridSpec,
    duration: f64,
    mask: &ObserverMask,
) -> Result<GainTables> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("probing time {duration} must be positive")));
    }
    let masked = mask.apply_to(pm);
    let theta0 = pm.theta0();
    let exp = LocalExpansion::compute(&masked, theta0, spec)?;
    let f = exp.report()?.f_total_per_time * duration;
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::DegenerateInformation(f));
    }

    let mc = exp.channels;
    let n = exp.grid.n_bins;
    let h = exp.grid.width();
    let mut gains = vec![0.0; mc * mc * n];
    let mut offsets = vec![0.0; mc * mc];
    for (k, g) in gains.iter_mut().enumerate() {
        if exp.included[k] {
            *g = exp.density_derivative[k] / exp.density[k] / f;
            offsets[k / n] -= *g * duration * exp.density[k] * h;
        }
    }
    let expected_counts: Vec<f64> = exp.rates.iter().map(|r| r * duration).collect();
    let count_gains: Vec<f64> = (0..mc)
        .map(|m| match exp.variance_ratios[m] {
            Some(ratio) => {
                let nbar = expected_counts[m];
                exp.rate_derivatives[m] * duration * (1.0 / (nbar * ratio) - 1.0 / nbar) / f
            }
            None => 0.0,
        })
        .collect();
    let count_offsets: Vec<f64> =
        count_gains.iter().zip(&expected_counts).map(|(k, nbar)| -k * nbar).collect();

    let mut tables = GainTables {
        grid: exp.grid,
        channels: mc,
        theta0,
        duration,
        gains,
        offsets,
        count_gains,
        count_offsets,
        expected_counts,
        fisher_total: f,
        validity_range: f64::INFINITY,
    };
    tables.validity_range = validity_range(&masked, &tables, &exp)?;
    Ok(tables)
}

/// `0.5 / |q|`, where `q δθ²` is the second-order response of the
/// estimator to noiseless data, probed at `theta0 ± step`.
fn validity_range(pm: &ParameterizedModel, gains: &GainTables, exp: &LocalExpansion) -> Result<f64> {
    let theta0 = gains.theta0;
    let step = 1e-2 * theta0.abs().max(1.0);
    let fixed = GridSpec::fixed(gains.grid);
    let probe = |theta: f64| -> Result<(IntervalDensity, Vec<f64>)> {
        let t = waiting_time_distributions(&pm.build(theta)?, &fixed)?;
        Ok((IntervalDensity::from_table(&t), t.channel_rates().to_vec()))
    };
    let (up, rate_up) = match probe(theta0 + step) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => return Ok(f64::NAN),
        Err(e) => return Err(e),
    };
    let (down, rate_down) = match probe(theta0 - step) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => return Ok(f64::NAN),
        Err(e) => return Err(e),
    };
    let t = gains.duration;
    let h = gains.grid.width();
    let mut q = 0.0;
    for (k, g) in gains.gains.iter().enumerate() {
        let second = (up.values[k] - 2.0 * exp.density[k] + down.values[k]) / (step * step);
        q += 0.5 * g * second * t * h;
    }
    for m in 0..gains.channels {
        let second = (rate_up[m] - 2.0 * exp.rates[m] + rate_down[m]) / (step * step);
        q += 0.5 * gains.count_gains[m] * second * t;
    }
    Ok(if q == 0.0 { f64::INFINITY } else { 0.5 / q.abs() })
}

/// `δθ̂` from binned interval counts (flat `M × M × n_bins`) and channel
/// counts. Works with fractional inputs such as expected counts.
pub fn estimate_from_densities(gains: &GainTables, bin_counts: &[f64], counts: &[f64]) -> Result<f64> {
    let mc = gains.channels;
    if bin_counts.len() != gains.gains.len() || counts.len() != mc {
        return Err(Error::GridMismatch(format!(
            "expected {} bins and {mc} channel counts, got {} and {}",
            gains.gains.len(),
            bin_counts.len(),
            counts.len()
        )));
    }
    let interval: f64 = gains.gains.iter().zip(bin_counts).map(|(g, n)| g * n).sum();
    let offsets: f64 = gains.offsets.iter().sum();
    let count: f64 = (0..mc)
        .map(|m| gains.count_gains[m] * counts[m] + gains.count_offsets[m])
        .sum();
    Ok(interval + offsets + count)
}

/// `δθ̂` for one record's histogram; overflow intervals are ignored.
pub fn estimate(gains: &GainTables, hist: &IntervalHistogram) -> Result<f64> {
    if !gains.grid.matches(&hist.grid) || gains.channels != hist.channels {
        return Err(Error::GridMismatch(format!(
            "gains use {} bins to tau_max {} for {} channels, histogram {} bins to {} for {}",
            gains.grid.n_bins,
            gains.grid.tau_max,
            gains.channels,
            hist.grid.n_bins,
            hist.grid.tau_max,
            hist.channels
        )));
    }
    let bins: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let counts: Vec<f64> = hist.totals.iter().map(|&c| c as f64).collect();
    estimate_from_densities(gains, &bins, &counts)
}

/// One probing time of a [`crb_campaign`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignRow {
    pub duration: f64,
    pub n_runs: usize,
    pub mean_estimate: f64,
    pub var_emp: Option<f64>,
    /// `1 / (F T)` at `theta0`.
    pub var_crb: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub theta0: f64,
    pub theta_true: f64,
    pub rows: Vec<CampaignRow>,
    /// Log-log slope of the empirical variance against `T`.
    pub slope: Option<f64>,
}

/// Simulates `n_runs` records at `theta_true` for every probing time,
/// estimates each with gains built at `pm.theta0()`, and compares the
/// spread with the Cramér–Rao bound.
pub fn crb_campaign(
    pm: &ParameterizedModel,
    spec: &GridSpec,
    mask: &ObserverMask,
    theta_true: f64,
    durations: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Campaign> {
    let observed = mask.apply_to(pm);
    let mut rows = Vec::new();
    for (k, &duration) in durations.iter().enumerate() {
        let gains = build_gains(pm, spec, duration, mask)?;
        let run_seed = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let hists = batch_simulate(&observed, theta_true, duration, n_runs, run_seed, gains.grid)?;
        let est = hists.iter().map(|h| estimate(&gains, h)).collect::<Result<Vec<_>>>()?;
        let var_crb = 1.0 / gains.fisher_total;
        let var_emp = sample_variance(&est);
        rows.push(CampaignRow {
            duration,
            n_runs,
            mean_estimate: if est.is_empty() { f64::NAN } else { mean(&est) },
            var_emp,
            var_crb,
            ratio: var_emp.map(|v| v / var_crb),
        });
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) =
        rows.iter().filter_map(|r| r.var_emp.map(|v| (r.duration, v))).unzip();
    Ok(Campaign { theta0: pm.theta0(), theta_true, slope: loglog_slope(&ts, &vs), rows })
}

/// `T,n_runs,var_emp,var_crb,ratio`; unavailable statistics are blank.
pub fn write_campaign_csv(path: &Path, campaign: &Campaign) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let bytes = csv_bytes(|w| {
        w.write_record(["T", "n_runs", "var_emp", "var_crb", "ratio"])?;
        for r in &campaign.rows {
            w.write_record([
                format!("{:e}", r.duration),
                r.n_runs.to_string(),
                opt(r.var_emp),
                format!("{:e}", r.var_crb),
                opt(r.ratio),
            ])?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}
