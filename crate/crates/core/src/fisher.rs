//! Fisher information of multi-channel waiting-time records.
//!
//! The information per unit time splits into a Poisson term from the
//! binned interval counts and a correction from the non-Poissonian
//! statistics of the total photon counts per channel. Derivatives in θ are
//! central finite differences.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, csv_bytes};
use crate::lindblad::{
    channel_count_stats, detected_rates, steady_state, waiting_time_distributions, GridSpec,
    TauGrid, WtdTable, MOMENT_TAIL_EPSILON,
};
use crate::model::{OpenSystemModel, ParameterizedModel};

/// Bins whose expected density falls below this fraction of the largest
/// bin are left out of the information sums.
pub const FLOOR_DENSITY: f64 = 1e-12;

/// Which detected channels an observer records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObserverMask {
    All,
    Channels(Vec<usize>),
}

impl ObserverMask {
    /// Observer of channel 0 only.
    pub fn alice() -> Self {
        ObserverMask::Channels(vec![0])
    }

    /// Observer of channel 1 only.
    pub fn bob() -> Self {
        ObserverMask::Channels(vec![1])
    }

    pub fn observes(&self, m: usize) -> bool {
        match self {
            ObserverMask::All => true,
            ObserverMask::Channels(c) => c.contains(&m),
        }
    }

    /// The model as seen by this observer: unobserved channels get zero
    /// efficiency, so their emissions reset the emitter unseen.
    pub fn apply(&self, model: &OpenSystemModel) -> Result<OpenSystemModel> {
        if let ObserverMask::Channels(c) = self {
            if let Some(bad) = c.iter().find(|&&m| m >= model.channel_count()) {
                return Err(Error::InvalidArgument(format!(
                    "mask names channel {bad} but the model has {}",
                    model.channel_count()
                )));
            }
        }
        let etas: Vec<f64> = model
            .efficiencies()
            .iter()
            .enumerate()
            .map(|(m, &eta)| if self.observes(m) { eta } else { 0.0 })
            .collect();
        model
            .with_efficiencies(&etas)
            .map_err(|_| Error::InvalidArgument("mask leaves no observed channel".into()))
    }

    pub fn apply_to(&self, pm: &ParameterizedModel) -> ParameterizedModel {
        let mask = self.clone();
        pm.map_models(move |m| mask.apply(&m))
    }
}

impl FromStr for ObserverMask {
    type Err = Error;

    /// `all`, `alice`, `bob` or `custom:0,2,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ObserverMask::All),
            "alice" => Ok(ObserverMask::alice()),
            "bob" => Ok(ObserverMask::bob()),
            _ => {
                let list = s.strip_prefix("custom:").ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown mask `{s}`; expected all, alice, bob or custom:i,j,..."
                    ))
                })?;
                let channels = list
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::InvalidArgument(format!("bad channel list `{list}`: {e}")))?;
                if channels.is_empty() {
                    return Err(Error::InvalidArgument("custom mask needs a channel".into()));
                }
                Ok(ObserverMask::Channels(channels))
            }
        }
    }
}

impl std::fmt::Display for ObserverMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObserverMask::All => write!(f, "all"),
            ObserverMask::Channels(c) if c == &[0] => write!(f, "alice"),
            ObserverMask::Channels(c) if c == &[1] => write!(f, "bob"),
            ObserverMask::Channels(c) => {
                let parts: Vec<String> = c.iter().map(|m| m.to_string()).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

/// Expected interval densities `n̄_{mm'}(τ)/T = r_m w_{mm'}(τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalDensity {
    pub grid: TauGrid,
    pub channels: usize,
    /// Flat `M × M × n_bins`, `m` slowest.
    pub values: Vec<f64>,
}

impl IntervalDensity {
    pub fn from_table(table: &WtdTable) -> Self {
        let n = table.grid().n_bins;
        let mc = table.channel_count();
        let mut values = table.values().to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            *v *= table.channel_rates()[k / (mc * n)];
        }
        IntervalDensity { grid: table.grid(), channels: mc, values }
    }

    pub fn at(&self, m: usize, mp: usize, i: usize) -> f64 {
        self.values[(m * self.channels + mp) * self.grid.n_bins + i]
    }
}

pub fn expected_interval_density(
    pm: &ParameterizedModel,
    theta: f64,
    spec: &GridSpec,
) -> Result<IntervalDensity> {
    let table = waiting_time_distributions(&pm.build(theta)?, spec)?;
    Ok(IntervalDensity::from_table(&table))
}

/// Per-channel entries of a [`FisherReport`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub rate: f64,
    pub dr_dtheta: f64,
    /// `τ̄²/Var(τ)`; `None` for unobserved channels.
    pub fano_inverse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub theta: f64,
    pub f_poisson_per_time: f64,
    pub f_count_per_time: f64,
    pub f_total_per_time: f64,
    /// `1 / f_total_per_time`: the bound on `Var(θ̂) · T`.
    pub crb_variance_time_product: f64,
    /// Information carried by the total photon count alone.
    pub total_count_sensitivity: f64,
    pub per_channel: Vec<ChannelReport>,
    pub grid: TauGrid,
}

/// Everything the information sums and the estimator gains need at one θ:
/// expected densities, their θ-derivatives and the count statistics.
#[derive(Clone, Debug)]
pub struct LocalExpansion {
    pub theta: f64,
    pub step: f64,
    pub grid: TauGrid,
    pub channels: usize,
    pub density: Vec<f64>,
    pub density_derivative: Vec<f64>,
    /// False for bins under the floor density.
    pub included: Vec<bool>,
    pub rates: Vec<f64>,
    pub rate_derivatives: Vec<f64>,
    /// `Var(τ)/τ̄² = V_m/N̄_m`, `None` where the channel is not observed.
    pub variance_ratios: Vec<Option<f64>>,
}

fn finite_or(theta: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteDerivative { theta })
    }
}

impl LocalExpansion {
    /// Builds the expansion of an already masked family at `theta`.
    pub fn compute(pm: &ParameterizedModel, theta: f64, spec: &GridSpec) -> Result<Self> {
        let h = pm.fd_step_at(theta);
        let m0 = pm.build(theta)?;
        let mp = pm.build(theta + h)?;
        let mm = pm.build(theta - h)?;
        let mc = m0.channel_count();
        if mp.channel_count() != mc || mm.channel_count() != mc || mp.dim() != m0.dim() {
            return Err(Error::InvalidModel("builder changed the model shape with theta".into()));
        }
        let grid = spec.resolve(&[&m0, &mp, &mm])?;
        let fixed = GridSpec { tail_epsilon: spec.tail_epsilon, ..GridSpec::fixed(grid) };
        // The grid was chosen to satisfy the tail test for all three.
        let tables = [&m0, &mp, &mm]
            .iter()
            .map(|m| waiting_time_distributions(m, &fixed))
            .collect::<Result<Vec<_>>>()?;
        let dens: Vec<IntervalDensity> = tables.iter().map(IntervalDensity::from_table).collect();

        let density = dens[0].values.clone();
        let density_derivative: Vec<f64> = dens[1]
            .values
            .iter()
            .zip(&dens[2].values)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        finite_or(theta, &density_derivative)?;
        let peak = density.iter().cloned().fold(0.0, f64::max);
        let included = density.iter().map(|&n| n > 0.0 && n >= FLOOR_DENSITY * peak).collect();

        let rates = tables[0].channel_rates().to_vec();
        let rate_derivatives: Vec<f64> = tables[1]
            .channel_rates()
            .iter()
            .zip(tables[2].channel_rates())
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        finite_or(theta, &rate_derivatives)?;

        let moments = GridSpec {
            tau_max: None,
            n_bins: None,
            tail_epsilon: MOMENT_TAIL_EPSILON,
            max_bin_width: spec.max_bin_width,
        };
        let variance_ratios = (0..mc)
            .map(|m| {
                if m0.detected()[m].efficiency() > 0.0 {
                    channel_count_stats(&m0, m, &moments).map(|s| Some(s.variance_ratio()))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(LocalExpansion {
            theta,
            step: h,
            grid,
            channels: mc,
            density,
            density_derivative,
            included,
            rates,
            rate_derivatives,
            variance_ratios,
        })
    }

    /// `Σ (∂n̄)²/n̄ Δτ` over included bins, per unit time.
    pub fn poisson_information(&self) -> f64 {
        let h = self.grid.width();
        self.density
            .iter()
            .zip(&self.density_derivative)
            .zip(&self.included)
            .filter(|(_, inc)| **inc)
            .map(|((n, d), _)| d * d / n)
            .sum::<f64>()
            * h
    }

    /// `Σ_m (1/V_m − 1/N̄_m)(∂N̄_m)²`, per unit time.
    pub fn count_correction(&self) -> f64 {
        (0..self.channels)
            .filter_map(|m| {
                let ratio = self.variance_ratios[m]?;
                let r = self.rates[m];
                let d = self.rate_derivatives[m];
                Some((1.0 / (r * ratio) - 1.0 / r) * d * d)
            })
            .sum()
    }

    /// `(∂Σ N̄_m)² / Σ V_m` per unit time, cross-channel covariances ignored.
    pub fn total_count_sensitivity(&self) -> f64 {
        let mut d = 0.0;
        let mut v = 0.0;
        for m in 0..self.channels {
            if let Some(ratio) = self.variance_ratios[m] {
                d += self.rate_derivatives[m];
                v += self.rates[m] * ratio;
            }
        }
        if v > 0.0 {
            d * d / v
        } else {
            0.0
        }
    }

    pub fn report(&self) -> Result<FisherReport> {
        let f_poisson = self.poisson_information();
        let f_count = self.count_correction();
        let f_total = f_poisson + f_count;
        if !f_total.is_finite() {
            return Err(Error::NonFiniteDerivative { theta: self.theta });
        }
        if f_total < 0.0 {
            return Err(Error::NegativeInformation(f_total));
        }
        Ok(FisherReport {
            theta: self.theta,
            f_poisson_per_time: f_poisson,
            f_count_per_time: f_count,
            f_total_per_time: f_total,
            crb_variance_time_product: 1.0 / f_total,
            total_count_sensitivity: self.total_count_sensitivity(),
            per_channel: (0..self.channels)
                .map(|m| ChannelReport {
                    rate: self.rates[m],
                    dr_dtheta: self.rate_derivatives[m],
                    fano_inverse: self.variance_ratios[m].map(|r| 1.0 / r),
                })
                .collect(),
            grid: self.grid,
        })
    }
}

pub fn fisher_poisson(pm: &ParameterizedModel, spec: &GridSpec, mask: &ObserverMask) -> Result<f64> {
    let masked = mask.apply_to(pm);
    Ok(LocalExpansion::compute(&masked, pm.theta0(), spec)?.poisson_information())
}

pub fn fisher_count_correction(
    pm: &ParameterizedModel,
    spec: &GridSpec,
    mask: &ObserverMask,
) -> Result<f64> {
    let masked = mask.apply_to(pm);
    Ok(LocalExpansion::compute(&masked, pm.theta0(), spec)?.count_correction())
}

pub fn fisher_total(pm: &ParameterizedModel, spec: &GridSpec, mask: &ObserverMask) -> Result<FisherReport> {
    fisher_total_at(pm, pm.theta0(), spec, mask)
}

pub fn fisher_total_at(
    pm: &ParameterizedModel,
    theta: f64,
    spec: &GridSpec,
    mask: &ObserverMask,
) -> Result<FisherReport> {
    let masked = mask.apply_to(pm);
    LocalExpansion::compute(&masked, theta, spec)?.report()
}

/// Information per unit time in the total photon count of all channels.
/// Needs only steady states and the single-channel waiting-time moments.
pub fn total_count_sensitivity(pm: &ParameterizedModel) -> Result<f64> {
    let theta = pm.theta0();
    let h = pm.fd_step_at(theta);
    let total = |t: f64| -> Result<f64> {
        let m = pm.build(t)?;
        Ok(detected_rates(&m, &steady_state(&m)?).iter().sum())
    };
    let d = (total(theta + h)? - total(theta - h)?) / (2.0 * h);
    if !d.is_finite() {
        return Err(Error::NonFiniteDerivative { theta });
    }
    let model = pm.build(theta)?;
    let mut v = 0.0;
    for m in 0..model.channel_count() {
        if model.detected()[m].efficiency() > 0.0 {
            let s = channel_count_stats(&model, m, &GridSpec::moments())?;
            v += s.mean_rate * s.variance_ratio();
        }
    }
    Ok(d * d / v)
}

/// One row of a parameter sweep; non-ergodic points carry the diagnostic.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub theta: f64,
    pub result: std::result::Result<FisherReport, String>,
}

/// Evaluates [`fisher_total_at`] at every θ, in parallel, in input order.
/// Numerical failures become gaps; invalid input still fails the sweep.
pub fn sweep(
    pm: &ParameterizedModel,
    spec: &GridSpec,
    mask: &ObserverMask,
    thetas: &[f64],
) -> Result<Vec<SweepPoint>> {
    thetas
        .par_iter()
        .map(|&theta| match fisher_total_at(pm, theta, spec, mask) {
            Ok(r) => Ok(SweepPoint { theta, result: Ok(r) }),
            Err(e) if e.is_numerical() => Ok(SweepPoint { theta, result: Err(e.to_string()) }),
            Err(e) => Err(e),
        })
        .collect()
}

/// `start:stop:n` → `n` evenly spaced values including both ends.
pub fn parse_theta_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("theta grid `{s}` is not start:stop:n"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![start]);
    }
    Ok((0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect())
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint], channels: usize) -> Result<()> {
    let bytes = csv_bytes(|w| {
        let mut header: Vec<String> =
            ["theta", "f_poisson", "f_count", "f_total", "crb", "tc_sensitivity"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend((0..channels).map(|m| format!("rate_{m}")));
        header.push("diagnostic".into());
        w.write_record(&header)?;
        for p in points {
            let mut row = vec![format!("{:e}", p.theta)];
            match &p.result {
                Ok(r) => {
                    for v in [
                        r.f_poisson_per_time,
                        r.f_count_per_time,
                        r.f_total_per_time,
                        r.crb_variance_time_product,
                        r.total_count_sensitivity,
                    ] {
                        row.push(format!("{v:e}"));
                    }
                    row.extend(r.per_channel.iter().map(|c| format!("{:e}", c.rate)));
                    row.push(String::new());
                }
                Err(msg) => {
                    row.extend(std::iter::repeat_n(String::new(), 5 + channels));
                    row.push(msg.clone());
                }
            }
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// A parsed sweep CSV row; numeric fields are `None` in gap rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub f_poisson: Option<f64>,
    pub f_count: Option<f64>,
    pub f_total: Option<f64>,
    pub crb: Option<f64>,
    pub tc_sensitivity: Option<f64>,
    pub rates: Vec<Option<f64>>,
    pub diagnostic: String,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let shown = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 7 || &headers[0] != "theta" || &headers[headers.len() - 1] != "diagnostic" {
        return Err(Error::format(&shown, "unexpected sweep header"));
    }
    let channels = headers.len() - 7;
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::format(&shown, format!("bad number `{s}`")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(SweepRow {
            theta: num(&rec[0])?.ok_or_else(|| Error::format(&shown, "missing theta"))?,
            f_poisson: num(&rec[1])?,
            f_count: num(&rec[2])?,
            f_total: num(&rec[3])?,
            crb: num(&rec[4])?,
            tc_sensitivity: num(&rec[5])?,
            rates: (0..channels).map(|m| num(&rec[6 + m])).collect::<Result<_>>()?,
            diagnostic: rec[6 + channels].to_string(),
        });
    }
    Ok(rows)
}
