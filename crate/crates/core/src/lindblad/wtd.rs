use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, TauGrid, MOMENT_TAIL_EPSILON};
use super::{basis_state_vec, click_weights, detected_rates, no_detected_jump_generator, steady_state};
use crate::error::{Error, Result};
use crate::io::{atomic_write, csv_bytes};
use crate::linalg::{expm, matvec_into, real, trace_of_vectorized, trace_with, ZERO};
use crate::model::OpenSystemModel;

/// Values and slopes of one waiting-time density at both ends of the grid,
/// used for the endpoint correction of the midpoint rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub w0: f64,
    pub dw0: f64,
    pub wb: f64,
    pub dwb: f64,
}

/// Waiting-time densities `w_{mm'}(τ)` sampled at the bin centers of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WtdTable {
    grid: TauGrid,
    channels: usize,
    values: Vec<f64>,
    channel_rates: Vec<f64>,
    survival_tail: Vec<f64>,
    efficiencies: Vec<f64>,
    edges: Vec<Edge>,
}

/// Everything in a [`WtdTable`] except the sampled densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WtdMetadata {
    pub tau_max: f64,
    pub n_bins: usize,
    pub channel_rates: Vec<f64>,
    pub survival_tail: Vec<f64>,
    pub efficiencies: Vec<f64>,
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
}

impl WtdTable {
    pub fn grid(&self) -> TauGrid {
        self.grid
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    fn offset(&self, m: usize, mp: usize) -> usize {
        (m * self.channels + mp) * self.grid.n_bins
    }

    pub fn w(&self, m: usize, mp: usize, i: usize) -> f64 {
        self.values[self.offset(m, mp) + i]
    }

    pub fn row(&self, m: usize, mp: usize) -> &[f64] {
        let o = self.offset(m, mp);
        &self.values[o..o + self.grid.n_bins]
    }

    /// Flat `M × M × n_bins` array, `m` slowest.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Detected click rates `r_m = η_m Tr(C_m†C_m ρ_st)`.
    pub fn channel_rates(&self) -> &[f64] {
        &self.channel_rates
    }

    /// Probability of no detection within `tau_max` after a click in `m`.
    pub fn survival_tail(&self) -> &[f64] {
        &self.survival_tail
    }

    pub fn efficiencies(&self) -> &[f64] {
        &self.efficiencies
    }

    pub fn edge(&self, m: usize, mp: usize) -> Edge {
        self.edges[m * self.channels + mp]
    }

    /// `∫_0^τmax τ^k w_{mm'}(τ) dτ` by the midpoint rule with its leading
    /// endpoint correction `h²/24 (f'(b) − f'(0))`.
    pub fn integral(&self, m: usize, mp: usize, k: u32) -> f64 {
        let h = self.grid.width();
        let b = self.grid.tau_max;
        let sum: f64 = self
            .row(m, mp)
            .iter()
            .enumerate()
            .map(|(i, w)| self.grid.center(i).powi(k as i32) * w)
            .sum::<f64>()
            * h;
        let e = self.edge(m, mp);
        let d0 = match k {
            0 => e.dw0,
            1 => e.w0,
            _ => 0.0,
        };
        let db = if k == 0 {
            e.dwb
        } else {
            k as f64 * b.powi(k as i32 - 1) * e.wb + b.powi(k as i32) * e.dwb
        };
        sum + h * h / 24.0 * (db - d0)
    }

    /// `Σ_{m'} ∫ w_{mm'} dτ + survival_tail[m]`, which should be 1.
    pub fn normalization(&self, m: usize) -> f64 {
        (0..self.channels).map(|mp| self.integral(m, mp, 0)).sum::<f64>() + self.survival_tail[m]
    }

    pub fn metadata(&self) -> WtdMetadata {
        WtdMetadata {
            tau_max: self.grid.tau_max,
            n_bins: self.grid.n_bins,
            channel_rates: self.channel_rates.clone(),
            survival_tail: self.survival_tail.clone(),
            efficiencies: self.efficiencies.clone(),
            edges: self.edges.clone(),
            model_fingerprint: None,
        }
    }

    /// Sidecar metadata path for a table CSV: `x.csv` → `x.meta.json`.
    pub fn metadata_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Writes `tau,m,mprime,w` rows plus the JSON sidecar.
    pub fn write_csv(&self, path: &Path, fingerprint: Option<&str>) -> Result<()> {
        let bytes = csv_bytes(|w| {
            w.write_record(["tau", "m", "mprime", "w"])?;
            for m in 0..self.channels {
                for mp in 0..self.channels {
                    for (i, v) in self.row(m, mp).iter().enumerate() {
                        w.write_record(&[
                            format!("{:e}", self.grid.center(i)),
                            m.to_string(),
                            mp.to_string(),
                            format!("{v:e}"),
                        ])?;
                    }
                }
            }
            Ok(())
        })?;
        atomic_write(path, &bytes)?;
        let mut meta = self.metadata();
        meta.model_fingerprint = fingerprint.map(str::to_string);
        atomic_write(&Self::metadata_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let meta_path = Self::metadata_path(path);
        let meta: WtdMetadata = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        let grid = TauGrid::new(meta.tau_max, meta.n_bins)?;
        let channels = meta.channel_rates.len();
        if meta.survival_tail.len() != channels
            || meta.efficiencies.len() != channels
            || meta.edges.len() != channels * channels
        {
            return Err(Error::format(meta_path.display().to_string(), "inconsistent channel counts"));
        }
        let mut values = vec![f64::NAN; channels * channels * grid.n_bins];
        let mut rdr = csv::Reader::from_path(path)?;
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["tau", "m", "mprime", "w"] {
            return Err(Error::format(&shown, "expected header tau,m,mprime,w"));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let (tau, m, mp, w): (f64, usize, usize, f64) = rec
                .deserialize(None)
                .map_err(|e| Error::format(&shown, e.to_string()))?;
            let i = grid
                .bin_of(tau)
                .filter(|_| m < channels && mp < channels)
                .ok_or_else(|| Error::format(&shown, format!("row out of range: {tau},{m},{mp}")))?;
            values[(m * channels + mp) * grid.n_bins + i] = w;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::format(&shown, "missing rows"));
        }
        Ok(WtdTable {
            grid,
            channels,
            values,
            channel_rates: meta.channel_rates,
            survival_tail: meta.survival_tail,
            efficiencies: meta.efficiencies,
            edges: meta.edges,
        })
    }
}

/// `w_{mm'}(τ) = η_{m'} Tr(C_{m'}†C_{m'} ρ̃_m(τ))` with `ρ̃_m(0) = |φ_m⟩⟨φ_m|`,
/// propagated by `exp(L̃ Δτ)` from bin center to bin center.
pub fn waiting_time_distributions(model: &OpenSystemModel, spec: &GridSpec) -> Result<WtdTable> {
    let rho_st = steady_state(model)?;
    let grid = spec.resolve(&[model])?;
    let dim = model.dim();
    let mc = model.channel_count();
    let n = grid.n_bins;
    let h = grid.width();

    let lt = no_detected_jump_generator(model);
    let half = expm(&(&lt * real(h / 2.0)));
    let step = expm(&(&lt * real(h)));
    let weights = click_weights(model);
    let click = |x: &[Complex64], mp: usize| trace_with(&weights[mp], x).re;

    let mut values = vec![0.0; mc * mc * n];
    let mut survival_tail = vec![0.0; mc];
    let mut edges = vec![Edge::default(); mc * mc];
    let mut cur = vec![ZERO; dim * dim];
    let mut next = vec![ZERO; dim * dim];
    let mut deriv = vec![ZERO; dim * dim];

    for (m, channel) in model.detected().iter().enumerate() {
        let rho0 = basis_state_vec(dim, channel.final_state());
        matvec_into(&lt, rho0.as_slice(), &mut deriv);
        for mp in 0..mc {
            let e = &mut edges[m * mc + mp];
            e.w0 = click(rho0.as_slice(), mp);
            e.dw0 = click(&deriv, mp);
        }

        matvec_into(&half, rho0.as_slice(), &mut cur);
        for i in 0..n {
            if i > 0 {
                matvec_into(&step, &cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            for mp in 0..mc {
                values[(m * mc + mp) * n + i] = click(&cur, mp).max(0.0);
            }
        }

        matvec_into(&half, &cur, &mut next);
        matvec_into(&lt, &next, &mut deriv);
        survival_tail[m] = trace_of_vectorized(&next, dim).re.max(0.0);
        for mp in 0..mc {
            let e = &mut edges[m * mc + mp];
            e.wb = click(&next, mp);
            e.dwb = click(&deriv, mp);
        }
    }

    Ok(WtdTable {
        grid,
        channels: mc,
        values,
        channel_rates: detected_rates(model, &rho_st),
        survival_tail,
        efficiencies: model.efficiencies(),
        edges,
    })
}

/// Waiting-time moments of a single channel observed alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCountStats {
    pub mean_rate: f64,
    pub tau_mean: f64,
    pub tau_var: f64,
    /// `τ̄² / Var(τ)`; below 1 for super-Poissonian counts.
    pub fano_inverse: f64,
    /// Bound on the moment error from probability mass beyond `tau_max`.
    pub moment_error: f64,
}

impl ChannelCountStats {
    /// Asymptotic `V_m / N̄_m = Var(τ) / τ̄²`.
    pub fn variance_ratio(&self) -> f64 {
        1.0 / self.fano_inverse
    }
}

/// Moments of `w_mm` computed with every other detected channel switched
/// off, giving the asymptotic count variance of channel `m`.
pub fn channel_count_stats(model: &OpenSystemModel, m: usize, spec: &GridSpec) -> Result<ChannelCountStats> {
    let channel = model
        .detected()
        .get(m)
        .ok_or_else(|| Error::InvalidArgument(format!("channel {m} does not exist")))?;
    if channel.efficiency() <= 0.0 {
        return Err(Error::InvalidArgument(format!("channel {m} has zero efficiency")));
    }
    let alone = model.only_channel(m)?;
    let spec = spec.with_tail_epsilon(spec.tail_epsilon.min(MOMENT_TAIL_EPSILON));
    let table = waiting_time_distributions(&alone, &spec)?;
    let tau_mean = table.integral(m, m, 1);
    let tau_sq = table.integral(m, m, 2);
    let tau_var = tau_sq - tau_mean * tau_mean;
    if !(tau_var > 0.0) {
        return Err(Error::Ergodicity(format!("channel {m} waiting-time variance {tau_var:e} is not positive")));
    }
    let b = table.grid().tau_max;
    Ok(ChannelCountStats {
        mean_rate: table.channel_rates()[m],
        tau_mean,
        tau_var,
        fano_inverse: tau_mean * tau_mean / tau_var,
        moment_error: table.survival_tail()[m] * b * b,
    })
}
