//! Monte Carlo wave-function simulation of photon-counting records.
//!
//! Between jumps the unnormalized state evolves under
//! `H_eff = H − (i/2) Σ_k C_k†C_k` with the exact propagator
//! `exp(−i H_eff dt)`. A uniform draw `r` fixes the next jump: it happens
//! when `‖ψ̃‖²` falls to `r`, located inside the step by Newton iteration.
//! Detected jumps are recorded with probability `η_m`; every jump resets
//! the state whether or not it is seen.

use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, csv_bytes};
use crate::lindblad::{detected_rates, physical_rates, steady_state, TauGrid};
use crate::linalg::{expm, inf_norm, matvec_into, CMatrix, I, ZERO};
use crate::model::{OpenSystemModel, ParameterizedModel};

/// `dt · (largest jump rate)` above this is rejected.
pub const MAX_STEP_PRODUCT: f64 = 0.1;
/// Burn-in length in mean waiting times.
pub const BURN_IN_WAITS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t: f64,
    pub channel: usize,
}

/// Time-ordered detector clicks from one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub events: Vec<Detection>,
    pub duration: f64,
    pub seed: u64,
    pub stream: u64,
    pub channels: usize,
    pub model_fingerprint: String,
}

impl DetectionRecord {
    /// Clicks per channel, `N_m`.
    pub fn counts(&self) -> Vec<u64> {
        let mut n = vec![0; self.channels];
        for e in &self.events {
            n[e.channel] += 1;
        }
        n
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = format!(
            "# seed={}\n# stream={}\n# T={:e}\n# channels={}\n# fingerprint={}\n",
            self.seed, self.stream, self.duration, self.channels, self.model_fingerprint
        );
        let body = csv_bytes(|w| {
            w.write_record(["t", "channel"])?;
            for e in &self.events {
                w.write_record(&[format!("{:e}", e.t), e.channel.to_string()])?;
            }
            Ok(())
        })?;
        text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        atomic_write(path, text.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            meta.get(k).ok_or_else(|| Error::format(&shown, format!("missing `# {k}=` header")))
        };
        let parse_err = |k: &str| Error::format(&shown, format!("bad `{k}` header"));
        let seed: u64 = get("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let stream: u64 = match meta.get("stream") {
            Some(s) => s.parse().map_err(|_| parse_err("stream"))?,
            None => 0,
        };
        let duration: f64 = get("T")?.parse().map_err(|_| parse_err("T"))?;
        let channels: usize = get("channels")?.parse().map_err(|_| parse_err("channels"))?;
        let model_fingerprint = get("fingerprint")?.clone();

        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["t", "channel"] {
            return Err(Error::format(&shown, "expected header t,channel"));
        }
        let mut events = Vec::new();
        for rec in rdr.deserialize::<Detection>() {
            let e = rec.map_err(|e| Error::format(&shown, e.to_string()))?;
            if e.channel >= channels {
                return Err(Error::format(&shown, format!("channel {} out of range", e.channel)));
            }
            if events.last().is_some_and(|p: &Detection| p.t >= e.t) || e.t < 0.0 || e.t > duration {
                return Err(Error::format(&shown, format!("event time {} out of order", e.t)));
            }
            events.push(e);
        }
        Ok(DetectionRecord { events, duration, seed, stream, channels, model_fingerprint })
    }
}

/// Waiting times of a record binned by interval type `(m, m')`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalHistogram {
    pub grid: TauGrid,
    pub channels: usize,
    /// Flat `M × M × n_bins`, `m` slowest.
    pub counts: Vec<u64>,
    /// Total clicks per channel, `N_m`.
    pub totals: Vec<u64>,
    /// Intervals longer than `tau_max`, per `(m, m')`.
    pub overflow: Vec<u64>,
}

impl IntervalHistogram {
    pub fn empty(grid: TauGrid, channels: usize) -> Self {
        IntervalHistogram {
            grid,
            channels,
            counts: vec![0; channels * channels * grid.n_bins],
            totals: vec![0; channels],
            overflow: vec![0; channels * channels],
        }
    }

    pub fn count(&self, m: usize, mp: usize, i: usize) -> u64 {
        self.counts[(m * self.channels + mp) * self.grid.n_bins + i]
    }

    pub fn row(&self, m: usize, mp: usize) -> &[u64] {
        let o = (m * self.channels + mp) * self.grid.n_bins;
        &self.counts[o..o + self.grid.n_bins]
    }

    /// Intervals that start with a click in `m`, overflow included.
    pub fn intervals_from(&self, m: usize) -> u64 {
        (0..self.channels)
            .map(|mp| self.row(m, mp).iter().sum::<u64>() + self.overflow[m * self.channels + mp])
            .sum()
    }

    /// Adds another histogram on the same grid.
    pub fn merge(&mut self, other: &IntervalHistogram) -> Result<()> {
        if !self.grid.matches(&other.grid) || self.channels != other.channels {
            return Err(Error::GridMismatch("histograms have different grids".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        for (a, b) in self.overflow.iter_mut().zip(&other.overflow) {
            *a += b;
        }
        Ok(())
    }

    /// `m,mprime,bin_center,count`; overflow rows use `bin_center = inf`,
    /// and the per-channel totals go in a leading `# totals=` line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let totals: Vec<String> = self.totals.iter().map(|n| n.to_string()).collect();
        let mut text = format!("# tau_max={:e}\n# totals={}\n", self.grid.tau_max, totals.join(","));
        let body = csv_bytes(|w| {
            w.write_record(["m", "mprime", "bin_center", "count"])?;
            for m in 0..self.channels {
                for mp in 0..self.channels {
                    for (i, c) in self.row(m, mp).iter().enumerate() {
                        w.write_record(&[
                            m.to_string(),
                            mp.to_string(),
                            format!("{:e}", self.grid.center(i)),
                            c.to_string(),
                        ])?;
                    }
                    w.write_record(&[
                        m.to_string(),
                        mp.to_string(),
                        "inf".to_string(),
                        self.overflow[m * self.channels + mp].to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
        text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        atomic_write(path, text.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let header = |key: &str| {
            text.lines()
                .take_while(|l| l.starts_with('#'))
                .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(key).map(str::to_string))
                .ok_or_else(|| Error::format(&shown, format!("missing `# {key}` header")))
        };
        let tau_max: f64 =
            header("tau_max=")?.parse().map_err(|_| Error::format(&shown, "bad tau_max"))?;
        let totals: Vec<u64> = header("totals=")?
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&shown, "bad totals"))?;
        let channels = totals.len();

        let mut rows: Vec<(usize, usize, f64, u64)> = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        for rec in rdr.deserialize() {
            rows.push(rec.map_err(|e: csv::Error| Error::format(&shown, e.to_string()))?);
        }
        if channels == 0 || rows.len() % (channels * channels) != 0 {
            return Err(Error::format(&shown, "row count does not match channel count"));
        }
        let n_bins = rows.len() / (channels * channels) - 1;
        let grid = TauGrid::new(tau_max, n_bins.max(1))?;
        let mut h = IntervalHistogram::empty(grid, channels);
        h.totals = totals;
        for (m, mp, center, count) in rows {
            if m >= channels || mp >= channels {
                return Err(Error::format(&shown, format!("channel pair ({m},{mp}) out of range")));
            }
            if center.is_infinite() {
                h.overflow[m * channels + mp] = count;
            } else {
                let i = grid
                    .bin_of(center)
                    .ok_or_else(|| Error::format(&shown, format!("bin center {center} off grid")))?;
                h.counts[(m * channels + mp) * n_bins + i] = count;
            }
        }
        Ok(h)
    }
}

/// Bins consecutive click pairs of a record by `(m, m')` and delay.
pub fn sort_intervals(record: &DetectionRecord, grid: TauGrid) -> IntervalHistogram {
    let mc = record.channels;
    let mut h = IntervalHistogram::empty(grid, mc);
    h.totals = record.counts();
    for pair in record.events.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let k = a.channel * mc + b.channel;
        match grid.bin_of(b.t - a.t) {
            Some(i) => h.counts[k * grid.n_bins + i] += 1,
            None => h.overflow[k] += 1,
        }
    }
    h
}

/// Precomputed propagators and operators for one model.
struct Unraveling {
    dim: usize,
    heff: CMatrix,
    step: CMatrix,
    rate_op: CMatrix,
    jumps: Vec<CMatrix>,
    /// Final state and efficiency for detected channels.
    detected: Vec<(usize, f64)>,
    dt: f64,
}

/// Default step `0.01 / max(largest jump rate, ‖H‖∞)`.
pub fn default_time_step(model: &OpenSystemModel) -> f64 {
    let scale = max_jump_rate(model).max(inf_norm(model.hamiltonian()));
    0.01 / scale.max(f64::MIN_POSITIVE)
}

fn max_jump_rate(model: &OpenSystemModel) -> f64 {
    model
        .total_rate_operator()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

impl Unraveling {
    fn new(model: &OpenSystemModel, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let product = dt * max_jump_rate(model);
        if product > MAX_STEP_PRODUCT {
            return Err(Error::StepSize { dt, product });
        }
        let heff = model.effective_hamiltonian();
        Ok(Unraveling {
            dim: model.dim(),
            step: expm(&(&heff * (-I * dt))),
            heff,
            rate_op: model.total_rate_operator(),
            jumps: model.jump_operators().cloned().collect(),
            detected: model.detected().iter().map(|c| (c.final_state(), c.efficiency())).collect(),
            dt,
        })
    }

    fn norm_sq(x: &[Complex64]) -> f64 {
        x.iter().map(|z| z.norm_sqr()).sum()
    }

    /// State at the time within `[0, dt]` where `‖exp(−iH_eff s)ψ‖² = r`.
    fn locate_crossing(&self, psi: &[Complex64], r: f64, p0: f64, p1: f64) -> (f64, Vec<Complex64>) {
        let start = DVector::from_column_slice(psi);
        let mut lo = 0.0;
        let mut hi = self.dt;
        let mut s = self.dt * ((p0 - r) / (p0 - p1)).clamp(0.0, 1.0);
        let mut state = start.clone();
        for _ in 0..60 {
            state = expm(&(&self.heff * (-I * s))) * &start;
            let f = state.norm_squared() - r;
            if f.abs() <= 1e-14 * r {
                break;
            }
            if f > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let slope = -(state.adjoint() * &self.rate_op * &state)[(0, 0)].re;
            let newton = if slope < 0.0 { s - f / slope } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - s).abs() <= 1e-15 * self.dt {
                break;
            }
            s = next;
        }
        (s, state.as_slice().to_vec())
    }

    /// Simulates `[0, burn_in + duration]` from basis state `initial` and
    /// returns the recorded clicks after the burn-in.
    fn run(&self, rng: &mut ChaCha20Rng, initial: usize, burn_in: f64, duration: f64) -> Vec<Detection> {
        let end = burn_in + duration;
        let mut psi = vec![ZERO; self.dim];
        psi[initial] = Complex64::new(1.0, 0.0);
        let mut next = vec![ZERO; self.dim];
        let mut t = 0.0;
        let mut r: f64 = 1.0 - rng.random::<f64>();
        let mut p = 1.0;
        let mut events = Vec::new();
        let mut weights = vec![0.0; self.jumps.len()];
        let mut jumped = vec![ZERO; self.dim];

        while t < end {
            matvec_into(&self.step, &psi, &mut next);
            let p_next = Self::norm_sq(&next);
            if p_next > r {
                std::mem::swap(&mut psi, &mut next);
                p = p_next;
                t += self.dt;
                continue;
            }
            let (s, state) = self.locate_crossing(&psi, r, p, p_next);
            t += s;
            if t >= end {
                break;
            }
            for (w, c) in weights.iter_mut().zip(&self.jumps) {
                matvec_into(c, &state, &mut jumped);
                *w = Self::norm_sq(&jumped);
            }
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut k = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                if u < *w {
                    k = j;
                    break;
                }
                u -= w;
            }
            if let Some(&(final_state, eta)) = self.detected.get(k) {
                psi.iter_mut().for_each(|z| *z = ZERO);
                psi[final_state] = Complex64::new(1.0, 0.0);
                let seen = eta >= 1.0 || rng.random::<f64>() < eta;
                if seen && t >= burn_in {
                    events.push(Detection { t: t - burn_in, channel: k });
                }
            } else {
                matvec_into(&self.jumps[k], &state, &mut jumped);
                let norm = Self::norm_sq(&jumped).sqrt();
                for (a, b) in psi.iter_mut().zip(&jumped) {
                    *a = b / norm;
                }
            }
            r = 1.0 - rng.random::<f64>();
            p = 1.0;
        }
        events
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one record of length `duration` with the default time step.
pub fn simulate_record(model: &OpenSystemModel, duration: f64, seed: u64) -> Result<DetectionRecord> {
    simulate_record_with(model, duration, seed, 0, default_time_step(model))
}

/// Like [`simulate_record`], with an explicit RNG stream and time step.
pub fn simulate_record_with(
    model: &OpenSystemModel,
    duration: f64,
    seed: u64,
    stream: u64,
    dt: f64,
) -> Result<DetectionRecord> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("record duration {duration} must be positive")));
    }
    let rho = steady_state(model)?;
    let unravel = Unraveling::new(model, dt)?;
    let mut rng = rng_for(seed, stream);

    // Start in a detected-channel final state drawn with the steady-state
    // jump probabilities.
    let physical = physical_rates(model, &rho);
    let total: f64 = physical.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut start = physical.len() - 1;
    for (m, w) in physical.iter().enumerate() {
        if u < *w {
            start = m;
            break;
        }
        u -= w;
    }
    let initial = model.detected()[start].final_state();
    let click_rate: f64 = detected_rates(model, &rho).iter().sum();
    let burn_in = BURN_IN_WAITS / click_rate;

    let events = unravel.run(&mut rng, initial, burn_in, duration);
    Ok(DetectionRecord {
        events,
        duration,
        seed,
        stream,
        channels: model.channel_count(),
        model_fingerprint: model.fingerprint(),
    })
}

/// `n_runs` independent records at `theta_true`; run `i` uses RNG stream
/// `i` of `seed`, so results do not depend on scheduling.
pub fn batch_records(
    pm: &ParameterizedModel,
    theta_true: f64,
    duration: f64,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<DetectionRecord>> {
    let model = pm.build(theta_true)?;
    let dt = default_time_step(&model);
    (0..n_runs)
        .into_par_iter()
        .map(|i| simulate_record_with(&model, duration, seed, i as u64, dt))
        .collect()
}

/// [`batch_records`] reduced to interval histograms (which carry `N_m`).
pub fn batch_simulate(
    pm: &ParameterizedModel,
    theta_true: f64,
    duration: f64,
    n_runs: usize,
    seed: u64,
    grid: TauGrid,
) -> Result<Vec<IntervalHistogram>> {
    let model = pm.build(theta_true)?;
    let dt = default_time_step(&model);
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            simulate_record_with(&model, duration, seed, i as u64, dt).map(|r| sort_intervals(&r, grid))
        })
        .collect()
}
