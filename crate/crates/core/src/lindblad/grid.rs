use serde::{Deserialize, Serialize};

use super::{basis_state_vec, no_detected_jump_generator};
use crate::error::{Error, Result};
use crate::linalg::{expm, inf_norm, real, trace_of_vectorized};
use crate::model::OpenSystemModel;

pub const DEFAULT_TAIL_EPSILON: f64 = 1e-8;
pub const MOMENT_TAIL_EPSILON: f64 = 1e-10;
pub const DEFAULT_MIN_BINS: usize = 2000;

const START_TAU_MAX: f64 = 10.0;
const LIMIT_TAU_MAX: f64 = 1e6;
/// Target bin width in units of the inverse fastest system frequency.
const WIDTH_FACTOR: f64 = 0.04;

/// Uniform grid `[0, tau_max]` split into `n_bins` bins, sampled at centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub tau_max: f64,
    pub n_bins: usize,
}

impl TauGrid {
    pub fn new(tau_max: f64, n_bins: usize) -> Result<Self> {
        if !(tau_max.is_finite() && tau_max > 0.0) {
            return Err(Error::InvalidArgument(format!("tau_max must be positive, got {tau_max}")));
        }
        if n_bins == 0 {
            return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
        }
        Ok(TauGrid { tau_max, n_bins })
    }

    pub fn width(&self) -> f64 {
        self.tau_max / self.n_bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(move |i| self.center(i))
    }

    /// Bin index of a waiting time, or `None` past `tau_max`.
    pub fn bin_of(&self, tau: f64) -> Option<usize> {
        if tau < 0.0 || tau >= self.tau_max {
            return None;
        }
        Some(((tau / self.width()) as usize).min(self.n_bins - 1))
    }

    /// Same bins to within rounding of the stored floats.
    pub fn matches(&self, other: &TauGrid) -> bool {
        self.n_bins == other.n_bins
            && (self.tau_max - other.tau_max).abs() <= 1e-12 * self.tau_max.max(other.tau_max)
    }
}

/// Partially specified grid; missing fields are chosen from the models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub tau_max: Option<f64>,
    pub n_bins: Option<usize>,
    pub tail_epsilon: f64,
    pub max_bin_width: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::auto()
    }
}

impl From<TauGrid> for GridSpec {
    fn from(g: TauGrid) -> Self {
        GridSpec::fixed(g)
    }
}

impl GridSpec {
    pub fn auto() -> Self {
        GridSpec { tau_max: None, n_bins: None, tail_epsilon: DEFAULT_TAIL_EPSILON, max_bin_width: None }
    }

    pub fn moments() -> Self {
        GridSpec { tail_epsilon: MOMENT_TAIL_EPSILON, ..GridSpec::auto() }
    }

    pub fn fixed(grid: TauGrid) -> Self {
        GridSpec { tau_max: Some(grid.tau_max), n_bins: Some(grid.n_bins), ..GridSpec::auto() }
    }

    pub fn with_tail_epsilon(mut self, eps: f64) -> Self {
        self.tail_epsilon = eps;
        self
    }

    /// Chooses a grid on which every model's no-detection survival from
    /// each active channel's final state has dropped below `tail_epsilon`.
    pub fn resolve(&self, models: &[&OpenSystemModel]) -> Result<TauGrid> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("grid resolution needs at least one model".into()));
        }
        if let Some(n) = self.n_bins {
            if n == 0 {
                return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
            }
        }
        let gens: Vec<_> = models.iter().map(|m| (*m, no_detected_jump_generator(m))).collect();
        let survival = |tau: f64| -> f64 {
            gens.iter()
                .map(|(model, lt)| max_survival(model, lt, tau))
                .fold(0.0, f64::max)
        };

        let tau_max = match self.tau_max {
            Some(t) => {
                TauGrid::new(t, 1)?;
                let s = survival(t);
                if s > self.tail_epsilon {
                    return Err(Error::Tail { tau_max: t, survival: s, epsilon: self.tail_epsilon });
                }
                t
            }
            None => {
                let mut t = START_TAU_MAX;
                loop {
                    let s = survival(t);
                    if s <= self.tail_epsilon {
                        break t;
                    }
                    if t >= LIMIT_TAU_MAX {
                        return Err(Error::Tail { tau_max: t, survival: s, epsilon: self.tail_epsilon });
                    }
                    t *= 2.0;
                }
            }
        };

        let n_bins = match self.n_bins {
            Some(n) => n,
            None => {
                let width = self.max_bin_width.unwrap_or_else(|| {
                    let scale = models.iter().map(|m| frequency_scale(m)).fold(1.0, f64::max);
                    WIDTH_FACTOR / scale
                });
                DEFAULT_MIN_BINS.max((tau_max / width).ceil() as usize)
            }
        };
        TauGrid::new(tau_max, n_bins)
    }
}

fn frequency_scale(model: &OpenSystemModel) -> f64 {
    inf_norm(model.hamiltonian()).max(model.total_rate_operator().trace().re)
}

fn max_survival(model: &OpenSystemModel, lt: &crate::linalg::CMatrix, tau: f64) -> f64 {
    let p = expm(&(lt * real(tau)));
    let dim = model.dim();
    model
        .detected()
        .iter()
        .filter(|c| c.efficiency() > 0.0)
        .map(|c| {
            let rho = &p * basis_state_vec(dim, c.final_state());
            trace_of_vectorized(rho.as_slice(), dim).re
        })
        .fold(0.0, f64::max)
}
