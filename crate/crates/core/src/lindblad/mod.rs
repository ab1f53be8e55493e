//! Deterministic numerics on the vectorized master equation.
//!
//! The Liouvillian acts on column-stacked density matrices (see
//! [`crate::linalg`]). [`no_detected_jump_generator`] propagates the
//! un-normalized state conditioned on no detector click; its trace is the
//! survival probability, and the waiting-time densities follow from it.

mod grid;
mod wtd;

pub use grid::{GridSpec, TauGrid, DEFAULT_MIN_BINS, DEFAULT_TAIL_EPSILON, MOMENT_TAIL_EPSILON};
pub use wtd::{channel_count_stats, waiting_time_distributions, ChannelCountStats, WtdMetadata, WtdTable};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    left_mul, max_abs, right_mul, sandwich, trace_weights, unvectorize, vectorize, CMatrix, I, ONE,
    ZERO,
};
use crate::model::OpenSystemModel;

/// Relative singular-value threshold for counting kernel dimensions.
const KERNEL_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const DARK_RATE: f64 = 1e-12;

fn generator(model: &OpenSystemModel, detected_feed: impl Fn(usize) -> f64) -> CMatrix {
    let h = model.hamiltonian();
    let mut l = (left_mul(h) - right_mul(h)) * (-I);
    let mut add = |c: &CMatrix, feed: f64| {
        let rate = c.adjoint() * c;
        if feed != 0.0 {
            l += sandwich(c) * Complex64::new(feed, 0.0);
        }
        l -= (left_mul(&rate) + right_mul(&rate)) * Complex64::new(0.5, 0.0);
    };
    for (k, c) in model.detected().iter().enumerate() {
        add(c.operator(), detected_feed(k));
    }
    for u in model.undetected() {
        add(u.operator(), 1.0);
    }
    l
}

/// Full Liouvillian: every channel feeds its final state at full strength.
/// Detector efficiencies play no role here.
pub fn liouvillian(model: &OpenSystemModel) -> CMatrix {
    generator(model, |_| 1.0)
}

/// Generator of the evolution conditioned on no detector click: detected
/// channel `m` keeps a feeding term weighted by `1 − η_m` for the
/// emissions that go unnoticed, undetected dissipators keep theirs in full.
pub fn no_detected_jump_generator(model: &OpenSystemModel) -> CMatrix {
    let etas = model.efficiencies();
    generator(model, |k| 1.0 - etas[k])
}

/// Hermitian, unit-trace state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Projector onto basis state `index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        DensityMatrix(crate::linalg::projector(dim, index))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }

    /// `Tr(A ρ)`.
    pub fn expectation(&self, a: &CMatrix) -> Complex64 {
        (a * &self.0).trace()
    }
}

/// Physical jump rates `Tr(C_m†C_m ρ)` of the detected channels.
pub fn physical_rates(model: &OpenSystemModel, rho: &DensityMatrix) -> Vec<f64> {
    model
        .detected()
        .iter()
        .map(|c| rho.expectation(&c.rate_operator()).re.max(0.0))
        .collect()
}

/// Detected click rates `r_m = η_m Tr(C_m†C_m ρ)`.
pub fn detected_rates(model: &OpenSystemModel, rho: &DensityMatrix) -> Vec<f64> {
    physical_rates(model, rho)
        .into_iter()
        .zip(model.efficiencies())
        .map(|(r, eta)| r * eta)
        .collect()
}

fn kernel_dimension(l: &CMatrix) -> usize {
    let sv = l.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
    sv.iter().filter(|s| **s < KERNEL_TOL * top).count()
}

/// Unique trace-one kernel element of the Liouvillian.
///
/// Solves the least-squares system `[L; tr] vec(ρ) = [0; 1]`, then
/// Hermitizes and clips negative eigenvalues. Fails when the kernel is not
/// one-dimensional. Dark states are accepted; see [`steady_state`].
pub fn stationary_state(model: &OpenSystemModel) -> Result<DensityMatrix> {
    let dim = model.dim();
    let n = dim * dim;
    let l = liouvillian(model);

    let kdim = kernel_dimension(&l);
    if kdim != 1 {
        return Err(Error::Ergodicity(format!(
            "Liouvillian kernel has dimension {kdim}; the steady state is not unique"
        )));
    }

    let mut a = DMatrix::<Complex64>::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&l);
    for i in 0..dim {
        a[(n, i * (dim + 1))] = ONE;
    }
    let mut b = DVector::<Complex64>::zeros(n + 1);
    b[n] = ONE;
    let x = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Ergodicity(format!("steady-state solve failed: {e}")))?;

    let raw = unvectorize(&x, dim);
    let herm = (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Ergodicity("steady state has no positive weight".into()));
    }
    let mut rho = CMatrix::zeros(dim, dim);
    for (k, lam) in clipped.iter().enumerate() {
        if *lam == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        rho += &v * v.adjoint() * Complex64::new(lam / total, 0.0);
    }
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);

    let residual = max_abs(&unvectorize(&(&l * vectorize(&rho)), dim));
    if residual > RESIDUAL_TOL * max_abs(&l).max(1.0) {
        return Err(Error::Ergodicity(format!(
            "steady-state residual {residual:.2e} exceeds tolerance"
        )));
    }

    Ok(DensityMatrix(rho))
}

/// [`stationary_state`] of an ergodic emitter: additionally fails when the
/// stationary state produces no detected clicks.
pub fn steady_state(model: &OpenSystemModel) -> Result<DensityMatrix> {
    let rho = stationary_state(model)?;
    let emission: f64 = detected_rates(model, &rho).iter().sum();
    if emission < DARK_RATE {
        return Err(Error::Ergodicity(format!(
            "dark steady state: detected emission rate {emission:.2e}"
        )));
    }
    Ok(rho)
}

/// Vectorized `|φ⟩⟨φ|` for a basis state.
pub(crate) fn basis_state_vec(dim: usize, index: usize) -> DVector<Complex64> {
    let mut v = DVector::from_element(dim * dim, ZERO);
    v[index * (dim + 1)] = ONE;
    v
}

/// Trace-weight rows `η_m' Tr(C_m'†C_m' ·)` per detected channel.
pub(crate) fn click_weights(model: &OpenSystemModel) -> Vec<Vec<Complex64>> {
    model
        .detected()
        .iter()
        .map(|c| {
            trace_weights(&c.rate_operator())
                .into_iter()
                .map(|w| w * c.efficiency())
                .collect()
        })
        .collect()
}
