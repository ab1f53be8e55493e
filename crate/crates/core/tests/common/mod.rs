//! Independent oracles and the shared model corpus for integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use wtd_fisher::lindblad::{WtdTable, TauGrid};
use wtd_fisher::linalg::CMatrix;
use wtd_fisher::model::{build_lambda_system, build_two_level, OpenSystemModel};

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Ten models covering the driven two-level atom and the Λ system.
pub fn corpus() -> Vec<(&'static str, OpenSystemModel)> {
    vec![
        ("two-level resonant", build_two_level(3.0, 0.0, 1.0, 1.0).unwrap()),
        ("two-level weak detuned", build_two_level(1.0, 0.5, 1.0, 0.5).unwrap()),
        ("two-level strong", build_two_level(6.0, -2.0, 1.5, 0.8).unwrap()),
        ("lambda resonant probe", lambda(5.0, 3.0, 0.0, 0.0, 0.5, 0.1, 1.0, 1.0)),
        ("lambda detuned probe", lambda(5.0, 3.0, 0.0, 1.0, 0.5, 0.1, 1.0, 1.0)),
        ("lambda weak probe", lambda(5.0, 0.5, 0.0, 1.0, 0.5, 0.1, 1.0, 1.0)),
        ("lambda strong probe", lambda(5.0, 6.0, 0.0, 2.0, 0.5, 0.1, 1.0, 1.0)),
        ("lambda equal branching", lambda(5.0, 2.0, 0.0, 1.5, 1.0, 0.1, 1.0, 1.0)),
        ("lambda lossy detectors", lambda(5.0, 2.0, 0.0, 0.7, 1.0, 0.1, 0.7, 0.4)),
        ("lambda no dephasing", lambda(4.0, 2.5, 0.3, -0.8, 0.7, 0.0, 1.0, 1.0)),
    ]
}

#[allow(clippy::too_many_arguments)]
pub fn lambda(o0: f64, o1: f64, d0: f64, d1: f64, g1: f64, deph: f64, e0: f64, e1: f64) -> OpenSystemModel {
    build_lambda_system(o0, o1, d0, d1, 1.0, g1, deph, e0, e1).unwrap()
}

pub fn random_density(dim: usize, rng: &mut ChaCha20Rng) -> CMatrix {
    let a = CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Right-hand side of the conditioned master equation, written directly
/// with matrix products: detected channel `m` feeds with weight
/// `feed[m]`, undetected dissipators with weight 1.
pub fn master_rhs(model: &OpenSystemModel, feed: &[f64], rho: &CMatrix) -> CMatrix {
    let h = model.hamiltonian();
    let mut out = (h * rho - rho * h) * Complex64::new(0.0, -1.0);
    let mut add = |op: &CMatrix, w: f64| {
        let cd = op.adjoint();
        let cdc = &cd * op;
        out += op * rho * &cd * c(w);
        out -= (&cdc * rho + rho * &cdc) * c(0.5);
    };
    for (m, ch) in model.detected().iter().enumerate() {
        add(ch.operator(), feed[m]);
    }
    for u in model.undetected() {
        add(u.operator(), 1.0);
    }
    out
}

/// Adaptive Dormand–Prince 5(4) integrator for `dρ/dt = f(ρ)` that lands
/// exactly on each requested output time.
pub fn dopri45<F>(f: F, rho0: &CMatrix, times: &[f64], rtol: f64, atol: f64) -> Vec<CMatrix>
where
    F: Fn(&CMatrix) -> CMatrix,
{
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let mut t = 0.0;
    let mut y = rho0.clone();
    let mut h: f64 = 1e-3;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let mut k: Vec<CMatrix> = Vec::with_capacity(7);
            k.push(f(&y));
            for i in 0..6 {
                let mut yi = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    if A[i][j] != 0.0 {
                        yi += kj * c(step * A[i][j]);
                    }
                }
                k.push(f(&yi));
            }
            // Row 6 of A is the fifth-order solution (FSAL).
            let mut y5 = y.clone();
            for (j, kj) in k.iter().take(6).enumerate() {
                y5 += kj * c(step * A[5][j]);
            }
            let mut err = DMatrix::<Complex64>::zeros(y.nrows(), y.ncols());
            for (j, kj) in k.iter().enumerate() {
                err += kj * c(step * E[j]);
            }
            let scale = y.iter().zip(y5.iter()).map(|(a, b)| atol + rtol * a.norm().max(b.norm()));
            let ratio = err
                .iter()
                .zip(scale)
                .map(|(e, s)| (e.norm() / s).powi(2))
                .sum::<f64>()
                .sqrt()
                / (err.len() as f64).sqrt();
            if ratio <= 1.0 {
                t += step;
                y = y5;
            }
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        out.push(y.clone());
    }
    out
}

/// `w_{mm'}` at the grid's bin centers by ODE integration of the
/// no-detected-jump equation, as `[m][m'][i]`.
pub fn ode_wtd(model: &OpenSystemModel, grid: TauGrid) -> Vec<Vec<Vec<f64>>> {
    let dim = model.dim();
    let feed: Vec<f64> = model.efficiencies().iter().map(|e| 1.0 - e).collect();
    let times: Vec<f64> = grid.centers().collect();
    model
        .detected()
        .iter()
        .map(|ch| {
            let mut rho0 = CMatrix::zeros(dim, dim);
            rho0[(ch.final_state(), ch.final_state())] = c(1.0);
            let states = dopri45(|r| master_rhs(model, &feed, r), &rho0, &times, 1e-12, 1e-15);
            model
                .detected()
                .iter()
                .map(|target| {
                    let op = target.rate_operator();
                    states
                        .iter()
                        .map(|r| target.efficiency() * (&op * r).trace().re)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Steady state by inverse iteration on the Liouvillian built element by
/// element from [`master_rhs`], with the spectrum checked through a
/// Schur decomposition.
pub fn eigen_steady_state(model: &OpenSystemModel) -> CMatrix {
    let dim = model.dim();
    let n = dim * dim;
    let feed = vec![1.0; model.channel_count()];
    let mut l = CMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = CMatrix::zeros(dim, dim);
        e[(col % dim, col / dim)] = c(1.0);
        let image = master_rhs(model, &feed, &e);
        for row in 0..n {
            l[(row, col)] = image[(row % dim, row / dim)];
        }
    }
    let eig = l.clone().schur().eigenvalues().expect("complex Schur form");
    let mut mags: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    mags.sort_by(f64::total_cmp);
    assert!(mags[0] < 1e-10 && mags[1] > 1e-6, "kernel not one-dimensional: {:?}", &mags[..2]);

    let shift = 1e-8;
    let lu = (l - CMatrix::identity(n, n) * c(shift)).lu();
    let mut x = nalgebra::DVector::from_element(n, c(1.0));
    for _ in 0..8 {
        x = lu.solve(&x).expect("shifted Liouvillian is invertible");
        let norm = x.norm();
        x /= c(norm);
    }
    let rho = CMatrix::from_column_slice(dim, dim, x.as_slice());
    let tr = rho.trace();
    let rho = rho / tr;
    (&rho + rho.adjoint()) * c(0.5)
}

/// Closed-form no-jump propagation for the two-level atom with unit
/// efficiency: `exp(A)` of a 2×2 matrix by Cayley–Hamilton.
pub fn expm2(a: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mu = (a[0][0] + a[1][1]) * 0.5;
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let s = (mu * mu - det).sqrt();
    let e = mu.exp();
    let (ch, sh_over_s) = if s.norm() < 1e-8 {
        (Complex64::new(1.0, 0.0) + s * s * 0.5, Complex64::new(1.0, 0.0) + s * s / 6.0)
    } else {
        (s.cosh(), s.sinh() / s)
    };
    let m = |i: usize, j: usize| {
        let id = if i == j { mu } else { Complex64::new(0.0, 0.0) };
        e * (if i == j { ch } else { Complex64::new(0.0, 0.0) } + sh_over_s * (a[i][j] - id))
    };
    [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]]
}

/// No-click survival after a click for the two-level atom `(Ω, δ, Γ)`.
pub fn two_level_survival(omega: f64, delta: f64, gamma: f64, tau: f64) -> f64 {
    let i = Complex64::new(0.0, 1.0);
    let heff = [[c(0.0), c(omega / 2.0)], [c(omega / 2.0), c(-delta) - i * (gamma / 2.0)]];
    let a = [
        [-i * heff[0][0] * tau, -i * heff[0][1] * tau],
        [-i * heff[1][0] * tau, -i * heff[1][1] * tau],
    ];
    let u = expm2(a);
    u[0][0].norm_sqr() + u[1][0].norm_sqr()
}

/// Click-to-click waiting-time density `Γ |⟨e|U(τ)|g⟩|²` of the two-level atom.
pub fn two_level_density(omega: f64, delta: f64, gamma: f64, tau: f64) -> f64 {
    let i = Complex64::new(0.0, 1.0);
    let a = [
        [c(0.0), -i * (omega / 2.0 * tau)],
        [-i * (omega / 2.0 * tau), (i * delta - gamma / 2.0) * tau],
    ];
    gamma * expm2(a)[1][0].norm_sqr()
}

/// Inverts the survival function: the waiting time with `S(τ) = u`.
pub fn two_level_waiting_time(omega: f64, delta: f64, gamma: f64, u: f64) -> f64 {
    let mut hi = 1.0 / gamma;
    while two_level_survival(omega, delta, gamma, hi) > u {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if two_level_survival(omega, delta, gamma, mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Steady excited population of the two-level atom.
pub fn two_level_excited(omega: f64, delta: f64, gamma: f64) -> f64 {
    omega * omega / (gamma * gamma + 2.0 * omega * omega + 4.0 * delta * delta)
}

/// Kolmogorov–Smirnov distance between sorted samples and the CDF of row
/// `m` of a table (all `m'` pooled, normalized over the grid).
pub fn ks_to_row(sorted: &[f64], table: &WtdTable, m: usize) -> f64 {
    let g = table.grid();
    let h = g.width();
    let mut edges = vec![0.0; g.n_bins + 1];
    for i in 0..g.n_bins {
        let dens: f64 = (0..table.channel_count()).map(|mp| table.w(m, mp, i)).sum();
        edges[i + 1] = edges[i] + dens * h;
    }
    let total = edges[g.n_bins];
    let cdf = |tau: f64| -> f64 {
        if tau >= g.tau_max {
            return 1.0;
        }
        let x = tau / h;
        let i = (x as usize).min(g.n_bins - 1);
        let frac = x - i as f64;
        (edges[i] + frac * (edges[i + 1] - edges[i])) / total
    };
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let f = cdf(t);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS distance between sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Anderson–Darling statistic for normality with estimated mean and
/// variance, with the small-sample correction `(1 + 0.75/n + 2.25/n²)`.
pub fn anderson_darling_normal(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - mu) / sd).collect();
    z.sort_by(f64::total_cmp);
    let phi = |t: f64| 0.5 * erfc(-t / std::f64::consts::SQRT_2);
    let s: f64 = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let k = i as f64 + 1.0;
            let zr = z[z.len() - 1 - i];
            (2.0 * k - 1.0) * (phi(zi).ln() + (1.0 - phi(zr)).ln())
        })
        .sum();
    let a2 = -n - s / n;
    a2 * (1.0 + 0.75 / n + 2.25 / (n * n))
}

/// Complementary error function (Numerical Recipes `erfcc`, |ε| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
