mod common;

use common::{c, corpus, lambda, master_rhs, random_density, rng};
use wtd_fisher::lindblad::*;
use wtd_fisher::linalg::{expm, max_abs, real, trace_of_vectorized, unvectorize, vectorize, CMatrix};
use wtd_fisher::model::{build_lambda_system, build_two_level, DetectedChannel, OpenSystemModel};
use wtd_fisher::Error;

#[test]
fn liouvillian_matches_direct_master_equation() {
    let model = lambda(5.0, 3.0, 0.0, 0.0, 0.5, 0.1, 1.0, 1.0);
    let l = liouvillian(&model);
    let lt = no_detected_jump_generator(&model);
    let eff = model.with_efficiencies(&[0.6, 0.3]).unwrap();
    let lt_eff = no_detected_jump_generator(&eff);
    let mut r = rng(5);
    for _ in 0..100 {
        let rho = random_density(3, &mut r);
        let direct = master_rhs(&model, &[1.0, 1.0], &rho);
        assert!(max_abs(&(unvectorize(&(&l * vectorize(&rho)), 3) - &direct)) < 1e-12);
        assert!(direct.trace().norm() < 1e-12);
        let cond = master_rhs(&model, &[0.0, 0.0], &rho);
        assert!(max_abs(&(unvectorize(&(&lt * vectorize(&rho)), 3) - cond)) < 1e-12);
        let partial = master_rhs(&eff, &[0.4, 0.7], &rho);
        assert!(max_abs(&(unvectorize(&(&lt_eff * vectorize(&rho)), 3) - partial)) < 1e-12);
    }
}

#[test]
fn zero_efficiency_generator_is_the_liouvillian() {
    let model = lambda(5.0, 3.0, 0.0, 0.0, 0.5, 0.1, 1.0, 0.0);
    let blind = lambda(5.0, 3.0, 0.0, 0.0, 0.5, 0.1, 1.0, 1.0);
    // Channel 1 unobserved: its feeding survives in the conditioned generator.
    let lt = no_detected_jump_generator(&model);
    let direct_partial = |rho: &CMatrix| master_rhs(&blind, &[0.0, 1.0], rho);
    let mut r = rng(1);
    let rho = random_density(3, &mut r);
    assert!(max_abs(&(unvectorize(&(&lt * vectorize(&rho)), 3) - direct_partial(&rho))) < 1e-12);
}

#[test]
fn propagation_preserves_trace() {
    let mut r = rng(17);
    for (name, model) in corpus() {
        let l = liouvillian(&model);
        let dim = model.dim();
        for t in [0.1, 1.0, 10.0] {
            let p = expm(&(&l * real(t)));
            let rho = random_density(dim, &mut r);
            let tr = trace_of_vectorized((&p * vectorize(&rho)).as_slice(), dim);
            assert!((tr.re - 1.0).abs() < 1e-9 && tr.im.abs() < 1e-9, "{name} t={t}: {tr}");
        }
    }
}

#[test]
fn steady_states_match_eigen_solver() {
    for (name, model) in corpus() {
        let rho = steady_state(&model).unwrap();
        let oracle = common::eigen_steady_state(&model);
        assert!(max_abs(&(rho.matrix() - &oracle)) < 1e-9, "{name}");
        let resid = unvectorize(&(liouvillian(&model) * vectorize(rho.matrix())), model.dim());
        assert!(max_abs(&resid) < 1e-10, "{name}");
        let eig = rho.matrix().clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-10), "{name}");
    }
}

#[test]
fn resonant_two_level_population_from_eigen_solver() {
    let (omega, gamma) = (3.0, 1.0);
    let model = build_two_level(omega, 0.0, gamma, 1.0).unwrap();
    let oracle = common::eigen_steady_state(&model);
    let closed = common::two_level_excited(omega, 0.0, gamma);
    assert!((oracle[(1, 1)].re - closed).abs() < 1e-10);
    assert!((steady_state(&model).unwrap().population(1) - oracle[(1, 1)].re).abs() < 1e-12);
}

#[test]
fn unprobed_lambda_pumps_into_dark_state() {
    let model = build_lambda_system(5.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 1.0, 1.0).unwrap();
    assert!(matches!(steady_state(&model), Err(Error::Ergodicity(_))));
    // Long-time integration from the excited state: emission dies out.
    let mut rho = CMatrix::zeros(3, 3);
    rho[(2, 2)] = c(1.0);
    let states = common::dopri45(|r| master_rhs(&model, &[1.0, 1.0], r), &rho, &[5.0, 50.0, 200.0], 1e-10, 1e-14);
    let rate = |r: &CMatrix| {
        model.detected().iter().map(|ch| (ch.rate_operator() * r).trace().re).sum::<f64>()
    };
    assert!(rate(&states[2]) < 1e-12 && rate(&states[1]) < rate(&states[0]));
    assert!((states[2][(1, 1)].re - 1.0).abs() < 1e-10);
}

#[test]
fn detected_survival_is_monotone() {
    for (name, model) in corpus() {
        let lt = no_detected_jump_generator(&model);
        let p = expm(&(&lt * real(0.01)));
        let dim = model.dim();
        for ch in model.detected() {
            let mut v = vectorize(&wtd_fisher::linalg::projector(dim, ch.final_state()));
            let mut last = 1.0;
            for _ in 0..3000 {
                v = &p * v;
                let tr = trace_of_vectorized(v.as_slice(), dim).re;
                assert!(tr <= last + 1e-14, "{name}");
                last = tr;
            }
        }
    }
}

#[test]
fn waiting_time_rows_are_normalized() {
    for (name, model) in corpus() {
        let t = waiting_time_distributions(&model, &GridSpec::auto()).unwrap();
        for m in 0..model.channel_count() {
            if model.detected()[m].efficiency() > 0.0 {
                assert!((t.normalization(m) - 1.0).abs() < 1e-6, "{name} row {m}: {}", t.normalization(m));
            }
        }
        assert!(t.values().iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn resonant_two_level_matches_ode_oracle() {
    let model = build_two_level(3.0, 0.0, 1.0, 1.0).unwrap();
    let t = waiting_time_distributions(&model, &GridSpec::auto()).unwrap();
    let oracle = common::ode_wtd(&model, t.grid());
    let err = t
        .row(0, 0)
        .iter()
        .zip(&oracle[0][0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn detuning_the_probe_reshapes_rows_after_channel_one() {
    let on = waiting_time_distributions(&lambda(5.0, 3.0, 0.0, 0.0, 0.5, 0.1, 1.0, 1.0), &GridSpec::auto()).unwrap();
    let grid = on.grid();
    let off = waiting_time_distributions(&lambda(5.0, 3.0, 0.0, 1.0, 0.5, 0.1, 1.0, 1.0), &GridSpec::fixed(grid))
        .unwrap();
    let l1 = |m: usize| -> f64 {
        (0..2)
            .map(|mp| on.row(m, mp).iter().zip(off.row(m, mp)).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .sum::<f64>()
            * grid.width()
    };
    assert!(l1(1) > l1(0), "row 0: {}, row 1: {}", l1(0), l1(1));
}

#[test]
fn decay_to_coupling_ground_state_is_super_poissonian() {
    let mut last = 0.0;
    for k in 0..20 {
        let d1 = 0.5 + 2.5 * k as f64 / 19.0;
        let model = lambda(5.0, 3.0, 0.0, d1, 0.5, 0.1, 1.0, 1.0);
        let s0 = channel_count_stats(&model, 0, &GridSpec::moments()).unwrap();
        let s1 = channel_count_stats(&model, 1, &GridSpec::moments()).unwrap();
        assert!(s0.fano_inverse < 1.0, "δ1={d1}: {s0:?}");
        assert!(s1.fano_inverse > last, "δ1={d1}: {s1:?}");
        last = s1.fano_inverse;
    }
    // Far off the probe resonance the probe channel turns sub-Poissonian.
    assert!(last > 1.0);
}

#[test]
fn exponential_waiting_times_are_poissonian() {
    let model = wtd_fisher::model::build_poisson_emitter(0.8, 2.0, 1.0).unwrap();
    let s = channel_count_stats(&model, 0, &GridSpec::moments()).unwrap();
    assert!((s.variance_ratio() - 1.0).abs() < 1e-6, "{s:?}");
    assert!((s.tau_mean - 1.25).abs() < 1e-8);
}

#[test]
fn split_channel_statistics_are_unchanged() {
    // One decay channel √Γ|g⟩⟨e| versus two copies at rate Γ/2 observed
    // together: the pooled click process is identical.
    let (omega, delta, gamma) = (2.0, 0.4, 1.0);
    let single = build_two_level(omega, delta, gamma, 1.0).unwrap();
    let half = |label: &str| {
        let mut op = CMatrix::zeros(2, 2);
        op[(0, 1)] = c((gamma / 2.0).sqrt());
        DetectedChannel::new(op, 0, 1.0, label).unwrap()
    };
    let split = OpenSystemModel::new(single.hamiltonian().clone(), vec![half("a"), half("b")], vec![]).unwrap();
    let a = channel_count_stats(&single, 0, &GridSpec::moments()).unwrap();
    let t = waiting_time_distributions(&split, &GridSpec::moments()).unwrap();
    let tau_mean: f64 = (0..2).map(|mp| t.integral(0, mp, 1)).sum();
    let tau_sq: f64 = (0..2).map(|mp| t.integral(0, mp, 2)).sum();
    let ratio = (tau_sq - tau_mean * tau_mean) / (tau_mean * tau_mean);
    assert!((ratio - a.variance_ratio()).abs() < 1e-8);
    let rates: f64 = t.channel_rates().iter().sum();
    assert!((rates - a.mean_rate).abs() < 1e-12);

    // Queried per channel, the two halves agree with each other.
    let s0 = channel_count_stats(&split, 0, &GridSpec::moments()).unwrap();
    let s1 = channel_count_stats(&split, 1, &GridSpec::moments()).unwrap();
    assert!((s0.fano_inverse - s1.fano_inverse).abs() < 1e-10);
    assert!((s0.mean_rate - s1.mean_rate).abs() < 1e-12);
}

#[test]
fn halving_efficiency_halves_the_rate() {
    let full = build_two_level(2.0, 0.3, 1.0, 0.8).unwrap();
    let half = build_two_level(2.0, 0.3, 1.0, 0.4).unwrap();
    let a = waiting_time_distributions(&full, &GridSpec::auto()).unwrap();
    let b = waiting_time_distributions(&half, &GridSpec::auto()).unwrap();
    assert!((b.channel_rates()[0] - 0.5 * a.channel_rates()[0]).abs() < 1e-13);
    assert!((a.normalization(0) - 1.0).abs() < 1e-6);
    assert!((b.normalization(0) - 1.0).abs() < 1e-6);
}

#[test]
fn fixed_grid_too_short_is_a_tail_error() {
    let model = build_two_level(3.0, 0.0, 1.0, 1.0).unwrap();
    let spec = GridSpec::fixed(TauGrid::new(2.0, 200).unwrap());
    let err = waiting_time_distributions(&model, &spec).unwrap_err();
    assert!(matches!(err, Error::Tail { .. }));
    assert!(err.to_string().contains("increase tau_max"));
}
