mod common;

use common::{anderson_darling_normal, ks_to_row, ks_two_sample, lambda, two_level_waiting_time};
use rand::Rng;
use wtd_fisher::lindblad::{detected_rates, steady_state, waiting_time_distributions, GridSpec, TauGrid};
use wtd_fisher::model::{build_two_level, ParameterizedModel};
use wtd_fisher::stats::{mean, sample_variance};
use wtd_fisher::trajectory::*;
use wtd_fisher::Error;

fn intervals(records: &[DetectionRecord], m: usize) -> Vec<f64> {
    let mut out: Vec<f64> = records
        .iter()
        .flat_map(|r| r.events.windows(2).filter(|p| p[0].channel == m).map(|p| p[1].t - p[0].t).collect::<Vec<_>>())
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

fn two_level_family() -> ParameterizedModel {
    ParameterizedModel::new("gamma", 1.0, |g| build_two_level(3.0, 0.5, g, 1.0))
}

#[test]
fn click_rates_match_steady_state() {
    let pm = ParameterizedModel::new("delta1", 1.0, |d| Ok(lambda(5.0, 2.0, 0.0, d, 1.0, 0.1, 1.0, 0.7)));
    let model = pm.model().unwrap();
    let rates = detected_rates(&model, &steady_state(&model).unwrap());
    let t = 2000.0;
    let records = batch_records(&pm, 1.0, t, 40, 11).unwrap();
    for m in 0..2 {
        let n: Vec<f64> = records.iter().map(|r| r.counts()[m] as f64).collect();
        let sd = (sample_variance(&n).unwrap() / n.len() as f64).sqrt();
        let z = (mean(&n) - rates[m] * t) / sd;
        assert!(z.abs() < 3.0, "channel {m}: z = {z}");
    }
}

#[test]
fn branching_ratio_follows_decay_rates() {
    // Both channels leave |2⟩, so N0/N1 → Γ0/Γ1 whatever the driving.
    let model = lambda(5.0, 3.0, 0.0, 1.0, 0.5, 0.1, 1.0, 1.0);
    let rec = simulate_record(&model, 5e4, 3).unwrap();
    let n = rec.counts();
    let ratio = n[0] as f64 / n[1] as f64;
    let sd = 2.0 * (1.0 / n[0] as f64 + 1.0 / n[1] as f64).sqrt();
    assert!((ratio - 2.0).abs() < 3.0 * sd, "{ratio}");
}

#[test]
fn seeds_and_streams_determine_records() {
    let model = build_two_level(3.0, 0.0, 1.0, 1.0).unwrap();
    let dt = default_time_step(&model);
    let a = simulate_record_with(&model, 200.0, 9, 2, dt).unwrap();
    let b = simulate_record_with(&model, 200.0, 9, 2, dt).unwrap();
    let c = simulate_record_with(&model, 200.0, 9, 3, dt).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.events, c.events);
    let batch = batch_records(&two_level_family(), 1.0, 50.0, 4, 9).unwrap();
    let again = batch_records(&two_level_family(), 1.0, 50.0, 4, 9).unwrap();
    assert_eq!(batch, again);
    assert_eq!(batch[3].stream, 3);
}

#[test]
fn zero_runs_give_nothing() {
    let grid = TauGrid::new(10.0, 100).unwrap();
    assert!(batch_simulate(&two_level_family(), 1.0, 10.0, 0, 1, grid).unwrap().is_empty());
}

#[test]
fn oversized_time_step_is_rejected() {
    let model = build_two_level(3.0, 0.0, 1.0, 1.0).unwrap();
    let err = simulate_record_with(&model, 10.0, 1, 0, 0.5).unwrap_err();
    assert!(matches!(err, Error::StepSize { .. }));
    assert!(err.is_numerical());
}

#[test]
fn two_level_waiting_times_match_table_and_closed_form() {
    let (omega, delta, gamma) = (3.0, 0.5, 1.0);
    let records = batch_records(&two_level_family(), gamma, 2e4, 8, 21).unwrap();
    let sim = intervals(&records, 0);
    assert!(sim.len() > 50_000);
    let table = waiting_time_distributions(&records_model(), &GridSpec::auto()).unwrap();
    let d = ks_to_row(&sim, &table, 0);
    assert!(d < 0.01, "KS to table {d}");

    let mut rng = common::rng(77);
    let mut exact: Vec<f64> =
        (0..sim.len()).map(|_| two_level_waiting_time(omega, delta, gamma, rng.random::<f64>())).collect();
    exact.sort_by(f64::total_cmp);
    // 1% critical value of the two-sample statistic.
    let crit = 1.63 * (2.0 / sim.len() as f64).sqrt();
    assert!(ks_two_sample(&sim, &exact) < crit);
}

fn records_model() -> wtd_fisher::model::OpenSystemModel {
    build_two_level(3.0, 0.5, 1.0, 1.0).unwrap()
}

#[test]
fn lambda_rows_match_table() {
    let pm = ParameterizedModel::new("delta1", 1.0, |d| Ok(lambda(5.0, 3.0, 0.0, d, 0.5, 0.1, 1.0, 1.0)));
    let records = batch_records(&pm, 1.0, 2e4, 8, 5).unwrap();
    let table = waiting_time_distributions(&pm.model().unwrap(), &GridSpec::auto()).unwrap();
    for m in 0..2 {
        let sim = intervals(&records, m);
        let d = ks_to_row(&sim, &table, m);
        assert!(d < 0.02, "row {m}: {d} from {} intervals", sim.len());
    }
}

#[test]
fn consecutive_two_level_intervals_are_uncorrelated() {
    let rec = simulate_record(&records_model(), 5e4, 4).unwrap();
    let tau: Vec<f64> = rec.events.windows(2).map(|p| p[1].t - p[0].t).collect();
    let mu = mean(&tau);
    let var = sample_variance(&tau).unwrap();
    let n = tau.len() - 1;
    let cov: f64 = tau.windows(2).map(|p| (p[0] - mu) * (p[1] - mu)).sum::<f64>() / n as f64;
    let rho = cov / var;
    assert!(rho.abs() < 4.0 / (n as f64).sqrt(), "lag-1 correlation {rho}");
}

#[test]
fn long_run_counts_are_normal() {
    let records = batch_records(&two_level_family(), 1.0, 1000.0, 200, 8).unwrap();
    let n: Vec<f64> = records.iter().map(|r| r.counts()[0] as f64).collect();
    let a2 = anderson_darling_normal(&n);
    assert!(a2 < 1.035, "A² = {a2}");
}

#[test]
fn inefficient_detector_thins_clicks() {
    let full = build_two_level(3.0, 0.0, 1.0, 1.0).unwrap();
    let half = build_two_level(3.0, 0.0, 1.0, 0.5).unwrap();
    let a = simulate_record(&full, 2e4, 1).unwrap().counts()[0] as f64;
    let b = simulate_record(&half, 2e4, 1).unwrap().counts()[0] as f64;
    let ratio = b / a;
    assert!((ratio - 0.5).abs() < 0.03, "{ratio}");
}

#[test]
fn records_and_histograms_round_trip() {
    let model = lambda(5.0, 3.0, 0.0, 1.0, 0.5, 0.1, 1.0, 1.0);
    let rec = simulate_record(&model, 300.0, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.csv");
    rec.write_csv(&path).unwrap();
    assert_eq!(DetectionRecord::read_csv(&path).unwrap(), rec);

    let grid = TauGrid::new(5.0, 50).unwrap();
    let mut h = sort_intervals(&rec, grid);
    let hp = dir.path().join("hist.csv");
    h.write_csv(&hp).unwrap();
    let back = IntervalHistogram::read_csv(&hp).unwrap();
    assert_eq!(back, h);
    let pairs: u64 = (0..2).map(|m| back.intervals_from(m)).sum();
    assert_eq!(pairs as usize, rec.events.len() - 1);

    let other = h.clone();
    h.merge(&other).unwrap();
    assert_eq!(h.count(0, 0, 3), 2 * other.count(0, 0, 3));
    let wrong = IntervalHistogram::empty(TauGrid::new(5.0, 51).unwrap(), 2);
    assert!(matches!(h.merge(&wrong), Err(Error::GridMismatch(_))));
}
