use std::fs;

use stablab::num::RngStream;
use stablab::sim::{
    output_files, run_and_write, run_coverage_grid, run_decision_grid, run_margin_df_grid, simulate_dataset,
    summarize_boundary_frequencies, CurveIndex, Output, SimConfig, EXPECTED_LABEL,
};

fn small() -> SimConfig {
    SimConfig {
        vcfrac_grid: vec![0.0, 0.5],
        reps_margin: 40,
        reps_boundary: 40,
        reps_coverage: 20,
        reps_decision: 20,
        seed: 7,
        ..SimConfig::default()
    }
}

fn lot_means(cfg: &SimConfig, vc: f64, rep: u64) -> (f64, f64) {
    // between-lot variance of lot means and pooled within-lot residual variance
    // about the true line
    let s = simulate_dataset(cfg, vc, 57.0, RngStream::new(1, 1, rep)).unwrap();
    let m = cfg.months.len() as f64;
    let mut means = Vec::new();
    let mut within = 0.0;
    for (_, rows) in s.dataset.by_lot() {
        let dev: Vec<f64> = rows.iter().map(|r| r.value - s.beta0 - s.beta1 * r.month).collect();
        let mu = dev.iter().sum::<f64>() / m;
        within += dev.iter().map(|d| (d - mu).powi(2)).sum::<f64>();
        means.push(mu);
    }
    let l = means.len() as f64;
    let grand = means.iter().sum::<f64>() / l;
    let between = m * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (l - 1.0);
    (between, within / (l * (m - 1.0)))
}

#[test]
fn dataset_moments() {
    let cfg = SimConfig::default();
    let f0: f64 = (0..400).map(|r| { let (b, w) = lot_means(&cfg, 0.0, r); b / w }).sum::<f64>() / 400.0;
    // E[F(9, 60)] = 60/58
    assert!((f0 - 60.0 / 58.0).abs() < 0.08, "{f0}");
    let (b, w) = lot_means(&cfg, 0.999, 0);
    assert!(b > 100.0 * w);
}

#[test]
fn simulated_truth_is_recorded() {
    let cfg = SimConfig::default();
    let s = simulate_dataset(&cfg, 0.5, 52.0, RngStream::new(3, 4, 5)).unwrap();
    assert_eq!(s.lot_effects.len(), 10);
    assert!((s.beta1 + 10.0 / 52.0).abs() < 1e-15);
    assert!((s.true_mean(2, 52.0) - (90.0 + s.lot_effects[2])).abs() < 1e-12);
}

#[test]
fn margin_grid_mechanics() {
    let cfg = SimConfig { vcfrac_grid: vec![0.0, 0.1], reps_margin: 100, ..small() };
    let rows = run_margin_df_grid(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.failures == 0));
    for r in rows.iter().filter(|r| r.method == "CONTAIN") {
        assert_eq!(r.mean_ddf, 59.0);
    }
    let zero_sat = rows
        .iter()
        .find(|r| r.index == CurveIndex::Fitted && r.bin_hi == 0.0 && r.method == "SAT")
        .expect("exact-zero bin");
    assert_eq!(zero_sat.mean_ddf, 68.0);
    // smallest populated positive bin: SAT limits are much wider than CONTAIN
    let first_pos = rows
        .iter()
        .filter(|r| r.index == CurveIndex::Fitted && r.bin_hi > 0.0)
        .map(|r| r.bin_lo)
        .fold(f64::INFINITY, f64::min);
    let get = |m: &str| rows.iter().find(|r| r.index == CurveIndex::Fitted && r.bin_hi > 0.0 && r.bin_lo == first_pos && r.method == m).unwrap();
    assert!(get("SAT").mean_margin > 1.5 * get("CONTAIN").mean_margin);
    assert!(get("SAT").mean_ddf < get("CONTAIN").mean_ddf);
    let ols = rows.iter().find(|r| r.index == CurveIndex::True && r.method == "OLS").unwrap();
    assert_eq!(ols.mean_ddf, 68.0);
}

#[test]
fn grids_report_every_cell() {
    let cfg = small();
    let b = summarize_boundary_frequencies(&cfg).unwrap();
    assert_eq!(b.len(), 2);
    assert!(b.iter().all(|r| r.reps + r.failures == 40 && (0.0..=1.0).contains(&r.p_b1_zero)));
    let c = run_coverage_grid(&cfg).unwrap();
    assert_eq!(c.len(), 12);
    assert!(c.iter().all(|r| r.lots_scored == 10 * r.reps && r.coverage > 0.5));
    let d = run_decision_grid(&cfg).unwrap();
    assert_eq!(d.len(), 14);
    assert_eq!(d.iter().filter(|r| r.method == EXPECTED_LABEL).count(), 2);
}

#[test]
fn deterministic_regardless_of_thread_count() {
    let cfg = small();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| summarize_boundary_frequencies(&cfg).unwrap());
    let b = three.install(|| summarize_boundary_frequencies(&cfg).unwrap());
    assert_eq!(a, b);
    let a = one.install(|| run_decision_grid(&cfg).unwrap());
    let b = three.install(|| run_decision_grid(&cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn written_tables_are_byte_identical_across_runs() {
    let cfg = SimConfig { vcfrac_grid: vec![0.2], reps_boundary: 30, ..small() };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let f1 = run_and_write(&cfg, Output::Table2, d1.path()).unwrap();
    let f2 = run_and_write(&cfg, Output::Table2, d2.path()).unwrap();
    assert_eq!(f1.len(), 1);
    assert_eq!(fs::read(&f1[0]).unwrap(), fs::read(&f2[0]).unwrap());
    let text = fs::read_to_string(&f1[0]).unwrap();
    assert!(text.starts_with("vcfrac_true,reps,failures,p_b0_zero,p_b1_zero,mean_p_b0,mean_p_b1\n"));
    assert_eq!(output_files(Output::All).len(), 6);
    assert!("fig9".parse::<Output>().is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SimConfig::default();
    cfg.vcfrac_grid = vec![1.0];
    assert!(cfg.validate().is_err());
    let cfg = SimConfig { lots: 1, ..SimConfig::default() };
    assert!(run_margin_df_grid(&cfg).is_err());
}
