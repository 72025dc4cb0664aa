mod common;

use common::*;
use nalgebra::DVector;
use stablab::data::{Observation, StabilityDataset};
use stablab::ddf::{satterthwaite_ddf, Target};
use stablab::lmm::{
    asycov_with, build_design, fit_reml, fit_with_theta, mme_solve, predict, reml_criterion, AsyCovMethod,
    ModelSpec, PredictionKind, Theta, VarComp,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn criterion_matches_dense_evaluation() {
    let ds = ri_dataset(10, &SIM_MONTHS, 0.3, 0.7, 1, 0);
    let y = ds.values();
    for spec in [ModelSpec::Ris, ModelSpec::Ri, ModelSpec::Ols] {
        let d = build_design(&ds, spec);
        for th in [Theta::new(0.2, 0.001, 0.8), Theta::new(0.0, 0.0, 1.3), Theta::new(2.0, 0.05, 0.1)] {
            let mut t = th;
            if !spec.random_components().contains(&VarComp::LotIntercept) {
                t.sigma2_b0 = 0.0;
            }
            if !spec.random_components().contains(&VarComp::LotSlope) {
                t.sigma2_b1 = 0.0;
            }
            let fast = reml_criterion(&t, &d, &y).unwrap();
            let dense = dense_reml(&d, &y, &t);
            assert!(rel(fast, dense) < 1e-10, "{spec} {t:?}: {fast} vs {dense}");
        }
    }
}

#[test]
fn ols_criterion_closed_form_and_fit() {
    let ds = ri_dataset(10, &SIM_MONTHS, 0.0, 1.0, 2, 0);
    let y = ds.values();
    let d = build_design(&ds, ModelSpec::Ols);
    let fit = fit_reml(&d, &y).unwrap();
    // textbook least squares
    let n = y.len() as f64;
    let t: Vec<f64> = ds.rows().iter().map(|r| r.month).collect();
    let tbar = t.iter().sum::<f64>() / n;
    let ybar = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - tbar).powi(2)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(a, b)| (a - tbar) * (b - ybar)).sum();
    let b1 = sxy / sxx;
    let b0 = ybar - b1 * tbar;
    let rss: f64 = t.iter().zip(&y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
    assert!(rel(fit.beta[1], b1) < 1e-10, "{} vs {b1}", fit.beta[1]);
    assert!(rel(fit.beta[0], b0) < 1e-10);
    assert!(rel(fit.theta.sigma2_e, rss / (n - 2.0)) < 1e-8);
    // residual likelihood of simple regression at any sigma2
    let s2: f64 = 1.7;
    let closed = -0.5 * (n * s2.ln() + (n * sxx).ln() - 2.0 * s2.ln() + rss / s2)
        - 0.5 * (n - 2.0) * (2.0 * std::f64::consts::PI).ln();
    let lr = reml_criterion(&Theta::new(0.0, 0.0, s2), &d, &y).unwrap();
    assert!(rel(lr, closed) < 1e-12, "{lr} vs {closed}");
    // AsyCov of the residual variance
    let a = fit.asycov.as_ref().unwrap();
    assert_eq!(a.components, vec![VarComp::Residual]);
    let expect = 2.0 * fit.theta.sigma2_e.powi(2) / (n - 2.0);
    assert!(rel(a.matrix[(0, 0)], expect) < 1e-6, "{} vs {expect}", a.matrix[(0, 0)]);
}

#[test]
fn criterion_scale_equivariance_and_nesting_identity() {
    let ds = ri_dataset(10, &SIM_MONTHS, 0.4, 0.6, 3, 0);
    let y = ds.values();
    let d = build_design(&ds, ModelSpec::Ri);
    let th = Theta::new(0.25, 0.0, 0.9);
    let c: f64 = 3.0;
    let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
    let ths = Theta::new(th.sigma2_b0 * c * c, 0.0, th.sigma2_e * c * c);
    let a = reml_criterion(&th, &d, &y).unwrap();
    let b = reml_criterion(&ths, &d, &ys).unwrap();
    assert!((b - (a - 68.0 / 2.0 * (c * c).ln())).abs() < 1e-9);

    let ols = build_design(&ds, ModelSpec::Ols);
    let at_zero = Theta::new(0.0, 0.0, 0.9);
    assert!((reml_criterion(&at_zero, &d, &y).unwrap() - reml_criterion(&at_zero, &ols, &y).unwrap()).abs() < 1e-12);
}

#[test]
fn bounded_fit_agrees_with_grid_search() {
    for rep in 0..12 {
        let vc = [0.0, 0.05, 0.3, 0.8][rep % 4];
        let ds = ri_dataset(10, &SIM_MONTHS, vc, 1.0 - vc, 4, rep as u64);
        let y = ds.values();
        let d = build_design(&ds, ModelSpec::Ri);
        let fit = fit_reml(&d, &y).unwrap();
        let (_, _, lgrid) = grid_search_ri(
            |b, e| reml_criterion(&Theta::new(b, 0.0, e), &d, &y).unwrap_or(f64::NEG_INFINITY),
            sample_var(&y),
        );
        assert!(fit.reml_loglik >= lgrid - 1e-6 * lgrid.abs(), "rep {rep}: fit {} < grid {lgrid}", fit.reml_loglik);
        assert!(rel(fit.reml_loglik, lgrid) < 1e-6, "rep {rep}: fit {} grid {lgrid}", fit.reml_loglik);
    }
}

#[test]
fn nested_fits_are_ordered() {
    for rep in 0..10 {
        let ds = ri_dataset(10, &SIM_MONTHS, 0.2, 0.8, 5, rep);
        let y = ds.values();
        let l: Vec<f64> = [ModelSpec::Ris, ModelSpec::Ri, ModelSpec::Ols]
            .iter()
            .map(|&s| fit_reml(&build_design(&ds, s), &y).unwrap().reml_loglik)
            .collect();
        assert!(l[0] >= l[1] - 1e-9 && l[1] >= l[2] - 1e-9, "rep {rep}: {l:?}");
    }
}

#[test]
fn boundary_fit_is_exact_zero_and_flagged() {
    let mut seen = 0;
    for rep in 0..20 {
        let ds = ri_dataset(10, &SIM_MONTHS, 0.0, 1.0, 6, rep);
        let y = ds.values();
        let fit = fit_reml(&build_design(&ds, ModelSpec::Ri), &y).unwrap();
        if fit.is_boundary(VarComp::LotIntercept) {
            seen += 1;
            assert_eq!(fit.theta.sigma2_b0, 0.0);
            assert!(fit.blups.iter().all(|b| b.b0 == 0.0));
            let r = satterthwaite_ddf(&fit, &Target::conditional(0, 48.0)).unwrap();
            assert!(r.reverted);
            assert_eq!(r.nu, 68.0);
            // the fit equals pooled regression
            let ols = fit_reml(&build_design(&ds, ModelSpec::Ols), &y).unwrap();
            assert!(rel(fit.theta.sigma2_e, ols.theta.sigma2_e) < 1e-8);
            assert!((fit.reml_loglik - ols.reml_loglik).abs() < 1e-8);
        } else {
            assert!(fit.theta.sigma2_b0 > 0.0);
        }
    }
    assert!(seen > 3, "only {seen} boundary fits in 20 null datasets");
}

#[test]
fn mme_matches_gls_and_blup_formulas() {
    let ds = ri_dataset(8, &SIM_MONTHS, 0.5, 0.5, 7, 0);
    let y = ds.values();
    for spec in [ModelSpec::Ris, ModelSpec::Ri] {
        let d = build_design(&ds, spec);
        let th = Theta::new(0.4, if spec == ModelSpec::Ris { 0.002 } else { 0.0 }, 0.6);
        let sol = mme_solve(&th, &d, &y).unwrap();
        let v = dense_v(&d, &th);
        let vinv = v.try_inverse().unwrap();
        let x = &d.x;
        let yv = DVector::from_column_slice(&y);
        let xvx_inv = (x.transpose() * &vinv * x).try_inverse().unwrap();
        let beta = &xvx_inv * x.transpose() * &vinv * &yv;
        for k in 0..2 {
            assert!(rel(sol.beta[k], beta[k]) < 1e-10);
        }
        let g = DVector::from_iterator(d.q(), d.z_columns.iter().map(|c| th.get(c.comp)));
        let b = g.component_mul(&(d.z.transpose() * &vinv * (&yv - x * &beta)));
        for j in 0..d.q() {
            assert!((sol.b[j] - b[j]).abs() < 1e-10 * (1.0 + b[j].abs()));
        }
        for a in 0..2 {
            for c in 0..2 {
                assert!((sol.c[(a, c)] - xvx_inv[(a, c)]).abs() < 1e-10 * xvx_inv[(a, c)].abs().max(1e-6));
            }
        }
    }
}

fn worked_example() -> (StabilityDataset, Theta) {
    let mut rows = Vec::new();
    for l in 0..14 {
        for (j, &m) in WORKED_MONTHS.iter().enumerate() {
            rows.push(Observation {
                lot: lot_name(l),
                month: m,
                value: 100.5 - 0.02 * m + 0.05 * ((l * 5 + j * 3) % 7) as f64,
            });
        }
    }
    (StabilityDataset::new(rows, "assay", 95.0).unwrap(), Theta::new(0.004491, 0.0, 0.2360))
}

#[test]
fn prediction_variances_on_balanced_worked_design() {
    let (ds, th) = worked_example();
    let y = ds.values();
    let d = build_design(&ds, ModelSpec::Ri);
    let fit = fit_with_theta(&d, &y, th, None).unwrap();
    let cond = predict(&fit, Some("G"), 24.0, PredictionKind::Conditional, 0.05, 1.0).unwrap();
    let marg = predict(&fit, None, 24.0, PredictionKind::Marginal, 0.05, 1.0).unwrap();
    assert!((cond.se_pred.powi(2) - 0.005451).abs() < 1e-6, "{}", cond.se_pred.powi(2));
    assert!((marg.se_pred.powi(2) - 0.002212).abs() < 5e-7, "{}", marg.se_pred.powi(2));
    // closed forms for the balanced design
    let (l, m) = (14.0, 9.0);
    let tbar = 22.0;
    let sxx = 51660.0;
    let vv = th.sigma2_b0 + th.sigma2_e / m;
    let s = th.sigma2_b0 / vv;
    let slope = th.sigma2_e * (24.0f64 - tbar).powi(2) / sxx;
    assert!(rel(marg.se_pred.powi(2), vv / l + slope) < 1e-10);
    let vci = (1.0 - s).powi(2) * vv / l + (1.0 - s).powi(2) * th.sigma2_b0 - 2.0 * (1.0 - s).powi(2) * th.sigma2_b0 / l
        + s * s * th.sigma2_e / m
        + 2.0 * s * (1.0 - s) * th.sigma2_e / (m * l)
        + slope;
    assert!(rel(cond.se_pred.powi(2), vci) < 1e-10);
    // exchangeable across lots
    for lot in fit.lots().to_vec() {
        let r = predict(&fit, Some(&lot), 24.0, PredictionKind::Conditional, 0.05, 1.0).unwrap();
        assert!(rel(r.se_pred, cond.se_pred) < 1e-12);
        assert!(r.se_pred >= marg.se_pred);
    }
}

#[test]
fn lcl_arithmetic() {
    let r = stablab::lmm::PredictionRow::from_parts(
        Some("G".into()),
        24.0,
        PredictionKind::Conditional,
        100.037,
        0.005451f64.sqrt(),
        1.0,
        0.05,
    )
    .unwrap();
    assert!((r.lcl - 99.571).abs() < 1e-3, "{}", r.lcl);
    assert!((r.ucl - r.pred - (r.pred - r.lcl)).abs() < 1e-12);
}

#[test]
fn predict_rejects_bad_arguments() {
    let (ds, th) = worked_example();
    let fit = fit_with_theta(&build_design(&ds, ModelSpec::Ri), &ds.values(), th, None).unwrap();
    assert!(predict(&fit, Some("nope"), 24.0, PredictionKind::Conditional, 0.05, 3.0).is_err());
    assert!(predict(&fit, Some("A"), 24.0, PredictionKind::Conditional, 0.6, 3.0).is_err());
    assert!(predict(&fit, Some("A"), 24.0, PredictionKind::Conditional, 0.0, 3.0).is_err());
    assert!(predict(&fit, None, 24.0, PredictionKind::Conditional, 0.05, 3.0).is_err());
}

#[test]
fn ols_conditional_equals_marginal() {
    let ds = ri_dataset(6, &SIM_MONTHS, 0.3, 0.7, 8, 0);
    let fit = fit_reml(&build_design(&ds, ModelSpec::Ols), &ds.values()).unwrap();
    for m in [0.0, 12.0, 48.0] {
        let a = predict(&fit, None, m, PredictionKind::Marginal, 0.05, 68.0).unwrap();
        for lot in fit.lots().to_vec() {
            let b = predict(&fit, Some(&lot), m, PredictionKind::Conditional, 0.05, 68.0).unwrap();
            assert_eq!(a.pred, b.pred);
            assert_eq!(a.se_pred, b.se_pred);
        }
    }
}

#[test]
fn observed_and_expected_asycov_are_close_on_interior_fit() {
    let ds = ri_dataset(10, &SIM_MONTHS, 0.5, 0.5, 9, 0);
    let y = ds.values();
    let fit = fit_reml(&build_design(&ds, ModelSpec::Ri), &y).unwrap();
    assert!(!fit.is_boundary(VarComp::LotIntercept));
    let obs = fit.asycov.clone().unwrap();
    let exp = asycov_with(&fit, AsyCovMethod::ExpectedInformation).unwrap();
    assert_eq!(obs.components, exp.components);
    // at a REML optimum the two informations agree to first order
    for i in 0..2 {
        assert!(rel(obs.matrix[(i, i)], exp.matrix[(i, i)]) < 0.25);
    }
    let m = &obs.matrix;
    assert!((m[(0, 1)] - m[(1, 0)]).abs() < 1e-8 * m.amax());
    assert!(m.clone().symmetric_eigenvalues().min() > -1e-8);
}
