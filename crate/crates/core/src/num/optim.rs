//! Nelder-Mead simplex minimization with projection onto a box `x >= lower`.
//!
//! Trial points that leave the feasible region are clipped back onto it, so
//! the simplex can settle exactly on a bound. That is what lets the REML
//! engine represent variance components estimated at zero.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop when the spread of simplex values falls below `ftol (1 + |f|)`.
    pub ftol: f64,
    /// ... and the simplex diameter below `xtol (1 + |x|)`.
    pub xtol: f64,
    pub max_evals: usize,
    /// Initial edge length per coordinate (absolute, added to the start point).
    pub initial_step: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64]) {
    for (xi, lo) in x.iter_mut().zip(lower) {
        if *xi < *lo {
            *xi = *lo;
        }
    }
}

/// Minimizes `f` from `x0` subject to `x >= lower`.
pub fn nelder_mead_projected<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let fx = eval(x0, &mut evals);
        return Minimum {
            x: vec![],
            f: fx,
            evals,
            converged: true,
        };
    }

    let mut start = x0.to_vec();
    project(&mut start, lower);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for j in 0..n {
        let mut v = start.clone();
        v[j] += opts.initial_step[j];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < opts.max_evals {
        // order
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diam = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let scale_f = 1.0 + values[0].abs();
        let scale_x = 1.0 + simplex[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // a simplex collapsed to rounding level cannot make further progress
        if (spread.abs() <= opts.ftol * scale_f && diam <= opts.xtol * scale_x) || diam <= 1e-15 * scale_x {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            project(&mut p, lower);
            p
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(rho * alpha);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = best
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            project(&mut p, lower);
            values[i] = eval(&p, &mut evals);
            simplex[i] = p;
        }
    }

    let (ibest, fbest) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    Minimum {
        x: simplex[ibest].clone(),
        f: fbest,
        evals,
        converged,
    }
}
