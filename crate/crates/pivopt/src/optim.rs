//! Derivative-free simplex minimization (Nelder-Mead).
//!
//! Single in-house optimizer shared by the likelihood fits and the implied
//! calibrations. Fully deterministic: vertex ordering breaks ties by index,
//! the initial simplex is a fixed function of the start point, and no
//! randomness enters the iteration.

use crate::error::{PivError, Result};

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOpts {
    pub max_iter: usize,
    /// Converged when the simplex diameter (max infinity-norm distance from
    /// the best vertex) falls below this...
    pub x_tol: f64,
    /// ...and the objective spread across vertices falls below this.
    pub f_tol: f64,
}

impl Default for NelderMeadOpts {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            x_tol: 1e-8,
            f_tol: 1e-12,
        }
    }
}

/// Minimization outcome.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Best objective value after each iteration; non-increasing by
    /// construction of the algorithm.
    pub best_f_trace: Vec<f64>,
    /// Simplex diameter at exit (diagnostic).
    pub simplex_spread: f64,
}

/// Standard Nelder-Mead with coefficients (reflection, expansion,
/// contraction, shrink) = (1, 2, 0.5, 0.5).
///
/// The objective may return `+inf` (or NaN, treated as `+inf`) to mark
/// infeasible points; the simplex then moves away from them. The start
/// point itself must be feasible.
pub fn nelder_mead<F>(objective: F, x0: &[f64], opts: &NelderMeadOpts) -> Result<NelderMeadResult>
where
    F: Fn(&[f64]) -> f64,
{
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    if x0.is_empty() {
        return Err(PivError::invalid_input("nelder_mead needs a non-empty x0"));
    }
    let eval = |x: &[f64]| -> f64 {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(PivError::invalid_input(format!(
            "objective must be finite at the start point, got {f0}"
        )));
    }

    let n = x0.len();
    // Initial simplex: perturb each coordinate by 5% (absolute 2.5e-4 at
    // zero), the fminsearch convention.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] != 0.0 { v[i] * 1.05 } else { 2.5e-4 };
        simplex.push(v);
    }
    let mut f_vals: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    // Index order sorted by objective (stable: ties keep insertion order).
    let mut order: Vec<usize> = (0..=n).collect();
    let sort_order = |order: &mut Vec<usize>, f_vals: &[f64]| {
        order.sort_by(|&i, &j| {
            f_vals[i]
                .partial_cmp(&f_vals[j])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    };
    sort_order(&mut order, &f_vals);

    loop {
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        trace.push(f_vals[best]);

        // Convergence check.
        let mut dx = 0.0_f64;
        for &i in order.iter().skip(1) {
            for (a, b) in simplex[i].iter().zip(&simplex[best]) {
                dx = dx.max((a - b).abs());
            }
        }
        let df = f_vals[worst] - f_vals[best];
        if dx <= opts.x_tol && df.abs() <= opts.f_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0_f64; n];
        for &i in order.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }

        let point_at = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = point_at(ALPHA);
        let fr = eval(&xr);

        if fr < f_vals[best] {
            // Try to expand further along the same direction.
            let xe = point_at(ALPHA * GAMMA);
            let fe = eval(&xe);
            if fe < fr {
                simplex[worst] = xe;
                f_vals[worst] = fe;
            } else {
                simplex[worst] = xr;
                f_vals[worst] = fr;
            }
        } else if fr < f_vals[second_worst] {
            simplex[worst] = xr;
            f_vals[worst] = fr;
        } else {
            let (xc, fc) = if fr < f_vals[worst] {
                // Outside contraction.
                let xc = point_at(ALPHA * RHO);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                // Inside contraction.
                let xc = point_at(-RHO);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < f_vals[worst].min(fr) {
                simplex[worst] = xc;
                f_vals[worst] = fc;
            } else {
                // Shrink towards the best vertex.
                let best_point = simplex[best].clone();
                for &i in order.iter().skip(1) {
                    let v: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&best_point)
                        .map(|(x, b)| b + SIGMA * (x - b))
                        .collect();
                    f_vals[i] = eval(&v);
                    simplex[i] = v;
                }
            }
        }
        sort_order(&mut order, &f_vals);
    }

    let best = order[0];
    let mut dx = 0.0_f64;
    for &i in order.iter().skip(1) {
        for (a, b) in simplex[i].iter().zip(&simplex[best]) {
            dx = dx.max((a - b).abs());
        }
    }
    Ok(NelderMeadResult {
        x_min: simplex[best].clone(),
        f_min: f_vals[best],
        converged,
        iterations,
        best_f_trace: trace,
        simplex_spread: dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_1d() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &NelderMeadOpts::default()).unwrap();
        assert!(r.converged);
        assert!((r.x_min[0] - 3.0).abs() < 1e-6, "x_min {}", r.x_min[0]);
    }

    #[test]
    fn quadratic_bowl_2d() {
        let r = nelder_mead(
            |x| x[0] * x[0] + x[1] * x[1],
            &[1.0, 1.0],
            &NelderMeadOpts::default(),
        )
        .unwrap();
        assert!(r.f_min < 1e-10, "f_min {}", r.f_min);
    }

    #[test]
    fn rosenbrock_within_budget() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadOpts::default()).unwrap();
        assert!(r.iterations <= 2000);
        assert!(r.f_min < 1e-6, "f_min {} after {} iters", r.f_min, r.iterations);
    }

    #[test]
    fn best_value_trace_is_monotone() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadOpts::default()).unwrap();
        assert!(r.best_f_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_repeat() {
        let f = |x: &[f64]| (x[0] - 0.7).powi(2) + (x[1] + 0.2).powi(4);
        let a = nelder_mead(f, &[5.0, -3.0], &NelderMeadOpts::default()).unwrap();
        let b = nelder_mead(f, &[5.0, -3.0], &NelderMeadOpts::default()).unwrap();
        assert_eq!(a.x_min[0].to_bits(), b.x_min[0].to_bits());
        assert_eq!(a.f_min.to_bits(), b.f_min.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn infeasible_region_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let r = nelder_mead(f, &[0.5], &NelderMeadOpts::default()).unwrap();
        assert!((r.x_min[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start_rejected() {
        let f = |_: &[f64]| f64::INFINITY;
        assert!(nelder_mead(f, &[0.0], &NelderMeadOpts::default()).is_err());
    }

    #[test]
    fn nan_objective_treated_as_infeasible() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 2.0).powi(2)
            }
        };
        let r = nelder_mead(f, &[0.5], &NelderMeadOpts::default()).unwrap();
        assert!((r.x_min[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn max_iter_exhaustion_flags_non_convergence() {
        let opts = NelderMeadOpts {
            max_iter: 3,
            ..Default::default()
        };
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
