//! Small unconstrained minimizers for the per-region likelihoods.

/// Outcome of a minimization. `x` is the best iterate seen, converged or not.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with a backtracking Armijo line search.
///
/// `f` returns the objective and its gradient. Returns `converged = false`
/// with the best iterate when the line search stalls or `max_iter` is hit.
pub fn bfgs<F>(mut f: F, x0: &[f64], gtol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let d = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut h = identity(d);
    let mut iterations = 0;
    while iterations < max_iter {
        let gn = norm(&g);
        if gn < gtol {
            return Minimum { x, value: fx, grad_norm: gn, iterations, converged: true };
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..d).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            h = identity(d);
            p = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + step * pi).collect();
            let (fn_, gn_) = f(&xn);
            if fn_.is_finite() && gn_.iter().all(|v| v.is_finite()) {
                let armijo = fn_ <= fx + 1e-4 * step * slope;
                // Near the optimum the objective is flat to rounding; accept
                // steps that do not increase it and shrink the gradient.
                let flat = (fn_ - fx).abs() <= 1e-13 * fx.abs().max(1.0) && norm(&gn_) < gn;
                if armijo || flat {
                    accepted = Some((xn, fn_, gn_));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else {
            return Minimum { x, value: fx, grad_norm: gn, iterations, converged: false };
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn_.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if iterations == 1 {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if i == j { scale } else { 0.0 };
                    }
                }
            }
            let hy: Vec<f64> = (0..d).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..d {
                for j in 0..d {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        x = xn;
        fx = fn_;
        g = gn_;
    }
    let gn = norm(&g);
    Minimum { x, value: fx, grad_norm: gn, iterations, converged: gn < gtol }
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Nelder-Mead simplex with standard coefficients. Stops when the spread of
/// simplex values falls below `ftol` or after `max_iter` iterations.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], initial_step: f64, ftol: f64, max_iter: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[d].1 - simplex[0].1).abs() <= ftol * (simplex[0].1.abs() + ftol) {
            break;
        }
        let centroid: Vec<f64> =
            (0..d).map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect()
        };
        let worst = simplex[d].0.clone();
        let xr = along(-1.0, &worst);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0, &worst);
            let fe = eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(-0.5, &worst);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5, &worst);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
