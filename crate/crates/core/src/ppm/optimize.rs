//! BFGS maximizer on diagonally rescaled coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::Evaluation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop when the largest scaled gradient component falls below this.
    pub gradient_tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub eval: Evaluation,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_max: f64,
    pub message: String,
}

struct State {
    phi: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    eval: Evaluation,
}

/// Maximize `objective` starting from `x0`. `scale[j]` multiplies
/// coefficient `j` before optimization.
pub(crate) fn maximize<F>(mut objective: F, x0: &[f64], scale: &[f64], opts: &OptimizerOptions) -> Outcome
where
    F: FnMut(&[f64], bool) -> Evaluation,
{
    let n = x0.len();
    let s = DVector::from_column_slice(scale);
    let mut eval_at = |phi: &DVector<f64>, hess: bool| -> State {
        let x: Vec<f64> = phi.component_div(&s).iter().copied().collect();
        let eval = objective(&x, hess);
        let g = -DVector::from_column_slice(&eval.gradient).component_div(&s);
        let f = if eval.value.is_nan() { f64::INFINITY } else { -eval.value };
        State { phi: phi.clone(), f, g, eval }
    };
    let scaled_hessian = |st: &State| -> Option<DMatrix<f64>> {
        let h = st.eval.hessian.as_ref()?;
        Some(DMatrix::from_fn(n, n, |i, j| -h[i * n + j] / (s[i] * s[j])))
    };
    let inverse_pd = |h: DMatrix<f64>| -> Option<DMatrix<f64>> {
        if h.iter().any(|v| !v.is_finite()) {
            return None;
        }
        h.cholesky().map(|c| c.inverse())
    };

    let mut cur = eval_at(&DVector::from_column_slice(x0).component_mul(&s), true);
    let mut hinv = scaled_hessian(&cur).and_then(inverse_pd).unwrap_or_else(|| DMatrix::identity(n, n));
    let mut iterations = 0;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;

    while iterations < opts.max_iterations {
        if !cur.f.is_finite() {
            message = "objective is not finite at the current point".into();
            break;
        }
        if cur.g.amax() < opts.gradient_tolerance {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        iterations += 1;
        let mut d = -(&hinv * &cur.g);
        if cur.g.dot(&d) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            d = -cur.g.clone();
        }
        let next = match line_search(&mut eval_at, &cur, &d) {
            Some(st) => st,
            None => {
                // quasi-Newton direction exhausted; try an exact Newton step
                let with_h = eval_at(&cur.phi, true);
                let newton = scaled_hessian(&with_h)
                    .and_then(inverse_pd)
                    .map(|hi| -(&hi * &cur.g))
                    .and_then(|d| line_search(&mut eval_at, &cur, &d));
                match newton {
                    Some(st) => st,
                    None => {
                        message = "line search stalled".into();
                        break;
                    }
                }
            }
        };
        let step = &next.phi - &cur.phi;
        let dg = &next.g - &cur.g;
        let sy = step.dot(&dg);
        if sy > 1e-12 * step.norm() * dg.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &dg;
            let yhy = dg.dot(&hy);
            hinv += (&step * step.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * step.transpose() + &step * hy.transpose()) * rho;
        }
        cur = next;
    }
    if !converged && cur.g.amax() < opts.gradient_tolerance {
        converged = true;
        message = "gradient tolerance reached".into();
    }
    let x = cur.phi.component_div(&s).iter().copied().collect();
    let final_eval = objective_with_hessian(&mut eval_at, &cur);
    Outcome { x, gradient_max: cur.g.amax(), eval: final_eval, iterations, converged, message }
}

fn objective_with_hessian<E: FnMut(&DVector<f64>, bool) -> State>(eval_at: &mut E, st: &State) -> Evaluation {
    if st.eval.hessian.is_some() {
        st.eval.clone()
    } else {
        eval_at(&st.phi, true).eval
    }
}

/// Backtracking Armijo search; `None` when no decrease is found.
fn line_search<E: FnMut(&DVector<f64>, bool) -> State>(eval_at: &mut E, cur: &State, d: &DVector<f64>) -> Option<State> {
    let slope = cur.g.dot(d);
    if !(slope < 0.0) {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..60 {
        let cand = eval_at(&(&cur.phi + d * t), false);
        if cand.f.is_finite() && cand.f <= cur.f + 1e-4 * t * slope {
            if cand.f < cur.f || cand.g.amax() < cur.g.amax() {
                return Some(cand);
            }
            return None;
        }
        // decrease below the resolution of f: accept on a smaller gradient
        if cand.f.is_finite()
            && (cand.f - cur.f).abs() <= 1e-13 * cur.f.abs().max(1.0)
            && cand.g.amax() < 0.5 * cur.g.amax()
        {
            return Some(cand);
        }
        t *= 0.5;
    }
    None
}
