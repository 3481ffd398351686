//! Maximum-likelihood fitting with observed-information covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::likelihood::{Design, Evaluation, LikelihoodData};
use super::model::IntensityModel;
use super::optimize::{maximize, OptimizerOptions};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    #[serde(flatten)]
    pub optimizer: OptimizerOptions,
    /// Starting coefficients; zero when absent.
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// `block.coefficient` labels, aligned with `coefficients`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
    /// Inverse observed information, row-major; absent when singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest scaled gradient component at the optimum.
    pub gradient_max: f64,
    pub singular_information: bool,
    pub message: String,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let n = c.len();
        Some(DMatrix::from_fn(n, n, |i, j| c[i][j]))
    }

    /// A fit with the given coefficients and no uncertainty.
    pub fn fixed(names: Vec<String>, coefficients: Vec<f64>) -> Self {
        let n = coefficients.len();
        Self {
            names,
            coefficients,
            standard_errors: Some(vec![0.0; n]),
            covariance: Some(vec![vec![0.0; n]; n]),
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
            gradient_max: 0.0,
            singular_information: false,
            message: "fixed".into(),
        }
    }
}

/// Designs mapped into a shared coefficient vector.
pub(crate) struct Problem {
    pub parts: Vec<(Design, Vec<usize>)>,
    pub dim: usize,
    pub names: Vec<String>,
}

impl Problem {
    pub(crate) fn single(model: &IntensityModel, data: &LikelihoodData) -> Result<Self> {
        let design = Design::new(model, data)?;
        let dim = design.dim();
        Ok(Self { parts: vec![(design, (0..dim).collect())], dim, names: coefficient_names(model, None) })
    }

    pub(crate) fn evaluate(&self, x: &[f64], hessian: bool) -> Evaluation {
        let mut total = Evaluation::zeros(self.dim, hessian);
        let mut local = Vec::new();
        for (design, map) in &self.parts {
            local.clear();
            local.extend(map.iter().map(|&i| x[i]));
            let e = design.evaluate(&local, hessian);
            total.value += e.value;
            for (j, &gj) in map.iter().enumerate() {
                total.gradient[gj] += e.gradient[j];
            }
            if let (Some(h), Some(eh)) = (total.hessian.as_mut(), e.hessian.as_ref()) {
                let p = map.len();
                for (j, &gj) in map.iter().enumerate() {
                    for (l, &gl) in map.iter().enumerate() {
                        h[gj * self.dim + gl] += eh[j * p + l];
                    }
                }
            }
        }
        total
    }

    /// Root-mean-square of each coefficient's covariate over all rows.
    fn scale(&self) -> Vec<f64> {
        let mut ss = vec![0.0; self.dim];
        let mut rows = vec![0usize; self.dim];
        for (design, map) in &self.parts {
            for (j, v) in design.column_sumsq().into_iter().enumerate() {
                ss[map[j]] += v;
                rows[map[j]] += design.n_rows();
            }
        }
        ss.iter()
            .zip(&rows)
            .map(|(s, &n)| {
                let rms = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if rms > 0.0 && rms.is_finite() {
                    rms
                } else {
                    1.0
                }
            })
            .collect()
    }

    pub(crate) fn fit(&self, opts: &FitOptions) -> Result<FitResult> {
        let x0 = match &opts.start {
            Some(s) if s.len() != self.dim => {
                return invalid(format!("start has {} values for {} coefficients", s.len(), self.dim))
            }
            Some(s) => s.clone(),
            None => vec![0.0; self.dim],
        };
        let scale = self.scale();
        let out = maximize(|x, h| self.evaluate(x, h), &x0, &scale, &opts.optimizer);
        let hessian = out.eval.hessian.clone().unwrap_or_else(|| self.evaluate(&out.x, true).hessian.unwrap());
        let (covariance, singular) = invert_information(&hessian, &scale);
        let standard_errors = covariance.as_ref().map(|c| (0..self.dim).map(|i| c[i][i].max(0.0).sqrt()).collect());
        Ok(FitResult {
            names: self.names.clone(),
            coefficients: out.x,
            standard_errors,
            covariance,
            loglik: out.eval.value,
            converged: out.converged,
            iterations: out.iterations,
            gradient_max: out.gradient_max,
            singular_information: singular,
            message: out.message,
        })
    }
}

pub(crate) fn coefficient_names(model: &IntensityModel, prefix: Option<&dyn Fn(&str) -> String>) -> Vec<String> {
    model
        .blocks()
        .iter()
        .flat_map(|b| {
            let block = prefix.map_or_else(|| b.name.clone(), |f| f(&b.name));
            b.covariates.iter().map(move |c| format!("{block}.{}", c.name))
        })
        .collect()
}

/// Covariance from the Hessian of the log-likelihood. Singularity is judged
/// on the rescaled information.
fn invert_information(hessian: &[f64], scale: &[f64]) -> (Option<Vec<Vec<f64>>>, bool) {
    let n = scale.len();
    if n == 0 {
        return (Some(Vec::new()), false);
    }
    if hessian.iter().any(|v| !v.is_finite()) {
        return (None, true);
    }
    let info = DMatrix::from_fn(n, n, |i, j| -hessian[i * n + j] / (scale[i] * scale[j]));
    let info = (&info + info.transpose()) * 0.5;
    let eig = info.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return (None, true);
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let scaled_cov = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let cov = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (scaled_cov[(i, j)] + scaled_cov[(j, i)]) / (scale[i] * scale[j])).collect())
        .collect();
    (Some(cov), false)
}

/// Fit `model` to `data` by maximum likelihood.
pub fn fit_mle(model: &IntensityModel, data: &LikelihoodData, opts: &FitOptions) -> Result<FitResult> {
    Problem::single(model, data)?.fit(opts)
}
