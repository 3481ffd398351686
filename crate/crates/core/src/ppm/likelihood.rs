//! Riemann-sum point-pattern, cell-count and cell-presence likelihoods.
//!
//! All three depend on the coefficients only through `log η` per cell, so each
//! row contributes `a·u` to the gradient and `b·u uᵀ + a·∂²log η` to the
//! Hessian, where `a` and `b` are the first and second derivatives of the row
//! term in `log η`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{evaluate_row, BlockKind, IntensityModel};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observations {
    PointPattern { points: Vec<Point> },
    CellCounts { counts: Vec<u64> },
    CellPresence { present: Vec<bool> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    PointPattern,
    CellCounts,
    CellPresence,
}

/// Observations plus integration weights `α` per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodData {
    pub observations: Observations,
    pub weights: Vec<f64>,
}

impl LikelihoodData {
    pub fn new(observations: Observations, weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid(format!("integration weight {i} is negative or not finite"));
        }
        let n = weights.len();
        let len_ok = match &observations {
            Observations::PointPattern { .. } => true,
            Observations::CellCounts { counts } => counts.len() == n,
            Observations::CellPresence { present } => present.len() == n,
        };
        if !len_ok {
            return invalid("per-cell observations and weights differ in length");
        }
        Ok(Self { observations, weights })
    }

    /// Points with cell-area weights.
    pub fn point_pattern(grid: &Grid, points: Vec<Point>) -> Self {
        Self { observations: Observations::PointPattern { points }, weights: vec![grid.cell_area; grid.len()] }
    }

    pub fn cell_counts(grid: &Grid, counts: Vec<u64>) -> Result<Self> {
        Self::new(Observations::CellCounts { counts }, vec![grid.cell_area; grid.len()])
    }

    /// Counts from signed input; negative values are rejected.
    pub fn cell_counts_signed(grid: &Grid, counts: &[i64]) -> Result<Self> {
        if let Some(i) = counts.iter().position(|c| *c < 0) {
            return invalid(format!("negative count in cell {i}"));
        }
        Self::cell_counts(grid, counts.iter().map(|c| *c as u64).collect())
    }

    pub fn cell_presence(grid: &Grid, present: Vec<bool>) -> Result<Self> {
        Self::new(Observations::CellPresence { present }, vec![grid.cell_area; grid.len()])
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        Self::new(self.observations, self.weights)
    }

    pub fn kind(&self) -> LikelihoodKind {
        match self.observations {
            Observations::PointPattern { .. } => LikelihoodKind::PointPattern,
            Observations::CellCounts { .. } => LikelihoodKind::CellCounts,
            Observations::CellPresence { .. } => LikelihoodKind::CellPresence,
        }
    }

    /// Empty data of the same kind contributes nothing.
    pub fn is_empty(&self) -> bool {
        match &self.observations {
            Observations::PointPattern { points } => points.is_empty() && self.weights.iter().all(|w| *w == 0.0),
            _ => self.weights.iter().all(|w| *w == 0.0),
        }
    }
}

/// Model rows restricted to the cells that enter the likelihood.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    kind: LikelihoodKind,
    kinds: Vec<BlockKind>,
    p: usize,
    alpha: Vec<f64>,
    y: Vec<f64>,
    log_offset: Vec<f64>,
    /// Constant part of the value (`Σ N log α − log N!` for counts).
    constant: f64,
    x: Vec<f64>,
}

impl Design {
    pub(crate) fn new(model: &IntensityModel, data: &LikelihoodData) -> Result<Self> {
        let grid = model.grid();
        if data.weights.len() != grid.len() {
            return invalid(format!("data has {} weights for a {}-cell grid", data.weights.len(), grid.len()));
        }
        let y: Vec<f64> = match &data.observations {
            Observations::PointPattern { points } => {
                let mut counts = vec![0.0; grid.len()];
                for p in points {
                    counts[grid.cell_of(p)?] += 1.0;
                }
                counts
            }
            Observations::CellCounts { counts } => counts.iter().map(|c| *c as f64).collect(),
            Observations::CellPresence { present } => present.iter().map(|&o| f64::from(u8::from(o))).collect(),
        };
        let kind = data.kind();
        let kinds = model.column_kinds();
        let p = kinds.len();
        let mut d = Design {
            kind,
            kinds,
            p,
            alpha: Vec::new(),
            y: Vec::new(),
            log_offset: Vec::new(),
            constant: 0.0,
            x: Vec::new(),
        };
        let mut row = Vec::with_capacity(p);
        for cell in 0..grid.len() {
            let alpha = data.weights[cell];
            let yi = y[cell];
            if alpha == 0.0 && yi == 0.0 {
                continue;
            }
            let effort = model.effort_at(cell)?;
            if effort == 0.0 || (alpha == 0.0 && kind != LikelihoodKind::PointPattern) {
                if yi > 0.0 {
                    return Err(Error::DataInconsistency(format!(
                        "cell {cell} has observations but zero expected count (zero effort or weight)"
                    )));
                }
                continue;
            }
            model.row(cell, &mut row)?;
            if kind == LikelihoodKind::CellCounts {
                d.constant += yi * alpha.ln() - ln_factorial(yi as u64);
            }
            d.alpha.push(alpha);
            d.y.push(yi);
            d.log_offset.push(effort.ln());
            d.x.extend_from_slice(&row);
        }
        Ok(d)
    }

    pub(crate) fn dim(&self) -> usize {
        self.p
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.alpha.len()
    }

    /// Per-column sums of squared covariate values.
    pub(crate) fn column_sumsq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for row in self.x.chunks(self.p.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * v;
            }
        }
        out
    }

    /// Value, gradient and (optionally) Hessian at `coefs`.
    pub(crate) fn evaluate(&self, coefs: &[f64], hessian: bool) -> Evaluation {
        const CHUNK: usize = 512;
        let n = self.alpha.len();
        let p = self.p;
        let chunks: Vec<Evaluation> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|k| {
                let mut acc = Evaluation::zeros(p, hessian);
                for i in k * CHUNK..((k + 1) * CHUNK).min(n) {
                    let row = &self.x[i * p..(i + 1) * p];
                    let pe = evaluate_row(&self.kinds, row, coefs, self.log_offset[i]);
                    let (v, a, b) = row_terms(self.kind, self.alpha[i], self.y[i], pe.log_eta);
                    acc.value += v;
                    for j in 0..p {
                        acc.gradient[j] += a * pe.u[j];
                    }
                    if let Some(h) = acc.hessian.as_mut() {
                        for j in 0..p {
                            for l in 0..=j {
                                let mut t = b * pe.u[j] * pe.u[l];
                                if pe.detect_curv != 0.0
                                    && self.kinds[j] == BlockKind::Detection
                                    && self.kinds[l] == BlockKind::Detection
                                {
                                    t -= a * pe.detect_curv * row[j] * row[l];
                                }
                                h[j * p + l] += t;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = Evaluation::zeros(p, hessian);
        total.value = self.constant;
        for c in &chunks {
            total.add(c);
        }
        if let Some(h) = total.hessian.as_mut() {
            for j in 0..p {
                for l in 0..j {
                    h[l * p + j] = h[j * p + l];
                }
            }
        }
        total
    }
}

/// Log-likelihood value with its derivatives; the Hessian is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<f64>>,
}

impl Evaluation {
    pub(crate) fn zeros(p: usize, hessian: bool) -> Self {
        Self { value: 0.0, gradient: vec![0.0; p], hessian: hessian.then(|| vec![0.0; p * p]) }
    }

    fn add(&mut self, other: &Evaluation) {
        self.value += other.value;
        self.gradient.iter_mut().zip(&other.gradient).for_each(|(a, b)| *a += b);
        if let (Some(h), Some(o)) = (self.hessian.as_mut(), other.hessian.as_ref()) {
            h.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }
}

/// Row value and its first/second derivatives in `log η`.
fn row_terms(kind: LikelihoodKind, alpha: f64, y: f64, log_eta: f64) -> (f64, f64, f64) {
    let mu = alpha * log_eta.exp();
    match kind {
        LikelihoodKind::PointPattern => {
            let v = if y > 0.0 { y * log_eta } else { 0.0 } - mu;
            (v, y - mu, -mu)
        }
        LikelihoodKind::CellCounts => {
            // constant y·log α − log y! is carried by the design
            let v = if y > 0.0 { y * log_eta } else { 0.0 } - mu;
            (v, y - mu, -mu)
        }
        LikelihoodKind::CellPresence => {
            if y > 0.0 {
                let (r, dr) = presence_ratio(mu);
                ((-(-mu).exp_m1()).ln(), r, mu * dr)
            } else {
                (-mu, -mu, -mu)
            }
        }
    }
}

/// `r(μ) = μ / (e^μ − 1)` and `r'(μ)`.
fn presence_ratio(mu: f64) -> (f64, f64) {
    if mu < 1e-5 {
        return (1.0 - mu / 2.0 + mu * mu / 12.0, -0.5 + mu / 6.0);
    }
    let q = (-mu).exp();
    let one_minus_q = -(-mu).exp_m1();
    let r = mu * q / one_minus_q;
    let dr = q * (one_minus_q - mu) / (one_minus_q * one_minus_q);
    (r, dr)
}

pub(crate) fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series for ln Γ(n + 1)
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

fn check(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData, kind: LikelihoodKind) -> Result<Design> {
    model.check_coefficients(coefs)?;
    if data.kind() != kind {
        return invalid(format!("expected {kind:?} data, got {:?}", data.kind()));
    }
    Design::new(model, data)
}

/// `Σ_points log η − Σ_cells α η` over cells with positive effort.
pub fn riemann_loglik(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<f64> {
    Ok(check(model, coefs, data, LikelihoodKind::PointPattern)?.evaluate(coefs, false).value)
}

/// `Σ [N log(αη) − αη − log N!]`.
pub fn count_loglik(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<f64> {
    Ok(check(model, coefs, data, LikelihoodKind::CellCounts)?.evaluate(coefs, false).value)
}

/// `Σ [O log(1 − e^{−αη}) − (1 − O) αη]`.
pub fn presence_loglik(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<f64> {
    Ok(check(model, coefs, data, LikelihoodKind::CellPresence)?.evaluate(coefs, false).value)
}

/// Log-likelihood of any kind.
pub fn loglik(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<f64> {
    Ok(check(model, coefs, data, data.kind())?.evaluate(coefs, false).value)
}

/// Exact gradient of the log-likelihood in all coefficients.
pub fn loglik_gradient(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<Vec<f64>> {
    Ok(check(model, coefs, data, data.kind())?.evaluate(coefs, false).gradient)
}

/// Value, gradient and row-major Hessian.
pub fn loglik_hessian(model: &IntensityModel, coefs: &[f64], data: &LikelihoodData) -> Result<Evaluation> {
    Ok(check(model, coefs, data, data.kind())?.evaluate(coefs, true))
}
