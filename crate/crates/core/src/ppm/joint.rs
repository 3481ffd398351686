//! Several datasets, each with its own model and effort offset, sharing the
//! coefficient blocks named in `shared`.

use std::collections::BTreeMap;

use super::fit::{coefficient_names, FitOptions, FitResult, Problem};
use super::likelihood::{Design, LikelihoodData};
use super::model::{BlockKind, IntensityModel};
use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct JointComponent {
    pub label: String,
    pub model: IntensityModel,
    pub data: LikelihoodData,
}

impl JointComponent {
    pub fn new(label: impl Into<String>, model: IntensityModel, data: LikelihoodData) -> Self {
        Self { label: label.into(), model, data }
    }
}

#[derive(Debug, Clone)]
pub struct JointModel {
    components: Vec<JointComponent>,
    shared: Vec<String>,
    names: Vec<String>,
    maps: Vec<Vec<usize>>,
}

impl JointModel {
    pub fn new(components: Vec<JointComponent>, shared: Vec<String>) -> Result<Self> {
        if components.is_empty() {
            return invalid("joint model needs at least one component");
        }
        let mut labels = std::collections::HashSet::new();
        for c in &components {
            if !labels.insert(c.label.as_str()) {
                return invalid(format!("duplicate component label `{}`", c.label));
            }
        }
        // global block key -> (kind, coefficient names, first index)
        let mut blocks: BTreeMap<String, (BlockKind, Vec<String>, usize)> = BTreeMap::new();
        let mut names = Vec::new();
        let mut maps = Vec::new();
        for c in &components {
            let mut map = Vec::new();
            for b in c.model.blocks() {
                let key = if shared.contains(&b.name) { b.name.clone() } else { format!("{}.{}", c.label, b.name) };
                let coefs: Vec<String> = b.covariates.iter().map(|v| v.name.clone()).collect();
                let start = match blocks.get(&key) {
                    Some((kind, existing, start)) => {
                        if existing.len() != coefs.len() || *kind != b.kind {
                            return invalid(format!(
                                "shared block `{key}` has {} {:?} coefficients in one component and {} {:?} in `{}`",
                                existing.len(),
                                kind,
                                coefs.len(),
                                b.kind,
                                c.label
                            ));
                        }
                        *start
                    }
                    None => {
                        let start = names.len();
                        names.extend(coefs.iter().map(|n| format!("{key}.{n}")));
                        blocks.insert(key, (b.kind, coefs.clone(), start));
                        start
                    }
                };
                map.extend(start..start + coefs.len());
            }
            maps.push(map);
        }
        if let Some(s) = shared.iter().find(|s| !blocks.contains_key(*s)) {
            return invalid(format!("shared block `{s}` does not appear in any component"));
        }
        Ok(Self { components, shared, names, maps })
    }

    pub fn components(&self) -> &[JointComponent] {
        &self.components
    }

    pub fn shared(&self) -> &[String] {
        &self.shared
    }

    /// Labels of the joint coefficient vector.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_coefficients(&self) -> usize {
        self.names.len()
    }

    /// Component `i`'s coefficients taken from the joint vector.
    pub fn component_coefficients(&self, i: usize, coefs: &[f64]) -> Vec<f64> {
        self.maps[i].iter().map(|&j| coefs[j]).collect()
    }

    fn problem(&self) -> Result<Problem> {
        let parts = self
            .components
            .iter()
            .zip(&self.maps)
            .map(|(c, m)| Ok((Design::new(&c.model, &c.data)?, m.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem { parts, dim: self.names.len(), names: self.names.clone() })
    }

    fn check(&self, coefs: &[f64]) -> Result<()> {
        if coefs.len() != self.names.len() {
            return invalid(format!("joint model has {} coefficients, got {}", self.names.len(), coefs.len()));
        }
        Ok(())
    }
}

/// Sum of component log-likelihoods under the shared parameterization.
pub fn joint_loglik(joint: &JointModel, coefs: &[f64]) -> Result<f64> {
    joint.check(coefs)?;
    Ok(joint.problem()?.evaluate(coefs, false).value)
}

pub fn joint_gradient(joint: &JointModel, coefs: &[f64]) -> Result<Vec<f64>> {
    joint.check(coefs)?;
    Ok(joint.problem()?.evaluate(coefs, false).gradient)
}

pub fn fit_joint(joint: &JointModel, opts: &FitOptions) -> Result<FitResult> {
    joint.problem()?.fit(opts)
}

/// Coefficient labels of a single model, as used in fit results.
pub fn model_coefficient_names(model: &IntensityModel) -> Vec<String> {
    coefficient_names(model, None)
}
