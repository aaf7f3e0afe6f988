//! Named parameter vector theta, validated against the domain's declared
//! parameter names.

use std::collections::HashMap;
use std::sync::Arc;

use crate::domain::SimulationDomain;
use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct ParameterVector {
    domain: SimulationDomain,
    values: Arc<Vec<f64>>,
}

impl ParameterVector {
    /// Builds theta from a complete name -> value map. Missing or extra
    /// names are hard errors.
    pub fn from_map(domain: &SimulationDomain, map: &HashMap<String, f64>) -> Result<Self> {
        let names = domain.parameter_names();
        if map.len() != names.len() {
            let missing: Vec<&str> = names
                .iter()
                .filter(|n| !map.contains_key(*n))
                .map(|s| s.as_str())
                .collect();
            let extra: Vec<&str> = map
                .keys()
                .filter(|k| domain.param_index(k).is_err())
                .map(|s| s.as_str())
                .collect();
            return Err(SimError::ParameterMismatch(format!(
                "missing {missing:?}, extra {extra:?}"
            )));
        }
        let mut values = vec![0.0; names.len()];
        for (name, &v) in map {
            values[domain.param_index(name)?] = v;
        }
        Ok(ParameterVector {
            domain: domain.clone(),
            values: Arc::new(values),
        })
    }

    /// All parameters zero; handy for toy scenarios and tests.
    pub fn zeros(domain: &SimulationDomain) -> Self {
        ParameterVector {
            domain: domain.clone(),
            values: Arc::new(vec![0.0; domain.parameter_names().len()]),
        }
    }

    pub fn domain(&self) -> &SimulationDomain {
        &self.domain
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.domain.param_index(name)?])
    }

    #[inline]
    pub fn get_index(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// New vector with `name` replaced.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let idx = self.domain.param_index(name)?;
        let mut values = self.values.as_ref().clone();
        values[idx] = value;
        Ok(ParameterVector {
            domain: self.domain.clone(),
            values: Arc::new(values),
        })
    }

    /// New vector with several names replaced.
    pub fn with_all(&self, updates: &[(String, f64)]) -> Result<Self> {
        let mut values = self.values.as_ref().clone();
        for (name, v) in updates {
            values[self.domain.param_index(name)?] = *v;
        }
        Ok(ParameterVector {
            domain: self.domain.clone(),
            values: Arc::new(values),
        })
    }

    pub fn bit_identical(&self, other: &ParameterVector) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
