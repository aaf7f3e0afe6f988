//! Simulation domain: the declared status variables and parameter names
//! that populations, events and samplers must agree on.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, SimError};

/// Index of a status variable inside its domain. All hot paths address
/// columns through this instead of name lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

/// Value space of a single status variable. Storage is always f64; the
/// kind drives validation, not representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Real,
    Integer,
    Binary,
}

#[derive(Debug, Clone)]
pub struct VariableDef {
    pub name: String,
    pub kind: VarKind,
    pub default: f64,
}

#[derive(Debug)]
struct DomainInner {
    variables: Vec<VariableDef>,
    by_name: HashMap<String, VarId>,
    parameters: Vec<String>,
    param_by_name: HashMap<String, usize>,
    alive: Option<VarId>,
}

/// Immutable, cheaply clonable description of the simulation domain.
#[derive(Debug, Clone)]
pub struct SimulationDomain {
    inner: Arc<DomainInner>,
}

/// Builder for [`SimulationDomain`]. Categorical variables are expanded
/// into one binary indicator column per level.
#[derive(Debug, Default)]
pub struct DomainBuilder {
    variables: Vec<VariableDef>,
    parameters: Vec<String>,
    alive: Option<String>,
}

impl DomainBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variable(mut self, name: &str, kind: VarKind) -> Self {
        self.variables.push(VariableDef {
            name: name.to_string(),
            kind,
            default: 0.0,
        });
        self
    }

    pub fn variable_with_default(mut self, name: &str, kind: VarKind, default: f64) -> Self {
        self.variables.push(VariableDef {
            name: name.to_string(),
            kind,
            default,
        });
        self
    }

    /// Expands `name` into `name.level` binary indicator columns.
    pub fn categorical(mut self, name: &str, levels: &[&str]) -> Self {
        for level in levels {
            self.variables.push(VariableDef {
                name: format!("{name}.{level}"),
                kind: VarKind::Binary,
                default: 0.0,
            });
        }
        self
    }

    pub fn parameter(mut self, name: &str) -> Self {
        self.parameters.push(name.to_string());
        self
    }

    pub fn parameters<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        for n in names {
            self.parameters.push(n.to_string());
        }
        self
    }

    /// Marks `name` as the liveness indicator used by the engine's
    /// dead-row handling.
    pub fn alive_variable(mut self, name: &str) -> Self {
        self.alive = Some(name.to_string());
        self
    }

    pub fn build(self) -> Result<SimulationDomain> {
        let mut by_name = HashMap::with_capacity(self.variables.len());
        for (i, v) in self.variables.iter().enumerate() {
            if by_name.insert(v.name.clone(), VarId(i)).is_some() {
                return Err(SimError::DuplicateVariable(v.name.clone()));
            }
        }
        let mut param_by_name = HashMap::with_capacity(self.parameters.len());
        for (i, p) in self.parameters.iter().enumerate() {
            if param_by_name.insert(p.clone(), i).is_some() {
                return Err(SimError::BadConfig(format!("duplicate parameter `{p}`")));
            }
        }
        let alive = match self.alive {
            Some(name) => Some(
                by_name
                    .get(&name)
                    .copied()
                    .ok_or(SimError::UndeclaredVariable(name))?,
            ),
            None => None,
        };
        Ok(SimulationDomain {
            inner: Arc::new(DomainInner {
                variables: self.variables,
                by_name,
                parameters: self.parameters,
                param_by_name,
                alive,
            }),
        })
    }
}

impl SimulationDomain {
    pub fn builder() -> DomainBuilder {
        DomainBuilder::new()
    }

    pub fn n_variables(&self) -> usize {
        self.inner.variables.len()
    }

    pub fn variables(&self) -> &[VariableDef] {
        &self.inner.variables
    }

    pub fn var(&self, name: &str) -> Result<VarId> {
        self.inner
            .by_name
            .get(name)
            .copied()
            .ok_or_else(|| SimError::UndeclaredVariable(name.to_string()))
    }

    pub fn var_name(&self, id: VarId) -> &str {
        &self.inner.variables[id.0].name
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.inner.parameters
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.inner
            .param_by_name
            .get(name)
            .copied()
            .ok_or_else(|| SimError::UndeclaredParameter(name.to_string()))
    }

    pub fn alive_var(&self) -> Option<VarId> {
        self.inner.alive
    }

    /// Two domains are the same if they share the same inner allocation.
    pub fn same_as(&self, other: &SimulationDomain) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}
