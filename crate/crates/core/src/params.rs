//! Named trainable parameters.
//!
//! Parameters live in a `BTreeMap` so every traversal (optimizer updates,
//! checkpoint serialization, gradient application) happens in one fixed
//! order — a prerequisite for bitwise-reproducible training.

use std::collections::BTreeMap;
use std::path::Path;

use crate::diffmath::{Adam, GradMap, Tensor};
use crate::error::{Error, Result};
use crate::io::container::{self, Dtype, Slot};

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter; it is marked as requiring grad.
    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t.with_grad());
    }

    /// Handle to a parameter (shares identity with the stored tensor).
    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Apply one optimizer step from a gradient map. Parameters without a
    /// gradient entry receive a zero gradient (their Adam state still
    /// advances, keeping resume semantics uniform).
    pub fn apply_gradients(&mut self, adam: &mut Adam, grads: &GradMap) -> Result<()> {
        for (name, param) in self.map.iter_mut() {
            match grads.get(&param.id()) {
                Some(g) => adam.step_param(name, param, g)?,
                None => {
                    let zero = Tensor::zeros(param.shape());
                    adam.step_param(name, param, &zero)?;
                }
            }
        }
        Ok(())
    }

    /// Serialize parameters (and optionally Adam state) to a container.
    pub fn save(&self, path: &Path, adam: Option<&Adam>) -> Result<()> {
        let mut slots: Vec<(String, Slot)> = Vec::new();
        for (name, t) in &self.map {
            slots.push((name.clone(), Slot::from_tensor(t, Dtype::F64)));
        }
        if let Some(adam) = adam {
            for (name, state) in &adam.states {
                let shape = self.map.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
                slots.push((
                    format!("adam.m.{name}"),
                    Slot { dims: shape.clone(), dtype: Dtype::F64, data: state.m.clone() },
                ));
                slots.push((
                    format!("adam.v.{name}"),
                    Slot { dims: shape, dtype: Dtype::F64, data: state.v.clone() },
                ));
            }
        }
        container::write_container(path, &slots)
    }

    /// Load parameters from a container. Adam moment slots are returned
    /// separately keyed by parameter name.
    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, (Vec<f64>, Vec<f64>)>)> {
        let slots = container::read_container(path)?;
        let mut store = ParamStore::new();
        let mut moments: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (name, slot) in &slots {
            if let Some(base) = name.strip_prefix("adam.m.") {
                moments.entry(base.to_string()).or_default().0 = slot.data.clone();
            } else if let Some(base) = name.strip_prefix("adam.v.") {
                moments.entry(base.to_string()).or_default().1 = slot.data.clone();
            } else {
                store.insert(name, slot.to_tensor()?);
            }
        }
        Ok((store, moments))
    }

    /// One line per parameter: `name shape numel`.
    pub fn shape_manifest(&self) -> String {
        let mut out = String::new();
        for (name, t) in &self.map {
            out.push_str(&format!("param {} {:?} {}\n", name, t.shape(), t.numel()));
        }
        out
    }
}
