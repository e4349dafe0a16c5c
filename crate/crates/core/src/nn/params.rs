//! Named trainable parameters and their per-step graph bindings.

use super::graph::{Grads, Graph, NodeId};
use crate::{Error, Mat, Result};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter matrices. Construction order is
/// part of a model's identity: checkpoints serialize in this order.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Binds every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let ids = self.values.iter().map(|v| g.leaf(v.clone())).collect();
        Binding { ids }
    }

    /// Replaces all values from a name-keyed list (checkpoint restore).
    /// Every parameter must be present with a matching shape.
    pub fn load_values(&mut self, entries: &[(String, Mat)]) -> Result<()> {
        for (name, value) in entries {
            let Some(i) = self.names.iter().position(|n| n == name) else {
                return Err(Error::Checkpoint(format!("unknown parameter {name}")));
            };
            if self.values[i].dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} != expected {:?}",
                    value.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i] = value.clone();
        }
        Ok(())
    }
}

/// Node ids of one [`ParamStore::bind`] call, parallel to the store.
pub struct Binding {
    ids: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, p: ParamId) -> NodeId {
        self.ids[p.0]
    }

    pub fn grad<'a>(&self, grads: &'a Grads, p: ParamId) -> Option<&'a Mat> {
        grads.get(self.ids[p.0])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
