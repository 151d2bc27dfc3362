use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};

/// The four trainable network components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Auto-encoder encoder half.
    Encoder,
    /// Auto-encoder decoder half.
    Decoder,
    /// Dataset-of-origin classifier (the adversary).
    DatasetClassifier,
    /// Binary task classifier.
    TaskClassifier,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Encoder,
        Component::Decoder,
        Component::DatasetClassifier,
        Component::TaskClassifier,
    ];

    pub const AUTOENCODER: [Component; 2] = [Component::Encoder, Component::Decoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::DatasetClassifier => "dataset_classifier",
            Component::TaskClassifier => "task_classifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub component: Component,
    pub value: Tensor<T>,
}

/// Flat registry of every parameter tensor in a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: String, component: Component, value: Tensor<T>) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate {name}");
        self.params.push(Param {
            name,
            component,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_of(&self, components: &[Component]) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| components.contains(&p.component))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self, component: Component) -> usize {
        self.params
            .iter()
            .filter(|p| p.component == component)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of one component.
    pub fn component_hash(&self, component: Component) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.component == component) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Copy every tensor of `component` from `other` (same architecture).
    pub fn copy_component_from(&mut self, other: &ParamStore<T>, component: Component) {
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(mine.name, theirs.name);
            if mine.component == component {
                mine.value = theirs.value.clone();
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    component: p.component,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
