// Named parameter store.
//
// Parameters are plain f64 arrays keyed by dotted path strings
// ("decoder.blk2.attn.wq"). The BTreeMap keeps iteration order
// deterministic, which checkpointing, optimizer sweeps, and global-norm
// clipping all rely on. Binding into a tape decides per phase which
// subsets are differentiable.

use std::collections::BTreeMap;

use ndarray::IxDyn;

use super::rng::{derive_rng, uniform_vec};
use super::tape::{Tape, Value};
use super::{arr_from, Arr};

#[derive(Default, Clone)]
pub struct Params {
    map: BTreeMap<String, Arr>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Arr) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Arr {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Arr {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arr)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn remove(&mut self, name: &str) -> Option<Arr> {
        self.map.remove(name)
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Names under a dotted prefix ("decoder" matches "decoder.*").
    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        let dotted = format!("{prefix}.");
        self.map
            .keys()
            .filter(|k| k.starts_with(&dotted) || *k == prefix)
            .cloned()
            .collect()
    }

    /// Copy every tensor whose name falls under one of the prefixes.
    pub fn subset(&self, prefixes: &[&str]) -> Params {
        let mut out = Params::new();
        for (k, v) in &self.map {
            if prefixes.iter().any(|p| k.starts_with(&format!("{p}.")) || k == p) {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }

    /// Overwrite (or insert) every tensor from `other`.
    pub fn absorb(&mut self, other: &Params) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    /// Bind all parameters into a tape. Names matching `trainable` prefixes
    /// become differentiable leaves; everything else enters as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: &[&str]) -> Bound {
        let mut handles = BTreeMap::new();
        for (name, value) in &self.map {
            let is_trainable = trainable
                .iter()
                .any(|p| name.starts_with(&format!("{p}.")) || name == p);
            let v = if is_trainable {
                tape.leaf(value.clone())
            } else {
                tape.constant(value.clone())
            };
            handles.insert(name.clone(), v);
        }
        Bound { handles }
    }

    /// Exact equality of two stores (names, shapes, and bits).
    pub fn bit_identical(&self, other: &Params) -> bool {
        if self.map.len() != other.map.len() {
            return false;
        }
        for ((ka, va), (kb, vb)) in self.map.iter().zip(other.map.iter()) {
            if ka != kb || va.shape() != vb.shape() {
                return false;
            }
            if va.iter().zip(vb.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return false;
            }
        }
        true
    }
}

/// Tape handles for a bound parameter set.
pub struct Bound {
    handles: BTreeMap<String, Value>,
}

impl Bound {
    /// Bind an explicit handle map (finite-difference harnesses bind raw
    /// tape leaves this way; normal code goes through `Params::bind`).
    pub fn from_handles(handles: BTreeMap<String, Value>) -> Bound {
        Bound { handles }
    }

    /// Handle for a parameter; panics on unknown names (programmer error).
    pub fn v(&self, name: &str) -> Value {
        *self
            .handles
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn handles(&self) -> &BTreeMap<String, Value> {
        &self.handles
    }
}

/// Xavier/Glorot uniform tensor: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64, tag: &str) -> Arr {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut rng = derive_rng(seed, tag);
    arr_from(shape, uniform_vec(&mut rng, n, -a, a))
}

/// Zeros tensor helper for biases.
pub fn zeros_init(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}
