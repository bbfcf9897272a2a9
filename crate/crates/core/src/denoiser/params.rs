//! Named parameters partitioned into frozen spatial weights and trainable
//! temporal weights.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Image backbone, theta.
    Spatial,
    /// Added temporal modules, phi.
    Temporal,
}

/// Which partitions receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub spatial: bool,
    pub temporal: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable { spatial: false, temporal: false };
    pub const SPATIAL: Trainable = Trainable { spatial: true, temporal: false };
    pub const TEMPORAL: Trainable = Trainable { spatial: false, temporal: true };
    pub const ALL: Trainable = Trainable { spatial: true, temporal: true };

    pub fn contains(self, p: Partition) -> bool {
        match p {
            Partition::Spatial => self.spatial,
            Partition::Temporal => self.temporal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
}

/// Declaration of one parameter, produced while walking the architecture.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub partition: Partition,
    pub init: Init,
}

#[derive(Default)]
pub struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], partition: Partition, init: Init) {
        let name = name.into();
        debug_assert!(!self.specs.iter().any(|s| s.name == name), "duplicate parameter {name}");
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), partition, init });
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub partition: Partition,
}

/// Every parameter of a denoiser, keyed by hierarchical name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Materialize a registry. Each parameter draws from its own stream keyed
    /// by name, so adding modules never perturbs the others' initial values.
    pub fn initialize(registry: &Registry, seed: u64) -> Self {
        let params = registry
            .specs()
            .iter()
            .map(|s| {
                let tensor = init_tensor(&s.shape, s.init, seed, &s.name);
                (s.name.clone(), Param { tensor, partition: s.partition })
            })
            .collect();
        Self { params }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<T>) {
        self.params.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn names(&self, partition: Partition) -> impl Iterator<Item = &String> {
        self.params.iter().filter(move |(_, p)| p.partition == partition).map(|(n, _)| n)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scalar count of a partition.
    pub fn count(&self, partition: Partition) -> usize {
        self.params.values().filter(|p| p.partition == partition).map(|p| p.tensor.len()).sum()
    }

    pub fn count_trainable(&self, trainable: Trainable) -> usize {
        self.params.values().filter(|p| trainable.contains(p.partition)).map(|p| p.tensor.len()).sum()
    }

    /// Bitwise equality of one partition against another store.
    pub fn partition_bits_equal(&self, other: &Self, partition: Partition) -> bool {
        let pick = |s: &Self| {
            s.params
                .iter()
                .filter(|(_, p)| p.partition == partition)
                .map(|(n, p)| (n.clone(), p.tensor.shape().to_vec(), p.tensor.data().iter().map(|v| v.to_f64_lossy().to_bits()).collect::<Vec<_>>()))
                .collect::<Vec<_>>()
        };
        pick(self) == pick(other)
    }

    /// Check that this store holds exactly the registry's parameters.
    pub fn check_against(&self, registry: &Registry) -> Result<()> {
        let mut problems = Vec::new();
        for s in registry.specs() {
            match self.params.get(&s.name) {
                None => problems.push(format!("missing parameter {}", s.name)),
                Some(p) if p.tensor.shape() != s.shape.as_slice() => {
                    problems.push(format!("{}: shape {:?}, expected {:?}", s.name, p.tensor.shape(), s.shape))
                }
                Some(p) if p.partition != s.partition => problems.push(format!("{}: wrong partition", s.name)),
                _ => {}
            }
        }
        if self.params.len() != registry.specs().len() {
            let known: std::collections::HashSet<_> = registry.specs().iter().map(|s| s.name.as_str()).collect();
            for name in self.params.keys().filter(|n| !known.contains(n.as_str())) {
                problems.push(format!("unexpected parameter {name}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(problems.join("; ")))
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(n, p)| (n.clone(), Param { tensor: p.tensor.cast(), partition: p.partition }))
                .collect(),
        }
    }

    /// Reset one partition to the registry's initial values.
    pub fn reinitialize(&mut self, registry: &Registry, partition: Partition, seed: u64) {
        for s in registry.specs().iter().filter(|s| s.partition == partition) {
            self.params.insert(s.name.clone(), Param { tensor: init_tensor(&s.shape, s.init, seed, &s.name), partition });
        }
    }

    /// Add `scale * N(0, 1)` noise to every entry of a partition.
    pub fn perturb(&mut self, partition: Partition, scale: f64, seed: u64) {
        for (name, p) in self.params.iter_mut().filter(|(_, p)| p.partition == partition) {
            let mut r = rng::stream(seed, &[rng::fnv1a(name.as_bytes())]);
            let noise = Tensor::<T>::randn(p.tensor.shape(), &mut r);
            for (v, n) in p.tensor.data_mut().iter_mut().zip(noise.data()) {
                *v += T::from_f64_lossy(scale) * *n;
            }
        }
    }
}

fn init_tensor<T: Scalar>(shape: &[usize], init: Init, seed: u64, name: &str) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, T::one()),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut r = rng::stream(seed, &[rng::fnv1a(name.as_bytes())]);
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64_lossy(r.random_range(-bound..bound))).collect();
            Tensor::from_parts(shape.to_vec(), data)
        }
    }
}

/// Leaf variables bound to a store for one forward pass.
pub struct Bound<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    trainable: Trainable,
    vars: RefCell<BTreeMap<String, Var<T>>>,
}

impl<'a, T: Scalar> Bound<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: Trainable) -> Self {
        Self { store, trainable, vars: RefCell::new(BTreeMap::new()) }
    }

    pub fn get(&self, name: &str) -> Var<T> {
        if let Some(v) = self.vars.borrow().get(name) {
            return v.clone();
        }
        let p = self.store.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let v = Var::leaf(p.tensor.clone(), self.trainable.contains(p.partition));
        self.vars.borrow_mut().insert(name.to_string(), v.clone());
        v
    }

    /// Gradients of every trainable parameter touched by the pass; untouched
    /// trainable parameters get zeros.
    pub fn gradients(&self, grads: &mut Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        let vars = self.vars.borrow();
        self.store
            .iter()
            .filter(|(_, p)| self.trainable.contains(p.partition))
            .map(|(name, p)| {
                let g = vars.get(name).and_then(|v| grads.take(v)).unwrap_or_else(|| Tensor::zeros(p.tensor.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
