use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Tensor, TensorError, Var};

/// Initialization scheme for a new parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` over the last two axes.
    XavierUniform,
    Normal { std: f64 },
}

/// A trainable tensor with its gradient slot and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub moment1: Vec<f64>,
    pub moment2: Vec<f64>,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            value,
            grad: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
        }
    }
}

/// Every trainable tensor of a model, addressed by dotted path.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    seed: u64,
    step: u64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: BTreeMap::new(),
            seed,
            step: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Creates a parameter. The values depend only on the store seed and the
    /// name, never on creation order.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<(), TensorError> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::EmptyDimension(shape.to_vec()));
        }
        let numel: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Constant(c) => vec![c; numel],
            Init::XavierUniform => {
                let fan_out = shape[shape.len() - 1];
                let fan_in = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
                (0..numel).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), Parameter::new(value));
        Ok(())
    }

    pub(crate) fn insert_parameter(&mut self, name: String, param: Parameter) {
        self.params.insert(name, param);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.parameter(name).map(|p| &p.value)
    }

    pub fn parameter(&self, name: &str) -> Result<&Parameter, TensorError> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn parameter_mut(&mut self, name: &str) -> Result<&mut Parameter, TensorError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Places a copy of the parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, graph: &Graph, name: &str) -> Result<Var, TensorError> {
        Ok(graph.named_leaf(name, self.get(name)?.clone()))
    }

    /// Adds the gradients left in `graph` by backward into the store's slots.
    pub fn accumulate_grads(&mut self, graph: &Graph) -> Result<(), TensorError> {
        for (name, var) in graph.parameters().iter() {
            let Some(g) = graph.grad(*var) else { continue };
            let p = self.parameter_mut(name)?;
            p.grad.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}
