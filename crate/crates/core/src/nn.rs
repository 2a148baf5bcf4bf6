//! Shared building blocks for one forward pass.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParameterStore, TensorError, Var};

/// A forward pass: the tape, the frozen parameters it reads, and the
/// dropout state. Each parameter is bound to the tape at most once.
pub struct Forward<'a> {
    pub graph: &'a Graph,
    store: &'a ParameterStore,
    bound: RefCell<HashMap<String, Var>>,
    train: bool,
    rate: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a> Forward<'a> {
    pub fn new(graph: &'a Graph, store: &'a ParameterStore, train: bool, seed: u64) -> Self {
        Forward {
            graph,
            store,
            bound: RefCell::new(HashMap::new()),
            train,
            rate: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn eval(graph: &'a Graph, store: &'a ParameterStore) -> Self {
        Self::new(graph, store, false, 0)
    }

    /// Dropout rate applied by [`Forward::dropout`]; ignored outside training.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn param(&self, name: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let v = self.store.bind(self.graph, name)?;
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn dropout(&self, x: Var) -> Result<Var, TensorError> {
        self.graph
            .dropout(x, self.rate, self.train, &mut *self.rng.borrow_mut())
    }

    /// `x · W + b` with `W` at `{prefix}.weight` and `b` at `{prefix}.bias`.
    pub fn linear(&self, prefix: &str, x: Var) -> Result<Var, TensorError> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let xw = self.graph.matmul(x, w)?;
        self.graph.add_row(xw, b)
    }
}

pub fn init_linear(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    output: usize,
) -> Result<(), TensorError> {
    store.add(&format!("{prefix}.weight"), &[input, output], Init::XavierUniform)?;
    store.add(&format!("{prefix}.bias"), &[output], Init::Zeros)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Stack of `linear → activation → dropout` layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Self {
        MlpSpec { hidden, activation }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        self.hidden.last().copied().unwrap_or(input)
    }

    pub fn init(&self, store: &mut ParameterStore, prefix: &str, input: usize) -> Result<(), TensorError> {
        let mut dim = input;
        for (i, &h) in self.hidden.iter().enumerate() {
            init_linear(store, &format!("{prefix}.{i}"), dim, h)?;
            dim = h;
        }
        Ok(())
    }

    pub fn forward(&self, fwd: &Forward, prefix: &str, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for i in 0..self.hidden.len() {
            let lin = fwd.linear(&format!("{prefix}.{i}"), h)?;
            let act = self.activation.apply(fwd.graph, lin);
            h = fwd.dropout(act)?;
        }
        Ok(h)
    }
}
