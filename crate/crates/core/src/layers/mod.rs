//! The layer contract shared by deterministic and stochastic layers.
//!
//! A layer maps a [`Value`] (tensor or random variable) to a `Value`. Layers
//! that carry regularizers record them during `call`; [`Layer::losses`]
//! returns the scalars from the most recent call only.

mod conv;
mod dense;
mod init;
mod lstm;
mod sequential;

use std::collections::HashMap;
use std::rc::Rc;

pub use conv::{conv2d, variational_conv2d, Conv2d};
pub use dense::{dense, flipout_dense, variational_dense, Dense, Estimator};
pub use init::{
    softplus_inverse, Activation, InitialValue, Initializer, Regularizer, VariationalParameter, Weight,
    WeightDraw,
};
pub use lstm::{lstm, variational_lstm_cell, LstmCell, LstmState, LstmWeights};
pub use sequential::{sequential, Sequential};

use crate::distributions::RandomVariable;
use crate::error::{Error, Result};
use crate::reversible::{self, Bijector};
use crate::rng::{self, Rng};
use crate::tensor::{Parameter, Tape, Tensor, Var};

/// Input or output of a layer.
#[derive(Clone, Debug)]
pub enum Value {
    Tensor(Var),
    Random(RandomVariable),
}

impl Value {
    /// The tensor seen by numeric ops: the sample of a random variable.
    pub fn tensor(&self) -> &Var {
        match self {
            Value::Tensor(v) => v,
            Value::Random(rv) => &rv.value,
        }
    }

    pub fn into_tensor(self) -> Var {
        match self {
            Value::Tensor(v) => v,
            Value::Random(rv) => rv.value,
        }
    }

    pub fn as_random(&self) -> Option<&RandomVariable> {
        match self {
            Value::Random(rv) => Some(rv),
            Value::Tensor(_) => None,
        }
    }

    pub fn into_random(self) -> Result<RandomVariable> {
        match self {
            Value::Random(rv) => Ok(rv),
            Value::Tensor(_) => Err(Error::InvalidArgument(
                "expected a random variable, got a plain tensor".into(),
            )),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor().shape()
    }
}

impl From<Var> for Value {
    fn from(v: Var) -> Self {
        Value::Tensor(v)
    }
}

impl From<RandomVariable> for Value {
    fn from(rv: RandomVariable) -> Self {
        Value::Random(rv)
    }
}

const INIT_STREAM: u64 = u64::MAX;

/// Per-step call context: the tape plus the seed schedule.
///
/// Layer randomness is keyed by `(seed, layer index, step, draw)` where
/// `draw` counts how often that layer index has drawn under this context.
pub struct Ctx {
    tape: Tape,
    seed: u64,
    step: u64,
    draws: HashMap<u64, u64>,
}

impl Ctx {
    pub fn new(seed: u64) -> Self {
        Self::with_tape(Tape::new(), seed, 0)
    }

    pub fn with_tape(tape: Tape, seed: u64, step: u64) -> Self {
        Ctx {
            tape,
            seed,
            step,
            draws: HashMap::new(),
        }
    }

    pub fn at_step(seed: u64, step: u64) -> Self {
        Self::with_tape(Tape::new(), seed, step)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng(&mut self, layer_index: u64) -> Rng {
        let draw = self.draws.entry(layer_index).or_insert(0);
        let r = rng::rng_from(&[self.seed, layer_index, self.step, *draw]);
        *draw += 1;
        r
    }

    /// Stream used for parameter initialization; independent of the step.
    pub fn init_rng(&self, layer_index: u64) -> Rng {
        rng::rng_from(&[self.seed, layer_index, INIT_STREAM])
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Records `t` as a constant input value.
    pub fn input(&self, t: &Tensor) -> Value {
        Value::Tensor(self.tape.constant(t.clone()))
    }

    pub fn param(&self, p: &Parameter) -> Var {
        self.tape.param(p)
    }
}

/// Callback receiving each parameter with its path-qualified name.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Parameter) + 'a;

pub trait Layer {
    fn name(&self) -> &str;

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value>;

    /// Regularizer scalars recorded by the last call.
    fn losses(&self) -> Vec<Var> {
        Vec::new()
    }

    fn visit_parameters(&mut self, _visitor: &mut ParamVisitor<'_>) {}

    /// Assigns this layer's seed-splitting index; returns the next free index.
    fn set_layer_index(&mut self, index: u64) -> u64 {
        index + 1
    }

    /// The invertible map this layer computes, if it has one.
    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        None
    }

    fn reverse(&mut self, input: Value, _ctx: &mut Ctx) -> Result<Value> {
        let bij = self
            .bijector()
            .ok_or_else(|| Error::NotReversible(self.name().to_string()))?;
        reversible::apply(Rc::new(reversible::Inverse(bij)), input)
    }

    /// log |det ∂call/∂x| per example.
    fn log_det_jacobian(&mut self, x: &Var, _ctx: &mut Ctx) -> Result<Var> {
        let bij = self
            .bijector()
            .ok_or_else(|| Error::NotReversible(self.name().to_string()))?;
        bij.forward_log_det_jacobian(x)
    }
}

impl Layer for Box<dyn Layer> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        (**self).call(input, ctx)
    }
    fn losses(&self) -> Vec<Var> {
        (**self).losses()
    }
    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        (**self).visit_parameters(visitor)
    }
    fn set_layer_index(&mut self, index: u64) -> u64 {
        (**self).set_layer_index(index)
    }
    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        (**self).bijector()
    }
    fn reverse(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        (**self).reverse(input, ctx)
    }
    fn log_det_jacobian(&mut self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        (**self).log_det_jacobian(x, ctx)
    }
}

/// All regularizer scalars from the model's last call, in layer order.
pub fn collect_losses(model: &dyn Layer) -> Vec<Var> {
    model.losses()
}

/// Snapshot of every parameter as `(name, value)`, in visit order.
pub fn named_parameters(model: &mut dyn Layer) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit_parameters(&mut |name, p| out.push((name.to_string(), p.value().clone())));
    out
}

/// Number of scalar parameters.
pub fn parameter_count(model: &mut dyn Layer) -> usize {
    let mut n = 0;
    model.visit_parameters(&mut |_, p| n += p.value().len());
    n
}

/// Sets the parameter called `name`; errors if absent or mis-shaped.
pub fn set_parameter(model: &mut dyn Layer, name: &str, value: Tensor) -> Result<()> {
    let mut result = Err(Error::InvalidArgument(format!("no parameter named `{name}`")));
    model.visit_parameters(&mut |n, p| {
        if n == name {
            result = p.set(value.clone());
        }
    });
    result
}

pub(crate) fn require_rank(op: &'static str, v: &Var, rank: usize) -> Result<()> {
    if v.shape().len() != rank {
        return Err(Error::invalid_shape(
            op,
            format!("expected rank-{rank} input, got shape {:?}", v.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn prefixed<'a, 'b: 'a>(
    prefix: &'a str,
    visitor: &'a mut ParamVisitor<'b>,
) -> Box<dyn FnMut(&str, &mut Parameter) + 'a> {
    Box::new(move |name, p| visitor(&format!("{prefix}/{name}"), p))
}
