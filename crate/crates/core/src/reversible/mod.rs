//! Reversible layers: layers with an inverse and a log-determinant.
//!
//! A reversible layer exposes its map as a [`Bijector`]. Given a tensor it
//! applies the map; given a [`RandomVariable`] it returns the push-forward
//! random variable whose `log_prob` is computed by change of variables.

mod made;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use made::{made_conditioner, Made};

use crate::distributions::{Distribution, RandomVariable};
use crate::error::{Error, Result};
use crate::layers::{prefixed, Ctx, Layer, ParamVisitor, Value};
use crate::tensor::{Tensor, Var};

/// An invertible map on the last axis of its input.
///
/// Log-determinants are reduced over the last axis, one value per leading
/// index.
pub trait Bijector {
    fn forward(&self, x: &Var) -> Result<Var>;

    fn inverse(&self, y: &Var) -> Result<Var>;

    fn forward_log_det_jacobian(&self, x: &Var) -> Result<Var>;

    fn inverse_log_det_jacobian(&self, y: &Var) -> Result<Var> {
        Ok(self.forward_log_det_jacobian(&self.inverse(y)?)?.neg())
    }

    /// `(forward(x), forward_log_det_jacobian(x))`, sharing work where the
    /// two have common subexpressions.
    fn forward_and_log_det(&self, x: &Var) -> Result<(Var, Var)> {
        Ok((self.forward(x)?, self.forward_log_det_jacobian(x)?))
    }
}

/// Swaps the directions of a bijector.
pub struct Inverse(pub Rc<dyn Bijector>);

impl Bijector for Inverse {
    fn forward(&self, x: &Var) -> Result<Var> {
        self.0.inverse(x)
    }
    fn inverse(&self, y: &Var) -> Result<Var> {
        self.0.forward(y)
    }
    fn forward_log_det_jacobian(&self, x: &Var) -> Result<Var> {
        self.0.inverse_log_det_jacobian(x)
    }
    fn inverse_log_det_jacobian(&self, y: &Var) -> Result<Var> {
        self.0.forward_log_det_jacobian(y)
    }
}

/// Applies bijectors in order.
pub struct Chain(pub Vec<Rc<dyn Bijector>>);

impl Bijector for Chain {
    fn forward(&self, x: &Var) -> Result<Var> {
        self.0.iter().try_fold(x.clone(), |v, b| b.forward(&v))
    }

    fn inverse(&self, y: &Var) -> Result<Var> {
        self.0.iter().rev().try_fold(y.clone(), |v, b| b.inverse(&v))
    }

    fn forward_log_det_jacobian(&self, x: &Var) -> Result<Var> {
        Ok(self.forward_and_log_det(x)?.1)
    }

    fn forward_and_log_det(&self, x: &Var) -> Result<(Var, Var)> {
        let mut v = x.clone();
        let mut total: Option<Var> = None;
        for b in &self.0 {
            let (y, ldj) = b.forward_and_log_det(&v)?;
            total = Some(match total {
                None => ldj,
                Some(t) => t.add(&ldj)?,
            });
            v = y;
        }
        Ok((v, total.ok_or_else(|| Error::InvalidArgument("empty chain".into()))?))
    }
}

/// Applies `bij` to a tensor, or pushes a random variable through it.
pub fn apply(bij: Rc<dyn Bijector>, input: Value) -> Result<Value> {
    match input {
        Value::Tensor(x) => Ok(Value::Tensor(bij.forward(&x)?)),
        Value::Random(rv) => Ok(Value::Random(propagate_through(&rv, bij)?)),
    }
}

/// Push-forward of `rv` through `bij`: the value is `forward(rv)` and the
/// density is `base(inverse(y)) · |det ∂inverse/∂y|`.
pub fn propagate_through(rv: &RandomVariable, bij: Rc<dyn Bijector>) -> Result<RandomVariable> {
    let value = bij.forward(&rv.value)?;
    Ok(RandomVariable::new(
        Distribution::transformed(rv.distribution.clone(), bij),
        value,
    ))
}

/// Push-forward of `rv` through a reversible layer.
pub fn propagate(rv: &RandomVariable, layer: &dyn Layer) -> Result<RandomVariable> {
    let bij = layer
        .bijector()
        .ok_or_else(|| Error::NotReversible(layer.name().to_string()))?;
    propagate_through(rv, bij)
}

fn sum_last(v: &Var) -> Result<Var> {
    let last = v
        .shape()
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::invalid_shape("log_det_jacobian", "input needs an event axis"))?;
    v.sum_axis(last, false)
}

/// Elementwise `y = scale · x + shift` with fixed coefficients.
#[derive(Clone, Debug)]
pub struct AffineScalar {
    scale: f64,
    shift: f64,
}

pub fn affine_scalar(scale: f64, shift: f64) -> Result<AffineScalar> {
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("affine scale must be finite and non-zero, got {scale}")));
    }
    Ok(AffineScalar { scale, shift })
}

impl Bijector for AffineScalar {
    fn forward(&self, x: &Var) -> Result<Var> {
        Ok(x.affine(self.scale, self.shift))
    }
    fn inverse(&self, y: &Var) -> Result<Var> {
        Ok(y.affine(1.0 / self.scale, -self.shift / self.scale))
    }
    fn forward_log_det_jacobian(&self, x: &Var) -> Result<Var> {
        Ok(sum_last(&x.mul_scalar(0.0))?.add_scalar(*x.shape().last().unwrap() as f64 * self.scale.abs().ln()))
    }
}

impl Layer for AffineScalar {
    fn name(&self) -> &str {
        "affine_scalar"
    }
    fn call(&mut self, input: Value, _ctx: &mut Ctx) -> Result<Value> {
        apply(Rc::new(self.clone()), input)
    }
    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        Some(Rc::new(self.clone()))
    }
}

/// Affine coupling: the masked coordinates pass through unchanged and
/// parameterize a shift and log-scale for the rest.
///
/// `y = x_a + (1 − m) ∘ (x ∘ exp(s(x_a)) + t(x_a))` with `x_a = m ∘ x`. The
/// conditioner must map `[batch, d]` to `[batch, 2d]`: shifts first, then raw
/// log-scales, which are soft-clamped to `±log_scale_bound`.
#[derive(Clone)]
pub struct Coupling {
    mask: Tensor,
    conditioner: Rc<RefCell<Box<dyn Layer>>>,
    log_scale_bound: f64,
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coupling").field("mask", &self.mask.data()).finish()
    }
}

pub const DEFAULT_LOG_SCALE_BOUND: f64 = 3.0;

pub fn coupling_layer(mask: Vec<f64>, conditioner: Box<dyn Layer>) -> Result<Coupling> {
    if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::InvalidArgument("coupling mask must be binary".into()));
    }
    if !mask.contains(&0.0) || !mask.contains(&1.0) {
        return Err(Error::InvalidArgument(
            "coupling mask needs both fixed (1) and transformed (0) coordinates".into(),
        ));
    }
    Ok(Coupling {
        mask: Tensor::vector(&mask),
        conditioner: Rc::new(RefCell::new(conditioner)),
        log_scale_bound: DEFAULT_LOG_SCALE_BOUND,
    })
}

/// Alternating even/odd mask for coupling layer `index` in a stack.
pub fn alternating_mask(dims: usize, index: usize) -> Vec<f64> {
    (0..dims)
        .map(|i| if (i + index) % 2 == 0 { 1.0 } else { 0.0 })
        .collect()
}

impl Coupling {
    pub fn with_log_scale_bound(mut self, bound: f64) -> Self {
        self.log_scale_bound = bound;
        self
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    fn shift_and_log_scale(&self, x: &Var) -> Result<(Var, Var, Var, Var)> {
        let d = self.mask.len();
        if x.shape().last() != Some(&d) {
            return Err(Error::invalid_shape(
                "coupling",
                format!("input {:?} does not end in mask width {d}", x.shape()),
            ));
        }
        let tape = x.tape();
        let mask = tape.constant(self.mask.clone());
        let inv_mask = tape.constant(self.mask.map(|m| 1.0 - m));
        let fixed = x.mul(&mask)?;
        let mut ctx = Ctx::with_tape(tape.clone(), 0, 0);
        let out = self
            .conditioner
            .borrow_mut()
            .call(Value::Tensor(fixed.clone()), &mut ctx)?
            .into_tensor();
        let last = out.shape().len() - 1;
        if out.shape()[last] != 2 * d {
            return Err(Error::invalid_shape(
                "coupling",
                format!("conditioner produced {:?}, expected last axis {}", out.shape(), 2 * d),
            ));
        }
        let shift = out.narrow(last, 0, d)?;
        let b = self.log_scale_bound;
        let log_scale = out.narrow(last, d, d)?.mul_scalar(1.0 / b).tanh().mul_scalar(b);
        Ok((fixed, inv_mask, shift, log_scale))
    }
}

impl Bijector for Coupling {
    fn forward(&self, x: &Var) -> Result<Var> {
        let (fixed, inv_mask, shift, log_scale) = self.shift_and_log_scale(x)?;
        let moved = x.mul(&log_scale.exp())?.add(&shift)?;
        fixed.add(&moved.mul(&inv_mask)?)
    }

    fn inverse(&self, y: &Var) -> Result<Var> {
        let (fixed, inv_mask, shift, log_scale) = self.shift_and_log_scale(y)?;
        let moved = y.sub(&shift)?.mul(&log_scale.neg().exp())?;
        fixed.add(&moved.mul(&inv_mask)?)
    }

    fn forward_log_det_jacobian(&self, x: &Var) -> Result<Var> {
        let (_, inv_mask, _, log_scale) = self.shift_and_log_scale(x)?;
        sum_last(&log_scale.mul(&inv_mask)?)
    }

    fn inverse_log_det_jacobian(&self, y: &Var) -> Result<Var> {
        // the conditioner sees the same fixed half in both directions
        Ok(self.forward_log_det_jacobian(y)?.neg())
    }

    fn forward_and_log_det(&self, x: &Var) -> Result<(Var, Var)> {
        let (fixed, inv_mask, shift, log_scale) = self.shift_and_log_scale(x)?;
        let moved = x.mul(&log_scale.exp())?.add(&shift)?;
        let y = fixed.add(&moved.mul(&inv_mask)?)?;
        Ok((y, sum_last(&log_scale.mul(&inv_mask)?)?))
    }
}

impl Layer for Coupling {
    fn name(&self) -> &str {
        "coupling"
    }

    fn call(&mut self, input: Value, _ctx: &mut Ctx) -> Result<Value> {
        apply(Rc::new(self.clone()), input)
    }

    fn losses(&self) -> Vec<Var> {
        self.conditioner.borrow().losses()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.conditioner
            .borrow_mut()
            .visit_parameters(&mut prefixed("conditioner", visitor));
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.conditioner.borrow_mut().set_layer_index(index)
    }

    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        Some(Rc::new(self.clone()))
    }
}

/// Swaps the forward and reverse computations of the wrapped layer.
///
/// Construction always succeeds; wrapping a layer without an inverse only
/// fails when the wrapper is called.
pub struct ReverseWrapper {
    inner: Box<dyn Layer>,
    name: String,
}

pub fn reverse_wrapper(inner: Box<dyn Layer>) -> ReverseWrapper {
    let name = format!("reverse_{}", inner.name());
    ReverseWrapper { inner, name }
}

impl ReverseWrapper {
    pub fn inner(&self) -> &dyn Layer {
        self.inner.as_ref()
    }

    pub fn inner_mut(&mut self) -> &mut Box<dyn Layer> {
        &mut self.inner
    }
}

impl Layer for ReverseWrapper {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.inner.reverse(input, ctx)
    }

    fn reverse(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.inner.call(input, ctx)
    }

    fn losses(&self) -> Vec<Var> {
        self.inner.losses()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.inner.visit_parameters(visitor)
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.inner.set_layer_index(index)
    }

    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        self.inner
            .bijector()
            .map(|b| Rc::new(Inverse(b)) as Rc<dyn Bijector>)
    }
}

/// Turns a continuous elementwise random variable into an integer-valued
/// one on `[low, high]` by integrating over unit bins.
pub struct Discretize {
    pub low: i64,
    pub high: i64,
}

pub fn discretize_layer(low: i64, high: i64) -> Discretize {
    Discretize { low, high }
}

impl Default for Discretize {
    fn default() -> Self {
        Discretize { low: 0, high: 255 }
    }
}

impl Layer for Discretize {
    fn name(&self) -> &str {
        "discretize"
    }

    fn call(&mut self, input: Value, _ctx: &mut Ctx) -> Result<Value> {
        let rv = input.into_random()?;
        Ok(Value::Random(crate::distributions::discretize(&rv, self.low, self.high)?))
    }
}

pub use crate::distributions::discretize;
