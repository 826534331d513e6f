//! Stochastic output layers: deterministic computation followed by a
//! distribution over the output.
//!
//! Each head optionally applies a trainable linear projection (when `units`
//! is given) and returns a [`RandomVariable`]. Heads record no losses.

use crate::distributions::{Distribution, DEFAULT_NUM_BINS};
use crate::error::{Error, Result};
use crate::layers::{dense, prefixed, softplus_inverse, Ctx, Dense, Layer, ParamVisitor, Value};
use crate::tensor::{Parameter, Tensor, Var};

/// Lower bound added to softplus scales in the normal head.
pub const SCALE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Splits the last axis into `loc ‖ raw_scale`.
    Normal,
    /// The last axis holds class logits.
    Categorical,
    /// The last axis holds `3K` packed mixture parameters per element.
    LogisticMixture { num_components: usize, num_bins: usize },
}

#[derive(Clone, Debug)]
pub struct OutputHead {
    kind: HeadKind,
    units: Option<usize>,
    projection: Option<Dense>,
    name: &'static str,
    layer_index: u64,
}

fn head(kind: HeadKind, units: Option<usize>, width: impl Fn(usize) -> usize, name: &'static str) -> OutputHead {
    OutputHead {
        kind,
        units,
        projection: units.map(|u| dense(width(u)).named("projection")),
        name,
        layer_index: 0,
    }
}

/// Normal(loc, softplus(raw_scale) + 1e-5).
pub fn normal_output(units: Option<usize>) -> OutputHead {
    head(HeadKind::Normal, units, |u| 2 * u, "normal_output")
}

pub fn categorical_output(units: Option<usize>) -> OutputHead {
    head(HeadKind::Categorical, units, |u| u, "categorical_output")
}

/// Discretized logistic mixture over `0..=255`.
pub fn mixture_logistic_output(units: Option<usize>, num_components: usize) -> Result<OutputHead> {
    if num_components == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    Ok(head(
        HeadKind::LogisticMixture {
            num_components,
            num_bins: DEFAULT_NUM_BINS,
        },
        units,
        |u| 3 * num_components * u,
        "mixture_logistic_output",
    ))
}

impl OutputHead {
    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn units(&self) -> Option<usize> {
        self.units
    }

    pub fn projection_mut(&mut self) -> Option<&mut Dense> {
        self.projection.as_mut()
    }

    /// The distribution the head produces for `x`, before sampling.
    pub fn distribution(&mut self, x: Var, ctx: &mut Ctx) -> Result<Distribution> {
        let x = match &mut self.projection {
            Some(p) => p.call(Value::Tensor(x), ctx)?.into_tensor(),
            None => x,
        };
        let last = x
            .shape()
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::invalid_shape(self.name, "input needs a feature axis"))?;
        let width = x.shape()[last];
        match self.kind {
            HeadKind::Normal => {
                if width % 2 != 0 {
                    return Err(Error::invalid_shape(
                        self.name,
                        format!("last axis {width} must be even to split into loc and scale"),
                    ));
                }
                let h = width / 2;
                let loc = x.narrow(last, 0, h)?;
                let scale = x.narrow(last, h, h)?.softplus().add_scalar(SCALE_FLOOR);
                Distribution::normal(loc, scale)
            }
            HeadKind::Categorical => Distribution::categorical(x),
            HeadKind::LogisticMixture {
                num_components,
                num_bins,
            } => {
                let per = 3 * num_components;
                let params = match self.units {
                    Some(u) => {
                        let mut shape = x.shape()[..last].to_vec();
                        shape.extend([u, per]);
                        x.reshape(&shape)?
                    }
                    None if width == per => x,
                    None => {
                        return Err(Error::invalid_shape(
                            self.name,
                            format!("last axis {width} must equal 3·K = {per}"),
                        ))
                    }
                };
                Distribution::discretized_logistic_mixture(&params, num_bins)
            }
        }
    }
}

impl Layer for OutputHead {
    fn name(&self) -> &str {
        self.name
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let dist = self.distribution(input.into_tensor(), ctx)?;
        let mut r = ctx.rng(self.layer_index);
        Ok(Value::Random(dist.sample_with(&mut r)?))
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        if let Some(p) = &mut self.projection {
            p.visit_parameters(&mut prefixed("projection", visitor));
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        let next = match &mut self.projection {
            Some(p) => p.set_layer_index(index),
            None => index,
        };
        self.layer_index = next;
        next + 1
    }
}

/// Homoscedastic Gaussian likelihood: `Normal(input, softplus(ρ))` with one
/// scale shared by every element.
#[derive(Clone, Debug)]
pub struct GaussianLikelihood {
    untransformed_scale: Parameter,
    layer_index: u64,
}

pub fn gaussian_likelihood(scale: f64) -> GaussianLikelihood {
    GaussianLikelihood {
        untransformed_scale: Parameter::new(Tensor::scalar(softplus_inverse(scale))),
        layer_index: 0,
    }
}

impl GaussianLikelihood {
    /// Keeps the noise scale fixed during training.
    pub fn frozen(mut self) -> Self {
        self.untransformed_scale.set_trainable(false);
        self
    }

    pub fn scale(&self) -> f64 {
        crate::tensor::Unary::Softplus.apply(self.untransformed_scale.value().item())
    }
}

impl Layer for GaussianLikelihood {
    fn name(&self) -> &str {
        "gaussian_likelihood"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let loc = input.into_tensor();
        let scale = ctx.param(&self.untransformed_scale).softplus();
        let dist = Distribution::normal(loc, scale)?;
        let mut r = ctx.rng(self.layer_index);
        Ok(Value::Random(dist.sample_with(&mut r)?))
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        visitor("untransformed_scale", &mut self.untransformed_scale);
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}
