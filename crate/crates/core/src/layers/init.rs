use std::fmt;
use std::rc::Rc;


use super::{prefixed, ParamVisitor};
use crate::distributions::{normal_kl, Distribution, RandomVariable};
use crate::error::Result;
use crate::rng::{self, Rng};
use crate::tensor::{Parameter, Tape, Tensor, Var};

/// Inverse of `softplus`, so that `softplus(softplus_inverse(y)) == y` for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, v: &Var) -> Var {
        match self {
            Activation::Linear => v.clone(),
            Activation::Relu => v.relu(),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => v.sigmoid(),
            Activation::Softplus => v.softplus(),
        }
    }
}

/// What an initializer produces: a point value or a trainable posterior.
#[derive(Clone, Debug)]
pub enum InitialValue {
    Point(Tensor),
    /// Normal posterior with `scale = softplus(untransformed_scale)`.
    Posterior {
        loc: Tensor,
        untransformed_scale: Tensor,
    },
}

pub type InitFn = dyn Fn(&[usize], u64) -> InitialValue;

/// Builds a parameter from its shape and a seed.
#[derive(Clone)]
pub enum Initializer {
    Zeros,
    Constant(f64),
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform,
    Normal { stddev: f64 },
    /// Trainable normal posterior: loc ~ N(0, (loc_scale · sqrt(2/(fan_in+fan_out)))²),
    /// scale initialized to `initial_scale`.
    TrainableNormal { loc_scale: f64, initial_scale: f64 },
    /// Trainable normal posterior with zero loc.
    TrainableNormalZeroLoc { initial_scale: f64 },
    Custom(Rc<InitFn>),
}

impl fmt::Debug for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Initializer::Custom(_) => write!(f, "Custom"),
            Initializer::Zeros => write!(f, "Zeros"),
            Initializer::Constant(c) => write!(f, "Constant({c})"),
            Initializer::GlorotUniform => write!(f, "GlorotUniform"),
            Initializer::Normal { stddev } => write!(f, "Normal({stddev})"),
            Initializer::TrainableNormal { loc_scale, initial_scale } => {
                write!(f, "TrainableNormal({loc_scale}, {initial_scale})")
            }
            Initializer::TrainableNormalZeroLoc { initial_scale } => {
                write!(f, "TrainableNormalZeroLoc({initial_scale})")
            }
        }
    }
}

impl Initializer {
    pub fn trainable_normal() -> Self {
        Initializer::TrainableNormal {
            loc_scale: 0.1,
            initial_scale: 0.1,
        }
    }

    pub fn trainable_normal_zero_loc() -> Self {
        Initializer::TrainableNormalZeroLoc { initial_scale: 0.1 }
    }

    pub fn initialize(&self, shape: &[usize], seed: u64) -> InitialValue {
        let n: usize = shape.iter().product();
        let mut rng = rng::rng_from(&[seed]);
        let (fan_in, fan_out) = fans(shape);
        match self {
            Initializer::Zeros => InitialValue::Point(Tensor::zeros(shape)),
            Initializer::Constant(c) => InitialValue::Point(Tensor::full(shape, *c)),
            Initializer::GlorotUniform => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                point(shape, rng::uniform_vec(&mut rng, n, -limit, limit))
            }
            Initializer::Normal { stddev } => point(shape, normals(&mut rng, n, *stddev)),
            Initializer::TrainableNormal { loc_scale, initial_scale } => {
                let sd = loc_scale * (2.0 / (fan_in + fan_out) as f64).sqrt();
                InitialValue::Posterior {
                    loc: Tensor::from_parts(shape.to_vec(), normals(&mut rng, n, sd)),
                    untransformed_scale: Tensor::full(shape, softplus_inverse(*initial_scale)),
                }
            }
            Initializer::TrainableNormalZeroLoc { initial_scale } => InitialValue::Posterior {
                loc: Tensor::zeros(shape),
                untransformed_scale: Tensor::full(shape, softplus_inverse(*initial_scale)),
            },
            Initializer::Custom(f) => f(shape, seed),
        }
    }
}

fn point(shape: &[usize], data: Vec<f64>) -> InitialValue {
    InitialValue::Point(Tensor::from_parts(shape.to_vec(), data))
}

fn normals(rng: &mut Rng, n: usize, sd: f64) -> Vec<f64> {
    rng::standard_normal_vec(rng, n).into_iter().map(|z| sd * z).collect()
}

/// Keras fan convention: last axis is fan-out, the rest multiply into fan-in
/// together with the receptive field.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], shape[0]),
        2 => (shape[0], shape[1]),
        _ => {
            let receptive: usize = shape[..shape.len() - 2].iter().product();
            (
                receptive * shape[shape.len() - 2],
                receptive * shape[shape.len() - 1],
            )
        }
    }
}

pub type RegularizerFn = dyn Fn(&RandomVariable) -> Result<Var>;

/// Maps a parameter's random variable to a scalar penalty.
#[derive(Clone)]
pub enum Regularizer {
    /// KL(q ‖ N(0, prior_scale²)), summed over elements.
    NormalKl { prior_scale: f64 },
    Custom(Rc<RegularizerFn>),
}

impl fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::NormalKl { prior_scale } => write!(f, "NormalKl({prior_scale})"),
            Regularizer::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Regularizer {
    pub fn standard_normal_kl() -> Self {
        Regularizer::NormalKl { prior_scale: 1.0 }
    }

    pub fn apply(&self, rv: &RandomVariable) -> Result<Var> {
        match self {
            Regularizer::NormalKl { prior_scale } => match &rv.distribution {
                Distribution::Normal { loc, scale } => {
                    let tape = loc.tape();
                    normal_kl(loc, scale, &tape.scalar(0.0), &tape.scalar(*prior_scale))
                }
                other => Err(crate::error::Error::UnsupportedKl(other.kind(), "Normal")),
            },
            Regularizer::Custom(f) => f(rv),
        }
    }
}

/// Mean-field normal posterior over one parameter tensor.
#[derive(Clone, Debug)]
pub struct VariationalParameter {
    pub loc: Parameter,
    /// Pre-softplus scale.
    pub untransformed_scale: Parameter,
}

impl VariationalParameter {
    pub fn new(loc: Tensor, untransformed_scale: Tensor) -> Self {
        VariationalParameter {
            loc: Parameter::new(loc),
            untransformed_scale: Parameter::new(untransformed_scale),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.loc.shape()
    }

    /// q = Normal(loc, softplus(untransformed_scale)) bound on `tape`.
    pub fn posterior(&self, tape: &Tape) -> Result<Distribution> {
        Distribution::normal(tape.param(&self.loc), tape.param(&self.untransformed_scale).softplus())
    }

    pub fn scale(&self) -> Tensor {
        self.untransformed_scale.value().map(|r| crate::tensor::Unary::Softplus.apply(r))
    }
}

/// A layer weight: a point estimate or a variational posterior.
#[derive(Clone, Debug)]
pub enum Weight {
    Point(Parameter),
    Variational(VariationalParameter),
}

/// A weight resolved for one call.
pub struct WeightDraw {
    pub value: Var,
    /// The random variable the value was drawn from (point weights get a
    /// zero-scale normal so regularizers see a uniform interface).
    pub rv: RandomVariable,
}

impl Weight {
    pub fn from_initial(init: InitialValue) -> Self {
        match init {
            InitialValue::Point(t) => Weight::Point(Parameter::new(t)),
            InitialValue::Posterior {
                loc,
                untransformed_scale,
            } => Weight::Variational(VariationalParameter::new(loc, untransformed_scale)),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Weight::Point(p) => p.shape(),
            Weight::Variational(v) => v.shape(),
        }
    }

    pub fn is_variational(&self) -> bool {
        matches!(self, Weight::Variational(_))
    }

    /// The posterior mean (or the point value).
    pub fn mean(&self) -> &Tensor {
        match self {
            Weight::Point(p) => p.value(),
            Weight::Variational(v) => v.loc.value(),
        }
    }

    /// Binds the weight and draws one reparameterized sample.
    pub fn draw(&self, tape: &Tape, rng: &mut Rng) -> Result<WeightDraw> {
        match self {
            Weight::Point(p) => {
                let value = tape.param(p);
                let zero = tape.scalar(0.0);
                let rv = RandomVariable::new(Distribution::normal(value.clone(), zero)?, value.clone());
                Ok(WeightDraw { value, rv })
            }
            Weight::Variational(v) => {
                let rv = v.posterior(tape)?.sample_with(rng)?;
                Ok(WeightDraw {
                    value: rv.value.clone(),
                    rv,
                })
            }
        }
    }

    pub fn visit(&mut self, name: &str, visitor: &mut ParamVisitor<'_>) {
        match self {
            Weight::Point(p) => visitor(name, p),
            Weight::Variational(v) => {
                let mut f = prefixed(name, visitor);
                f("loc", &mut v.loc);
                f("untransformed_scale", &mut v.untransformed_scale);
            }
        }
    }
}
