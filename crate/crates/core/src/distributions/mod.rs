//! Distributions over tensors and the [`RandomVariable`] wrapper.
//!
//! A `RandomVariable` pairs a distribution with one realized sample. It
//! dereferences to that sample, so any tensor operation applied to it sees the
//! value while `log_prob` and friends remain available.

mod kl;
mod mixture;

use std::fmt;
use std::ops::Deref;
use std::rc::Rc;

pub use kl::{gaussian_kl_zero_mean_prior, kl_divergence, normal_kl};
pub use mixture::{discretized_logistic_mixture_log_prob, DEFAULT_NUM_BINS};

use crate::error::{Error, Result};
use crate::reversible::Bijector;
use crate::rng::{self, Rng};
use crate::tensor::{Tensor, Var};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Jitter levels tried, in order, when a covariance fails to factor.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Clone)]
pub enum Distribution {
    /// Independent normals, elementwise.
    Normal { loc: Var, scale: Var },
    /// Independent logistics, elementwise.
    Logistic { loc: Var, scale: Var },
    /// Categorical over the last axis of `logits`.
    Categorical { logits: Var },
    /// Mixture of discretized logistics over integers `0..num_bins`; each
    /// parameter has shape `[..., K]`.
    DiscretizedLogisticMixture {
        logits: Var,
        means: Var,
        log_scales: Var,
        num_bins: usize,
    },
    /// Columns of `mean` (`[n, units]`) are independent Gaussians over `n`
    /// points sharing `covariance` (`[n, n]`).
    MultivariateNormal { mean: Var, covariance: Var },
    /// Push-forward of `base` through a bijection; the event is the last axis.
    Transformed {
        base: Box<Distribution>,
        bijector: Rc<dyn Bijector>,
    },
    /// Integer-valued: `base` integrated over unit bins on `[low, high]`,
    /// with the edge bins absorbing the tails.
    Discretized {
        base: Box<Distribution>,
        low: i64,
        high: i64,
    },
}

impl fmt::Debug for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())
    }
}

impl Distribution {
    pub fn normal(loc: Var, scale: Var) -> Result<Self> {
        if let Some(bad) = scale.value().data().iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidParameter(format!("normal scale must be non-negative, got {bad}")));
        }
        crate::tensor::broadcast_shape(loc.shape(), scale.shape())
            .ok_or_else(|| Error::shape("normal", loc.shape(), scale.shape()))?;
        Ok(Distribution::Normal { loc, scale })
    }

    pub fn logistic(loc: Var, scale: Var) -> Result<Self> {
        if let Some(bad) = scale.value().data().iter().find(|s| !(**s > 0.0)) {
            return Err(Error::InvalidParameter(format!("logistic scale must be positive, got {bad}")));
        }
        Ok(Distribution::Logistic { loc, scale })
    }

    pub fn categorical(logits: Var) -> Result<Self> {
        if logits.shape().is_empty() {
            return Err(Error::invalid_shape("categorical", "logits need a class axis"));
        }
        if !logits.value().all_finite() {
            return Err(Error::InvalidParameter("categorical logits must be finite".into()));
        }
        Ok(Distribution::Categorical { logits })
    }

    /// Splits packed parameters `[..., 3K]` into logits, means and log-scales.
    pub fn discretized_logistic_mixture(params: &Var, num_bins: usize) -> Result<Self> {
        let (logits, means, log_scales) = mixture::split_params(params)?;
        Ok(Distribution::DiscretizedLogisticMixture {
            logits,
            means,
            log_scales,
            num_bins,
        })
    }

    pub fn multivariate_normal(mean: Var, covariance: Var) -> Result<Self> {
        let n = mean.shape().first().copied().unwrap_or(0);
        if mean.shape().len() != 2 || covariance.shape() != [n, n] {
            return Err(Error::shape("multivariate_normal", mean.shape(), covariance.shape()));
        }
        Ok(Distribution::MultivariateNormal { mean, covariance })
    }

    pub fn transformed(base: Distribution, bijector: Rc<dyn Bijector>) -> Self {
        Distribution::Transformed {
            base: Box::new(base),
            bijector,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::Normal { .. } => "Normal",
            Distribution::Logistic { .. } => "Logistic",
            Distribution::Categorical { .. } => "Categorical",
            Distribution::DiscretizedLogisticMixture { .. } => "DiscretizedLogisticMixture",
            Distribution::MultivariateNormal { .. } => "MultivariateNormal",
            Distribution::Transformed { .. } => "TransformedDistribution",
            Distribution::Discretized { .. } => "Discretized",
        }
    }

    /// Shape of one draw.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Distribution::Normal { loc, scale } | Distribution::Logistic { loc, scale } => {
                crate::tensor::broadcast_shape(loc.shape(), scale.shape()).unwrap_or_default()
            }
            Distribution::Categorical { logits } => {
                let s = logits.shape();
                s[..s.len() - 1].to_vec()
            }
            Distribution::DiscretizedLogisticMixture { logits, .. } => {
                let s = logits.shape();
                s[..s.len() - 1].to_vec()
            }
            Distribution::MultivariateNormal { mean, .. } => mean.shape().to_vec(),
            Distribution::Transformed { base, .. } | Distribution::Discretized { base, .. } => base.shape(),
        }
    }

    fn tape_var(&self) -> &Var {
        match self {
            Distribution::Normal { loc, .. } | Distribution::Logistic { loc, .. } => loc,
            Distribution::Categorical { logits } => logits,
            Distribution::DiscretizedLogisticMixture { logits, .. } => logits,
            Distribution::MultivariateNormal { mean, .. } => mean,
            Distribution::Transformed { base, .. } | Distribution::Discretized { base, .. } => base.tape_var(),
        }
    }

    /// Draws one sample keyed by `seed`.
    pub fn sample(&self, seed: u64) -> Result<RandomVariable> {
        let mut rng = rng::rng_from(&[seed]);
        self.sample_with(&mut rng)
    }

    /// Draws one sample. Normal-family draws are reparameterized
    /// (`loc + scale ⊙ ε`), so gradients reach the parameters; discrete
    /// draws are detached.
    pub fn sample_with(&self, rng: &mut Rng) -> Result<RandomVariable> {
        let value = self.draw(rng)?;
        Ok(RandomVariable {
            distribution: self.clone(),
            value,
        })
    }

    fn draw(&self, rng: &mut Rng) -> Result<Var> {
        let tape = self.tape_var().tape().clone();
        match self {
            Distribution::Normal { loc, scale } => {
                let shape = self.shape();
                let n = shape.iter().product();
                let eps = tape.constant(Tensor::new(&shape, rng::standard_normal_vec(rng, n))?);
                loc.add(&scale.mul(&eps)?)
            }
            Distribution::Logistic { loc, scale } => {
                let shape = self.shape();
                let n = shape.iter().product();
                let u = rng::uniform_vec(rng, n, 0.0, 1.0);
                let noise: Vec<f64> = u
                    .iter()
                    .map(|&u| {
                        let u = u.clamp(1e-12, 1.0 - 1e-12);
                        u.ln() - (-u).ln_1p()
                    })
                    .collect();
                let eps = tape.constant(Tensor::new(&shape, noise)?);
                loc.add(&scale.mul(&eps)?)
            }
            Distribution::Categorical { logits } => {
                let classes = categorical_draw(logits.value(), rng);
                Ok(tape.constant(Tensor::new(&self.shape(), classes)?))
            }
            Distribution::DiscretizedLogisticMixture {
                logits,
                means,
                log_scales,
                num_bins,
            } => {
                let values = mixture::draw(logits.value(), means.value(), log_scales.value(), *num_bins, rng);
                Ok(tape.constant(Tensor::new(&self.shape(), values)?))
            }
            Distribution::MultivariateNormal { mean, covariance } => {
                let (l, _) = cholesky_with_jitter(covariance)?;
                let shape = mean.shape().to_vec();
                let eps = tape.constant(Tensor::new(&shape, rng::standard_normal_vec(rng, shape[0] * shape[1]))?);
                mean.add(&l.matmul(&eps)?)
            }
            Distribution::Transformed { base, bijector } => {
                let x = base.draw(rng)?;
                bijector.forward(&x)
            }
            Distribution::Discretized { base, low, high } => {
                let x = base.draw(rng)?;
                let v = x.value().map(|v| v.round().clamp(*low as f64, *high as f64));
                Ok(tape.constant(v))
            }
        }
    }

    /// Log density or log mass of `x`.
    ///
    /// Elementwise kinds return the shape of `x`; `Categorical` and the
    /// mixture drop the class/component axis; `MultivariateNormal` returns one
    /// value per column; `Transformed` sums over the last axis and returns one
    /// value per leading index.
    pub fn log_prob(&self, x: &Var) -> Result<Var> {
        match self {
            Distribution::Normal { loc, scale } => {
                let z = x.sub(loc)?.div(scale)?;
                Ok(z.square()
                    .mul_scalar(-0.5)
                    .sub(&scale.log()?)?
                    .add_scalar(-0.5 * LOG_2PI))
            }
            Distribution::Logistic { loc, scale } => {
                // −z − log s − 2·softplus(−z)
                let z = x.sub(loc)?.div(scale)?;
                z.neg()
                    .sub(&scale.log()?)?
                    .sub(&z.neg().softplus().mul_scalar(2.0))
            }
            Distribution::Categorical { logits } => categorical_log_prob(logits, x),
            Distribution::DiscretizedLogisticMixture {
                logits,
                means,
                log_scales,
                num_bins,
            } => mixture::log_prob(logits, means, log_scales, x, *num_bins),
            Distribution::MultivariateNormal { mean, covariance } => {
                let (l, _) = cholesky_with_jitter(covariance)?;
                let n = mean.shape()[0] as f64;
                let z = l.solve_triangular(&x.sub(mean)?, false)?;
                let log_det_half = l.diag()?.square().log()?.sum().mul_scalar(0.5);
                Ok(z.square()
                    .sum_axis(0, false)?
                    .mul_scalar(-0.5)
                    .sub(&log_det_half)?
                    .add_scalar(-0.5 * n * LOG_2PI))
            }
            Distribution::Transformed { base, bijector } => {
                let inner = bijector.inverse(x)?;
                let base_lp = base.log_prob(&inner)?;
                let last = base_lp.shape().len().checked_sub(1).ok_or_else(|| {
                    Error::invalid_shape("log_prob", "transformed event needs at least one axis")
                })?;
                base_lp
                    .sum_axis(last, false)?
                    .add(&bijector.inverse_log_det_jacobian(x)?)
            }
            Distribution::Discretized { base, low, high } => discretized_log_prob(base, *low, *high, x),
        }
    }

    /// Cumulative distribution function, for kinds that have one.
    pub fn cdf(&self, x: &Var) -> Result<Var> {
        match self {
            Distribution::Normal { loc, scale } => Ok(x.sub(loc)?.div(scale)?.normal_cdf()),
            Distribution::Logistic { loc, scale } => Ok(x.sub(loc)?.div(scale)?.sigmoid()),
            other => Err(Error::NoCdf(other.kind())),
        }
    }

    pub fn mean(&self) -> Result<Var> {
        match self {
            Distribution::Normal { loc, .. } | Distribution::Logistic { loc, .. } => Ok(loc.clone()),
            Distribution::MultivariateNormal { mean, .. } => Ok(mean.clone()),
            Distribution::Categorical { logits } => {
                let last = logits.shape().len() - 1;
                logits.sub(&logits.logsumexp(last, true)?).map(|l| l.exp())
            }
            other => Err(Error::InvalidArgument(format!("mean of {} is not available", other.kind()))),
        }
    }

    /// Marginal variance, shaped like a draw.
    pub fn variance(&self) -> Result<Var> {
        match self {
            Distribution::Normal { loc, scale } => {
                let zeros = loc.tape().constant(Tensor::zeros(&self.shape()));
                zeros.add(&scale.square())
            }
            Distribution::Logistic { scale, .. } => Ok(scale.square().mul_scalar(std::f64::consts::PI.powi(2) / 3.0)),
            Distribution::MultivariateNormal { mean, covariance } => {
                let d = covariance.diag()?;
                let n = d.shape()[0];
                let zeros = mean.tape().constant(Tensor::zeros(mean.shape()));
                zeros.add(&d.reshape(&[n, 1])?)
            }
            other => Err(Error::InvalidArgument(format!("variance of {} is not available", other.kind()))),
        }
    }
}

fn categorical_draw(logits: &Tensor, rng: &mut Rng) -> Vec<f64> {
    let k = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let u = rng::uniform_vec(rng, 1, 0.0, total)[0];
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    return i as f64;
                }
            }
            (k - 1) as f64
        })
        .collect()
}

fn check_integers(name: &'static str, x: &Tensor, low: f64, high: f64) -> Result<()> {
    match x.data().iter().find(|&&v| v.fract() != 0.0 || v < low || v > high) {
        Some(&value) => Err(Error::OutsideSupport {
            distribution: name,
            value,
        }),
        None => Ok(()),
    }
}

fn one_hot(classes: &Tensor, k: usize) -> Tensor {
    let mut d = vec![0.0; classes.len() * k];
    for (i, &c) in classes.data().iter().enumerate() {
        d[i * k + c as usize] = 1.0;
    }
    let mut shape = classes.shape().to_vec();
    shape.push(k);
    Tensor::from_parts(shape, d)
}

fn categorical_log_prob(logits: &Var, x: &Var) -> Result<Var> {
    let last = logits.shape().len() - 1;
    let k = logits.shape()[last];
    if x.shape() != &logits.shape()[..last] {
        return Err(Error::shape("categorical log_prob", logits.shape(), x.shape()));
    }
    check_integers("Categorical", x.value(), 0.0, (k - 1) as f64)?;
    let log_probs = logits.sub(&logits.logsumexp(last, true)?)?;
    let mask = logits.tape().constant(one_hot(x.value(), k));
    log_probs.mul(&mask)?.sum_axis(last, false)
}

fn discretized_log_prob(base: &Distribution, low: i64, high: i64, x: &Var) -> Result<Var> {
    check_integers("Discretized", x.value(), low as f64, high as f64)?;
    let tape = x.tape();
    let upper = base.cdf(&x.add_scalar(0.5))?;
    let lower = base.cdf(&x.add_scalar(-0.5))?;
    let is_low = x.value().map(|v| if v == low as f64 { 1.0 } else { 0.0 });
    let is_high = x.value().map(|v| if v == high as f64 { 1.0 } else { 0.0 });
    // edge bins take the tails: zero out the lower CDF at `low`, raise the upper one to 1 at `high`
    let lower = lower.mul(&tape.constant(is_low.map(|m| 1.0 - m)))?;
    let upper = upper
        .mul(&tape.constant(is_high.map(|m| 1.0 - m)))?
        .add(&tape.constant(is_high))?;
    let mass = upper.sub(&lower)?;
    mass.log()
}

/// Factors `a` after adding the smallest jitter from [`JITTER_LADDER`] that
/// succeeds. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(a: &Var) -> Result<(Var, f64)> {
    let n = a.shape().first().copied().unwrap_or(0);
    for &jitter in &JITTER_LADDER {
        let attempt = if jitter == 0.0 {
            a.cholesky()
        } else {
            let j = a.tape().constant(Tensor::eye(n).map(|v| v * jitter));
            a.add(&j)?.cholesky()
        };
        match attempt {
            Ok(l) => {
                if jitter > 0.0 {
                    log::debug!("cholesky needed jitter {jitter:e}");
                }
                return Ok((l, jitter));
            }
            Err(Error::Cholesky { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Cholesky {
        jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// A distribution together with one realized sample.
#[derive(Clone, Debug)]
pub struct RandomVariable {
    pub distribution: Distribution,
    pub value: Var,
}

impl RandomVariable {
    pub fn new(distribution: Distribution, value: Var) -> Self {
        RandomVariable { distribution, value }
    }

    pub fn distribution(&self) -> &Distribution {
        &self.distribution
    }

    pub fn value(&self) -> &Var {
        &self.value
    }

    pub fn log_prob(&self, x: &Var) -> Result<Var> {
        self.distribution.log_prob(x)
    }

    /// A fresh draw from the same distribution.
    pub fn resample(&self, seed: u64) -> Result<RandomVariable> {
        self.distribution.sample(seed)
    }
}

impl Deref for RandomVariable {
    type Target = Var;

    fn deref(&self) -> &Var {
        &self.value
    }
}

/// Wraps a continuous elementwise random variable so it takes integer values
/// on `[low, high]`, integrating its density over unit bins.
pub fn discretize(base: &RandomVariable, low: i64, high: i64) -> Result<RandomVariable> {
    if low >= high {
        return Err(Error::InvalidArgument(format!("empty discretization range [{low}, {high}]")));
    }
    match base.distribution {
        Distribution::Normal { .. } | Distribution::Logistic { .. } => {}
        ref other => return Err(Error::NoCdf(other.kind())),
    }
    let value = base
        .value
        .value()
        .map(|v| v.round().clamp(low as f64, high as f64));
    Ok(RandomVariable {
        distribution: Distribution::Discretized {
            base: Box::new(base.distribution.clone()),
            low,
            high,
        },
        value: base.value.tape().constant(value),
    })
}
