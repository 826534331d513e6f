//! Mixture of discretized logistics over `num_bins` integer levels.
//!
//! Levels `x ∈ {0, …, L−1}` are rescaled to `x̃ ∈ [−1, 1]`; each bin spans
//! `x̃ ± 1/(L−1)`. The lowest bin takes all mass below its upper edge and the
//! highest bin all mass above its lower edge.

use super::{check_integers, Distribution};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Tensor, Var};

pub const DEFAULT_NUM_BINS: usize = 256;

pub(super) fn split_params(params: &Var) -> Result<(Var, Var, Var)> {
    let last = params
        .shape()
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::invalid_shape("discretized_logistic_mixture", "scalar parameters"))?;
    let width = params.shape()[last];
    if width == 0 || width % 3 != 0 {
        return Err(Error::invalid_shape(
            "discretized_logistic_mixture",
            format!("last axis {width} is not a positive multiple of 3"),
        ));
    }
    let k = width / 3;
    Ok((
        params.narrow(last, 0, k)?,
        params.narrow(last, k, k)?,
        params.narrow(last, 2 * k, k)?,
    ))
}

/// Log mass of integer levels `x` under packed parameters `[..., 3K]`.
pub fn discretized_logistic_mixture_log_prob(params: &Var, x: &Var, num_bins: usize) -> Result<Var> {
    let d = Distribution::discretized_logistic_mixture(params, num_bins)?;
    d.log_prob(x)
}

pub(super) fn log_prob(logits: &Var, means: &Var, log_scales: &Var, x: &Var, num_bins: usize) -> Result<Var> {
    if num_bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    let batch = &logits.shape()[..logits.shape().len() - 1];
    if x.shape() != batch {
        return Err(Error::shape("discretized_logistic_mixture log_prob", logits.shape(), x.shape()));
    }
    let top = (num_bins - 1) as f64;
    check_integers("DiscretizedLogisticMixture", x.value(), 0.0, top)?;
    let tape = x.tape();
    let last = logits.shape().len() - 1;
    let mut col = batch.to_vec();
    col.push(1);

    let half = 1.0 / top;
    let scaled = tape.constant(x.value().map(|v| 2.0 * v / top - 1.0).reshape(&col)?);
    let centered = scaled.sub(means)?;
    let inv_scale = log_scales.neg().exp();
    let plus = centered.add_scalar(half).mul(&inv_scale)?;
    let minus = centered.add_scalar(-half).mul(&inv_scale)?;

    // log σ(plus)             for the lowest bin
    // log(1 − σ(minus))       for the highest bin
    // log(σ(plus) − σ(minus)) = log σ(plus) + log σ(−minus) + log(1 − e^{minus−plus}) otherwise
    let log_cdf_plus = plus.neg().softplus().neg();
    let log_sf_minus = minus.softplus().neg();
    let log_interior = log_cdf_plus
        .add(&log_sf_minus)?
        .add(&plus.sub(&minus)?.log1mexp()?)?;

    let low_mask = x.value().map(|v| if v == 0.0 { 1.0 } else { 0.0 }).reshape(&col)?;
    let high_mask = x.value().map(|v| if v == top { 1.0 } else { 0.0 }).reshape(&col)?;
    let mid_mask = low_mask.zip_map(&high_mask, |a, b| 1.0 - a - b)?;
    let log_mass = log_cdf_plus
        .mul(&tape.constant(low_mask))?
        .add(&log_sf_minus.mul(&tape.constant(high_mask))?)?
        .add(&log_interior.mul(&tape.constant(mid_mask))?)?;

    let log_weights = logits.sub(&logits.logsumexp(last, true)?)?;
    log_weights.add(&log_mass)?.logsumexp(last, false)
}

pub(super) fn draw(logits: &Tensor, means: &Tensor, log_scales: &Tensor, num_bins: usize, rng: &mut Rng) -> Vec<f64> {
    let k = *logits.shape().last().unwrap();
    let top = (num_bins - 1) as f64;
    let comps = super::categorical_draw(logits, rng);
    comps
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let j = i * k + c as usize;
            let u = rng::uniform_vec(rng, 1, 1e-12, 1.0 - 1e-12)[0];
            let v = means.data()[j] + log_scales.data()[j].exp() * (u.ln() - (-u).ln_1p());
            ((v + 1.0) * top / 2.0).round().clamp(0.0, top)
        })
        .collect()
}
