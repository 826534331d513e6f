//! ELBO training: the loss, the loop, and the artifact plumbing around it.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod demos;
pub mod optim;

use crate::error::{Error, Result};
use crate::layers::{Ctx, Layer, Sequential, Value};
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub use data::{load_csv, Dataset, Normalizer};
pub use optim::{adam_update, Adam, AdamConfig, AdamState};

/// How the summed regularizer is weighted against the mean log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KlScale {
    /// `1/N`: the loss is the full-data negative ELBO divided by N.
    OneOverN,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboConfig {
    pub num_train_examples: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub kl_scale: KlScale,
    pub learning_rate: f64,
    /// When set, the learning rate decays geometrically to this value at
    /// `max_steps`.
    pub final_learning_rate: Option<f64>,
    pub max_steps: u64,
    pub seed: u64,
    /// Prefetch queue capacity in batches; 0 loads on the training thread.
    pub prefetch: usize,
}

impl ElboConfig {
    /// Full-batch defaults for a dataset of `n` rows.
    pub fn new(n: usize) -> Self {
        ElboConfig {
            num_train_examples: n,
            batch_size: n,
            mc_samples: 1,
            kl_scale: KlScale::OneOverN,
            learning_rate: 1e-2,
            final_learning_rate: None,
            max_steps: 1000,
            seed: 0,
            prefetch: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_train_examples == 0 {
            return bad("num_train_examples must be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.num_train_examples {
            return bad("batch_size must be in 1..=num_train_examples");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Some(f) = self.final_learning_rate {
            if !(f > 0.0 && f.is_finite()) {
                return bad("final_learning_rate must be positive");
            }
        }
        if let KlScale::Constant(c) = self.kl_scale {
            if !(c >= 0.0 && c.is_finite()) {
                return bad("kl scale must be non-negative");
            }
        }
        Ok(())
    }

    pub fn kl_weight(&self) -> f64 {
        match self.kl_scale {
            KlScale::OneOverN => 1.0 / self.num_train_examples as f64,
            KlScale::Constant(c) => c,
        }
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(f) => {
                let frac = step as f64 / self.max_steps.max(1) as f64;
                self.learning_rate * (f / self.learning_rate).powf(frac)
            }
        }
    }
}

/// Maps the model output and targets to per-example log-likelihoods.
pub type LogLikelihood<'a> = dyn Fn(&Value, &Var) -> Result<Var> + 'a;

pub struct StepOutput {
    pub loss: Var,
    /// Mean negative log-likelihood part of the loss.
    pub nll: f64,
    /// Unscaled sum of the regularizers.
    pub kl: f64,
    pub gradients: Gradients,
}

/// Negative ELBO per example on one batch, with gradients.
///
/// `loss = −(1/S) Σ_s mean_b log p(y_b | f_s(x_b)) + kl_weight · Σ losses`.
/// Without `log_lik` the model output must be a random variable whose
/// `log_prob` scores the targets.
pub fn elbo_step(
    model: &mut Sequential,
    x: &Tensor,
    y: &Tensor,
    cfg: &ElboConfig,
    step: u64,
    log_lik: Option<&LogLikelihood<'_>>,
) -> Result<StepOutput> {
    let tape = Tape::new();
    let mut ctx = Ctx::with_tape(tape.clone(), cfg.seed, step);
    let target = tape.constant(y.clone());
    let batch = x.shape()[0] as f64;
    let mut total: Option<Var> = None;
    for _ in 0..cfg.mc_samples {
        let out = model.call(ctx.input(x), &mut ctx)?;
        let lp = match log_lik {
            Some(f) => f(&out, &target)?,
            None => match &out {
                Value::Random(rv) => rv.log_prob(&target)?,
                Value::Tensor(_) => {
                    return Err(Error::InvalidArgument(
                        "model output is not a random variable and no log-likelihood was supplied".into(),
                    ))
                }
            },
        };
        let term = lp.sum().mul_scalar(1.0 / batch);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    let nll = total.expect("mc_samples >= 1").mul_scalar(-1.0 / cfg.mc_samples as f64);
    let kl = model
        .losses()
        .into_iter()
        .try_fold(tape.scalar(0.0), |acc, l| acc.add(&l.sum()))?;
    let loss = nll.add(&kl.mul_scalar(cfg.kl_weight()))?;
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: diagnose(model, x, cfg, step),
        });
    }
    let gradients = loss.backward()?;
    Ok(StepOutput {
        nll: nll.item(),
        kl: kl.item(),
        loss,
        gradients,
    })
}

/// Replays the first forward sample layer by layer and names the first
/// layer whose output or regularizer stops being finite.
fn diagnose(model: &mut Sequential, x: &Tensor, cfg: &ElboConfig, step: u64) -> String {
    let mut ctx = Ctx::at_step(cfg.seed, step);
    let mut v = ctx.input(x);
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        v = match layer.call(v, &mut ctx) {
            Ok(v) => v,
            Err(e) => return format!("layer {i} (`{}`) failed on replay: {e}", layer.name()),
        };
        if !v.tensor().value().all_finite() {
            return format!("layer {i} (`{}`) produced a non-finite output", layer.name());
        }
        if layer.losses().iter().any(|l| !l.value().all_finite()) {
            return format!("layer {i} (`{}`) produced a non-finite regularizer", layer.name());
        }
    }
    let mut bad = Vec::new();
    model.visit_parameters(&mut |name, p| {
        if !p.value().all_finite() {
            bad.push(name.to_string());
        }
    });
    if !bad.is_empty() {
        return format!("non-finite parameters: {}", bad.join(", "));
    }
    let last = model.layers().last().map_or("", |l| l.name());
    format!("log-likelihood of the targets under the last layer (`{last}`) is non-finite")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub kl: f64,
}

impl std::fmt::Display for StepStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step={} loss={} kl={}", self.step, self.loss, self.kl)
    }
}

/// Runs `cfg.max_steps` Adam steps on minibatches of `data`.
pub fn fit(
    model: &mut Sequential,
    data: &Dataset,
    cfg: &ElboConfig,
    log_lik: Option<&LogLikelihood<'_>>,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Vec<StepStats>> {
    cfg.validate()?;
    if cfg.batch_size > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch_size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let batches: Box<dyn Iterator<Item = data::Batch>> = if cfg.prefetch > 0 {
        Box::new(data::Prefetcher::spawn(data, cfg.batch_size, cfg.seed, cfg.max_steps, cfg.prefetch))
    } else {
        let (bs, seed) = (cfg.batch_size, cfg.seed);
        Box::new((0..cfg.max_steps).map(move |step| {
            let (x, y) = data.batch(&data::batch_indices(data.len(), bs, seed, step));
            data::Batch { step, x, y }
        }))
    };
    let mut adam = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    for b in batches {
        let out = elbo_step(model, &b.x, &b.y, cfg, b.step, log_lik)?;
        adam.set_learning_rate(cfg.learning_rate_at(b.step));
        adam.step(model, &out.gradients)?;
        let stats = StepStats {
            step: b.step,
            loss: out.loss.item(),
            kl: out.kl,
        };
        on_step(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

/// Adam loop for models whose loss is not a plain ELBO. `loss_fn` receives
/// the model and the step and returns the scalar loss with its KL part.
pub fn fit_with<M: Layer>(
    model: &mut M,
    cfg: &ElboConfig,
    mut loss_fn: impl FnMut(&mut M, u64) -> Result<(Var, f64)>,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Vec<StepStats>> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    for step in 0..cfg.max_steps {
        let (loss, kl) = loss_fn(model, step)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("`{}` loss is {}", model.name(), loss.item()),
            });
        }
        let grads = loss.backward()?;
        adam.set_learning_rate(cfg.learning_rate_at(step));
        adam.step(model, &grads)?;
        let stats = StepStats {
            step,
            loss: loss.item(),
            kl,
        };
        on_step(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

/// Monte-Carlo predictive mean and standard deviation of a model whose
/// output is a random variable, by the law of total variance over
/// `samples` forward passes.
pub fn predictive_moments(model: &mut dyn Layer, x: &Tensor, samples: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let mut sum: Option<(Tensor, Tensor, Tensor)> = None;
    for s in 0..samples.max(1) {
        let mut ctx = Ctx::at_step(seed, s as u64);
        let rv = model.call(ctx.input(x), &mut ctx)?.into_random()?;
        let m = rv.distribution().mean()?.value().clone();
        let v = rv.distribution().variance()?.value().clone();
        let m2 = m.map(|a| a * a);
        sum = Some(match sum {
            None => (m, m2, v),
            Some((a, b, c)) => (a.zip_map(&m, |p, q| p + q)?, b.zip_map(&m2, |p, q| p + q)?, c.zip_map(&v, |p, q| p + q)?),
        });
    }
    let k = samples.max(1) as f64;
    let (sm, sm2, sv) = sum.expect("at least one sample");
    let mean = sm.map(|a| a / k);
    let var = sm2
        .zip_map(&mean, |b, m| b / k - m * m)?
        .zip_map(&sv, |e, v| e.max(0.0) + v / k)?;
    Ok((mean, var.map(f64::sqrt)))
}

#[cfg(test)]
mod tests;
