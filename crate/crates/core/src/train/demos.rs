//! Toy-scale models and data for the command-line tasks.

use std::f64::consts::PI;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::gp::sparse_gaussian_process;
use crate::layers::{
    dense, flipout_dense, prefixed, sequential, variational_dense, variational_lstm_cell, Activation, Ctx, Dense,
    Estimator, Layer, LstmCell, ParamVisitor, Sequential, Value,
};
use crate::output::gaussian_likelihood;
use crate::reversible::{alternating_mask, coupling_layer, made_conditioner};
use crate::rng::{rng_from, standard_normal_vec, uniform_vec};
use crate::tensor::{Tensor, Var};

use super::data::Dataset;

/// `y = sin(3x) + noise·ε` with `x ~ U[−1, 1]`.
pub fn toy_regression(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut r = rng_from(&[seed, 0xDA7A]);
    let x = uniform_vec(&mut r, n, -1.0, 1.0);
    let eps = standard_normal_vec(&mut r, n);
    let y = x.iter().zip(eps).map(|(x, e)| (3.0 * x).sin() + noise * e).collect();
    let x = Tensor::new(&[n, 1], x).expect("n rows");
    let mut ds = Dataset::new(x, Tensor::new(&[n, 1], y).expect("n rows")).expect("matching rows");
    ds.feature_names = vec!["x".into()];
    ds.target_names = vec!["y".into()];
    ds
}

/// Two interleaved half circles with Gaussian jitter, `[n, 2]`.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Tensor {
    let mut r = rng_from(&[seed, 0x300D]);
    let t = uniform_vec(&mut r, n, 0.0, PI);
    let eps = standard_normal_vec(&mut r, 2 * n);
    let mut data = Vec::with_capacity(2 * n);
    for (i, t) in t.into_iter().enumerate() {
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x - 0.5 + noise * eps[2 * i]);
        data.push(y - 0.25 + noise * eps[2 * i + 1]);
    }
    Tensor::new(&[n, 2], data).expect("n rows")
}

/// Variational MLP regressor ending in a trainable Gaussian likelihood.
pub fn bnn_model(hidden: &[usize], noise_scale: f64, estimator: Estimator) -> Result<Sequential> {
    let make = |units: usize| match estimator {
        Estimator::Flipout => flipout_dense(units),
        Estimator::Reparameterization => variational_dense(units),
    };
    let mut layers: Vec<Box<dyn Layer>> = hidden
        .iter()
        .map(|&h| Box::new(make(h).activation(Activation::Relu)) as Box<dyn Layer>)
        .collect();
    layers.push(Box::new(make(1)));
    layers.push(Box::new(gaussian_likelihood(noise_scale)));
    sequential(layers)
}

/// Three sparse GP layers (2, 2, 1 units) and a Gaussian likelihood.
pub fn deep_gp_model(num_inducing: usize, noise_scale: f64) -> Result<Sequential> {
    sequential(vec![
        Box::new(sparse_gaussian_process(2, num_inducing)?),
        Box::new(sparse_gaussian_process(2, num_inducing)?),
        Box::new(sparse_gaussian_process(1, num_inducing)?),
        Box::new(gaussian_likelihood(noise_scale)),
    ])
}

/// Stack of affine couplings with MADE conditioners and alternating masks.
/// The forward direction maps data to the standard-normal base.
pub fn flow_model(dims: usize, num_layers: usize, hidden: &[usize], seed: u64) -> Result<Sequential> {
    if dims < 2 {
        return Err(Error::InvalidArgument("flow needs at least two dimensions".into()));
    }
    let layers = (0..num_layers)
        .map(|i| {
            let made = made_conditioner(dims, hidden).with_seed(seed.wrapping_add(i as u64));
            Ok(Box::new(coupling_layer(alternating_mask(dims, i), Box::new(made))?) as Box<dyn Layer>)
        })
        .collect::<Result<Vec<_>>>()?;
    sequential(layers)
}

/// `log p(x)` per row under `flow` with a standard-normal base.
pub fn flow_log_prob(flow: &Sequential, x: &Var) -> Result<Var> {
    let bij = flow
        .bijector()
        .ok_or_else(|| Error::NotReversible(flow.name().to_string()))?;
    let (z, ldj) = bij.forward_and_log_det(x)?;
    let d = *z.shape().last().expect("rank >= 1") as f64;
    let base = z
        .square()
        .sum_axis(z.shape().len() - 1, false)?
        .mul_scalar(-0.5)
        .add_scalar(-0.5 * d * (2.0 * PI).ln());
    base.add(&ldj)
}

/// Draws `n` points by pushing base samples through the inverse flow.
pub fn flow_sample(flow: &mut Sequential, dims: usize, n: usize, seed: u64) -> Result<Tensor> {
    let mut ctx = Ctx::new(seed);
    let mut r = rng_from(&[seed, 0x5A3B]);
    let z = Tensor::new(&[n, dims], standard_normal_vec(&mut r, n * dims))?;
    Ok(flow.reverse(ctx.input(&z), &mut ctx)?.into_tensor().value().clone())
}

/// Sequences cycling through `0..period` from a random phase, with each
/// token replaced by a uniform one with probability `noise`.
pub fn periodic_sequences(count: usize, len: usize, vocab: usize, period: usize, noise: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng_from(&[seed, 0x5E0]);
    (0..count)
        .map(|_| {
            let phase = (uniform_vec(&mut r, 1, 0.0, period as f64)[0] as usize).min(period - 1);
            let flips = uniform_vec(&mut r, len, 0.0, 1.0);
            let subs = uniform_vec(&mut r, len, 0.0, vocab as f64);
            (0..len)
                .map(|t| {
                    if flips[t] < noise {
                        (subs[t] as usize).min(vocab - 1)
                    } else {
                        (phase + t) % period
                    }
                })
                .collect()
        })
        .collect()
}

/// `[batch, time, vocab]` one-hot encoding.
pub fn one_hot(seqs: &[Vec<usize>], vocab: usize) -> Result<Tensor> {
    let len = seqs.first().map_or(0, Vec::len);
    let mut data = vec![0.0; seqs.len() * len * vocab];
    for (b, s) in seqs.iter().enumerate() {
        if s.len() != len {
            return Err(Error::InvalidArgument("sequences must share one length".into()));
        }
        for (t, &tok) in s.iter().enumerate() {
            if tok >= vocab {
                return Err(Error::InvalidArgument(format!("token {tok} outside vocabulary of {vocab}")));
            }
            data[(b * len + t) * vocab + tok] = 1.0;
        }
    }
    Tensor::new(&[seqs.len(), len, vocab], data)
}

/// Bayesian LSTM language model: variational cell, deterministic readout,
/// categorical over the next token at every position.
pub struct LstmLm {
    pub cell: LstmCell,
    pub head: Dense,
    vocab: usize,
    layer_index: u64,
}

pub fn lstm_lm(units: usize, vocab: usize) -> LstmLm {
    let mut lm = LstmLm {
        cell: variational_lstm_cell(units),
        head: dense(vocab),
        vocab,
        layer_index: 0,
    };
    lm.set_layer_index(0);
    lm
}

impl LstmLm {
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Teacher-forced negative ELBO per sequence: the model reads tokens
    /// `0..T−1` and is scored on tokens `1..T`.
    pub fn loss(&mut self, seqs: &[Vec<usize>], num_train: usize, seed: u64, step: u64) -> Result<(Var, f64)> {
        let inputs: Vec<Vec<usize>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
        let targets: Vec<f64> = seqs.iter().flat_map(|s| s[1..].iter().map(|&t| t as f64)).collect();
        let (b, t) = (seqs.len(), inputs[0].len());
        let mut ctx = Ctx::at_step(seed, step);
        let rv = self.call(ctx.input(&one_hot(&inputs, self.vocab)?), &mut ctx)?.into_random()?;
        let y = ctx.constant(Tensor::new(&[b, t], targets)?);
        let nll = rv.log_prob(&y)?.sum().mul_scalar(-1.0 / b as f64);
        let kl = self
            .losses()
            .into_iter()
            .try_fold(ctx.tape().scalar(0.0), |acc, l| acc.add(&l.sum()))?;
        let loss = nll.add(&kl.mul_scalar(1.0 / num_train as f64))?;
        Ok((loss, kl.item()))
    }

    /// Continues `prime` to `len` tokens with one weight draw per sequence.
    pub fn sample(&mut self, prime: &[usize], len: usize, seed: u64) -> Result<Vec<usize>> {
        if prime.is_empty() {
            return Err(Error::InvalidArgument("sampling needs at least one priming token".into()));
        }
        let mut ctx = Ctx::new(seed);
        let weights = self.cell.sample_weights(self.vocab, &mut ctx)?;
        let mut state = self.cell.zero_state(1, ctx.tape());
        let mut out = prime.to_vec();
        let mut r = rng_from(&[seed, self.layer_index]);
        for i in 0..len.saturating_sub(1) {
            let tok = out[i];
            if tok >= self.vocab {
                return Err(Error::InvalidArgument(format!("token {tok} outside vocabulary")));
            }
            let x = ctx.input(&one_hot(&[vec![tok]], self.vocab)?.reshape(&[1, self.vocab])?);
            state = self.cell.step(&weights, x.tensor(), &state)?;
            if i + 1 < out.len() {
                continue;
            }
            let logits = self.head.call(Value::Tensor(state.h.clone()), &mut ctx)?.into_tensor();
            let next = Distribution::categorical(logits)?.sample_with(&mut r)?;
            out.push(next.item() as usize);
        }
        out.truncate(len.max(prime.len()));
        Ok(out)
    }
}

impl Layer for LstmLm {
    fn name(&self) -> &str {
        "lstm_lm"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let (h, _) = self.cell.unroll(&input.into_tensor(), None, ctx)?;
        let (b, t, u) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let logits = self
            .head
            .call(Value::Tensor(h.reshape(&[b * t, u])?), ctx)?
            .into_tensor()
            .reshape(&[b, t, self.vocab])?;
        let mut r = ctx.rng(self.layer_index);
        Ok(Value::Random(Distribution::categorical(logits)?.sample_with(&mut r)?))
    }

    fn losses(&self) -> Vec<Var> {
        let mut l = self.cell.losses();
        l.extend(self.head.losses());
        l
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.cell.visit_parameters(&mut prefixed("cell", visitor));
        self.head.visit_parameters(&mut prefixed("head", visitor));
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        let next = self.head.set_layer_index(self.cell.set_layer_index(index));
        self.layer_index = next;
        next + 1
    }
}
