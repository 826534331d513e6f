use super::{Ctx, Initializer, Layer, ParamVisitor, Regularizer, Value, Weight};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// LSTM cell whose kernels and bias may carry posteriors.
///
/// Weights are drawn once per call and reused at every timestep, so a
/// sequence sees a single function and contributes one KL term per weight.
/// Gate blocks along the `4·units` axis are ordered input, forget, cell,
/// output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    name: String,
    units: usize,
    kernel_initializer: Initializer,
    recurrent_initializer: Initializer,
    bias_initializer: Initializer,
    regularizer: Option<Regularizer>,
    input_kernel: Option<Weight>,
    recurrent_kernel: Option<Weight>,
    bias: Option<Weight>,
    losses: Vec<Var>,
    layer_index: u64,
}

/// Weights resolved for one sequence.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub input_kernel: Var,
    pub recurrent_kernel: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

pub fn lstm(units: usize) -> LstmCell {
    assert!(units >= 1, "lstm needs at least one unit");
    LstmCell {
        name: "lstm".into(),
        units,
        kernel_initializer: Initializer::GlorotUniform,
        recurrent_initializer: Initializer::GlorotUniform,
        bias_initializer: Initializer::Zeros,
        regularizer: None,
        input_kernel: None,
        recurrent_kernel: None,
        bias: None,
        losses: Vec::new(),
        layer_index: 0,
    }
}

pub fn variational_lstm_cell(units: usize) -> LstmCell {
    LstmCell {
        name: "lstm_cell_reparameterization".into(),
        kernel_initializer: Initializer::trainable_normal(),
        recurrent_initializer: Initializer::trainable_normal(),
        bias_initializer: Initializer::trainable_normal_zero_loc(),
        regularizer: Some(Regularizer::standard_normal_kl()),
        ..lstm(units)
    }
}

impl LstmCell {
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn regularizer(mut self, reg: Option<Regularizer>) -> Self {
        self.regularizer = reg;
        self
    }

    pub fn build(&mut self, input_dim: usize, ctx: &Ctx) {
        use rand::RngCore;
        let mut rng = ctx.init_rng(self.layer_index);
        let g = 4 * self.units;
        self.input_kernel = Some(Weight::from_initial(
            self.kernel_initializer.initialize(&[input_dim, g], rng.next_u64()),
        ));
        self.recurrent_kernel = Some(Weight::from_initial(
            self.recurrent_initializer.initialize(&[self.units, g], rng.next_u64()),
        ));
        self.bias = Some(Weight::from_initial(self.bias_initializer.initialize(&[g], rng.next_u64())));
    }

    pub fn set_weights(&mut self, input_kernel: Weight, recurrent_kernel: Weight, bias: Weight) -> Result<()> {
        let g = 4 * self.units;
        if input_kernel.shape().len() != 2
            || input_kernel.shape()[1] != g
            || recurrent_kernel.shape() != [self.units, g]
            || bias.shape() != [g]
        {
            return Err(Error::invalid_shape("lstm", "weight shapes do not match 4·units gates"));
        }
        self.input_kernel = Some(input_kernel);
        self.recurrent_kernel = Some(recurrent_kernel);
        self.bias = Some(bias);
        Ok(())
    }

    /// Draws the weights for one sequence and records their KL losses.
    pub fn sample_weights(&mut self, input_dim: usize, ctx: &mut Ctx) -> Result<LstmWeights> {
        self.losses.clear();
        if self.input_kernel.is_none() {
            self.build(input_dim, ctx);
        }
        let mut rng = ctx.rng(self.layer_index);
        let tape = ctx.tape().clone();
        let mut draws = Vec::with_capacity(3);
        for w in [&self.input_kernel, &self.recurrent_kernel, &self.bias] {
            draws.push(w.as_ref().expect("built").draw(&tape, &mut rng)?);
        }
        if let Some(reg) = &self.regularizer {
            for d in &draws {
                self.losses.push(reg.apply(&d.rv)?);
            }
        }
        let mut it = draws.into_iter().map(|d| d.value);
        Ok(LstmWeights {
            input_kernel: it.next().unwrap(),
            recurrent_kernel: it.next().unwrap(),
            bias: it.next().unwrap(),
        })
    }

    pub fn zero_state(&self, batch: usize, tape: &Tape) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, self.units])),
            c: tape.constant(Tensor::zeros(&[batch, self.units])),
        }
    }

    /// One step: `(x_t, h_{t−1}, c_{t−1}) → (h_t, c_t)`.
    pub fn step(&self, w: &LstmWeights, x: &Var, state: &LstmState) -> Result<LstmState> {
        let u = self.units;
        let batch = x.shape()[0];
        for s in [&state.h, &state.c] {
            if s.shape() != [batch, u] {
                return Err(Error::invalid_shape(
                    "lstm",
                    format!("state shape {:?}, expected [{batch}, {u}]", s.shape()),
                ));
            }
        }
        let z = x
            .matmul(&w.input_kernel)?
            .add(&state.h.matmul(&w.recurrent_kernel)?)?
            .add(&w.bias)?;
        let i = z.narrow(1, 0, u)?.sigmoid();
        let f = z.narrow(1, u, u)?.sigmoid();
        let g = z.narrow(1, 2 * u, u)?.tanh();
        let o = z.narrow(1, 3 * u, u)?.sigmoid();
        let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }

    /// Runs a `[batch, time, features]` sequence, returning all hidden states
    /// as `[batch, time, units]` and the final state.
    pub fn unroll(&mut self, x: &Var, initial: Option<LstmState>, ctx: &mut Ctx) -> Result<(Var, LstmState)> {
        super::require_rank("lstm", x, 3)?;
        let (batch, steps, features) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if steps == 0 {
            return Err(Error::invalid_shape("lstm", "empty sequence"));
        }
        let weights = self.sample_weights(features, ctx)?;
        let mut state = initial.unwrap_or_else(|| self.zero_state(batch, ctx.tape()));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = x.narrow(1, t, 1)?.reshape(&[batch, features])?;
            state = self.step(&weights, &xt, &state)?;
            outputs.push(state.h.reshape(&[batch, 1, self.units])?);
        }
        Ok((Var::concat(&outputs, 1)?, state))
    }
}

impl Layer for LstmCell {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let (out, _) = self.unroll(&input.into_tensor(), None, ctx)?;
        Ok(Value::Tensor(out))
    }

    fn losses(&self) -> Vec<Var> {
        self.losses.clone()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        if let Some(w) = &mut self.input_kernel {
            w.visit("kernel", visitor);
        }
        if let Some(w) = &mut self.recurrent_kernel {
            w.visit("recurrent_kernel", visitor);
        }
        if let Some(w) = &mut self.bias {
            w.visit("bias", visitor);
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}
