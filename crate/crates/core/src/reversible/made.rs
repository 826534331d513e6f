use rand::RngCore;

use crate::error::{Error, Result};
use crate::layers::{require_rank, Activation, Ctx, InitialValue, Initializer, Layer, ParamVisitor, Value};
use crate::rng;
use crate::tensor::{Parameter, Tensor, Var};

struct MaskedLinear {
    kernel: Parameter,
    bias: Parameter,
    mask: Tensor,
}

impl MaskedLinear {
    fn apply(&self, x: &Var) -> Result<Var> {
        let tape = x.tape();
        let w = tape.param(&self.kernel).mul(&tape.constant(self.mask.clone()))?;
        x.matmul(&w)?.add(&tape.param(&self.bias))
    }
}

/// Masked autoencoder conditioner for `dims` inputs.
///
/// Output unit `j` and `dims + j` (shift and log-scale for coordinate `j`)
/// depend only on inputs `0..j`. The output layer starts at zero so a flow
/// built on it is the identity at initialization.
pub struct Made {
    dims: usize,
    hidden: Vec<usize>,
    activation: Activation,
    layers: Vec<MaskedLinear>,
    seed: u64,
    layer_index: u64,
}

pub fn made_conditioner(dims: usize, hidden_sizes: &[usize]) -> Made {
    for &h in hidden_sizes {
        if h + 1 < dims {
            log::warn!(
                "MADE hidden width {h} is below {} for {dims} inputs; some outputs will ignore inputs they may depend on",
                dims - 1
            );
        }
    }
    Made {
        dims,
        hidden: hidden_sizes.to_vec(),
        activation: Activation::Tanh,
        layers: Vec::new(),
        seed: 0,
        layer_index: 0,
    }
}

fn initial(init: &Initializer, shape: &[usize], seed: u64) -> Tensor {
    match init.initialize(shape, seed) {
        InitialValue::Point(t) => t,
        InitialValue::Posterior { loc, .. } => loc,
    }
}

impl Made {
    pub fn activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Input degrees are `1..=dims`; hidden degrees cycle through `1..dims`.
    fn degrees(&self) -> Vec<Vec<usize>> {
        let d = self.dims;
        let mut out = vec![(1..=d).collect::<Vec<_>>()];
        for &h in &self.hidden {
            let span = d.saturating_sub(1).max(1);
            out.push((0..h).map(|k| k % span + 1).collect());
        }
        out
    }

    /// Binary connectivity masks, `[in, out]` per layer.
    pub fn masks(&self) -> Vec<Tensor> {
        let degrees = self.degrees();
        let mut masks = Vec::new();
        for pair in degrees.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let data = a
                .iter()
                .flat_map(|&da| b.iter().map(move |&db| if db >= da { 1.0 } else { 0.0 }))
                .collect();
            masks.push(Tensor::new(&[a.len(), b.len()], data).expect("mask shape"));
        }
        let last = degrees.last().unwrap();
        let out_deg: Vec<usize> = (1..=self.dims).chain(1..=self.dims).collect();
        let data = last
            .iter()
            .flat_map(|&da| out_deg.iter().map(move |&db| if db > da { 1.0 } else { 0.0 }))
            .collect();
        masks.push(Tensor::new(&[last.len(), out_deg.len()], data).expect("mask shape"));
        masks
    }

    fn build(&mut self) {
        let mut r = rng::rng_from(&[self.seed, self.layer_index, u64::MAX]);
        let masks = self.masks();
        let n = masks.len();
        self.layers = masks
            .into_iter()
            .enumerate()
            .map(|(i, mask)| {
                let shape = mask.shape().to_vec();
                let (kernel, bias) = if i + 1 == n {
                    (Tensor::zeros(&shape), Tensor::zeros(&[shape[1]]))
                } else {
                    (
                        initial(&Initializer::GlorotUniform, &shape, r.next_u64()),
                        Tensor::zeros(&[shape[1]]),
                    )
                };
                MaskedLinear {
                    kernel: Parameter::new(kernel),
                    bias: Parameter::new(bias),
                    mask,
                }
            })
            .collect();
    }
}

impl Layer for Made {
    fn name(&self) -> &str {
        "made"
    }

    fn call(&mut self, input: Value, _ctx: &mut Ctx) -> Result<Value> {
        let x = input.into_tensor();
        require_rank("made", &x, 2)?;
        if x.shape()[1] != self.dims {
            return Err(Error::invalid_shape(
                "made",
                format!("expected {} features, got {:?}", self.dims, x.shape()),
            ));
        }
        if self.layers.is_empty() {
            self.build();
        }
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i + 1 < n {
                h = self.activation.apply(&h);
            }
        }
        Ok(Value::Tensor(h))
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            visitor(&format!("{i}/kernel"), &mut layer.kernel);
            visitor(&format!("{i}/bias"), &mut layer.bias);
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}
