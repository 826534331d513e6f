use super::{require_rank, Activation, Ctx, Initializer, Layer, ParamVisitor, Regularizer, Value, Weight};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tensor, Var};

/// How a variational kernel is turned into outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Estimator {
    /// One reparameterized kernel sample shared by the batch.
    #[default]
    Reparameterization,
    /// One shared perturbation decorrelated per example with random sign flips.
    Flipout,
}

/// Densely connected layer, `activation(x·W + b)`.
///
/// Whether the layer is Bayesian depends only on its initializers and
/// regularizers: a posterior-producing initializer makes the weights
/// variational, and the regularizers turn them into KL losses.
#[derive(Clone, Debug)]
pub struct Dense {
    name: String,
    units: usize,
    activation: Activation,
    use_bias: bool,
    kernel_initializer: Initializer,
    bias_initializer: Initializer,
    kernel_regularizer: Option<Regularizer>,
    bias_regularizer: Option<Regularizer>,
    estimator: Estimator,
    kernel: Option<Weight>,
    bias: Option<Weight>,
    losses: Vec<Var>,
    layer_index: u64,
}

/// Deterministic dense layer.
pub fn dense(units: usize) -> Dense {
    Dense::with_defaults(
        "dense",
        units,
        Initializer::GlorotUniform,
        Initializer::Zeros,
        None,
        Estimator::Reparameterization,
    )
}

/// Dense layer with normal posteriors over kernel and bias and standard
/// normal KL regularizers.
pub fn variational_dense(units: usize) -> Dense {
    Dense::with_defaults(
        "dense_reparameterization",
        units,
        Initializer::trainable_normal(),
        Initializer::trainable_normal_zero_loc(),
        Some(Regularizer::standard_normal_kl()),
        Estimator::Reparameterization,
    )
}

/// Variational dense layer using the Flipout estimator for the kernel.
pub fn flipout_dense(units: usize) -> Dense {
    Dense::with_defaults(
        "dense_flipout",
        units,
        Initializer::trainable_normal(),
        Initializer::trainable_normal_zero_loc(),
        Some(Regularizer::standard_normal_kl()),
        Estimator::Flipout,
    )
}

impl Dense {
    fn with_defaults(
        name: &str,
        units: usize,
        kernel_initializer: Initializer,
        bias_initializer: Initializer,
        regularizer: Option<Regularizer>,
        estimator: Estimator,
    ) -> Self {
        assert!(units >= 1, "dense layers need at least one unit");
        Dense {
            name: name.to_string(),
            units,
            activation: Activation::Linear,
            use_bias: true,
            kernel_initializer,
            bias_initializer,
            kernel_regularizer: regularizer.clone(),
            bias_regularizer: regularizer,
            estimator,
            kernel: None,
            bias: None,
            losses: Vec::new(),
            layer_index: 0,
        }
    }

    pub fn activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn use_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    pub fn kernel_initializer(mut self, init: Initializer) -> Self {
        self.kernel_initializer = init;
        self
    }

    pub fn bias_initializer(mut self, init: Initializer) -> Self {
        self.bias_initializer = init;
        self
    }

    pub fn kernel_regularizer(mut self, reg: Option<Regularizer>) -> Self {
        self.kernel_regularizer = reg;
        self
    }

    pub fn bias_regularizer(mut self, reg: Option<Regularizer>) -> Self {
        self.bias_regularizer = reg;
        self
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn is_built(&self) -> bool {
        self.kernel.is_some()
    }

    /// Creates the weights for inputs with `input_dim` features.
    pub fn build(&mut self, input_dim: usize, ctx: &Ctx) {
        use rand::RngCore;
        let mut rng = ctx.init_rng(self.layer_index);
        self.kernel = Some(Weight::from_initial(
            self.kernel_initializer
                .initialize(&[input_dim, self.units], rng.next_u64()),
        ));
        let bias_seed = rng.next_u64();
        self.bias = self
            .use_bias
            .then(|| Weight::from_initial(self.bias_initializer.initialize(&[self.units], bias_seed)));
    }

    pub fn kernel(&self) -> Option<&Weight> {
        self.kernel.as_ref()
    }

    pub fn kernel_mut(&mut self) -> Option<&mut Weight> {
        self.kernel.as_mut()
    }

    pub fn bias(&self) -> Option<&Weight> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Weight> {
        self.bias.as_mut()
    }

    /// Replaces the weights directly (building the layer if needed).
    pub fn set_weights(&mut self, kernel: Weight, bias: Option<Weight>) -> Result<()> {
        if kernel.shape().len() != 2 || kernel.shape()[1] != self.units {
            return Err(Error::invalid_shape("dense", format!("kernel shape {:?}", kernel.shape())));
        }
        if let Some(b) = &bias {
            if b.shape() != [self.units] {
                return Err(Error::invalid_shape("dense", format!("bias shape {:?}", b.shape())));
            }
        }
        self.use_bias = bias.is_some();
        self.kernel = Some(kernel);
        self.bias = bias;
        Ok(())
    }

    fn regularize(&mut self, reg: &Option<Regularizer>, draw: &super::WeightDraw) -> Result<()> {
        if let Some(r) = reg {
            self.losses.push(r.apply(&draw.rv)?);
        }
        Ok(())
    }
}

impl Layer for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.losses.clear();
        let x = input.into_tensor();
        require_rank("dense", &x, 2)?;
        if !self.is_built() {
            self.build(x.shape()[1], ctx);
        }
        let kernel = self.kernel.clone().expect("built");
        if kernel.shape()[0] != x.shape()[1] {
            return Err(Error::shape("dense", x.shape(), kernel.shape()));
        }
        let mut rng = ctx.rng(self.layer_index);
        let tape = ctx.tape().clone();

        let kernel_draw = kernel.draw(&tape, &mut rng)?;
        let pre = match (&kernel, self.estimator) {
            (Weight::Variational(vp), Estimator::Flipout) => {
                // x·μ + ((x ∘ s)·(σ ∘ ε)) ∘ r with ε shared across the batch
                let loc = tape.param(&vp.loc);
                let perturbation = kernel_draw.value.sub(&loc)?;
                let (batch, din) = (x.shape()[0], x.shape()[1]);
                let signs_in = tape.constant(Tensor::new(&[batch, din], rng::rademacher_vec(&mut rng, batch * din))?);
                let signs_out = tape.constant(Tensor::new(
                    &[batch, self.units],
                    rng::rademacher_vec(&mut rng, batch * self.units),
                )?);
                let shared = x.matmul(&loc)?;
                let flipped = x.mul(&signs_in)?.matmul(&perturbation)?.mul(&signs_out)?;
                shared.add(&flipped)?
            }
            _ => x.matmul(&kernel_draw.value)?,
        };
        let kernel_reg = self.kernel_regularizer.clone();
        self.regularize(&kernel_reg, &kernel_draw)?;

        let pre = match self.bias.clone() {
            Some(bias) => {
                let bias_draw = bias.draw(&tape, &mut rng)?;
                let bias_reg = self.bias_regularizer.clone();
                self.regularize(&bias_reg, &bias_draw)?;
                pre.add(&bias_draw.value)?
            }
            None => pre,
        };
        Ok(Value::Tensor(self.activation.apply(&pre)))
    }

    fn losses(&self) -> Vec<Var> {
        self.losses.clone()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        if let Some(k) = &mut self.kernel {
            k.visit("kernel", visitor);
        }
        if let Some(b) = &mut self.bias {
            b.visit("bias", visitor);
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}
