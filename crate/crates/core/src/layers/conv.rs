use super::{require_rank, Activation, Ctx, Initializer, Layer, ParamVisitor, Regularizer, Value, Weight};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Var};

/// 2-D convolution over NHWC inputs with an `[kh, kw, c_in, filters]` kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    name: String,
    filters: usize,
    kernel_size: (usize, usize),
    stride: usize,
    padding: Padding,
    activation: Activation,
    use_bias: bool,
    kernel_initializer: Initializer,
    bias_initializer: Initializer,
    kernel_regularizer: Option<Regularizer>,
    bias_regularizer: Option<Regularizer>,
    kernel: Option<Weight>,
    bias: Option<Weight>,
    losses: Vec<Var>,
    layer_index: u64,
}

pub fn conv2d(filters: usize, kernel_size: (usize, usize), stride: usize, padding: Padding) -> Conv2d {
    Conv2d {
        name: "conv2d".into(),
        filters,
        kernel_size,
        stride,
        padding,
        activation: Activation::Linear,
        use_bias: true,
        kernel_initializer: Initializer::GlorotUniform,
        bias_initializer: Initializer::Zeros,
        kernel_regularizer: None,
        bias_regularizer: None,
        kernel: None,
        bias: None,
        losses: Vec::new(),
        layer_index: 0,
    }
}

/// Convolution with normal posteriors over kernel and bias.
pub fn variational_conv2d(filters: usize, kernel_size: (usize, usize), stride: usize, padding: Padding) -> Conv2d {
    Conv2d {
        name: "conv2d_reparameterization".into(),
        kernel_initializer: Initializer::trainable_normal(),
        bias_initializer: Initializer::trainable_normal_zero_loc(),
        kernel_regularizer: Some(Regularizer::standard_normal_kl()),
        bias_regularizer: Some(Regularizer::standard_normal_kl()),
        ..conv2d(filters, kernel_size, stride, padding)
    }
}

impl Conv2d {
    pub fn activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn kernel_initializer(mut self, init: Initializer) -> Self {
        self.kernel_initializer = init;
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

    pub fn build(&mut self, in_channels: usize, ctx: &Ctx) {
        use rand::RngCore;
        let mut rng = ctx.init_rng(self.layer_index);
        let (kh, kw) = self.kernel_size;
        self.kernel = Some(Weight::from_initial(
            self.kernel_initializer
                .initialize(&[kh, kw, in_channels, self.filters], rng.next_u64()),
        ));
        let seed = rng.next_u64();
        self.bias = self
            .use_bias
            .then(|| Weight::from_initial(self.bias_initializer.initialize(&[self.filters], seed)));
    }

    pub fn set_weights(&mut self, kernel: Weight, bias: Option<Weight>) -> Result<()> {
        let (kh, kw) = self.kernel_size;
        let ks = kernel.shape();
        if ks.len() != 4 || ks[0] != kh || ks[1] != kw || ks[3] != self.filters {
            return Err(Error::invalid_shape("conv2d", format!("kernel shape {ks:?}")));
        }
        self.use_bias = bias.is_some();
        self.kernel = Some(kernel);
        self.bias = bias;
        Ok(())
    }

    pub fn kernel(&self) -> Option<&Weight> {
        self.kernel.as_ref()
    }

    pub fn kernel_mut(&mut self) -> Option<&mut Weight> {
        self.kernel.as_mut()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Weight> {
        self.bias.as_mut()
    }
}

impl Layer for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.losses.clear();
        let x = input.into_tensor();
        require_rank("conv2d", &x, 4)?;
        if self.kernel.is_none() {
            self.build(x.shape()[3], ctx);
        }
        let mut rng = ctx.rng(self.layer_index);
        let tape = ctx.tape().clone();
        let kernel = self.kernel.as_ref().expect("built").draw(&tape, &mut rng)?;
        let mut out = x.conv2d(&kernel.value, self.stride, self.padding)?;
        if let Some(r) = &self.kernel_regularizer {
            self.losses.push(r.apply(&kernel.rv)?);
        }
        if let Some(bias) = &self.bias {
            let b = bias.draw(&tape, &mut rng)?;
            out = out.add(&b.value)?;
            if let Some(r) = &self.bias_regularizer {
                self.losses.push(r.apply(&b.rv)?);
            }
        }
        Ok(Value::Tensor(self.activation.apply(&out)))
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
