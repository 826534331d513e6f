//! Gaussian-process layers: exact, sparse (inducing points), and random
//! Fourier features. All share a zero mean and a squared-exponential kernel
//! by default, with independent GPs per output unit.

use std::fmt;
use std::rc::Rc;

use rand::RngCore;

use crate::distributions::{cholesky_with_jitter, gaussian_kl_zero_mean_prior, Distribution};
use crate::error::{Error, Result};
use crate::layers::{require_rank, Ctx, Initializer, Layer, ParamVisitor, Regularizer, Value, Weight};
use crate::rng;
use crate::tensor::{kernels, Parameter, Tape, Tensor, Var};

/// Floor added to predictive variances before taking square roots.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Squared-exponential kernel `a² exp(−‖x − x'‖² / (2ℓ²))` with trainable
/// log-amplitude and log-lengthscale.
#[derive(Clone, Debug)]
pub struct SquaredExponential {
    pub log_amplitude: Parameter,
    pub log_lengthscale: Parameter,
}

impl SquaredExponential {
    pub fn new(amplitude: f64, lengthscale: f64) -> Self {
        SquaredExponential {
            log_amplitude: Parameter::new(Tensor::scalar(amplitude.ln())),
            log_lengthscale: Parameter::new(Tensor::scalar(lengthscale.ln())),
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.value().item().exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.value().item().exp()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.log_amplitude.set_trainable(trainable);
        self.log_lengthscale.set_trainable(trainable);
    }

    /// Gram matrix `[n, p]` between `x: [n, d]` and `x2: [p, d]`.
    pub fn matrix(&self, x: &Var, x2: &Var) -> Result<Var> {
        require_rank("se_kernel", x, 2)?;
        require_rank("se_kernel", x2, 2)?;
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (p, d2) = (x2.shape()[0], x2.shape()[1]);
        if d != d2 {
            return Err(Error::shape("se_kernel", x.shape(), x2.shape()));
        }
        let tape = x.tape();
        let sq_dist = x
            .reshape(&[n, 1, d])?
            .sub(&x2.reshape(&[1, p, d])?)?
            .square()
            .sum_axis(2, false)?;
        let inv_len_sq = tape.param(&self.log_lengthscale).mul_scalar(-2.0).exp();
        let log_amp2 = tape.param(&self.log_amplitude).mul_scalar(2.0);
        Ok(sq_dist.mul(&inv_len_sq)?.mul_scalar(-0.5).add(&log_amp2)?.exp())
    }

    /// `k(x, x)` for each row of `x`, as `[n]`.
    pub fn diag(&self, x: &Var) -> Result<Var> {
        let tape = x.tape();
        let ones = tape.constant(Tensor::ones(&[x.shape()[0]]));
        ones.mul(&tape.param(&self.log_amplitude).mul_scalar(2.0).exp())
    }

    /// Gram matrix of plain tensors.
    pub fn gram(&self, x: &Tensor, x2: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.matrix(&tape.constant(x.clone()), &tape.constant(x2.clone()))?.value().clone())
    }

    fn visit(&mut self, visitor: &mut ParamVisitor<'_>) {
        visitor("kernel/log_amplitude", &mut self.log_amplitude);
        visitor("kernel/log_lengthscale", &mut self.log_lengthscale);
    }
}

/// `k(x, x2)` with unit amplitude and lengthscale.
pub fn se_kernel(x: &Tensor, x2: &Tensor) -> Result<Tensor> {
    SquaredExponential::new(1.0, 1.0).gram(x, x2)
}

pub type MeanFn = dyn Fn(&Var) -> Result<Var>;

fn lower_mask(m: usize) -> Tensor {
    let data = (0..m * m).map(|k| if k % m <= k / m { 1.0 } else { 0.0 }).collect();
    Tensor::from_parts(vec![m, m], data)
}

/// Exact GP regression layer.
///
/// Without conditioning data, `call(x)` returns the prior over `f(x)`. With
/// it, the posterior predictive under Gaussian noise of scale `noise_scale`.
#[derive(Clone)]
pub struct GaussianProcess {
    units: usize,
    pub kernel: SquaredExponential,
    mean_fn: Option<Rc<MeanFn>>,
    conditional_inputs: Option<Tensor>,
    conditional_outputs: Option<Tensor>,
    noise_scale: Parameter,
    layer_index: u64,
}

impl fmt::Debug for GaussianProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianProcess")
            .field("units", &self.units)
            .field("kernel", &self.kernel)
            .finish()
    }
}

pub const DEFAULT_NOISE_SCALE: f64 = 1e-3;

pub fn gaussian_process(units: usize) -> GaussianProcess {
    GaussianProcess {
        units,
        kernel: SquaredExponential::new(1.0, 1.0),
        mean_fn: None,
        conditional_inputs: None,
        conditional_outputs: None,
        noise_scale: Parameter::frozen(Tensor::scalar(DEFAULT_NOISE_SCALE)),
        layer_index: 0,
    }
}

impl GaussianProcess {
    pub fn kernel(mut self, kernel: SquaredExponential) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn mean_fn(mut self, f: Rc<MeanFn>) -> Self {
        self.mean_fn = Some(f);
        self
    }

    /// Conditions on `inputs: [n, d]` and `outputs: [n, units]`.
    pub fn conditioned_on(mut self, inputs: Tensor, outputs: Tensor) -> Result<Self> {
        if inputs.rank() != 2 || outputs.shape() != [inputs.shape()[0], self.units] {
            return Err(Error::invalid_shape(
                "gaussian_process",
                format!(
                    "conditioning inputs {:?} and outputs {:?} must be [n, d] and [n, {}]",
                    inputs.shape(),
                    outputs.shape(),
                    self.units
                ),
            ));
        }
        self.conditional_inputs = Some(inputs);
        self.conditional_outputs = Some(outputs);
        Ok(self)
    }

    pub fn noise_scale(mut self, scale: f64) -> Self {
        let trainable = self.noise_scale.is_trainable();
        self.noise_scale = Parameter::new(Tensor::scalar(scale));
        self.noise_scale.set_trainable(trainable);
        self
    }

    pub fn train_noise(mut self, trainable: bool) -> Self {
        self.noise_scale.set_trainable(trainable);
        self
    }

    pub fn freeze_kernel(mut self) -> Self {
        self.kernel.set_trainable(false);
        self
    }

    fn prior_mean(&self, x: &Var) -> Result<Var> {
        match &self.mean_fn {
            Some(f) => {
                let m = f(x)?;
                let expected = [x.shape()[0], self.units];
                if m.shape() != expected {
                    return Err(Error::shape("gaussian_process mean_fn", m.shape(), &expected));
                }
                Ok(m)
            }
            None => Ok(x.tape().constant(Tensor::zeros(&[x.shape()[0], self.units]))),
        }
    }

    /// Predictive mean `[n, units]` and covariance `[n, n]` (shared by units).
    pub fn predict(&self, x: &Var) -> Result<(Var, Var)> {
        require_rank("gaussian_process", x, 2)?;
        let tape = x.tape();
        let mean = self.prior_mean(x)?;
        let kxx = self.kernel.matrix(x, x)?;
        let (Some(xc), Some(yc)) = (&self.conditional_inputs, &self.conditional_outputs) else {
            return Ok((mean, kxx));
        };
        let xc = tape.constant(xc.clone());
        let resid = tape.constant(yc.clone()).sub(&self.prior_mean(&xc)?)?;
        let n = xc.shape()[0];
        let noise = tape
            .param(&self.noise_scale)
            .square()
            .mul(&tape.constant(Tensor::eye(n)))?;
        let knn = self.kernel.matrix(&xc, &xc)?.add(&noise)?;
        let (l, _) = cholesky_with_jitter(&knn)?;
        let kxn = self.kernel.matrix(x, &xc)?;
        let alpha = l.solve_triangular(&l.solve_triangular(&resid, false)?, true)?;
        let v = l.solve_triangular(&kxn.t()?, false)?;
        let cov = kxx.sub(&v.t()?.matmul(&v)?)?;
        Ok((mean.add(&kxn.matmul(&alpha)?)?, cov))
    }
}

impl Layer for GaussianProcess {
    fn name(&self) -> &str {
        "gaussian_process"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let x = input.into_tensor();
        let (mean, cov) = self.predict(&x)?;
        let dist = Distribution::multivariate_normal(mean, cov)?;
        let mut r = ctx.rng(self.layer_index);
        Ok(Value::Random(dist.sample_with(&mut r)?))
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.kernel.visit(visitor);
        visitor("noise_scale", &mut self.noise_scale);
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}

/// Variational sparse GP with `num_inducing` inducing inputs.
///
/// Whitened: `u = L v` with `L = chol(K_zz)` and `q(v) = N(m_v, L_v L_vᵀ)`
/// per unit, so `p(v) = N(0, I)`. The layer returns a reparameterized sample
/// from the predictive marginals at each input and records
/// `KL(q(v) ‖ N(0, I)) = KL(q(u) ‖ p(u))` summed over units.
#[derive(Clone, Debug)]
pub struct SparseGaussianProcess {
    units: usize,
    num_inducing: usize,
    pub kernel: SquaredExponential,
    inducing_inputs: Option<Parameter>,
    variational_loc: Option<Parameter>,
    variational_scale_tril: Option<Parameter>,
    train_inducing_inputs: bool,
    train_variational: bool,
    losses: Vec<Var>,
    layer_index: u64,
}

pub fn sparse_gaussian_process(units: usize, num_inducing: usize) -> Result<SparseGaussianProcess> {
    if units == 0 || num_inducing == 0 {
        return Err(Error::InvalidArgument(format!(
            "sparse_gaussian_process needs units ≥ 1 and num_inducing ≥ 1, got {units} and {num_inducing}"
        )));
    }
    Ok(SparseGaussianProcess {
        units,
        num_inducing,
        kernel: SquaredExponential::new(1.0, 1.0),
        inducing_inputs: None,
        variational_loc: None,
        variational_scale_tril: None,
        train_inducing_inputs: true,
        train_variational: true,
        losses: Vec::new(),
        layer_index: 0,
    })
}

impl SparseGaussianProcess {
    pub fn kernel(mut self, kernel: SquaredExponential) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn freeze_kernel(mut self) -> Self {
        self.kernel.set_trainable(false);
        self
    }

    pub fn freeze_inducing_inputs(mut self) -> Self {
        self.train_inducing_inputs = false;
        if let Some(z) = &mut self.inducing_inputs {
            z.set_trainable(false);
        }
        self
    }

    pub fn freeze_variational(mut self) -> Self {
        self.train_variational = false;
        for p in [&mut self.variational_loc, &mut self.variational_scale_tril].into_iter().flatten() {
            p.set_trainable(false);
        }
        self
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn is_built(&self) -> bool {
        self.inducing_inputs.is_some()
    }

    pub fn inducing_inputs(&self) -> Option<&Tensor> {
        self.inducing_inputs.as_ref().map(|p| p.value())
    }

    /// Places the inducing inputs uniformly over the bounding box of `x` and
    /// sets `q(u)` to the prior.
    pub fn build(&mut self, x: &Tensor, ctx: &Ctx) -> Result<()> {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let mut r = ctx.init_rng(self.layer_index);
        let m = self.num_inducing;
        let mut z = vec![0.0; m * d];
        for j in 0..d {
            let col = (0..n).map(|i| x.data()[i * d + j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            let draws = rng::uniform_vec(&mut r, m, lo, hi.max(lo));
            for (i, v) in draws.into_iter().enumerate() {
                z[i * d + j] = v;
            }
        }
        self.set_inducing_inputs(Tensor::from_parts(vec![m, d], z))?;
        self.set_prior_matched_state()
    }

    pub fn set_inducing_inputs(&mut self, z: Tensor) -> Result<()> {
        if z.rank() != 2 || z.shape()[0] != self.num_inducing {
            return Err(Error::invalid_shape(
                "sparse_gaussian_process",
                format!("inducing inputs must be [{}, d], got {:?}", self.num_inducing, z.shape()),
            ));
        }
        let mut p = Parameter::new(z);
        p.set_trainable(self.train_inducing_inputs);
        self.inducing_inputs = Some(p);
        Ok(())
    }

    fn inducing_tensor(&self) -> Result<&Tensor> {
        self.inducing_inputs()
            .ok_or_else(|| Error::InvalidArgument("sparse GP is not built".into()))
    }

    fn kzz_factor(&self) -> Result<Tensor> {
        let z = self.inducing_tensor()?;
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (l, _) = cholesky_with_jitter(&self.kernel.matrix(&zv, &zv)?)?;
        Ok(l.value().clone())
    }

    fn set_variational(&mut self, loc: Tensor, scale_tril: Tensor) {
        let mut loc = Parameter::new(loc);
        let mut tril = Parameter::new(scale_tril);
        loc.set_trainable(self.train_variational);
        tril.set_trainable(self.train_variational);
        self.variational_loc = Some(loc);
        self.variational_scale_tril = Some(tril);
    }

    /// `m_v = 0`, `L_v = I` for every unit, so `q(u)` equals the prior.
    pub fn set_prior_matched_state(&mut self) -> Result<()> {
        let m = self.num_inducing;
        let eye = Tensor::eye(m);
        let stacked = (0..self.units).flat_map(|_| eye.data().iter().copied()).collect();
        self.set_variational(
            Tensor::zeros(&[m, self.units]),
            Tensor::from_parts(vec![self.units, m, m], stacked),
        );
        Ok(())
    }

    /// Sets `q(u)` to its closed-form optimum under a Gaussian likelihood
    /// with noise variance `noise_variance`, for fixed kernel and inducing
    /// inputs. With `Σ = (K_zz + σ⁻² K_zx K_xz)⁻¹` the optimum is
    /// `m_u = σ⁻² K_zz Σ K_zx y`, `S = K_zz Σ K_zz`; whitened,
    /// `m_v = σ⁻² Lᵀ Σ K_zx y` and `L_v L_vᵀ = Lᵀ Σ L`.
    pub fn set_optimal_state(&mut self, x: &Tensor, y: &Tensor, noise_variance: f64) -> Result<()> {
        let m = self.num_inducing;
        let z = self.inducing_tensor()?.clone();
        if y.shape() != [x.shape()[0], self.units] {
            return Err(Error::shape("set_optimal_state", y.shape(), &[x.shape()[0], self.units]));
        }
        let kzz = self.kernel.gram(&z, &z)?;
        let kzx = self.kernel.gram(&z, x)?;
        let l = self.kzz_factor()?;
        let lt = l.t()?;
        let inv_noise = 1.0 / noise_variance;
        let precision = kzz.zip_map(&kzx.matmul(&kzx.t()?)?, |a, b| a + inv_noise * b)?;
        let lp = kernels::cholesky(precision.data(), m).ok_or(Error::Cholesky { jitter: 0.0 })?;
        let spd_solve = |b: &Tensor| -> Tensor {
            let cols = b.shape()[1];
            let half = kernels::solve_lower(&lp, b.data(), m, cols, false);
            Tensor::from_parts(vec![m, cols], kernels::solve_lower(&lp, &half, m, cols, true))
        };
        let loc = lt.matmul(&spd_solve(&kzx.matmul(y)?))?.map(|v| v * inv_noise);
        let s = lt.matmul(&spd_solve(&l))?;
        let s = s.zip_map(&s.t()?, |a, b| 0.5 * (a + b))?;
        let ls = kernels::cholesky(s.data(), m).ok_or(Error::Cholesky { jitter: 0.0 })?;
        let stacked = (0..self.units).flat_map(|_| ls.iter().copied()).collect();
        self.set_variational(loc, Tensor::from_parts(vec![self.units, m, m], stacked));
        Ok(())
    }

    fn state(&self, tape: &Tape) -> Result<(Var, Var, Var)> {
        let (Some(z), Some(loc), Some(tril)) =
            (&self.inducing_inputs, &self.variational_loc, &self.variational_scale_tril)
        else {
            return Err(Error::InvalidArgument("sparse GP is not built".into()));
        };
        Ok((tape.param(z), tape.param(loc), tape.param(tril)))
    }

    fn unit_tril(&self, tril: &Var, unit: usize) -> Result<Var> {
        let m = self.num_inducing;
        tril.narrow(0, unit, 1)?
            .reshape(&[m, m])?
            .mul(&tril.tape().constant(lower_mask(m)))
    }

    /// Predictive marginal means and variances, each `[n, units]`.
    pub fn predict(&self, x: &Var) -> Result<(Var, Var)> {
        require_rank("sparse_gaussian_process", x, 2)?;
        let tape = x.tape();
        let (z, loc, tril) = self.state(tape)?;
        if z.shape()[1] != x.shape()[1] {
            return Err(Error::shape("sparse_gaussian_process", x.shape(), z.shape()));
        }
        let (l, _) = cholesky_with_jitter(&self.kernel.matrix(&z, &z)?)?;
        let kzx = self.kernel.matrix(&z, x)?;
        // A = L⁻¹ K_zx
        let a = l.solve_triangular(&kzx, false)?;
        let mean = a.t()?.matmul(&loc)?;
        let reduced = self.kernel.diag(x)?.sub(&a.square().sum_axis(0, false)?)?;
        let mut vars = Vec::with_capacity(self.units);
        for u in 0..self.units {
            let spread = self.unit_tril(&tril, u)?.t()?.matmul(&a)?.square().sum_axis(0, true)?;
            vars.push(reduced.reshape(&[1, x.shape()[0]])?.add(&spread)?);
        }
        let var = Var::concat(&vars, 0)?.t()?;
        Ok((mean, var))
    }

    /// `KL(q(v) ‖ N(0, I))` summed over units.
    pub fn kl(&self, tape: &Tape) -> Result<Var> {
        let (_, loc, tril) = self.state(tape)?;
        let l = tape.constant(Tensor::eye(self.num_inducing));
        let mut total: Option<Var> = None;
        for u in 0..self.units {
            let mean = loc.narrow(1, u, 1)?;
            let kl = gaussian_kl_zero_mean_prior(&mean, &self.unit_tril(&tril, u)?, &l)?;
            total = Some(match total {
                None => kl,
                Some(t) => t.add(&kl)?,
            });
        }
        Ok(total.expect("units ≥ 1"))
    }
}

impl Layer for SparseGaussianProcess {
    fn name(&self) -> &str {
        "sparse_gaussian_process"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.losses.clear();
        let x = input.into_tensor();
        require_rank("sparse_gaussian_process", &x, 2)?;
        if !self.is_built() {
            self.build(x.value(), ctx)?;
        }
        let (mean, var) = self.predict(&x)?;
        let scale = var.relu().add_scalar(VARIANCE_FLOOR).sqrt()?;
        let mut r = ctx.rng(self.layer_index);
        let rv = Distribution::normal(mean, scale)?.sample_with(&mut r)?;
        self.losses.push(self.kl(x.tape())?);
        Ok(Value::Random(rv))
    }

    fn losses(&self) -> Vec<Var> {
        self.losses.clone()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.kernel.visit(visitor);
        if let Some(z) = &mut self.inducing_inputs {
            visitor("inducing_inputs", z);
        }
        if let Some(p) = &mut self.variational_loc {
            visitor("variational_loc", p);
        }
        if let Some(p) = &mut self.variational_scale_tril {
            visitor("variational_scale_tril", p);
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}

/// Random Fourier feature approximation to a GP with a variational linear
/// readout: `φ(x) = sqrt(2a²/D) cos(xΩ/ℓ + β)`, output `φ(x) W`.
#[derive(Clone, Debug)]
pub struct RandomFourierFeatures {
    units: usize,
    num_features: usize,
    pub kernel: SquaredExponential,
    projection: Option<Parameter>,
    phase: Option<Parameter>,
    weights: Option<Weight>,
    weight_initializer: Initializer,
    regularizer: Option<Regularizer>,
    losses: Vec<Var>,
    layer_index: u64,
}

pub fn random_fourier_features(units: usize, num_features: usize) -> Result<RandomFourierFeatures> {
    if units == 0 || num_features == 0 {
        return Err(Error::InvalidArgument(format!(
            "random_fourier_features needs units ≥ 1 and num_features ≥ 1, got {units} and {num_features}"
        )));
    }
    Ok(RandomFourierFeatures {
        units,
        num_features,
        kernel: SquaredExponential::new(1.0, 1.0),
        projection: None,
        phase: None,
        weights: None,
        weight_initializer: Initializer::trainable_normal(),
        regularizer: Some(Regularizer::standard_normal_kl()),
        losses: Vec::new(),
        layer_index: 0,
    })
}

impl RandomFourierFeatures {
    pub fn kernel(mut self, kernel: SquaredExponential) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn weight_initializer(mut self, init: Initializer) -> Self {
        self.weight_initializer = init;
        self
    }

    pub fn regularizer(mut self, reg: Option<Regularizer>) -> Self {
        self.regularizer = reg;
        self
    }

    pub fn weights(&self) -> Option<&Weight> {
        self.weights.as_ref()
    }

    pub fn set_weights(&mut self, w: Weight) -> Result<()> {
        let expected = [self.num_features, self.units];
        if w.shape() != expected {
            return Err(Error::shape("random_fourier_features", w.shape(), &expected));
        }
        self.weights = Some(w);
        Ok(())
    }

    /// Draws Ω ~ N(0, I) and β ~ U[0, 2π) for `input_dim` inputs and
    /// initializes the readout.
    pub fn build(&mut self, input_dim: usize, ctx: &Ctx) {
        let mut r = ctx.init_rng(self.layer_index);
        let d = self.num_features;
        let omega = rng::standard_normal_vec(&mut r, input_dim * d);
        let beta = rng::uniform_vec(&mut r, d, 0.0, 2.0 * std::f64::consts::PI);
        self.projection = Some(Parameter::frozen(Tensor::from_parts(vec![input_dim, d], omega)));
        self.phase = Some(Parameter::frozen(Tensor::from_parts(vec![d], beta)));
        let seed = r.next_u64();
        if self.weights.is_none() {
            self.weights = Some(Weight::from_initial(
                self.weight_initializer.initialize(&[d, self.units], seed),
            ));
        }
    }

    /// Feature map `[n, D]`.
    pub fn features(&self, x: &Var) -> Result<Var> {
        let (Some(omega), Some(beta)) = (&self.projection, &self.phase) else {
            return Err(Error::InvalidArgument("random_fourier_features is not built".into()));
        };
        let tape = x.tape();
        let inv_len = tape.param(&self.kernel.log_lengthscale).neg().exp();
        let amp = tape.param(&self.kernel.log_amplitude).exp();
        let arg = x.matmul(&tape.param(omega))?.mul(&inv_len)?.add(&tape.param(beta))?;
        Ok(arg.cos().mul(&amp)?.mul_scalar((2.0 / self.num_features as f64).sqrt()))
    }
}

impl Layer for RandomFourierFeatures {
    fn name(&self) -> &str {
        "random_fourier_features"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        self.losses.clear();
        let x = input.into_tensor();
        require_rank("random_fourier_features", &x, 2)?;
        if self.projection.is_none() {
            self.build(x.shape()[1], ctx);
        }
        let expected = self.projection.as_ref().unwrap().shape()[0];
        if x.shape()[1] != expected {
            return Err(Error::shape("random_fourier_features", x.shape(), &[x.shape()[0], expected]));
        }
        let phi = self.features(&x)?;
        let mut r = ctx.rng(self.layer_index);
        let w = self.weights.as_ref().unwrap().draw(x.tape(), &mut r)?;
        if let Some(reg) = &self.regularizer {
            self.losses.push(reg.apply(&w.rv)?);
        }
        Ok(Value::Tensor(phi.matmul(&w.value)?))
    }

    fn losses(&self) -> Vec<Var> {
        self.losses.clone()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        self.kernel.visit(visitor);
        if let Some(p) = &mut self.projection {
            visitor("projection", p);
        }
        if let Some(p) = &mut self.phase {
            visitor("phase", p);
        }
        if let Some(w) = &mut self.weights {
            w.visit("weights", visitor);
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layer_index = index;
        index + 1
    }
}
