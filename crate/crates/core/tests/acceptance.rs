//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs with `cargo test --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use bayes_layers::distributions::{discretize, discretized_logistic_mixture_log_prob, kl_divergence, Distribution};
use bayes_layers::gp::{gaussian_process, random_fourier_features, sparse_gaussian_process, SquaredExponential};
use bayes_layers::layers::{
    conv2d, dense, flipout_dense, lstm, named_parameters, sequential, softplus_inverse, variational_conv2d,
    variational_dense, variational_lstm_cell, Activation, Estimator, VariationalParameter, Weight,
};
use bayes_layers::output::{categorical_output, gaussian_likelihood, mixture_logistic_output, normal_output};
use bayes_layers::parallel::mc_mean;
use bayes_layers::reversible::{coupling_layer, made_conditioner, reverse_wrapper};
use bayes_layers::rng::{rng_from, standard_normal_vec, uniform_vec};
use bayes_layers::tensor::Padding;
use bayes_layers::train::checkpoint;
use bayes_layers::train::demos::{bnn_model, deep_gp_model, flow_log_prob, flow_model, toy_regression};
use bayes_layers::train::{fit, predictive_moments, Dataset, ElboConfig, KlScale};
use bayes_layers::{Ctx, Layer, Parameter, Result, Tape, Tensor, Var};

use common::*;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient suite", c01_gradients),
        ("KL oracle", c02_kl),
        ("drop-in equivalence", c03_drop_in),
        ("sparse-GP collapse", c04_sparse_collapse),
        ("RFF convergence", c05_rff),
        ("flow suite", c06_flows),
        ("discretized likelihoods", c07_discretized),
        ("conjugate recovery", c08_conjugate),
        ("epistemic uncertainty", c09_epistemic),
        ("flipout", c10_flipout),
        ("determinism and persistence", c11_determinism),
        ("deep GP end-to-end", c12_deep_gp),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} [{name}]: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} [{name}]: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

/// `Σ out ∘ c` with a fixed random `c`, plus `log p(target)` for random
/// outputs, plus every recorded regularizer.
fn probe_loss(input: Tensor, target: Option<Tensor>, seed: u64) -> impl Fn(&mut dyn Layer, &mut Ctx) -> Result<Var> {
    move |layer, ctx| {
        let out = layer.call(ctx.input(&input), ctx)?;
        let t = out.tensor();
        let c = ctx.constant(normal(t.shape(), 1.0, seed ^ 0xC0EF));
        let mut loss = t.mul(&c)?.sum();
        if let (Some(rv), Some(y)) = (out.as_random(), &target) {
            loss = loss.add(&rv.log_prob(&ctx.constant(y.clone()))?.sum())?;
        }
        for l in layer.losses() {
            loss = loss.add(&l.sum())?;
        }
        Ok(loss)
    }
}

type Case = (Box<dyn Layer>, Tensor, Option<Tensor>);

fn gradient_cases(seed: u64) -> Vec<(&'static str, Case)> {
    let x2 = uniform(&[5, 3], -1.0, 1.0, seed);
    let img = uniform(&[2, 4, 4, 2], -1.0, 1.0, seed);
    let seq = uniform(&[2, 3, 2], -1.0, 1.0, seed);
    let gp_x = uniform(&[4, 1], -1.0, 1.0, seed + 1);
    let gp_y = normal(&[4, 1], 1.0, seed + 2);
    let levels = Tensor::new(
        &[5, 2],
        uniform_vec(&mut rng_from(&[seed, 9]), 10, 0.0, 255.99).iter().map(|v| v.floor()).collect(),
    )
    .unwrap();
    let classes = Tensor::new(&[5], (0..5).map(|i| ((i as u64 + seed) % 3) as f64).collect()).unwrap();
    let made = || made_conditioner(3, &[6]).with_seed(seed);
    vec![
        ("dense", (Box::new(dense(2).activation(Activation::Tanh)) as Box<dyn Layer>, x2.clone(), None)),
        ("variational_dense", (Box::new(variational_dense(2).activation(Activation::Tanh)), x2.clone(), None)),
        ("flipout_dense", (Box::new(flipout_dense(2).activation(Activation::Sigmoid)), x2.clone(), None)),
        ("conv2d", (Box::new(conv2d(2, (2, 2), 1, Padding::Valid).activation(Activation::Tanh)), img.clone(), None)),
        ("variational_conv2d", (Box::new(variational_conv2d(2, (3, 3), 2, Padding::Same)), img, None)),
        ("lstm", (Box::new(lstm(3)), seq.clone(), None)),
        ("variational_lstm_cell", (Box::new(variational_lstm_cell(3)), seq, None)),
        (
            "gaussian_process",
            (
                Box::new(
                    gaussian_process(1)
                        .kernel(SquaredExponential::new(0.9, 0.6))
                        .conditioned_on(gp_x, gp_y)
                        .unwrap()
                        .noise_scale(0.3)
                        .train_noise(true),
                ),
                uniform(&[3, 1], -1.0, 1.0, seed + 3),
                Some(normal(&[1, 3], 1.0, seed + 4)),
            ),
        ),
        (
            "sparse_gaussian_process",
            (
                Box::new(sparse_gaussian_process(2, 4).unwrap()),
                uniform(&[6, 2], -1.0, 1.0, seed),
                None,
            ),
        ),
        (
            "random_fourier_features",
            (Box::new(random_fourier_features(2, 8).unwrap()), x2.clone(), None),
        ),
        ("normal_output", (Box::new(normal_output(Some(2))), x2.clone(), Some(normal(&[5, 2], 1.0, seed)))),
        ("categorical_output", (Box::new(categorical_output(Some(3))), x2.clone(), Some(classes))),
        (
            "mixture_logistic_output",
            (Box::new(mixture_logistic_output(Some(2), 2).unwrap()), x2.clone(), Some(levels)),
        ),
        (
            "gaussian_likelihood",
            (Box::new(gaussian_likelihood(0.7)), x2.clone(), Some(normal(&[5, 3], 1.0, seed))),
        ),
        ("made", (Box::new(made()), x2.clone(), None)),
        (
            "coupling",
            (Box::new(coupling_layer(vec![1.0, 0.0, 1.0], Box::new(made())).unwrap()), x2.clone(), None),
        ),
        (
            "reverse(coupling)",
            (
                Box::new(reverse_wrapper(Box::new(coupling_layer(vec![0.0, 1.0, 0.0], Box::new(made())).unwrap()))),
                x2.clone(),
                None,
            ),
        ),
        (
            "sequential",
            (
                Box::new(
                    sequential(vec![
                        Box::new(variational_dense(4).activation(Activation::Tanh)),
                        Box::new(dense(1)),
                        Box::new(gaussian_likelihood(0.5)),
                    ])
                    .unwrap(),
                ),
                x2,
                Some(normal(&[5, 1], 1.0, seed)),
            ),
        ),
    ]
}

fn c01_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let mut types = 0;
    for seed in 0..20u64 {
        let cases = gradient_cases(seed);
        types = cases.len();
        for (name, (mut layer, x, y)) in cases {
            layer.set_layer_index(0);
            let loss = probe_loss(x, y, seed);
            // build, then move zero-initialized or prior-matched state to a generic point
            loss(layer.as_mut(), &mut Ctx::new(seed)).map_err(|e| format!("{name}: {e}"))?;
            jitter_parameters(layer.as_mut(), 0.2, seed);
            let r = check_gradients(layer.as_mut(), &loss, seed, 1e-5);
            checked += r.checked;
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, format!("{name} seed {seed}: {}", r.worst));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 < 1e-4, format!("max relative error {:.2e} at {}", worst.0, worst.1))?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{types} layer types x 20 seeds, {checked} partials, max rel err {:.2e}",
        worst.0
    ))
}

// ---------------------------------------------------------------- 2

fn c02_kl() -> Outcome {
    let mut r = rng_from(&[2024]);
    let mut worst_z: f64 = 0.0;
    for case in 0..50u64 {
        let p = uniform_vec(&mut r, 4, 0.0, 1.0);
        let (mq, sq) = (4.0 * p[0] - 2.0, 0.3 + 1.7 * p[1]);
        let (mp, sp) = (4.0 * p[2] - 2.0, 0.3 + 1.7 * p[3]);
        let tape = Tape::new();
        let q = Distribution::normal(tape.constant(Tensor::scalar(mq)), tape.constant(Tensor::scalar(sq))).unwrap();
        let pd = Distribution::normal(tape.constant(Tensor::scalar(mp)), tape.constant(Tensor::scalar(sp))).unwrap();
        let analytic = kl_divergence(&q, &pd).unwrap().item();
        let log_n = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln();
        let (est, se) = mc_mean(1_000_000, |i| {
            let z = standard_normal_vec(&mut rng_from(&[case, i as u64]), 1)[0];
            let x = mq + sq * z;
            log_n(x, mq, sq) - log_n(x, mp, sp)
        });
        let z = (est - analytic).abs() / se;
        worst_z = worst_z.max(z);
        ensure(z < 3.0, format!("case {case}: analytic {analytic} vs MC {est} ± {se}"))?;
        let self_kl = kl_divergence(&q, &q).unwrap().item();
        ensure(self_kl == 0.0, format!("KL(d‖d) = {self_kl}"))?;
    }
    Ok(format!("50 parameterizations, worst |z| {worst_z:.2}, KL(d‖d) = 0"))
}

// ---------------------------------------------------------------- 3

fn collapsed(t: &Tensor) -> Weight {
    Weight::Variational(VariationalParameter::new(t.clone(), Tensor::full(t.shape(), -1e6)))
}

fn point(t: &Tensor) -> Weight {
    Weight::Point(Parameter::new(t.clone()))
}

fn run_value(layer: &mut dyn Layer, x: &Tensor, seed: u64) -> Vec<u64> {
    let mut ctx = Ctx::new(seed);
    let out = layer.call(ctx.input(x), &mut ctx).unwrap();
    out.tensor().value().data().iter().map(|v| v.to_bits()).collect()
}

fn c03_drop_in() -> Outcome {
    let mut checked = Vec::new();
    for seed in 0..5u64 {
        let x = uniform(&[6, 4], -2.0, 2.0, seed);
        let w = normal(&[4, 3], 1.0, seed);
        let b = normal(&[3], 1.0, seed + 1);
        let mut det = dense(3).activation(Activation::Tanh);
        det.set_weights(point(&w), Some(point(&b))).unwrap();
        let expected = run_value(&mut det, &x, seed);
        for (name, mut layer) in [("variational_dense", variational_dense(3)), ("flipout_dense", flipout_dense(3))] {
            layer = layer.activation(Activation::Tanh);
            layer.set_weights(collapsed(&w), Some(collapsed(&b))).unwrap();
            ensure(run_value(&mut layer, &x, seed) == expected, format!("{name} differs"))?;
            checked.push(name);
        }

        let img = uniform(&[2, 5, 5, 2], -1.0, 1.0, seed);
        let k = normal(&[3, 3, 2, 4], 1.0, seed);
        let kb = normal(&[4], 1.0, seed);
        let mut det = conv2d(4, (3, 3), 1, Padding::Same);
        det.set_weights(point(&k), Some(point(&kb))).unwrap();
        let mut var = variational_conv2d(4, (3, 3), 1, Padding::Same);
        var.set_weights(collapsed(&k), Some(collapsed(&kb))).unwrap();
        ensure(run_value(&mut var, &img, seed) == run_value(&mut det, &img, seed), "variational_conv2d differs")?;
        checked.push("variational_conv2d");

        let seq = uniform(&[2, 4, 3], -1.0, 1.0, seed);
        let (wi, wr, wb) = (normal(&[3, 8], 0.5, seed), normal(&[2, 8], 0.5, seed + 1), normal(&[8], 0.5, seed + 2));
        let mut det = lstm(2);
        det.set_weights(point(&wi), point(&wr), point(&wb)).unwrap();
        let mut var = variational_lstm_cell(2);
        var.set_weights(collapsed(&wi), collapsed(&wr), collapsed(&wb)).unwrap();
        ensure(run_value(&mut var, &seq, seed) == run_value(&mut det, &seq, seed), "variational_lstm_cell differs")?;
        checked.push("variational_lstm_cell");

        let rx = uniform(&[5, 2], -1.0, 1.0, seed);
        let rw = normal(&[16, 2], 1.0, seed);
        let mut det = random_fourier_features(2, 16).unwrap();
        let mut var = random_fourier_features(2, 16).unwrap();
        let mut ctx = Ctx::new(seed);
        det.build(2, &ctx);
        var.build(2, &ctx);
        det.set_weights(point(&rw)).unwrap();
        var.set_weights(collapsed(&rw)).unwrap();
        let a = det.call(ctx.input(&rx), &mut ctx).unwrap().tensor().value().clone();
        let b = var.call(ctx.input(&rx), &mut ctx).unwrap().tensor().value().clone();
        ensure(a.data() == b.data(), "random_fourier_features differs")?;
        checked.push("random_fourier_features");
    }
    checked.sort();
    checked.dedup();
    Ok(format!("bit-exact for {} over 5 seeds", checked.join(", ")))
}

// ---------------------------------------------------------------- 4

fn c04_sparse_collapse() -> Outcome {
    let (amp, len, noise_var) = (1.3, 0.6, 0.05);
    let xs = [-1.2, -0.5, 0.1, 0.7, 1.4];
    let ys = [0.3, -0.8, 0.5, 1.1, -0.2];
    let tests: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let x = Tensor::new(&[5, 1], xs.to_vec()).unwrap();
    let y = Tensor::new(&[5, 1], ys.to_vec()).unwrap();

    // exact GP through a direct inverse of K + σ²I
    let k = |a: f64, b: f64| se(&[a], &[b], amp, len);
    let mut kn = vec![0.0; 25];
    for i in 0..5 {
        for j in 0..5 {
            kn[i * 5 + j] = k(xs[i], xs[j]) + if i == j { noise_var } else { 0.0 };
        }
    }
    let inv = invert(&kn, 5);
    let alpha: Vec<f64> = (0..5).map(|i| (0..5).map(|j| inv[i * 5 + j] * ys[j]).sum()).collect();

    let mut sgp = sparse_gaussian_process(1, 5).unwrap().kernel(SquaredExponential::new(amp, len));
    sgp.set_inducing_inputs(x.clone()).unwrap();
    sgp.set_optimal_state(&x, &y, noise_var).unwrap();
    let tape = Tape::new();
    let (mean, var) = sgp
        .predict(&tape.constant(Tensor::new(&[tests.len(), 1], tests.clone()).unwrap()))
        .unwrap();
    let mut worst: f64 = 0.0;
    for (t, &xt) in tests.iter().enumerate() {
        let kx: Vec<f64> = xs.iter().map(|&xi| k(xt, xi)).collect();
        let m: f64 = kx.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let quad: f64 = (0..5).map(|i| (0..5).map(|j| kx[i] * inv[i * 5 + j] * kx[j]).sum::<f64>()).sum();
        let v = k(xt, xt) - quad;
        worst = worst
            .max((mean.value().data()[t] - m).abs())
            .max((var.value().data()[t] - v).abs());
    }
    ensure(worst < 1e-6, format!("max deviation {worst:.2e}"))?;
    Ok(format!("max |Δmean|, |Δvar| = {worst:.2e} over {} test inputs", tests.len()))
}

// ---------------------------------------------------------------- 5

fn c05_rff() -> Outcome {
    let pairs = 100;
    let xa = uniform(&[pairs, 2], -1.5, 1.5, 50);
    let xb = uniform(&[pairs, 2], -1.5, 1.5, 51);
    let mut errors = Vec::new();
    for d in [10usize, 100, 1000, 10_000] {
        let mut rff = random_fourier_features(1, d).unwrap();
        let ctx = Ctx::new(7);
        rff.build(2, &ctx);
        let tape = Tape::new();
        let fa = rff.features(&tape.constant(xa.clone())).unwrap();
        let fb = rff.features(&tape.constant(xb.clone())).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..pairs {
            let dot: f64 = (0..d).map(|j| fa.value().data()[i * d + j] * fb.value().data()[i * d + j]).sum();
            let exact = se(&xa.data()[2 * i..2 * i + 2], &xb.data()[2 * i..2 * i + 2], 1.0, 1.0);
            worst = worst.max((dot - exact).abs());
        }
        errors.push((d, worst));
    }
    let summary: Vec<String> = errors.iter().map(|(d, e)| format!("D={d}: {e:.4}")).collect();
    ensure(errors.windows(2).all(|w| w[1].1 < w[0].1), format!("not decreasing: {}", summary.join(", ")))?;
    ensure(errors.last().unwrap().1 < 0.05, format!("too large at D=10^4: {}", summary.join(", ")))?;
    Ok(summary.join(", "))
}

// ---------------------------------------------------------------- 6

fn jittered_flow(dims: usize, seed: u64, sd: f64) -> bayes_layers::layers::Sequential {
    let mut flow = flow_model(dims, 4, &[8, 8], seed).unwrap();
    let mut ctx = Ctx::new(seed);
    flow.call(ctx.input(&Tensor::zeros(&[1, dims])), &mut ctx).unwrap();
    jitter_parameters(&mut flow, sd, seed);
    flow
}

fn c06_flows() -> Outcome {
    let mut round_trip: f64 = 0.0;
    let mut ldj_err: f64 = 0.0;
    for dims in 2..=6 {
        for seed in 0..3u64 {
            let mut flow = jittered_flow(dims, seed, 0.3);
            let x = normal(&[8, dims], 1.0, seed);
            let mut ctx = Ctx::new(0);
            let z = flow.call(ctx.input(&x), &mut ctx).unwrap();
            let back = flow.reverse(z, &mut ctx).unwrap();
            round_trip = round_trip.max(back.tensor().value().max_abs_diff(&x));

            let ldj = flow.log_det_jacobian(&ctx.constant(x.clone()), &mut ctx).unwrap();
            let bij = flow.bijector().unwrap();
            for row in 0..8 {
                let x0 = x.data()[row * dims..(row + 1) * dims].to_vec();
                let f = |v: &[f64]| -> Vec<f64> {
                    let t = Tape::new().constant(Tensor::new(&[1, dims], v.to_vec()).unwrap());
                    bij.forward(&t).unwrap().value().to_vec()
                };
                let jac = numeric_jacobian(&f, &x0, 1e-5);
                ldj_err = ldj_err.max((log_abs_det(&jac, dims) - ldj.value().data()[row]).abs());
            }
        }
    }
    ensure(round_trip < 1e-8, format!("round-trip error {round_trip:.2e}"))?;
    ensure(ldj_err < 1e-5, format!("log-det error {ldj_err:.2e}"))?;

    let flow = jittered_flow(2, 11, 0.3);
    let (n, half) = (200usize, 8.0);
    let h = 2.0 * half / n as f64;
    let grid: Vec<f64> = (0..n * n)
        .flat_map(|k| {
            let (i, j) = (k / n, k % n);
            [-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h]
        })
        .collect();
    let tape = Tape::new();
    let lp = flow_log_prob(&flow, &tape.constant(Tensor::new(&[n * n, 2], grid).unwrap())).unwrap();
    let mass: f64 = lp.value().data().iter().map(|v| v.exp()).sum::<f64>() * h * h;
    ensure((mass - 1.0).abs() < 1e-2, format!("density integrates to {mass}"))?;
    Ok(format!(
        "round trip {round_trip:.1e}, log-det vs numeric {ldj_err:.1e} (dims 2-6), 200x200 mass {mass:.5}"
    ))
}

// ---------------------------------------------------------------- 7

fn c07_discretized() -> Outcome {
    let mut r = rng_from(&[77]);
    let levels = Tensor::vector(&(0..256).map(f64::from).collect::<Vec<_>>());
    let mut worst_mass: f64 = 0.0;
    for _ in 0..100 {
        let k = 3;
        let mut params = standard_normal_vec(&mut r, k);
        params.extend(uniform_vec(&mut r, k, -1.2, 1.2));
        params.extend(uniform_vec(&mut r, k, -6.0, 0.5));
        let tape = Tape::new();
        let p = tape.constant(Tensor::new(&[256, 3 * k], params.repeat(256)).unwrap());
        let lp = discretized_logistic_mixture_log_prob(&p, &tape.constant(levels.clone()), 256).unwrap();
        let mass: f64 = lp.value().data().iter().map(|v| v.exp()).sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }
    ensure(worst_mass < 1e-6, format!("mixture mass off by {worst_mass:.2e}"))?;

    let mut worst_cross: f64 = 0.0;
    for _ in 0..20 {
        let u = uniform_vec(&mut r, 2, 0.0, 1.0);
        let (loc, scale) = (10.0 + 235.0 * u[0], 0.5 + 20.0 * u[1]);
        let tape = Tape::new();
        let base = Distribution::logistic(tape.constant(Tensor::vector(&[loc])), tape.constant(Tensor::vector(&[scale])))
            .unwrap()
            .sample(0)
            .unwrap();
        let disc = discretize(&base, 0, 255).unwrap();
        let mix = Distribution::discretized_logistic_mixture(
            &tape.constant(Tensor::vector(&[0.0, 2.0 * loc / 255.0 - 1.0, (2.0 * scale / 255.0).ln()])),
            256,
        )
        .unwrap();
        for k in 0..256 {
            let kf = k as f64;
            let a = disc.log_prob(&tape.constant(Tensor::vector(&[kf]))).unwrap().item().exp();
            let b = mix.log_prob(&tape.constant(Tensor::scalar(kf))).unwrap().item().exp();
            let hi = if k == 255 { 1.0 } else { logistic_cdf(kf + 0.5, loc, scale) };
            let lo = if k == 0 { 0.0 } else { logistic_cdf(kf - 0.5, loc, scale) };
            worst_cross = worst_cross.max((a - b).abs()).max((a - (hi - lo)).abs());
        }
    }
    ensure(worst_cross < 1e-10, format!("discretize cross-check off by {worst_cross:.2e}"))?;
    Ok(format!("mixture mass error {worst_mass:.1e} (100 draws), Discretize cross error {worst_cross:.1e}"))
}

// ---------------------------------------------------------------- 8

fn c08_conjugate() -> Outcome {
    let start = Instant::now();
    let (n, sigma, true_w) = (20usize, 0.5, 0.8);
    let xs = uniform_vec(&mut rng_from(&[8, 1]), n, -2.0, 2.0);
    let eps = standard_normal_vec(&mut rng_from(&[8, 2]), n);
    let ys: Vec<f64> = xs.iter().zip(&eps).map(|(x, e)| true_w * x + sigma * e).collect();
    let data = Dataset::new(
        Tensor::new(&[n, 1], xs.clone()).unwrap(),
        Tensor::new(&[n, 1], ys.clone()).unwrap(),
    )
    .unwrap();

    // prior w ~ N(0, 1), y | w ~ N(w x, σ²)
    let precision = 1.0 + xs.iter().map(|x| x * x).sum::<f64>() / (sigma * sigma);
    let post_mean = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / (sigma * sigma) / precision;

    let mut model = sequential(vec![
        Box::new(variational_dense(1).use_bias(false)),
        Box::new(gaussian_likelihood(sigma).frozen()),
    ])
    .unwrap();
    let cfg = ElboConfig {
        learning_rate: 0.05,
        final_learning_rate: Some(1e-4),
        max_steps: 5000,
        mc_samples: 16,
        seed: 3,
        kl_scale: KlScale::OneOverN,
        ..ElboConfig::new(n)
    };
    fit(&mut model, &data, &cfg, None, |_| {}).map_err(|e| e.to_string())?;
    let loc = named_parameters(&mut model)
        .into_iter()
        .find(|(name, _)| name == "0/kernel/loc")
        .ok_or("no kernel loc")?
        .1
        .item();
    let probe = [-2.0, 0.5, 1.5];
    let (pred, _) = predictive_moments(&mut model, &Tensor::new(&[3, 1], probe.to_vec()).unwrap(), 100_000, 99)
        .map_err(|e| e.to_string())?;
    let mut worst_pred: f64 = 0.0;
    for (i, x) in probe.iter().enumerate() {
        worst_pred = worst_pred.max((pred.data()[i] - post_mean * x).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure((loc - post_mean).abs() < 1e-2, format!("posterior mean {loc} vs analytic {post_mean}"))?;
    ensure(worst_pred < 1e-2, format!("predictive mean off by {worst_pred}"))?;
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "q mean {loc:.5} vs {post_mean:.5}, predictive max err {worst_pred:.1e}, 5000 steps"
    ))
}

// ---------------------------------------------------------------- 9

fn c09_epistemic() -> Outcome {
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let data = toy_regression(256, 0.1, seed);
        let mut model = bnn_model(&[32], 0.1, Estimator::Reparameterization).unwrap();
        let cfg = ElboConfig {
            max_steps: 2000,
            seed,
            learning_rate: 1e-2,
            ..ElboConfig::new(256)
        };
        fit(&mut model, &data, &cfg, None, |_| {}).map_err(|e| e.to_string())?;
        let (_, sd) = predictive_moments(&mut model, &Tensor::new(&[3, 1], vec![-3.0, 0.0, 3.0]).unwrap(), 300, seed)
            .map_err(|e| e.to_string())?;
        let s = sd.data();
        if s[0] > s[1] && s[2] > s[1] {
            wins += 1;
        }
        notes.push(format!("{:.2}/{:.2}/{:.2}", s[0], s[1], s[2]));
    }
    ensure(wins >= 8, format!("{wins}/10 seeds; sd(-3)/sd(0)/sd(3): {}", notes.join(" ")))?;
    Ok(format!("{wins}/10 seeds with sd(±3) > sd(0)"))
}

// ---------------------------------------------------------------- 10

fn twin_layers(din: usize, dout: usize, seed: u64) -> (bayes_layers::layers::Dense, bayes_layers::layers::Dense) {
    let loc = normal(&[din, dout], 1.0, seed);
    let rho = uniform(&[din, dout], softplus_inverse(0.2), softplus_inverse(1.0), seed + 1);
    let bloc = normal(&[dout], 1.0, seed + 2);
    let brho = Tensor::full(&[dout], softplus_inverse(0.1));
    let w = || Weight::Variational(VariationalParameter::new(loc.clone(), rho.clone()));
    let b = || Weight::Variational(VariationalParameter::new(bloc.clone(), brho.clone()));
    let mut rep = variational_dense(dout);
    rep.set_weights(w(), Some(b())).unwrap();
    let mut flip = flipout_dense(dout);
    flip.set_weights(w(), Some(b())).unwrap();
    (rep, flip)
}

fn kernel_loc_grad(layer: &mut bayes_layers::layers::Dense, x: &Tensor, y: &Tensor, seed: u64) -> Vec<f64> {
    let mut ctx = Ctx::new(seed);
    let out = layer.call(ctx.input(x), &mut ctx).unwrap().into_tensor();
    let loss = out.sub(&ctx.constant(y.clone())).unwrap().square().mean();
    let g = loss.backward().unwrap();
    let Some(Weight::Variational(v)) = layer.kernel() else { panic!() };
    g.param(&v.loc).unwrap().to_vec()
}

fn c10_flipout() -> Outcome {
    // marginal means per example
    let (din, dout, batch) = (4, 3, 32);
    let (mut rep, mut flip) = twin_layers(din, dout, 100);
    let x = uniform(&[batch, din], -1.0, 1.0, 101);
    let draws = 4000;
    let collect = |layer: &mut bayes_layers::layers::Dense, offset: u64| -> Vec<Vec<f64>> {
        (0..draws)
            .map(|s| {
                let mut ctx = Ctx::new(offset + s as u64);
                layer.call(ctx.input(&x), &mut ctx).unwrap().tensor().value().to_vec()
            })
            .collect()
    };
    let a = collect(&mut rep, 0);
    let b = collect(&mut flip, 1_000_000);
    let stats = |v: &[Vec<f64>], k: usize| -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = v.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    };
    let mut worst_z: f64 = 0.0;
    for k in 0..batch * dout {
        let ((ma, sa), (mb, sb)) = (stats(&a, k), stats(&b, k));
        worst_z = worst_z.max((ma - mb).abs() / (sa * sa + sb * sb).sqrt());
    }
    ensure(worst_z < 4.0, format!("marginal means differ by {worst_z:.2} SE"))?;

    // paired gradient-variance trials
    let (trials, reps) = (200, 50);
    let mut lower = 0;
    let mut ratios = Vec::new();
    for t in 0..trials as u64 {
        let (mut rep, mut flip) = twin_layers(din, dout, 10_000 + t);
        let x = uniform(&[batch, din], -1.0, 1.0, 20_000 + t);
        let y = normal(&[batch, dout], 1.0, 30_000 + t);
        let variance = |layer: &mut bayes_layers::layers::Dense, base: u64| -> f64 {
            let g: Vec<Vec<f64>> = (0..reps).map(|s| kernel_loc_grad(layer, &x, &y, base + s)).collect();
            (0..g[0].len())
                .map(|j| {
                    let m = g.iter().map(|r| r[j]).sum::<f64>() / reps as f64;
                    g.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)
                })
                .sum()
        };
        let vr = variance(&mut rep, t * 1000);
        let vf = variance(&mut flip, t * 1000 + 500);
        if vf <= vr {
            lower += 1;
        }
        ratios.push(vf / vr);
    }
    ratios.sort_by(f64::total_cmp);
    ensure(
        lower * 10 >= trials * 9,
        format!("flipout variance not larger in only {lower}/{trials} trials"),
    )?;
    Ok(format!(
        "means within {worst_z:.2} SE; flipout variance <= reparameterization in {lower}/{trials} trials (median ratio {:.3})",
        ratios[trials / 2]
    ))
}

// ---------------------------------------------------------------- 11

fn c11_determinism() -> Outcome {
    let data = toy_regression(128, 0.1, 5);
    let cfg = ElboConfig {
        batch_size: 32,
        max_steps: 150,
        seed: 17,
        ..ElboConfig::new(128)
    };
    let trace = |prefetch: usize| {
        let mut m = bnn_model(&[16], 0.1, Estimator::Flipout).unwrap();
        let t = fit(&mut m, &data, &ElboConfig { prefetch, ..cfg.clone() }, None, |_| {}).unwrap();
        (
            t.iter().map(|s| (s.loss.to_bits(), s.kl.to_bits())).collect::<Vec<_>>(),
            m,
        )
    };
    let (a, mut model) = trace(0);
    let (b, _) = trace(0);
    let (c, _) = trace(4);
    ensure(a == b, "loss traces differ between identical runs")?;
    ensure(a == c, "prefetching changed the loss trace")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2, p3) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"), dir.path().join("c.ckpt"));
    checkpoint::save(&p1, &named_parameters(&mut model)).map_err(|e| e.to_string())?;
    let mut fresh = bnn_model(&[16], 0.1, Estimator::Flipout).unwrap();
    let mut ctx = Ctx::new(999);
    fresh.call(ctx.input(&data.x), &mut ctx).unwrap();
    checkpoint::restore(&mut fresh, &checkpoint::load(&p1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    checkpoint::save(&p2, &named_parameters(&mut fresh)).map_err(|e| e.to_string())?;
    checkpoint::save(&p3, &checkpoint::load(&p2).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (b1, b2, b3) = (
        std::fs::read(&p1).unwrap(),
        std::fs::read(&p2).unwrap(),
        std::fs::read(&p3).unwrap(),
    );
    ensure(b1 == b2 && b2 == b3, "checkpoint bytes differ after save/load/save")?;
    Ok(format!(
        "{} steps bit-identical (with and without prefetch); {}-byte checkpoint identical across save/load/save",
        a.len(),
        b1.len()
    ))
}

// ---------------------------------------------------------------- 12

fn c12_deep_gp() -> Outcome {
    let mut summary = Vec::new();
    for seed in 0..10u64 {
        let data = toy_regression(50, 0.1, seed);
        let mut model = deep_gp_model(10, 0.1).unwrap();
        let cfg = ElboConfig {
            max_steps: 250,
            seed,
            learning_rate: 1e-2,
            ..ElboConfig::new(50)
        };
        let mut kl_finite = true;
        let trace = fit(&mut model, &data, &cfg, None, |s| kl_finite &= s.kl.is_finite())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let (first, last) = (trace[0].loss, trace.last().unwrap().loss);
        let q = trace.len() / 4;
        let head = trace[..q].iter().map(|s| s.loss).sum::<f64>() / q as f64;
        let tail = trace[trace.len() - q..].iter().map(|s| s.loss).sum::<f64>() / q as f64;
        ensure(kl_finite, format!("seed {seed}: non-finite KL"))?;
        ensure(last < first, format!("seed {seed}: final loss {last} >= initial {first}"))?;
        ensure(tail < head, format!("seed {seed}: last-quarter mean {tail} >= first-quarter mean {head}"))?;
        summary.push(format!("{first:.1}->{last:.2}"));
    }
    Ok(format!("10/10 seeds decrease, KL finite; {}", summary.join(" ")))
}
