use super::*;
use crate::layers::{dense, sequential, softplus_inverse, variational_dense, VariationalParameter, Weight};
use crate::output::gaussian_likelihood;
use crate::tensor::Parameter;

fn column(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
}

fn small_data() -> Dataset {
    let x = column(&[-1.0, -0.4, 0.1, 0.5, 0.9, 1.3]);
    let y = column(&[-2.1, -0.7, 0.3, 1.2, 1.7, 2.8]);
    Dataset::new(x, y).unwrap()
}

fn linear_bnn() -> Sequential {
    sequential(vec![
        Box::new(variational_dense(1)),
        Box::new(gaussian_likelihood(0.5)),
    ])
    .unwrap()
}

#[test]
fn deterministic_loss_is_plain_nll() {
    let mut d = dense(1);
    d.set_weights(
        Weight::Point(Parameter::new(Tensor::new(&[1, 1], vec![2.0]).unwrap())),
        Some(Weight::Point(Parameter::new(Tensor::vector(&[0.1])))),
    )
    .unwrap();
    let mut model = sequential(vec![Box::new(d), Box::new(gaussian_likelihood(0.5))]).unwrap();
    let data = small_data();
    let cfg = ElboConfig::new(6);
    let out = elbo_step(&mut model, &data.x, &data.y, &cfg, 0, None).unwrap();
    let sigma: f64 = 0.5;
    let nll = data
        .x
        .data()
        .iter()
        .zip(data.y.data())
        .map(|(x, y)| {
            let r = (y - (2.0 * x + 0.1)) / sigma;
            0.5 * r * r + sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum::<f64>()
        / 6.0;
    assert_eq!(out.kl, 0.0);
    assert!((out.loss.item() - nll).abs() < 1e-12, "{} vs {nll}", out.loss.item());
    assert!((out.nll - nll).abs() < 1e-12);
}

#[test]
fn prior_pinned_posterior_adds_no_kl() {
    let mut v = variational_dense(1);
    let unit = softplus_inverse(1.0);
    v.set_weights(
        Weight::Variational(VariationalParameter::new(Tensor::zeros(&[1, 1]), Tensor::full(&[1, 1], unit))),
        Some(Weight::Variational(VariationalParameter::new(Tensor::zeros(&[1]), Tensor::full(&[1], unit)))),
    )
    .unwrap();
    let mut model = sequential(vec![Box::new(v), Box::new(gaussian_likelihood(1.0))]).unwrap();
    let data = small_data();
    let out = elbo_step(&mut model, &data.x, &data.y, &ElboConfig::new(6), 3, None).unwrap();
    assert!(out.kl.abs() < 1e-12);
    assert!((out.loss.item() - out.nll).abs() < 1e-12);
}

#[test]
fn minibatch_objective_is_unbiased() {
    let data = small_data();
    let mut model = linear_bnn();
    let full_cfg = ElboConfig::new(6);
    let full = elbo_step(&mut model, &data.x, &data.y, &full_cfg, 7, None).unwrap().loss.item();
    let cfg = ElboConfig {
        batch_size: 2,
        ..ElboConfig::new(6)
    };
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..6 {
        for j in i + 1..6 {
            let (x, y) = data.batch(&[i, j]);
            total += elbo_step(&mut model, &x, &y, &cfg, 7, None).unwrap().loss.item();
            count += 1;
        }
    }
    assert!((total / count as f64 - full).abs() < 1e-12, "{} vs {full}", total / count as f64);
}

#[test]
fn mc_samples_average_independent_draws() {
    let data = small_data();
    let mut model = linear_bnn();
    let one = elbo_step(&mut model, &data.x, &data.y, &ElboConfig::new(6), 0, None).unwrap();
    let cfg4 = ElboConfig {
        mc_samples: 4,
        ..ElboConfig::new(6)
    };
    let four = elbo_step(&mut model, &data.x, &data.y, &cfg4, 0, None).unwrap();
    assert_ne!(one.nll, four.nll);
    assert_eq!(one.kl, four.kl);
}

#[test]
fn missing_likelihood_is_an_error() {
    let mut model = sequential(vec![Box::new(dense(1))]).unwrap();
    let data = small_data();
    assert!(matches!(
        elbo_step(&mut model, &data.x, &data.y, &ElboConfig::new(6), 0, None),
        Err(Error::InvalidArgument(_))
    ));
    let sq: &LogLikelihood = &|out, y| Ok(out.tensor().sub(y)?.square().neg());
    assert!(elbo_step(&mut model, &data.x, &data.y, &ElboConfig::new(6), 0, Some(sq)).is_ok());
}

#[test]
fn non_finite_loss_names_the_layer() {
    let mut d = dense(1);
    d.set_weights(
        Weight::Point(Parameter::new(Tensor::new(&[1, 1], vec![f64::NAN]).unwrap())),
        None,
    )
    .unwrap();
    let mut model = sequential(vec![Box::new(d), Box::new(gaussian_likelihood(1.0))]).unwrap();
    let data = small_data();
    match elbo_step(&mut model, &data.x, &data.y, &ElboConfig::new(6), 4, None) {
        Err(Error::NonFiniteLoss { step, detail }) => {
            assert_eq!(step, 4);
            assert!(detail.contains("layer 0"), "{detail}");
        }
        other => panic!("{:?}", other.map(|o| o.loss.item())),
    }
}

#[test]
fn config_validation() {
    let mut c = ElboConfig::new(10);
    c.batch_size = 11;
    assert!(c.validate().is_err());
    c.batch_size = 5;
    c.mc_samples = 0;
    assert!(c.validate().is_err());
    c.mc_samples = 1;
    assert!(c.validate().is_ok());
    assert_eq!(c.kl_weight(), 0.1);
    c.kl_scale = KlScale::Constant(1.0);
    assert_eq!(c.kl_weight(), 1.0);
}

#[test]
fn learning_rate_schedule_endpoints() {
    let c = ElboConfig {
        learning_rate: 0.1,
        final_learning_rate: Some(0.001),
        max_steps: 100,
        ..ElboConfig::new(1)
    };
    assert_eq!(c.learning_rate_at(0), 0.1);
    assert!((c.learning_rate_at(100) - 0.001).abs() < 1e-15);
    assert!((c.learning_rate_at(50) - 0.01).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_prefetch_invariant() {
    let data = small_data();
    let cfg = ElboConfig {
        batch_size: 3,
        max_steps: 25,
        seed: 11,
        ..ElboConfig::new(6)
    };
    let run = |prefetch| {
        let mut m = linear_bnn();
        fit(&mut m, &data, &ElboConfig { prefetch, ..cfg.clone() }, None, |_| {}).unwrap()
    };
    let a = run(0);
    let b = run(0);
    let c = run(3);
    let bits = |t: &[StepStats]| t.iter().map(|s| (s.loss.to_bits(), s.kl.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
    assert_eq!(a.len(), 25);
}

#[test]
fn predictive_moments_of_a_point_model() {
    let mut d = dense(1);
    d.set_weights(
        Weight::Point(Parameter::new(Tensor::new(&[1, 1], vec![3.0]).unwrap())),
        None,
    )
    .unwrap();
    let mut model = sequential(vec![Box::new(d), Box::new(gaussian_likelihood(0.25))]).unwrap();
    let (m, s) = predictive_moments(&mut model, &column(&[1.0, -2.0]), 5, 0).unwrap();
    assert!(m.max_abs_diff(&column(&[3.0, -6.0])) < 1e-12);
    assert!(s.max_abs_diff(&column(&[0.25, 0.25])) < 1e-12);
}
