#![allow(dead_code)]

use bayes_layers::rng::{rng_from, standard_normal_vec, uniform_vec};
use bayes_layers::{Ctx, Layer, Result, Tensor, Var};

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform_vec(&mut rng_from(&[seed, 0x7E57]), n, lo, hi)).unwrap()
}

pub fn normal(shape: &[usize], sd: f64, seed: u64) -> Tensor {
    let n = shape.iter().product();
    let v = standard_normal_vec(&mut rng_from(&[seed, 0x7E58]), n);
    Tensor::new(shape, v.into_iter().map(|z| sd * z).collect()).unwrap()
}

/// Relative error with a small absolute floor so that near-zero gradients
/// compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Builds the scalar loss for one evaluation on a fresh context.
pub type LossFn<'a> = dyn Fn(&mut dyn Layer, &mut Ctx) -> Result<Var> + 'a;

pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares backprop gradients of `loss` against central differences for
/// every element of every trainable parameter. Each evaluation runs under
/// `Ctx::new(seed)`, so stochastic layers see the same noise throughout.
pub fn check_gradients(layer: &mut dyn Layer, loss: &LossFn, seed: u64, h: f64) -> GradReport {
    let mut ctx = Ctx::new(seed);
    let l = loss(layer, &mut ctx).expect("loss");
    let grads = l.backward().expect("backward");
    let mut analytic: Vec<(String, Tensor)> = Vec::new();
    layer.visit_parameters(&mut |name, p| {
        if p.is_trainable() {
            let g = grads.param(p).unwrap_or_else(|| Tensor::zeros(p.shape()));
            analytic.push((name.to_string(), g));
        }
    });
    let eval = |layer: &mut dyn Layer| -> f64 {
        let mut ctx = Ctx::new(seed);
        loss(layer, &mut ctx).expect("loss").item()
    };
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (name, g) in &analytic {
        let base = get_param(layer, name);
        for i in 0..base.len() {
            let mut plus = base.to_vec();
            plus[i] += h;
            set_param(layer, name, Tensor::new(base.shape(), plus).unwrap());
            let fp = eval(layer);
            let mut minus = base.to_vec();
            minus[i] -= h;
            set_param(layer, name, Tensor::new(base.shape(), minus).unwrap());
            let fm = eval(layer);
            set_param(layer, name, base.clone());
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(g.data()[i], numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{name}[{i}]: analytic {} numeric {numeric}", g.data()[i]);
            }
        }
    }
    report
}

pub fn get_param(layer: &mut dyn Layer, name: &str) -> Tensor {
    let mut out = None;
    layer.visit_parameters(&mut |n, p| {
        if n == name {
            out = Some(p.value().clone());
        }
    });
    out.unwrap_or_else(|| panic!("no parameter {name}"))
}

pub fn set_param(layer: &mut dyn Layer, name: &str, value: Tensor) {
    bayes_layers::layers::set_parameter(layer, name, value).unwrap();
}

/// Adds `N(0, sd²)` noise to every parameter, e.g. to move zero-initialized
/// layers away from the identity.
pub fn jitter_parameters(layer: &mut dyn Layer, sd: f64, seed: u64) {
    let mut k = 0u64;
    layer.visit_parameters(&mut |_, p| {
        let noise = normal(p.shape(), sd, seed.wrapping_mul(1000).wrapping_add(k));
        k += 1;
        let v = p.value().zip_map(&noise, |a, b| a + b).unwrap();
        p.set(v).unwrap();
    });
}

/// Central-difference Jacobian of `f: R^d → R^m`, row-major `[out, in]`.
pub fn numeric_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let m = f(x).len();
    let mut jac = vec![0.0; m * d];
    for j in 0..d {
        let mut xp = x.to_vec();
        xp[j] += h;
        let mut xm = x.to_vec();
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `log |det A|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs()))
            .unwrap();
        if p != c {
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
            }
        }
        let piv = m[c * n + c];
        total += piv.abs().ln();
        for r in c + 1..n {
            let f = m[r * n + c] / piv;
            for k in c..n {
                m[r * n + k] -= f * m[c * n + k];
            }
        }
    }
    total
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[f64], n: usize) -> Vec<f64> {
    let w = 2 * n;
    let mut m = vec![0.0; n * w];
    for i in 0..n {
        m[i * w..i * w + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        m[i * w + n + i] = 1.0;
    }
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i * w + c].abs().total_cmp(&m[j * w + c].abs()))
            .unwrap();
        for k in 0..w {
            m.swap(c * w + k, p * w + k);
        }
        let piv = m[c * w + c];
        for k in 0..w {
            m[c * w + k] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * w + c];
                for k in 0..w {
                    m[r * w + k] -= f * m[c * w + k];
                }
            }
        }
    }
    (0..n).flat_map(|i| m[i * w + n..(i + 1) * w].to_vec()).collect()
}

/// Squared-exponential kernel value `a² exp(−‖x − y‖² / (2ℓ²))`.
pub fn se(x: &[f64], y: &[f64], amplitude: f64, lengthscale: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    amplitude * amplitude * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

/// Logistic CDF.
pub fn logistic_cdf(x: f64, loc: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(x - loc) / scale).exp())
}

/// Direct-loop NHWC/HWIO convolution with `valid` padding and stride 1.
pub fn conv_valid_loops(x: &Tensor, k: &Tensor) -> Tensor {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, kc, f) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    assert_eq!(c, kc);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; b * oh * ow * f];
    for n in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..f {
                    let mut s = 0.0;
                    for di in 0..kh {
                        for dj in 0..kw {
                            for ci in 0..c {
                                s += x.get(&[n, i + di, j + dj, ci]) * k.get(&[di, dj, ci, o]);
                            }
                        }
                    }
                    out[((n * oh + i) * ow + j) * f + o] = s;
                }
            }
        }
    }
    Tensor::new(&[b, oh, ow, f], out).unwrap()
}
