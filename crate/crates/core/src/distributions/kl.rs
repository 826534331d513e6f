use super::{cholesky_with_jitter, Distribution};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Summed KL between elementwise normals.
///
/// Per element: ½(r² + ((μq − μp)/σp)² − 1 − log r²) with r = σq/σp.
/// Identical arguments give exactly zero.
pub fn normal_kl(loc_q: &Var, scale_q: &Var, loc_p: &Var, scale_p: &Var) -> Result<Var> {
    let ratio_sq = scale_q.div(scale_p)?.square();
    let mean_term = loc_q.sub(loc_p)?.div(scale_p)?.square();
    Ok(ratio_sq
        .add(&mean_term)?
        .add_scalar(-1.0)
        .sub(&ratio_sq.log()?)?
        .mul_scalar(0.5)
        .sum())
}

/// KL between two supported distributions, reduced to a scalar.
pub fn kl_divergence(q: &Distribution, p: &Distribution) -> Result<Var> {
    match (q, p) {
        (
            Distribution::Normal { loc: lq, scale: sq },
            Distribution::Normal { loc: lp, scale: sp },
        ) => normal_kl(lq, sq, lp, sp),
        (
            Distribution::MultivariateNormal {
                mean: mq,
                covariance: cq,
            },
            Distribution::MultivariateNormal {
                mean: mp,
                covariance: cp,
            },
        ) => {
            if mq.shape() != mp.shape() {
                return Err(Error::shape("kl_divergence", mq.shape(), mp.shape()));
            }
            let (lq, _) = cholesky_with_jitter(cq)?;
            let (lp, _) = cholesky_with_jitter(cp)?;
            let (n, units) = (mq.shape()[0] as f64, mq.shape()[1] as f64);
            // tr(Σp⁻¹Σq) = ‖Lp⁻¹ Lq‖²_F
            let trace = lp.solve_triangular(&lq, false)?.square().sum();
            let mahalanobis = lp.solve_triangular(&mp.sub(mq)?, false)?.square().sum();
            let log_det_p = lp.diag()?.square().log()?.sum();
            let log_det_q = lq.diag()?.square().log()?.sum();
            let per_unit = trace.add(&log_det_p)?.sub(&log_det_q)?.add_scalar(-n);
            Ok(per_unit.mul_scalar(units).add(&mahalanobis)?.mul_scalar(0.5))
        }
        _ => Err(Error::UnsupportedKl(q.kind(), p.kind())),
    }
}

/// KL(N(m, Lq Lqᵀ) ‖ N(0, Lp Lpᵀ)) from lower-triangular factors.
///
/// `mean` is `[n, 1]`. Both log-determinants use Σ log(diag²) so that
/// `Lq == Lp` with `mean == 0` yields exactly zero.
pub fn gaussian_kl_zero_mean_prior(mean: &Var, scale_tril_q: &Var, scale_tril_p: &Var) -> Result<Var> {
    let n = mean.shape()[0] as f64;
    let trace = scale_tril_p.solve_triangular(scale_tril_q, false)?.square().sum();
    let mahalanobis = scale_tril_p.solve_triangular(mean, false)?.square().sum();
    let log_det_p = scale_tril_p.diag()?.square().log()?.sum();
    let log_det_q = scale_tril_q.diag()?.square().log()?.sum();
    Ok(trace
        .add(&mahalanobis)?
        .add_scalar(-n)
        .add(&log_det_p)?
        .sub(&log_det_q)?
        .mul_scalar(0.5))
}
