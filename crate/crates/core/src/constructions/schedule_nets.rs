//! Networks for the schedule ratios `m_t^gamma / tilde sigma_t^2`, the quadratic term
//! `|y|^2 / (2 tilde sigma_t^2)` and the inner product `m_t (y . a) / tilde sigma_t^2`.

use super::arith::{exp_net, mult_net};
use crate::error::{Error, Result};
use crate::netcalc::{ReluNet, SparseMatrix};
use crate::schedule::DiffusionSchedule;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("accuracy must lie in (0,1], got {eps}")))
    }
}

/// Number of geometric-series terms used by [`chi_net`].
pub fn chi_terms(sched: &DiffusionSchedule, eps: f64) -> usize {
    let rate = 2.0 * (sched.t0 + sched.delta_sigma());
    let r = ((2.0 / eps).ln() + (1.0 / sched.tvar_t0()).ln()) / rate;
    (r.ceil() as usize).max(1)
}

/// `t -> m_t^gamma / tilde sigma_t^2` on `[t0, T]` within `eps`, as the truncated series
/// `sum_{k<r} e^{-2 k Delta} phi_exp((gamma + 2k) t)`. Depth 2.
pub fn chi_net(sched: &DiffusionSchedule, gamma: u32, eps: f64) -> Result<ReluNet> {
    check_eps(eps)?;
    sched.validate()?;
    if gamma > 2 {
        return Err(Error::invalid(format!("gamma must be 0, 1 or 2, got {gamma}")));
    }
    let delta = sched.delta_sigma();
    let r = chi_terms(sched, eps);
    let base = exp_net(eps / (2.0 * r as f64))?;
    let members: Vec<ReluNet> = (0..r)
        .map(|k| {
            let scale = (gamma as f64) + 2.0 * k as f64;
            base.pre_affine(&SparseMatrix::from_triplets(1, 1, vec![(0, 0, scale)])?, &[0.0])
        })
        .collect::<Result<_>>()?;
    let stacked = ReluNet::parallel(&members, true)?;
    let weights: Vec<(usize, usize, f64)> =
        (0..r).map(|k| (0, k, (-2.0 * k as f64 * delta).exp())).collect();
    stacked.linear_post(&SparseMatrix::from_triplets(1, r, weights)?, &[0.0])
}

/// Selector matrix picking coordinates `idx` out of `n`.
pub(crate) fn select(n: usize, idx: &[usize]) -> SparseMatrix {
    SparseMatrix::from_triplets(
        idx.len(),
        n,
        idx.iter().enumerate().map(|(r, &c)| (r, c, 1.0)).collect(),
    )
    .unwrap()
}

/// Range constant of [`rho_net`]: `(D M^2 / 2) v tilde sigma_{t0}^{-2} v 1`.
pub fn rho_range(sched: &DiffusionSchedule, dim: usize, m: f64) -> f64 {
    (dim as f64 * m * m / 2.0).max(1.0 / sched.tvar_t0()).max(1.0)
}

/// `(y, t) -> |y|^2 / (2 tilde sigma_t^2)` within `eps` on `|y|_inf <= M`, `t in [t0, T]`.
pub fn rho_net(sched: &DiffusionSchedule, dim: usize, m: f64, eps: f64) -> Result<ReluNet> {
    check_eps(eps)?;
    if dim == 0 || !(m >= 1.0) {
        return Err(Error::invalid("rho_net needs D >= 1 and M >= 1"));
    }
    let c = rho_range(sched, dim, m);
    let n = dim + 1;
    let sq = mult_net(2, m, eps / (2.0 * dim as f64 * c))?;
    let squares: Vec<ReluNet> = (0..dim)
        .map(|l| sq.pre_affine(&select(n, &[l, l]), &[0.0, 0.0]))
        .collect::<Result<_>>()?;
    let half_sum = ReluNet::parallel(&squares, true)?.linear_post(
        &SparseMatrix::from_triplets(1, dim, (0..dim).map(|l| (0, l, 0.5)).collect())?,
        &[0.0],
    )?;
    let chi = chi_net(sched, 0, eps / (4.0 * c))?.pre_affine(&select(n, &[dim]), &[0.0])?;
    let pair = ReluNet::parallel(&[chi, half_sum], true)?;
    ReluNet::concat(&mult_net(2, c, eps / 2.0)?, &pair)
}

/// Range constant of [`omega_net`]: `tilde sigma_{t0}^{-2} v D M |a|_inf`.
pub fn omega_range(sched: &DiffusionSchedule, a: &[f64], m: f64) -> f64 {
    let amax = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    (1.0 / sched.tvar_t0()).max(a.len() as f64 * m * amax).max(1.0)
}

/// `(y, t) -> m_t (y . a) / tilde sigma_t^2` within `eps` on `|y|_inf <= M`, `t in [t0, T]`.
pub fn omega_net(sched: &DiffusionSchedule, a: &[f64], m: f64, eps: f64) -> Result<ReluNet> {
    check_eps(eps)?;
    if a.is_empty() || !(m >= 1.0) {
        return Err(Error::invalid("omega_net needs D >= 1 and M >= 1"));
    }
    let dim = a.len();
    let n = dim + 1;
    let c = omega_range(sched, a, m);
    let chi = chi_net(sched, 1, eps / (4.0 * c))?.pre_affine(&select(n, &[dim]), &[0.0])?;
    let dot = ReluNet::affine(
        SparseMatrix::from_triplets(1, n, a.iter().enumerate().map(|(l, &v)| (0, l, v)).collect())?,
        &[0.0],
    )?;
    let pair = ReluNet::parallel(&[dot, chi], true)?;
    ReluNet::concat(&mult_net(2, c, eps / 2.0)?, &pair)
}
