//! Explicit ReLU constructions: products, exponentials, schedule ratios, quadratic and
//! inner-product terms, division, the dyadic partition of unity, and the assembled score
//! network for one-dimensional latent spaces.
//!
//! Every construction has an audit that measures its sup error on a reproducible point set
//! and compares it to the construction's stated bound.

mod arith;
mod assembly;
mod division;
mod schedule_nets;

pub use arith::{
    clip_unit, exp_net, exp_rel_net, monomial_net, mult_bound, mult_levels, mult_net, pwl_net,
    shifted_exp_net, unit_mult,
};
pub use assembly::{assemble_score_net, AssembledScore, AssemblyAudit, AssemblyOptions};
pub use division::{
    div_bound, div_net, div_net_with, div_segment_net, dyadic_knots, pou_weights, segment_bound,
    segment_stages,
};
pub use schedule_nets::{chi_net, chi_terms, omega_net, omega_range, rho_net, rho_range};

use rand::Rng;

use crate::error::Result;
use crate::netcalc::{NetStats, ReluNet};
use crate::rng;
use crate::schedule::DiffusionSchedule;

/// A built network together with its audit.
#[derive(Debug, Clone)]
pub struct ConstructionReport {
    pub name: String,
    pub net: ReluNet,
    pub target_accuracy: f64,
    pub domain_spec: String,
    pub measured_error: f64,
    pub bound: f64,
    pub n_points: usize,
}

impl ConstructionReport {
    pub fn passed(&self) -> bool {
        self.measured_error <= self.bound
    }

    pub fn stats(&self) -> &NetStats {
        self.net.stats()
    }

    /// `name,target,measured,bound,L,W,S,B,pass` as one CSV row.
    pub fn row(&self) -> String {
        let s = self.stats();
        format!(
            "{},{:.6e},{:.6e},{:.6e},{},{},{},{:.6e},{}",
            self.name,
            self.target_accuracy,
            self.measured_error,
            self.bound,
            s.depth,
            s.max_width(),
            s.nonzeros,
            s.magnitude,
            self.passed()
        )
    }

    pub const HEADER: &'static str = "name,target,measured,bound,L,W,S,B,pass";
}

/// Radial clipping: `z` if `|z| <= r`, else `r z / |z|`.
pub fn clip_to_ball(z: &[f64], r: f64) -> Vec<f64> {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= r {
        z.to_vec()
    } else {
        z.iter().map(|v| v * r / n).collect()
    }
}

/// Max of `|net(x) - f(x)|` over `points` (flat, `in_dim` per point), in parallel.
pub fn sup_error(net: &ReluNet, points: &[Vec<f64>], f: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    crate::exec::map_chunks(points.len(), 256, |r| {
        let mut s = Vec::new();
        points[r]
            .iter()
            .map(|x| (net.evaluate_with(x, &mut s)[0] - f(x)).abs())
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max)
}

fn report(
    name: &str,
    net: ReluNet,
    target: f64,
    domain: String,
    points: &[Vec<f64>],
    bound: f64,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> ConstructionReport {
    let measured = sup_error(&net, points, f);
    ConstructionReport {
        name: name.into(),
        net,
        target_accuracy: target,
        domain_spec: domain,
        measured_error: measured,
        bound,
        n_points: points.len(),
    }
}

pub fn audit_mult(d: usize, c: f64, eps: f64, n: usize, seed: u64) -> Result<ConstructionReport> {
    let net = mult_net(d, c, eps)?;
    let mut r = rng::stream(seed, 101);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-c..=c)).collect()).collect();
    Ok(report(
        "mult_net",
        net,
        eps,
        format!("[-{c},{c}]^{d}, {n} uniform points"),
        &pts,
        mult_bound(d, c, eps, 0.0),
        |x| x.iter().product(),
    ))
}

pub fn audit_exp(eps0: f64, x_max: f64, n: usize) -> Result<ConstructionReport> {
    let net = exp_net(eps0)?;
    let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![x_max * i as f64 / (n - 1) as f64]).collect();
    Ok(report(
        "exp_net",
        net,
        eps0,
        format!("[0,{x_max}], {n} grid points"),
        &pts,
        eps0,
        |x| (-x[0]).exp(),
    ))
}

pub fn audit_chi(sched: &DiffusionSchedule, gamma: u32, eps: f64, n: usize) -> Result<ConstructionReport> {
    let net = chi_net(sched, gamma, eps)?;
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![sched.t0 + (sched.t_max - sched.t0) * i as f64 / (n - 1) as f64])
        .collect();
    let s = *sched;
    Ok(report(
        &format!("chi_net_gamma{gamma}"),
        net,
        eps,
        format!("t in [{},{}], {n} grid points", sched.t0, sched.t_max),
        &pts,
        eps,
        move |x| {
            let v = s.eval_unchecked(x[0]);
            v.m.powi(gamma as i32) / v.tvar
        },
    ))
}

fn random_yt(sched: &DiffusionSchedule, dim: usize, m: f64, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, stream);
    (0..n)
        .map(|_| {
            let mut p: Vec<f64> = (0..dim).map(|_| r.random_range(-m..=m)).collect();
            p.push(r.random_range(sched.t0..=sched.t_max));
            p
        })
        .collect()
}

pub fn audit_rho(sched: &DiffusionSchedule, dim: usize, m: f64, eps: f64, n: usize, seed: u64) -> Result<ConstructionReport> {
    let net = rho_net(sched, dim, m, eps)?;
    let pts = random_yt(sched, dim, m, n, seed, 102);
    let s = *sched;
    Ok(report(
        "rho_net",
        net,
        eps,
        format!("|y|_inf <= {m}, D = {dim}, t in [t0,T], {n} uniform points"),
        &pts,
        eps,
        move |x| {
            let v = s.eval_unchecked(x[dim]);
            x[..dim].iter().map(|y| y * y).sum::<f64>() / (2.0 * v.tvar)
        },
    ))
}

pub fn audit_omega(sched: &DiffusionSchedule, dim: usize, m: f64, eps: f64, n: usize, seed: u64) -> Result<ConstructionReport> {
    let mut r = rng::stream(seed, 103);
    let a: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..=1.0)).collect();
    let net = omega_net(sched, &a, m, eps)?;
    let pts = random_yt(sched, dim, m, n, seed, 104);
    let s = *sched;
    Ok(report(
        "omega_net",
        net,
        eps,
        format!("|y|_inf <= {m}, random a, t in [t0,T], {n} uniform points"),
        &pts,
        eps,
        move |x| {
            let v = s.eval_unchecked(x[dim]);
            v.m * x[..dim].iter().zip(&a).map(|(y, ai)| y * ai).sum::<f64>() / v.tvar
        },
    ))
}

pub fn audit_div_segment(a: f64, b: f64, eps: f64, n: usize, seed: u64) -> Result<ConstructionReport> {
    let net = div_segment_net(a, b, eps, 0.0)?;
    let mut r = rng::stream(seed, 105);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let y = r.random_range(a..=b);
            vec![r.random_range(-y..=y), y]
        })
        .collect();
    Ok(report(
        "div_segment_net",
        net,
        eps,
        format!("y in [{a},{b}], |x| <= y, {n} uniform pairs"),
        &pts,
        segment_bound(a, eps, 0.0),
        |x| x[0] / x[1],
    ))
}

pub fn audit_div(k_max: usize, eps: f64, n: usize, seed: u64) -> Result<ConstructionReport> {
    let net = div_net(k_max, eps)?;
    let mut r = rng::stream(seed, 106);
    let lo = -(k_max as f64) * 2f64.ln();
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let y = r.random_range(lo..=0.0).exp();
            vec![r.random_range(-y..=y), y]
        })
        .collect();
    Ok(report(
        "div_net",
        net,
        eps,
        format!("y log-uniform in [2^-{k_max},1], |x| <= y, {n} pairs"),
        &pts,
        div_bound(k_max, eps),
        |x| x[0] / x[1],
    ))
}

/// Largest `|sum_k g_k(y) - 1|` over `n` points of `[-1, 2]` and the dyadic knots.
pub fn audit_pou(k_max: usize, n: usize) -> Result<f64> {
    let g = pou_weights(k_max)?;
    let mut ys: Vec<f64> = (0..n).map(|i| -1.0 + 3.0 * i as f64 / (n - 1) as f64).collect();
    ys.extend(dyadic_knots(k_max));
    Ok(ys
        .iter()
        .map(|&y| (g.iter().map(|n| n.evaluate(&[y]).unwrap()[0]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max))
}

/// The default suite of primitive audits at `n` points each.
pub fn verify_all(n: usize, seed: u64) -> Result<(Vec<ConstructionReport>, f64)> {
    let sched = DiffusionSchedule::new(0.3, 0.05, 2.0)?;
    let reports = vec![
        audit_mult(2, 4.0, 1e-3, n, seed)?,
        audit_mult(3, 2.0, 1e-4, n, seed)?,
        audit_exp(1e-4, 20.0, n)?,
        audit_chi(&sched, 0, 1e-3, n)?,
        audit_chi(&sched, 1, 1e-3, n)?,
        audit_chi(&sched, 2, 1e-3, n)?,
        audit_rho(&sched, 2, 2.0, 1e-2, n, seed)?,
        audit_omega(&sched, 2, 2.0, 1e-2, n, seed)?,
        audit_div_segment(0.25, 1.0, 1e-3, n, seed)?,
        audit_div(8, 1e-2, n, seed)?,
    ];
    Ok((reports, audit_pou(8, n)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        assert_eq!(clip_to_ball(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let c = clip_to_ball(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_to_ball(&[0.0, 0.0], 2.0), vec![0.0, 0.0]);
    }

    #[test]
    fn small_audits_pass() {
        let (reports, pou) = verify_all(500, 7).unwrap();
        for r in &reports {
            assert!(r.passed(), "{}", r.row());
        }
        assert!(pou <= 1e-12);
    }
}
