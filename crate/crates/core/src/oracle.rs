//! Quadrature oracles for the exact and surrogate scores, tail quantities, and the
//! analytic-derivative bound check.
//!
//! The density of `X_t` is a continuous Gaussian mixture over `u in [0,1]^d`. A tensor
//! Gauss-Legendre rule turns it into a finite mixture ([`Mixture`]) whose log-density and
//! posterior mean are evaluated with a single shared logsumexp normalizer.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::generator::{for_each_grid_point, GeneratorSpec, LocalPolySurrogate};
use crate::rng;
use crate::schedule::{DiffusionSchedule, ScheduleValues};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    if n == 1 {
        return (vec![mid], vec![b - a]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

/// Tensor Gauss-Legendre rule on `[0,1]^d`, optionally composite over equal panels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes_per_axis: usize,
    #[serde(default = "one")]
    pub panels: usize,
}

fn one() -> usize {
    1
}

impl QuadratureRule {
    pub fn new(nodes_per_axis: usize) -> Self {
        Self {
            nodes_per_axis,
            panels: 1,
        }
    }

    /// 64 nodes for `d = 1`, 32 for `d = 2`, 16 for `d = 3`.
    pub fn default_for(d: usize) -> Self {
        Self::new(match d {
            1 => 64,
            2 => 32,
            _ => 16,
        })
    }

    /// Default rule for `gen`, with a panel break at `u_1 = 1/2` for the two-piece map.
    pub fn for_generator(gen: &GeneratorSpec) -> Self {
        let mut q = Self::default_for(gen.d);
        if matches!(gen.kind, crate::generator::GeneratorKind::Disconnected { .. }) {
            q.panels = 2;
        }
        q
    }

    pub fn with_panels(mut self, panels: usize) -> Self {
        self.panels = panels.max(1);
        self
    }

    /// Same rule with twice the nodes per axis.
    pub fn refined(self) -> Self {
        Self {
            nodes_per_axis: 2 * self.nodes_per_axis,
            panels: self.panels,
        }
    }

    /// Nodes and weights of the 1-D composite rule on `[lo, hi]`.
    pub fn axis(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.panels.max(1);
        let mut xs = Vec::with_capacity(p * self.nodes_per_axis);
        let mut ws = Vec::with_capacity(p * self.nodes_per_axis);
        for k in 0..p {
            let a = lo + (hi - lo) * k as f64 / p as f64;
            let b = lo + (hi - lo) * (k + 1) as f64 / p as f64;
            let (x, w) = gauss_legendre(self.nodes_per_axis, a, b);
            xs.extend(x);
            ws.extend(w);
        }
        (xs, ws)
    }

    /// Tensor nodes (flat, `d` per node) and weights on the box `lo + [0, h]^d`.
    pub fn tensor_on(&self, lo: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let d = lo.len();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = lo.iter().map(|&l| self.axis(l, l + h)).collect();
        let m = axes[0].0.len();
        let total = m.pow(d as u32);
        let mut pts = Vec::with_capacity(total * d);
        let mut wts = Vec::with_capacity(total);
        for idx in 0..total {
            let mut r = idx;
            let mut w = 1.0;
            for (x, wx) in &axes {
                let k = r % m;
                r /= m;
                pts.push(x[k]);
                w *= wx[k];
            }
            wts.push(w);
        }
        (pts, wts)
    }

    pub fn tensor(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        self.tensor_on(&vec![0.0; d], 1.0)
    }
}

/// Log-density, score and `f` at one `(y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub log_density: f64,
    pub score: Vec<f64>,
    pub f_value: Vec<f64>,
}

/// Finite Gaussian mixture `sum_i w_i N(m_t c_i, tvar I)` obtained by quadrature in `u`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub dim: usize,
    /// Flat `n x D` centers `c_i`.
    pub centers: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl Mixture {
    fn from_parts(dim: usize, centers: Vec<f64>, weights: &[f64]) -> Self {
        let n = weights.len();
        let first = &centers[..dim];
        let all_equal = (1..n).all(|i| &centers[i * dim..(i + 1) * dim] == first);
        if all_equal {
            // a single atom: collapse so Gaussian closed forms are reproduced exactly
            return Self {
                dim,
                centers: first.to_vec(),
                log_weights: vec![0.0],
            };
        }
        Self {
            dim,
            centers,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        }
    }

    /// Quadrature image of `g*`.
    pub fn from_generator(gen: &GeneratorSpec, quad: &QuadratureRule) -> Result<Self> {
        check_d(gen.d)?;
        let (pts, wts) = quad.tensor(gen.d);
        let mut centers = vec![0.0; wts.len() * gen.dim];
        for (i, c) in centers.chunks_mut(gen.dim).enumerate() {
            gen.eval_into(&pts[i * gen.d..(i + 1) * gen.d], c);
        }
        Ok(Self::from_parts(gen.dim, centers, &wts))
    }

    /// Quadrature image of the piecewise surrogate, one scaled rule per cell.
    pub fn from_surrogate(sur: &LocalPolySurrogate, quad: &QuadratureRule) -> Result<Self> {
        let d = sur.grid.d;
        check_d(d)?;
        let total = quad.nodes_per_axis * quad.panels;
        let per_cell = QuadratureRule::new(total.div_ceil(sur.grid.n).max(8));
        let h = sur.grid.width();
        let mut centers = Vec::new();
        let mut weights = Vec::new();
        let mut c = vec![0.0; sur.dim];
        for flat in 0..sur.grid.n_cells() {
            let lo = sur.grid.lower(&sur.grid.cell_index(flat));
            let (pts, wts) = per_cell.tensor_on(&lo, h);
            for (i, w) in wts.iter().enumerate() {
                sur.eval_cell_into(flat, &pts[i * d..(i + 1) * d], &mut c);
                centers.extend_from_slice(&c);
                weights.push(*w);
            }
        }
        Ok(Self::from_parts(sur.dim, centers, &weights))
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Evaluates at `y` given precomputed schedule values (no domain checks).
    pub fn eval_at(&self, v: &ScheduleValues, y: &[f64]) -> Result<ScoreEval> {
        let dim = self.dim;
        let inv = 1.0 / (2.0 * v.tvar);
        let mut expo = Vec::with_capacity(self.len());
        let mut mx = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let c = self.center(i);
            let mut r2 = 0.0;
            for l in 0..dim {
                let diff = y[l] - v.m * c[l];
                r2 += diff * diff;
            }
            let e = self.log_weights[i] - r2 * inv;
            mx = mx.max(e);
            expo.push(e);
        }
        if mx == f64::NEG_INFINITY || mx.is_nan() {
            return Err(Error::numerical("quadrature underflow: every exponent is -inf"));
        }
        let mut den = 0.0;
        let mut num = vec![0.0; dim];
        for (i, e) in expo.iter().enumerate() {
            let w = (e - mx).exp();
            den += w;
            let c = self.center(i);
            for l in 0..dim {
                num[l] += w * c[l];
            }
        }
        let f_value: Vec<f64> = num.iter().map(|x| x / den).collect();
        let log_density = -0.5 * dim as f64 * (LN_2PI + v.tvar.ln()) + mx + den.ln();
        let score = y
            .iter()
            .zip(&f_value)
            .map(|(yl, fl)| -yl / v.tvar + (v.m / v.tvar) * fl)
            .collect();
        Ok(ScoreEval {
            log_density,
            score,
            f_value,
        })
    }

    pub fn eval(&self, sched: &DiffusionSchedule, y: &[f64], t: f64) -> Result<ScoreEval> {
        crate::error::ensure_dim(self.dim, y.len(), "mixture evaluation point")?;
        let v = checked_values(sched, t)?;
        self.eval_at(&v, y)
    }
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 || d > 3 {
        return Err(Error::invalid(format!("tensor quadrature supports 1 <= d <= 3, got {d}")));
    }
    Ok(())
}

fn checked_values(sched: &DiffusionSchedule, t: f64) -> Result<ScheduleValues> {
    if t <= 0.0 && sched.sigma_data == 0.0 {
        return Err(Error::invalid("oracle needs tilde sigma_t > 0"));
    }
    sched.eval(t)
}

/// `log p_t*(y)`.
pub fn density(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    y: &[f64],
    t: f64,
    quad: &QuadratureRule,
) -> Result<f64> {
    Ok(Mixture::from_generator(gen, quad)?.eval(sched, y, t)?.log_density)
}

/// Exact score `s*` and the ratio `f*` at `(y, t)`.
pub fn true_score(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    y: &[f64],
    t: f64,
    quad: &QuadratureRule,
) -> Result<ScoreEval> {
    Mixture::from_generator(gen, quad)?.eval(sched, y, t)
}

/// Score `s°` of the surrogate data law.
pub fn surrogate_score(
    sur: &LocalPolySurrogate,
    sched: &DiffusionSchedule,
    y: &[f64],
    t: f64,
    quad: &QuadratureRule,
) -> Result<ScoreEval> {
    Mixture::from_surrogate(sur, quad)?.eval(sched, y, t)
}

/// The truncation radius `R_t` used to define the compact set `K_t`.
pub fn truncation_radius(sched: &DiffusionSchedule, t: f64, eps: f64, beta: f64, dim: usize) -> f64 {
    let ts = sched.eval_unchecked(t).tsigma();
    let d = dim as f64;
    let lg = (-2.0 * beta * eps.ln() - d.ln()).max(0.0);
    ts * d.sqrt() + 16.0 * ts * (d * lg).sqrt().max(lg)
}

/// Radius with `P(||N(0, tvar I_D)|| > R) = eps^(2 beta) / 16`.
///
/// The literal radius leaves a denominator of order `exp(-R_t^2/tvar)` in the division
/// step, far below double precision; this one keeps the same tail budget with the exact
/// chi-square quantile instead of the sub-exponential bound.
pub fn practical_radius(sched: &DiffusionSchedule, t: f64, eps: f64, beta: f64, dim: usize) -> f64 {
    let ts = sched.eval_unchecked(t).tsigma();
    let tail = (eps.powf(2.0 * beta) / 16.0).clamp(1e-300, 0.5);
    let chi = ChiSquared::new(dim as f64).expect("positive degrees of freedom");
    ts * chi.inverse_cdf(1.0 - tail).sqrt()
}

/// Right-hand side of the tail-mass bound.
pub fn tail_bound(tvar: f64, r: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let excess = r * r - d * tvar;
    let a = excess / (d * tvar);
    let b = excess.max(0.0).sqrt() / tvar.sqrt();
    (-(a.min(b)) / 16.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub radius: f64,
}

/// Grid on `[0,1]^d` used for `K_t` membership: the quadrature resolution refined 4x per axis.
pub struct ImageGrid {
    pub dim: usize,
    pub points: Vec<f64>,
}

impl ImageGrid {
    pub fn new(gen: &GeneratorSpec, quad: &QuadratureRule) -> Self {
        let per_axis = 4 * quad.nodes_per_axis * quad.panels + 1;
        let mut points = Vec::new();
        let mut g = vec![0.0; gen.dim];
        for_each_grid_point(gen.d, per_axis, |u| {
            gen.eval_into(u, &mut g);
            points.extend_from_slice(&g);
        });
        Self {
            dim: gen.dim,
            points,
        }
    }

    /// `min_u ||y - m g(u)||^2` over the grid.
    pub fn min_dist2(&self, y: &[f64], m: f64) -> f64 {
        self.points
            .chunks(self.dim)
            .map(|c| c.iter().zip(y).map(|(ci, yi)| (yi - m * ci).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Monte-Carlo mass of `X_t` outside `K_t = {y : min_u ||y - m_t g*(u)|| <= R}`.
pub fn tail_mass_check<R: Rng + ?Sized>(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    t: f64,
    r: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<TailCheck> {
    let v = checked_values(sched, t)?;
    let dim = gen.dim;
    if r * r <= dim as f64 * v.tvar {
        return Err(Error::invalid("tail check needs R^2 > D tilde sigma_t^2"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("tail check needs n_mc >= 1"));
    }
    let grid = ImageGrid::new(gen, &QuadratureRule::for_generator(gen));
    let seed = rng::child_seed(rng);
    let ts = v.tsigma();
    let r2 = r * r;
    let outside: usize = crate::exec::map_chunks(n_mc, 4096, |range| {
        let mut local = rng::stream(seed, range.start as u64);
        let mut u = vec![0.0; gen.d];
        let mut g = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        let mut count = 0usize;
        for _ in range {
            for ui in u.iter_mut() {
                *ui = rng::uniform(&mut local);
            }
            gen.eval_into(&u, &mut g);
            let mut own = 0.0;
            for l in 0..dim {
                let z = ts * rng::normal(&mut local);
                y[l] = v.m * g[l] + z;
                own += z * z;
            }
            // the generating latent already certifies membership when close enough
            if own > r2 && grid.min_dist2(&y, v.m) > r2 {
                count += 1;
            }
        }
        count
    })
    .into_iter()
    .sum();
    let p = outside as f64 / n_mc as f64;
    Ok(TailCheck {
        empirical: p,
        std_error: (p * (1.0 - p) / n_mc as f64).sqrt(),
        bound: tail_bound(v.tvar, r, dim),
        radius: r,
    })
}

/// Chi-square tail `1 - F_D(R^2/tvar)`: the exact tail for a constant generator.
pub fn gaussian_tail(tvar: f64, r: f64, dim: usize) -> f64 {
    let chi = ChiSquared::new(dim as f64).expect("positive degrees of freedom");
    1.0 - chi.cdf(r * r / tvar)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub max_norm: f64,
    pub bound: f64,
}

/// `log h(y)` with `h(y) = int exp{y.g(u)/s2 - ||g(u)||^2/(2 s2)} du` by quadrature.
fn log_h(centers: &[f64], log_w: &[f64], dim: usize, y: &[f64], s2: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    let expo: Vec<f64> = centers
        .chunks(dim)
        .zip(log_w)
        .map(|(c, lw)| {
            let dot: f64 = c.iter().zip(y).map(|(a, b)| a * b).sum();
            let n2: f64 = c.iter().map(|a| a * a).sum();
            let e = lw + dot / s2 - n2 / (2.0 * s2);
            mx = mx.max(e);
            e
        })
        .collect();
    mx + expo.iter().map(|e| (e - mx).exp()).sum::<f64>().ln()
}

/// Finite-difference check of `||nabla^k log h|| <= 2^(k-1) (k-1)! max||g||^k / sigma^(2k)`.
pub fn analytic_derivative_check<R: Rng + ?Sized>(
    gen: &GeneratorSpec,
    sigma: f64,
    k: usize,
    n_points: usize,
    rng: &mut R,
) -> Result<DerivativeCheck> {
    if !(k == 1 || k == 2) {
        return Err(Error::invalid("analytic check supports k in {1, 2}"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let quad = QuadratureRule::for_generator(gen);
    let mix = Mixture::from_generator(gen, &quad)?;
    let dim = gen.dim;
    let s2 = sigma * sigma;
    let gmax = (0..mix.len())
        .map(|i| mix.center(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(gen.sup_norm_on_grid(if gen.d == 1 { 2001 } else { 65 }));
    let bound = 2f64.powi(k as i32 - 1) * gmax.powi(k as i32)
        / s2.powi(k as i32);
    let f = |y: &[f64]| -> Result<f64> {
        let v = log_h(&mix.centers, &mix.log_weights, dim, y, s2);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numerical("finite-difference stencil left the stable range of log h"))
        }
    };
    let eps = f64::EPSILON;
    let mut max_norm: f64 = 0.0;
    for _ in 0..n_points {
        let y: Vec<f64> = (0..dim).map(|_| 1.5 * rng::normal(rng)).collect();
        let shift = |i: usize, a: f64, j: usize, b: f64| -> Vec<f64> {
            let mut z = y.clone();
            z[i] += a;
            z[j] += b;
            z
        };
        if k == 1 {
            let h = eps.powf(1.0 / 3.0) * s2.max(0.05);
            let mut g2 = 0.0;
            for i in 0..dim {
                let d = (-f(&shift(i, 2.0 * h, i, 0.0))? + 8.0 * f(&shift(i, h, i, 0.0))?
                    - 8.0 * f(&shift(i, -h, i, 0.0))?
                    + f(&shift(i, -2.0 * h, i, 0.0))?)
                    / (12.0 * h);
                g2 += d * d;
            }
            max_norm = max_norm.max(g2.sqrt());
        } else {
            let h = eps.powf(1.0 / 6.0) * s2.max(0.05);
            let f0 = f(&y)?;
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for i in 0..dim {
                let d2 = (-f(&shift(i, 2.0 * h, i, 0.0))? + 16.0 * f(&shift(i, h, i, 0.0))?
                    - 30.0 * f0
                    + 16.0 * f(&shift(i, -h, i, 0.0))?
                    - f(&shift(i, -2.0 * h, i, 0.0))?)
                    / (12.0 * h * h);
                hess[(i, i)] = d2;
                for j in 0..i {
                    let m = (f(&shift(i, h, j, h))? - f(&shift(i, h, j, -h))?
                        - f(&shift(i, -h, j, h))?
                        + f(&shift(i, -h, j, -h))?)
                        / (4.0 * h * h);
                    hess[(i, j)] = m;
                    hess[(j, i)] = m;
                }
            }
            let eig = SymmetricEigen::new(hess);
            let spec = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
            max_norm = max_norm.max(spec);
        }
    }
    Ok(DerivativeCheck { max_norm, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::zoo;
    use statrs::function::erf::erf;

    fn phi_cdf(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn gl_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(10, 0.0, 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for p in 0..20 {
            let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum();
            assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}");
        }
        for d in 1..=3 {
            let (_, w) = QuadratureRule::default_for(d).tensor(d);
            assert!(w.iter().all(|x| *x > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (_, w) = QuadratureRule::new(7).with_panels(3).tensor(2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_generator_is_gaussian() {
        let c = vec![0.3, -0.4];
        let gen = zoo::constant(c.clone());
        let sched = DiffusionSchedule::new(0.2, 0.01, 2.0).unwrap();
        let q = QuadratureRule::default_for(1);
        let (y, t) = ([0.5, 0.1], 0.7);
        let v = sched.eval(t).unwrap();
        let ev = true_score(&gen, &sched, &y, t, &q).unwrap();
        let r2: f64 = (0..2).map(|l| (y[l] - v.m * c[l]).powi(2)).sum();
        let lp = -(LN_2PI + v.tvar.ln()) - r2 / (2.0 * v.tvar);
        assert!((ev.log_density - lp).abs() <= 1e-12 * lp.abs());
        assert_eq!(ev.f_value, c);
        for l in 0..2 {
            let s = -(y[l] - v.m * c[l]) / v.tvar;
            assert!((ev.score[l] - s).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }

    #[test]
    fn linear_generator_matches_erf_closed_form() {
        let gen = GeneratorSpec::affine(1, vec![1.0], vec![0.0], 2.0).unwrap();
        let sched = DiffusionSchedule::new(0.0, 0.05, 1.0).unwrap();
        let q = QuadratureRule::default_for(1);
        for &(y, t) in &[(0.3, 0.5), (-0.2, 0.1), (1.4, 0.9), (0.5, 0.05)] {
            let v = sched.eval(t).unwrap();
            let s = v.tsigma();
            let (a, b) = ((y - v.m) / s, y / s);
            let mass = phi_cdf(b) - phi_cdf(a);
            let dens = mass / v.m;
            let ev = true_score(&gen, &sched, &[y], t, &q).unwrap();
            assert!((ev.log_density - dens.ln()).abs() < 1e-8, "{y} {t}");
            // posterior of u is a truncated normal with mean y/m and sd s/m
            let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mean_u = y / v.m + (s / v.m) * (pdf(b) - pdf(a)) / mass;
            assert!((ev.f_value[0] - mean_u).abs() < 1e-8, "{} vs {mean_u}", ev.f_value[0]);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let gen = zoo::sine();
        let sched = DiffusionSchedule::new(0.1, 0.1, 1.0).unwrap();
        let mix = Mixture::from_generator(&gen, &QuadratureRule::default_for(1)).unwrap();
        let (ys, ws) = gauss_legendre(400, -4.0, 4.0);
        let total: f64 = ys
            .iter()
            .zip(&ws)
            .map(|(y, w)| w * mix.eval(&sched, &[*y], 0.3).unwrap().log_density.exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_atoms_symmetric_point_gives_midpoint() {
        let gen = zoo::two_atoms(2);
        let sched = DiffusionSchedule::new(0.1, 0.05, 1.0).unwrap();
        let q = QuadratureRule::for_generator(&gen);
        let ev = true_score(&gen, &sched, &[0.0, 0.7], 0.4, &q).unwrap();
        assert!(ev.f_value[0].abs() < 1e-14);
        assert!((ev.f_value[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn recomposition_and_f_bound() {
        let gen = zoo::circle(2.0);
        let sched = DiffusionSchedule::new(0.0, 0.01, 2.0).unwrap();
        let mix = Mixture::from_generator(&gen, &QuadratureRule::default_for(1)).unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..200 {
            let t = 0.01 + 1.99 * rng::uniform(&mut r);
            let y = [3.0 * rng::normal(&mut r), 3.0 * rng::normal(&mut r)];
            let v = sched.eval(t).unwrap();
            let ev = mix.eval_at(&v, &y).unwrap();
            let nf = ev.f_value.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(nf <= 1.0 + 1e-8);
            for l in 0..2 {
                let res = ev.score[l] + y[l] / v.tvar - (v.m / v.tvar) * ev.f_value[l];
                assert!(res.abs() <= 1e-12 * (y[l] / v.tvar).abs().max(1.0));
            }
        }
    }

    #[test]
    fn far_points_do_not_underflow() {
        let gen = zoo::sine();
        let sched = DiffusionSchedule::new(0.0, 0.001, 1.0).unwrap();
        let ev = true_score(&gen, &sched, &[3.0], 0.001, &QuadratureRule::default_for(1)).unwrap();
        assert!(ev.log_density < -1000.0 && ev.log_density.is_finite());
        assert!((ev.f_value[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_surrogate_agrees_with_true_score() {
        let gen = zoo::affine_segment(2);
        let sur = LocalPolySurrogate::build(&gen, 0.2).unwrap();
        let sched = DiffusionSchedule::new(0.1, 0.05, 1.0).unwrap();
        let q = QuadratureRule::default_for(1);
        let a = true_score(&gen, &sched, &[0.2, -0.1], 0.3, &q).unwrap();
        let b = surrogate_score(&sur, &sched, &[0.2, -0.1], 0.3, &q).unwrap();
        assert!((a.log_density - b.log_density).abs() < 1e-10);
        let c = zoo::constant(vec![0.5]);
        let sur = LocalPolySurrogate::build(&c, 0.1).unwrap();
        let a = true_score(&c, &sched, &[0.2], 0.3, &q).unwrap();
        let b = surrogate_score(&sur, &sched, &[0.2], 0.3, &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn radius_plug_in() {
        let sched = DiffusionSchedule::new(0.0, 0.01, 2.0).unwrap();
        let t = 0.5;
        let ts = sched.eval(t).unwrap().tsigma();
        // eps^(-2 beta) = e D with D = 1, beta = 1
        let eps = (-0.5f64).exp();
        assert!((truncation_radius(&sched, t, eps, 1.0, 1) - 17.0 * ts).abs() < 1e-12);
        let r = truncation_radius(&sched, t, 0.1, 1.0, 2);
        let lg = (100.0f64 / 2.0).ln();
        let other = ts * 2f64.sqrt() + 16.0 * ts * (2.0 * lg).sqrt().max(lg);
        assert!((r - other).abs() < 1e-12);
        let s2 = DiffusionSchedule::new(0.0, 0.01, 2.0).unwrap();
        let tail = gaussian_tail(s2.eval(t).unwrap().tvar, practical_radius(&s2, t, 0.2, 1.0, 2), 2);
        assert!((tail - 0.04 / 16.0).abs() < 1e-9);
    }

    #[test]
    fn tail_of_constant_generator_is_chi_square() {
        let gen = zoo::constant(vec![0.2, 0.1]);
        let sched = DiffusionSchedule::new(0.1, 0.01, 2.0).unwrap();
        let t = 0.3;
        let v = sched.eval(t).unwrap();
        let r = 2.0 * v.tsigma();
        let tc = tail_mass_check(&gen, &sched, t, r, 20_000, &mut rng::stream(4, 0)).unwrap();
        let exact = gaussian_tail(v.tvar, r, 2);
        let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((tc.empirical - exact).abs() <= 4.0 * se);
        assert!(tail_mass_check(&gen, &sched, t, 0.1 * v.tsigma(), 10, &mut rng::stream(4, 0)).is_err());
    }

    #[test]
    fn analytic_check_equality_case() {
        let gen = zoo::constant(vec![0.6, 0.0]);
        let c1 = analytic_derivative_check(&gen, 0.5, 1, 5, &mut rng::stream(1, 0)).unwrap();
        assert!((c1.max_norm - 0.6 / 0.25).abs() < 1e-7);
        assert!((c1.bound - 0.6 / 0.25).abs() < 1e-12);
        let c2 = analytic_derivative_check(&gen, 0.5, 2, 5, &mut rng::stream(1, 0)).unwrap();
        assert!(c2.max_norm < 1e-5);
        let s = analytic_derivative_check(&zoo::sine(), 0.5, 1, 50, &mut rng::stream(2, 0)).unwrap();
        assert!(s.max_norm <= s.bound);
    }
}
