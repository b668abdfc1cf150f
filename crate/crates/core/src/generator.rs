//! Generator maps `g*: [0,1]^d -> R^D`, data sampling, and the local Taylor surrogate.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest integer strictly less than `beta`.
pub fn floor_beta(beta: f64) -> usize {
    let f = beta.floor();
    if f == beta {
        (f as usize).saturating_sub(1)
    } else {
        f as usize
    }
}

/// All multi-indices in `d` variables with total degree `<= max_deg`, ordered by degree and
/// then lexicographically (first axis most significant).
pub fn multi_indices(d: usize, max_deg: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for deg in 0..=max_deg {
        let mut cur = vec![0; d];
        push_degree(&mut out, &mut cur, 0, deg);
    }
    out
}

fn push_degree(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, axis: usize, left: usize) {
    if axis + 1 == cur.len() {
        cur[axis] = left;
        out.push(cur.clone());
        cur[axis] = 0;
        return;
    }
    for k in (0..=left).rev() {
        cur[axis] = k;
        push_degree(out, cur, axis + 1, left - k);
    }
    cur[axis] = 0;
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `k!` for a multi-index.
pub fn multi_factorial(k: &[usize]) -> f64 {
    k.iter().map(|&ki| factorial(ki)).product()
}

/// `v^k` for a multi-index.
pub fn multi_pow(v: &[f64], k: &[usize]) -> f64 {
    v.iter().zip(k).map(|(x, &p)| x.powi(p as i32)).product()
}

/// A user-supplied smooth map, registered programmatically.
pub trait GeneratorMap: Send + Sync {
    fn eval(&self, u: &[f64], out: &mut [f64]);
    /// Partial derivative `d^k g` at `u`; only orders up to `floor(beta)` are requested.
    fn partial(&self, k: &[usize], u: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Clone)]
pub enum GeneratorKind {
    Constant {
        c: Vec<f64>,
    },
    /// `g(u) = A u + b`, `A` stored row-major `D x d`.
    Affine {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// `g_l(u) = amp_l * sin(freq_l * u + phase_l)` for `d = 1`.
    Curve {
        amp: Vec<f64>,
        freq: Vec<f64>,
        phase: Vec<f64>,
    },
    /// `g_l(u) = c_l + b_l . u + u' Q_l u`, `b` row-major `D x d`, `Q` as `D` symmetric `d x d` blocks.
    Quadratic {
        c: Vec<f64>,
        b: Vec<f64>,
        q: Vec<f64>,
    },
    /// `c1` on `u_1 < 1/2`, `c2` on `u_1 >= 1/2`.
    Disconnected {
        c1: Vec<f64>,
        c2: Vec<f64>,
    },
    Custom(Arc<dyn GeneratorMap>),
}

impl fmt::Debug for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::Constant { c } => f.debug_struct("Constant").field("c", c).finish(),
            GeneratorKind::Affine { a, b } => {
                f.debug_struct("Affine").field("a", a).field("b", b).finish()
            }
            GeneratorKind::Curve { amp, freq, phase } => f
                .debug_struct("Curve")
                .field("amp", amp)
                .field("freq", freq)
                .field("phase", phase)
                .finish(),
            GeneratorKind::Quadratic { c, b, q } => f
                .debug_struct("Quadratic")
                .field("c", c)
                .field("b", b)
                .field("q", q)
                .finish(),
            GeneratorKind::Disconnected { c1, c2 } => f
                .debug_struct("Disconnected")
                .field("c1", c1)
                .field("c2", c2)
                .finish(),
            GeneratorKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A generator with its declared smoothness.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub d: usize,
    pub dim: usize,
    pub beta: f64,
    pub holder: f64,
    /// Factor applied to the raw parameters so that `sup ||g|| <= 1` (1 when no rescaling).
    pub scale: f64,
    pub kind: GeneratorKind,
}

/// Built-in generator description used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Constant { c: Vec<f64>, beta: f64 },
    Affine { d: usize, a: Vec<f64>, b: Vec<f64>, beta: f64 },
    Curve { amp: Vec<f64>, freq: Vec<f64>, phase: Vec<f64>, beta: f64 },
    Quadratic { d: usize, c: Vec<f64>, b: Vec<f64>, q: Vec<f64>, beta: f64 },
    Disconnected { d: usize, c1: Vec<f64>, c2: Vec<f64>, beta: f64 },
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<GeneratorSpec> {
        match self {
            GeneratorConfig::Constant { c, beta } => GeneratorSpec::constant(c.clone(), *beta),
            GeneratorConfig::Affine { d, a, b, beta } => {
                GeneratorSpec::affine(*d, a.clone(), b.clone(), *beta)
            }
            GeneratorConfig::Curve {
                amp,
                freq,
                phase,
                beta,
            } => GeneratorSpec::curve(amp.clone(), freq.clone(), phase.clone(), *beta),
            GeneratorConfig::Quadratic { d, c, b, q, beta } => {
                GeneratorSpec::quadratic(*d, c.clone(), b.clone(), q.clone(), *beta)
            }
            GeneratorConfig::Disconnected { d, c1, c2, beta } => {
                GeneratorSpec::disconnected(*d, c1.clone(), c2.clone(), *beta)
            }
        }
    }
}

/// Exact `sup |sin|` over `[lo, hi]`.
fn sup_abs_sin(lo: f64, hi: f64) -> f64 {
    // |sin| peaks at pi/2 + n*pi
    let n = ((lo - FRAC_PI_2) / std::f64::consts::PI).ceil();
    let peak = FRAC_PI_2 + n * std::f64::consts::PI;
    if peak <= hi {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta must be positive, got {beta}")))
    }
}

fn corners(d: usize) -> Vec<Vec<f64>> {
    (0..1usize << d)
        .map(|mask| (0..d).map(|i| ((mask >> i) & 1) as f64).collect())
        .collect()
}

impl GeneratorSpec {
    pub fn constant(c: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if c.is_empty() {
            return Err(Error::invalid("constant generator needs D >= 1"));
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
        let c: Vec<f64> = c.iter().map(|x| x * scale).collect();
        Ok(Self {
            name: "constant".into(),
            d: 1,
            dim: c.len(),
            beta,
            // every derivative and difference vanishes; the class only needs H > 0
            holder: f64::MIN_POSITIVE,
            scale,
            kind: GeneratorKind::Constant { c },
        })
    }

    pub fn affine(d: usize, a: Vec<f64>, b: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        let dim = b.len();
        if d == 0 || dim == 0 || a.len() != dim * d {
            return Err(Error::invalid("affine generator needs A of shape D x d and b of length D"));
        }
        let eval = |u: &[f64]| -> f64 {
            (0..dim)
                .map(|l| {
                    let v = b[l] + (0..d).map(|i| a[l * d + i] * u[i]).sum::<f64>();
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        };
        // a convex function peaks at a corner
        let sup = corners(d).iter().map(|c| eval(c)).fold(0.0, f64::max);
        let scale = if sup > 1.0 { 1.0 / sup } else { 1.0 };
        let a: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let b: Vec<f64> = b.iter().map(|x| x * scale).collect();
        let k = floor_beta(beta);
        let holder = (0..dim)
            .map(|l| {
                let row = &a[l * d..(l + 1) * d];
                if k == 0 {
                    row.iter().map(|x| x.abs()).sum::<f64>()
                } else {
                    row.iter().map(|x| x.abs()).fold(0.0, f64::max)
                }
            })
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        Ok(Self {
            name: "affine".into(),
            d,
            dim,
            beta,
            holder,
            scale,
            kind: GeneratorKind::Affine { a, b },
        })
    }

    /// Sinusoidal curve `u -> (amp_l sin(freq_l u + phase_l))_l` with `d = 1`.
    pub fn curve(amp: Vec<f64>, freq: Vec<f64>, phase: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        let dim = amp.len();
        if dim == 0 || freq.len() != dim || phase.len() != dim {
            return Err(Error::invalid("curve generator needs amp, freq, phase of equal length"));
        }
        if freq.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("curve frequencies must be non-negative"));
        }
        let n = 20_001;
        let mut sup: f64 = 0.0;
        for i in 0..n {
            let u = i as f64 / (n - 1) as f64;
            let s: f64 = (0..dim)
                .map(|l| (amp[l] * (freq[l] * u + phase[l]).sin()).powi(2))
                .sum();
            sup = sup.max(s.sqrt());
        }
        // the grid may miss the true peak by O(h^2), hence the small safety factor
        let scale = if sup > 1.0 { 1.0 / (sup * (1.0 + 1e-8)) } else { 1.0 };
        let amp: Vec<f64> = amp.iter().map(|x| x * scale).collect();
        let k = floor_beta(beta);
        let gamma = beta - k as f64;
        let mut holder: f64 = 0.0;
        for l in 0..dim {
            let (a, w, p) = (amp[l].abs(), freq[l], phase[l]);
            for j in 1..=k {
                let lo = p + j as f64 * FRAC_PI_2;
                holder = holder.max(a * w.powi(j as i32) * sup_abs_sin(lo, lo + w));
            }
            let top = a * w.powi(k as i32);
            let semi = if gamma == 1.0 {
                let lo = p + (k + 1) as f64 * FRAC_PI_2;
                a * w.powi(k as i32 + 1) * sup_abs_sin(lo, lo + w)
            } else if w <= 2.0 {
                top * w
            } else {
                top * 2f64.powf(1.0 - gamma) * w.powf(gamma)
            };
            holder = holder.max(semi);
        }
        Ok(Self {
            name: "curve".into(),
            d: 1,
            dim,
            beta,
            holder: holder.max(f64::MIN_POSITIVE),
            scale,
            kind: GeneratorKind::Curve { amp, freq, phase },
        })
    }

    pub fn quadratic(d: usize, c: Vec<f64>, b: Vec<f64>, q: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        let dim = c.len();
        if d == 0 || dim == 0 || b.len() != dim * d || q.len() != dim * d * d {
            return Err(Error::invalid("quadratic generator needs c (D), b (D x d), Q (D x d x d)"));
        }
        for l in 0..dim {
            for i in 0..d {
                for j in 0..d {
                    if q[l * d * d + i * d + j] != q[l * d * d + j * d + i] {
                        return Err(Error::invalid("quadratic blocks must be symmetric"));
                    }
                }
            }
        }
        let mut spec = Self {
            name: "quadratic".into(),
            d,
            dim,
            beta,
            holder: 0.0,
            scale: 1.0,
            kind: GeneratorKind::Quadratic {
                c: c.clone(),
                b: b.clone(),
                q: q.clone(),
            },
        };
        let per_axis = match d {
            1 => 20_001,
            2 => 301,
            _ => 41,
        };
        let sup = spec.sup_norm_on_grid(per_axis);
        let scale = if sup > 1.0 { 1.0 / (sup * (1.0 + 1e-6)) } else { 1.0 };
        let c: Vec<f64> = c.iter().map(|x| x * scale).collect();
        let b: Vec<f64> = b.iter().map(|x| x * scale).collect();
        let q: Vec<f64> = q.iter().map(|x| x * scale).collect();
        let k = floor_beta(beta);
        let mut holder: f64 = 0.0;
        for l in 0..dim {
            let ql = &q[l * d * d..(l + 1) * d * d];
            let bl = &b[l * d..(l + 1) * d];
            let grad_at = |u: &[f64], i: usize| -> f64 {
                bl[i] + 2.0 * (0..d).map(|j| ql[i * d + j] * u[j]).sum::<f64>()
            };
            let cs = corners(d);
            if k == 0 {
                for u in &cs {
                    holder = holder.max((0..d).map(|i| grad_at(u, i).abs()).sum());
                }
                continue;
            }
            for i in 0..d {
                for u in &cs {
                    holder = holder.max(grad_at(u, i).abs());
                }
            }
            if k == 1 {
                for i in 0..d {
                    holder = holder.max((0..d).map(|j| 2.0 * ql[i * d + j].abs()).sum());
                }
            } else {
                for v in ql {
                    holder = holder.max(2.0 * v.abs());
                }
            }
        }
        spec.holder = holder.max(f64::MIN_POSITIVE);
        spec.scale = scale;
        spec.kind = GeneratorKind::Quadratic { c, b, q };
        Ok(spec)
    }

    /// Two constant pieces split at `u_1 = 1/2`. Not Hölder continuous, so `H = inf`.
    pub fn disconnected(d: usize, c1: Vec<f64>, c2: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if d == 0 || c1.is_empty() || c1.len() != c2.len() {
            return Err(Error::invalid("disconnected generator needs two points of equal dimension"));
        }
        let n1 = c1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2 = c2.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sup = n1.max(n2);
        let scale = if sup > 1.0 { 1.0 / sup } else { 1.0 };
        Ok(Self {
            name: "disconnected".into(),
            d,
            dim: c1.len(),
            beta,
            holder: f64::INFINITY,
            scale,
            kind: GeneratorKind::Disconnected {
                c1: c1.iter().map(|x| x * scale).collect(),
                c2: c2.iter().map(|x| x * scale).collect(),
            },
        })
    }

    /// Registers a custom map; the caller declares `beta` and `H`.
    pub fn custom(
        name: &str,
        d: usize,
        dim: usize,
        beta: f64,
        holder: f64,
        map: Arc<dyn GeneratorMap>,
    ) -> Result<Self> {
        check_beta(beta)?;
        if !(holder > 0.0) {
            return Err(Error::invalid("Hölder constant must be positive"));
        }
        Ok(Self {
            name: name.into(),
            d,
            dim,
            beta,
            holder,
            scale: 1.0,
            kind: GeneratorKind::Custom(map),
        })
    }

    /// Same generator with a different declared Hölder constant.
    pub fn with_holder(mut self, holder: f64) -> Self {
        self.holder = holder;
        self
    }

    pub fn floor_beta(&self) -> usize {
        floor_beta(self.beta)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, GeneratorKind::Constant { .. })
    }

    /// Evaluates `g*(u)` into `out` (length `D`).
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        match &self.kind {
            GeneratorKind::Constant { c } => out.copy_from_slice(c),
            GeneratorKind::Affine { a, b } => {
                for l in 0..self.dim {
                    let mut v = b[l];
                    for i in 0..self.d {
                        v += a[l * self.d + i] * u[i];
                    }
                    out[l] = v;
                }
            }
            GeneratorKind::Curve { amp, freq, phase } => {
                for l in 0..self.dim {
                    out[l] = amp[l] * (freq[l] * u[0] + phase[l]).sin();
                }
            }
            GeneratorKind::Quadratic { c, b, q } => {
                let d = self.d;
                for l in 0..self.dim {
                    let mut v = c[l];
                    for i in 0..d {
                        v += b[l * d + i] * u[i];
                        for j in 0..d {
                            v += q[l * d * d + i * d + j] * u[i] * u[j];
                        }
                    }
                    out[l] = v;
                }
            }
            GeneratorKind::Disconnected { c1, c2 } => {
                out.copy_from_slice(if u[0] < 0.5 { c1 } else { c2 })
            }
            GeneratorKind::Custom(m) => m.eval(u, out),
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(u, &mut out);
        out
    }

    /// `d^k g*(u)` for the multi-index `k`.
    pub fn partial_into(&self, k: &[usize], u: &[f64], out: &mut [f64]) -> Result<()> {
        if k.len() != self.d {
            return Err(Error::invalid("multi-index length must equal d"));
        }
        let order: usize = k.iter().sum();
        if order == 0 {
            self.eval_into(u, out);
            return Ok(());
        }
        match &self.kind {
            GeneratorKind::Constant { .. } | GeneratorKind::Disconnected { .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
            GeneratorKind::Affine { a, .. } => {
                if order == 1 {
                    let i = k.iter().position(|&x| x == 1).unwrap();
                    for l in 0..self.dim {
                        out[l] = a[l * self.d + i];
                    }
                } else {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            GeneratorKind::Curve { amp, freq, phase } => {
                let j = k[0] as i32;
                for l in 0..self.dim {
                    out[l] = amp[l]
                        * freq[l].powi(j)
                        * (freq[l] * u[0] + phase[l] + j as f64 * FRAC_PI_2).sin();
                }
            }
            GeneratorKind::Quadratic { b, q, .. } => {
                let d = self.d;
                if order == 1 {
                    let i = k.iter().position(|&x| x == 1).unwrap();
                    for l in 0..self.dim {
                        let mut v = b[l * d + i];
                        for j in 0..d {
                            v += 2.0 * q[l * d * d + i * d + j] * u[j];
                        }
                        out[l] = v;
                    }
                } else if order == 2 {
                    let idx: Vec<usize> = (0..d).flat_map(|i| std::iter::repeat_n(i, k[i])).collect();
                    let (i, j) = (idx[0], idx[1]);
                    for l in 0..self.dim {
                        out[l] = 2.0 * q[l * d * d + i * d + j];
                    }
                } else {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            GeneratorKind::Custom(m) => m.partial(k, u, out)?,
        }
        Ok(())
    }

    pub fn partial(&self, k: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.partial_into(k, u, &mut out)?;
        Ok(out)
    }

    /// `max ||g(u)||` over a tensor grid with `per_axis` points per axis.
    pub fn sup_norm_on_grid(&self, per_axis: usize) -> f64 {
        let mut best: f64 = 0.0;
        let mut out = vec![0.0; self.dim];
        for_each_grid_point(self.d, per_axis, |u| {
            self.eval_into(u, &mut out);
            best = best.max(out.iter().map(|x| x * x).sum::<f64>().sqrt());
        });
        best
    }

    /// Draws `n` points `g*(U) + sigma_data * xi`.
    pub fn sample_data<R: Rng + ?Sized>(
        &self,
        sigma_data: f64,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::invalid("sample_data needs n >= 1"));
        }
        if !(0.0..1.0).contains(&sigma_data) {
            return Err(Error::invalid("sigma_data must lie in [0,1)"));
        }
        let mut u = vec![0.0; self.d];
        Ok((0..n)
            .map(|_| {
                for ui in u.iter_mut() {
                    *ui = rng::uniform(rng);
                }
                let mut x = self.eval(&u);
                for xi in x.iter_mut() {
                    *xi += sigma_data * rng::normal(rng);
                }
                x
            })
            .collect())
    }

    /// Human-readable metadata line.
    pub fn describe(&self) -> String {
        format!(
            "{} d={} D={} beta={} H={:.6e} scale={}",
            self.name, self.d, self.dim, self.beta, self.holder, self.scale
        )
    }
}

/// Calls `f` on every point of the tensor grid `{0, 1/(n-1), ..., 1}^d`.
pub fn for_each_grid_point(d: usize, per_axis: usize, mut f: impl FnMut(&[f64])) {
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(d as u32);
    let mut u = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for ui in u.iter_mut() {
            *ui = (r % per_axis) as f64 / (per_axis - 1) as f64;
            r /= per_axis;
        }
        f(&u);
    }
}

/// Uniform mesh of `[0,1]^d` with `N = ceil(1/eps)` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionGrid {
    pub eps: f64,
    pub n: usize,
    pub d: usize,
}

impl PartitionGrid {
    pub fn new(eps: f64, d: usize) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!("eps must lie in (0,1), got {eps}")));
        }
        let n = (1.0 / eps).ceil() as usize;
        Ok(Self { eps, n, d })
    }

    /// Cell side `1/N` (at most `eps`).
    pub fn width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn n_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Per-axis indices in `1..=N` of the flat cell number `flat`.
    pub fn cell_index(&self, flat: usize) -> Vec<usize> {
        let mut r = flat;
        (0..self.d)
            .map(|_| {
                let j = r % self.n + 1;
                r /= self.n;
                j
            })
            .collect()
    }

    pub fn flat_index(&self, j: &[usize]) -> usize {
        j.iter().rev().fold(0, |acc, &ji| acc * self.n + (ji - 1))
    }

    /// Anchor `u_j = j / N` (upper corner of cell `j`).
    pub fn anchor(&self, j: &[usize]) -> Vec<f64> {
        j.iter().map(|&ji| ji as f64 / self.n as f64).collect()
    }

    /// Lower corner of cell `j`.
    pub fn lower(&self, j: &[usize]) -> Vec<f64> {
        j.iter().map(|&ji| (ji - 1) as f64 / self.n as f64).collect()
    }

    /// Index of the cell containing `u`. Cells are `((j-1)/N, j/N]`, the first one closed, so
    /// points on a shared face go to the lexicographically smaller cell.
    pub fn locate(&self, u: &[f64]) -> Vec<usize> {
        let n = self.n;
        u.iter()
            .map(|&x| {
                let mut j = ((x * n as f64).ceil() as isize).clamp(1, n as isize) as usize;
                while j > 1 && x <= (j - 1) as f64 / n as f64 {
                    j -= 1;
                }
                while j < n && x > j as f64 / n as f64 {
                    j += 1;
                }
                j
            })
            .collect()
    }
}

/// Piecewise Taylor polynomial of `g*` of degree `floor(beta)` at the cell anchors.
#[derive(Debug, Clone)]
pub struct LocalPolySurrogate {
    pub grid: PartitionGrid,
    pub dim: usize,
    pub degree: usize,
    /// Multi-indices shared by all cells.
    pub indices: Vec<Vec<usize>>,
    /// `coeffs[cell][m][l] = d^{k_m} g_l(u_j) / k_m!`.
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl LocalPolySurrogate {
    pub fn build(gen: &GeneratorSpec, eps: f64) -> Result<Self> {
        let grid = PartitionGrid::new(eps, gen.d)?;
        let degree = gen.floor_beta();
        let indices = multi_indices(gen.d, degree);
        let mut coeffs = Vec::with_capacity(grid.n_cells());
        for flat in 0..grid.n_cells() {
            let j = grid.cell_index(flat);
            let anchor = grid.anchor(&j);
            let mut cell = Vec::with_capacity(indices.len());
            for k in &indices {
                let mut v = gen.partial(k, &anchor)?;
                let kf = multi_factorial(k);
                v.iter_mut().for_each(|x| *x /= kf);
                cell.push(v);
            }
            coeffs.push(cell);
        }
        Ok(Self {
            grid,
            dim: gen.dim,
            degree,
            indices,
            coeffs,
        })
    }

    /// Evaluates the polynomial of cell `flat` at `u` (no membership check).
    pub fn eval_cell_into(&self, flat: usize, u: &[f64], out: &mut [f64]) {
        let j = self.grid.cell_index(flat);
        let anchor = self.grid.anchor(&j);
        let du: Vec<f64> = u.iter().zip(&anchor).map(|(a, b)| a - b).collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (m, k) in self.indices.iter().enumerate() {
            let p = multi_pow(&du, k);
            for l in 0..self.dim {
                out[l] += self.coeffs[flat][m][l] * p;
            }
        }
    }

    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        let j = self.grid.locate(u);
        self.eval_cell_into(self.grid.flat_index(&j), u, out);
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(u, &mut out);
        out
    }

    /// Max of `||g*(u) - g°(u)||` over `per_cell` points per axis in every cell.
    pub fn sup_error(&self, gen: &GeneratorSpec, per_cell: usize) -> f64 {
        let per_cell = per_cell.max(2);
        let h = self.grid.width();
        let mut worst: f64 = 0.0;
        let mut g = vec![0.0; self.dim];
        let mut s = vec![0.0; self.dim];
        let mut u = vec![0.0; self.grid.d];
        for flat in 0..self.grid.n_cells() {
            let lo = self.grid.lower(&self.grid.cell_index(flat));
            for_each_grid_point(self.grid.d, per_cell, |w| {
                for i in 0..u.len() {
                    u[i] = (lo[i] + w[i] * h).min(1.0);
                }
                gen.eval_into(&u, &mut g);
                self.eval_cell_into(flat, &u, &mut s);
                let e2: f64 = g.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
                worst = worst.max(e2.sqrt());
            });
        }
        worst
    }

    /// Max of `||g°(u)||` over the same audit grid.
    pub fn sup_norm(&self, per_cell: usize) -> f64 {
        let h = self.grid.width();
        let mut best: f64 = 0.0;
        let mut s = vec![0.0; self.dim];
        let mut u = vec![0.0; self.grid.d];
        for flat in 0..self.grid.n_cells() {
            let lo = self.grid.lower(&self.grid.cell_index(flat));
            for_each_grid_point(self.grid.d, per_cell, |w| {
                for i in 0..u.len() {
                    u[i] = lo[i] + w[i] * h;
                }
                self.eval_cell_into(flat, &u, &mut s);
                best = best.max(s.iter().map(|x| x * x).sum::<f64>().sqrt());
            });
        }
        best
    }
}

/// `H d^floor(beta) eps^beta sqrt(D) / floor(beta)!`.
pub fn surrogate_error_bound(gen: &GeneratorSpec, eps: f64) -> f64 {
    let k = gen.floor_beta();
    gen.holder * (gen.d as f64).powi(k as i32) * eps.powf(gen.beta) * (gen.dim as f64).sqrt()
        / factorial(k)
}

/// Built-in generators used by tests, benches and default configs.
pub mod zoo {
    use super::*;
    use std::f64::consts::PI;

    /// `sin(2 pi u)` in `R^1`, `beta = 2`, `H = 4 pi^2`.
    pub fn sine() -> GeneratorSpec {
        GeneratorSpec::curve(vec![1.0], vec![2.0 * PI], vec![0.0], 2.0).unwrap()
    }

    /// Unit circle `(cos 2 pi u, sin 2 pi u)` with the given `beta`.
    pub fn circle(beta: f64) -> GeneratorSpec {
        GeneratorSpec::curve(vec![1.0, 1.0], vec![2.0 * PI, 2.0 * PI], vec![FRAC_PI_2, 0.0], beta)
            .unwrap()
    }

    /// Gently curved arc with a small Hölder constant, usable in the full network assembly.
    pub fn gentle_curve(dim: usize) -> GeneratorSpec {
        let amp = vec![0.8 / (dim as f64).sqrt(); dim];
        let freq = vec![1.5; dim];
        let phase: Vec<f64> = (0..dim).map(|l| 0.3 + l as f64 * FRAC_PI_2).collect();
        GeneratorSpec::curve(amp, freq, phase, 2.0).unwrap()
    }

    pub fn affine_segment(dim: usize) -> GeneratorSpec {
        let a: Vec<f64> = (0..dim).map(|l| if l == 0 { 0.8 } else { -0.3 }).collect();
        let b: Vec<f64> = (0..dim).map(|l| if l == 0 { -0.4 } else { 0.1 }).collect();
        GeneratorSpec::affine(1, a, b, 2.0).unwrap()
    }

    pub fn affine_plane() -> GeneratorSpec {
        GeneratorSpec::affine(2, vec![0.5, 0.0, 0.0, 0.5, 0.2, -0.2], vec![-0.25, -0.25, 0.1], 2.0)
            .unwrap()
    }

    pub fn quadratic_patch() -> GeneratorSpec {
        // (u1, u2, u1^2 + u2^2 - u1 u2), then rescaled into the unit ball
        let c = vec![-0.5, -0.5, 0.0];
        let b = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let q = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -0.5, -0.5, 1.0];
        GeneratorSpec::quadratic(2, c, b, q, 2.0).unwrap()
    }

    pub fn constant(c: Vec<f64>) -> GeneratorSpec {
        GeneratorSpec::constant(c, 2.0).unwrap()
    }

    pub fn two_atoms(dim: usize) -> GeneratorSpec {
        let c1: Vec<f64> = (0..dim).map(|l| if l == 0 { -0.6 } else { 0.2 }).collect();
        let c2: Vec<f64> = (0..dim).map(|l| if l == 0 { 0.6 } else { 0.2 }).collect();
        GeneratorSpec::disconnected(1, c1, c2, 1.0).unwrap()
    }
}
