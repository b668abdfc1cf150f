//! Denoising score matching: score models, the conditional-score loss, empirical risk
//! minimization, and integrated score error.
//!
//! Time integrals over `[t0, T]` use Gauss-Legendre nodes in `log t`; the integrands behave
//! like `1/t` near small `t0`, which the logarithmic substitution flattens.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::constructions::{clip_to_ball, AssembledScore};
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::GeneratorSpec;
use crate::netcalc::{Layer, ReluNet, SparseMatrix};
use crate::oracle::{gauss_legendre, Mixture, QuadratureRule};
use crate::rng::{self, StreamRng};
use crate::schedule::{DiffusionSchedule, ScheduleValues};
use crate::stats;

/// Radius of the head clipping in the estimator class.
pub const CLIP_RADIUS: f64 = 2.0;

/// Schedule features appended to `(y, t)` by the trainable backend.
const EMBED: usize = 3;

/// Batch rows handled by one gradient task.
const GRAD_CHUNK: usize = 32;

/// Feed-forward ReLU network with dense layers, stored column-major for batched passes.
///
/// Inputs are `(y, t, e^{-t}, 1 - e^{-2t})`; the output is `f(y, t)` in `R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dim: usize,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

struct Cache {
    /// Post-activation inputs of every layer; entry 0 is the feature matrix.
    acts: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

impl Mlp {
    pub fn in_dim(dim: usize) -> usize {
        dim + 1 + EMBED
    }

    /// He-initialized network with the given hidden widths; the last layer starts small.
    pub fn random(dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut r = rng::stream(seed, 0xA11CE);
        let mut sizes = vec![Self::in_dim(dim)];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let n_layers = sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (j, w) in sizes.windows(2).enumerate() {
            let scale = if j + 1 == n_layers {
                0.1 / (w[0] as f64).sqrt()
            } else {
                (2.0 / w[0] as f64).sqrt()
            };
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| scale * rng::normal(&mut r)));
            biases.push(DVector::zeros(w[1]));
        }
        Self {
            dim,
            weights,
            biases,
        }
    }

    pub fn features_into(y: &[f64], t: f64, out: &mut [f64]) {
        let d = y.len();
        out[..d].copy_from_slice(y);
        out[d] = t;
        out[d + 1] = (-t).exp();
        out[d + 2] = -(-2.0 * t).exp_m1();
    }

    /// Feature matrix with one column per point; `ys` is flat `n x D`.
    fn feature_matrix(&self, ys: &[f64], ts: &[f64]) -> DMatrix<f64> {
        let n = ts.len();
        let rows = Self::in_dim(self.dim);
        let mut x = DMatrix::zeros(rows, n);
        for (j, &t) in ts.iter().enumerate() {
            let col = x.column_mut(j);
            let slice = col.data.into_slice_mut();
            Self::features_into(&ys[j * self.dim..(j + 1) * self.dim], t, slice);
        }
        x
    }

    fn layer(&self, j: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights[j] * a;
        for mut col in z.column_iter_mut() {
            col += &self.biases[j];
        }
        z
    }

    fn forward_cache(&self, x: DMatrix<f64>) -> Cache {
        let last = self.weights.len() - 1;
        let mut acts = vec![x];
        for j in 0..last {
            let mut z = self.layer(j, &acts[j]);
            z.apply(|v| *v = v.max(0.0));
            acts.push(z);
        }
        let out = self.layer(last, &acts[last]);
        Cache { acts, out }
    }

    /// `f` at every `(y_j, t_j)`, one column per point.
    pub fn forward(&self, ys: &[f64], ts: &[f64]) -> DMatrix<f64> {
        self.forward_cache(self.feature_matrix(ys, ts)).out
    }

    /// Parameter gradients for output sensitivities `g_out` (`D x n`).
    fn backward(&self, cache: &Cache, g_out: DMatrix<f64>) -> Grads {
        let n_layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); n_layers];
        let mut gb = vec![DVector::zeros(0); n_layers];
        let mut delta = g_out;
        for j in (0..n_layers).rev() {
            gw[j] = &delta * cache.acts[j].transpose();
            gb[j] = delta.column_sum();
            if j > 0 {
                let mut prev = self.weights[j].transpose() * &delta;
                prev.zip_apply(&cache.acts[j], |p, a| {
                    if a <= 0.0 {
                        *p = 0.0
                    }
                });
                delta = prev;
            }
        }
        Grads {
            w: gw,
            b: gb,
            theta: 0.0,
        }
    }

    /// The same map as a [`ReluNet`] on the feature vector.
    pub fn to_relunet(&self) -> Result<ReluNet> {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                let (rows, cols) = w.shape();
                let dense: Vec<f64> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| w[(r, c)]).collect();
                Layer::new(SparseMatrix::from_dense(rows, cols, &dense)?, b.iter().map(|v| -v).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        ReluNet::new(layers)
    }

    pub fn from_relunet(net: &ReluNet) -> Result<Self> {
        let in_dim = net.in_dim;
        if in_dim < EMBED + 2 {
            return Err(Error::invalid("trainable network input is (y, t, e^-t, 1-e^-2t)"));
        }
        let dim = in_dim - 1 - EMBED;
        if net.out_dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: net.out_dim,
                context: "trainable network output",
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in net.layers() {
            let dense = l.a.to_dense();
            weights.push(DMatrix::from_row_slice(l.a.rows, l.a.cols, &dense));
            biases.push(DVector::from_iterator(l.b.len(), l.b.iter().map(|v| -v)));
        }
        Ok(Self {
            dim,
            weights,
            biases,
        })
    }
}

#[derive(Debug, Clone)]
struct Grads {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    theta: f64,
}

impl Grads {
    fn zeros_like(m: &Mlp) -> Self {
        Self {
            w: m.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            b: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            theta: 0.0,
        }
    }

    fn add(&mut self, o: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&o.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&o.b) {
            *a += b;
        }
        self.theta += o.theta;
    }

    fn norm(&self) -> f64 {
        let s: f64 = self.w.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.b.iter().map(|b| b.norm_squared()).sum::<f64>()
            + self.theta * self.theta;
        s.sqrt()
    }

    fn scale(&mut self, f: f64) {
        self.w.iter_mut().for_each(|w| *w *= f);
        self.b.iter_mut().for_each(|b| *b *= f);
        self.theta *= f;
    }
}

/// Where `f(y, t)` comes from.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Quadrature mixture of the data law (`s*`) or of a surrogate law (`s°`). The
    /// schedule's `sigma_data` is used and no clipping is applied.
    Oracle(Arc<Mixture>),
    /// A network on `(y, t)`, e.g. the constructive approximation.
    Net(Arc<ReluNet>),
    Trainable(Mlp),
    /// The identically zero score (not of the recomposed form).
    Zero,
}

/// Score estimator `s(y,t) = -y/v + m_t clip(f(y,t), 2)/v` with `v = m_t^2 sigma^2 + sigma_t^2`.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    pub dim: usize,
    pub backend: Backend,
    /// `sigma` in `v`; ignored by the oracle backend.
    pub sigma: f64,
    /// Multiplies `f` before clipping.
    pub f_scale: f64,
}

/// Quadrature resolution for oracle scores, refined until Gaussian bumps of width
/// `tilde sigma_{t0}` along the image are resolved.
pub fn oracle_rule(gen: &GeneratorSpec, sched: &DiffusionSchedule) -> QuadratureRule {
    let base = QuadratureRule::for_generator(gen);
    if gen.is_constant() {
        return base;
    }
    let per_axis = if gen.d == 1 { 401 } else { 41 };
    let mut lip: f64 = 0.0;
    crate::generator::for_each_grid_point(gen.d, per_axis, |u| {
        for i in 0..gen.d {
            let mut k = vec![0; gen.d];
            k[i] = 1;
            if let Ok(g) = gen.partial(&k, u) {
                lip = lip.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
    });
    let ts = sched.tvar_t0().sqrt();
    let cap = match gen.d {
        1 => 1024,
        2 => 96,
        _ => 24,
    };
    let want = (10.0 * lip / ts).ceil() as usize;
    let nodes = want.clamp(base.nodes_per_axis, cap);
    QuadratureRule::new(nodes.div_ceil(base.panels)).with_panels(base.panels)
}

impl ScoreModel {
    /// Exact score of the data law.
    pub fn oracle(gen: &GeneratorSpec, sched: &DiffusionSchedule) -> Result<Self> {
        let mix = Mixture::from_generator(gen, &oracle_rule(gen, sched))?;
        Ok(Self {
            dim: gen.dim,
            backend: Backend::Oracle(Arc::new(mix)),
            sigma: sched.sigma_data,
            f_scale: 1.0,
        })
    }

    /// Score of the piecewise-polynomial surrogate law.
    pub fn surrogate(
        sur: &crate::generator::LocalPolySurrogate,
        gen: &GeneratorSpec,
        sched: &DiffusionSchedule,
    ) -> Result<Self> {
        let mix = Mixture::from_surrogate(sur, &oracle_rule(gen, sched))?;
        Ok(Self {
            dim: sur.dim,
            backend: Backend::Oracle(Arc::new(mix)),
            sigma: sched.sigma_data,
            f_scale: 1.0,
        })
    }

    /// Network on `(y, t)` with output `f`.
    pub fn from_net(net: ReluNet, sigma: f64) -> Result<Self> {
        if net.in_dim < 2 || net.out_dim + 1 != net.in_dim {
            return Err(Error::invalid("score network maps (y, t) in R^(D+1) to f in R^D"));
        }
        check_sigma(sigma)?;
        Ok(Self {
            dim: net.out_dim,
            backend: Backend::Net(Arc::new(net)),
            sigma,
            f_scale: 1.0,
        })
    }

    pub fn from_assembly(a: &AssembledScore) -> Self {
        Self {
            dim: a.dim,
            backend: Backend::Net(Arc::new(a.f_net.clone())),
            sigma: a.sched.sigma_data,
            f_scale: 1.0,
        }
    }

    pub fn trainable(mlp: Mlp, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self {
            dim: mlp.dim,
            backend: Backend::Trainable(mlp),
            sigma,
            f_scale: 1.0,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            backend: Backend::Zero,
            sigma: 0.0,
            f_scale: 1.0,
        }
    }

    pub fn with_f_scale(mut self, f_scale: f64) -> Self {
        self.f_scale = f_scale;
        self
    }

    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::Oracle(_) => "oracle",
            Backend::Net(_) => "constructed-net",
            Backend::Trainable(_) => "trainable-net",
            Backend::Zero => "zero",
        }
    }

    /// Scores at points `ys` (flat `n x D`) and times `ts`, flat `n x D`.
    pub fn score_batch(&self, sched: &DiffusionSchedule, ys: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim;
        crate::error::ensure_dim(ts.len() * dim, ys.len(), "score batch points")?;
        if let Some(&t) = ts.iter().find(|&&t| !(t > 0.0 && t <= sched.t_max)) {
            return Err(Error::invalid(format!("score needs t in (0, T], got {t}")));
        }
        let mut out = vec![0.0; ys.len()];
        match &self.backend {
            Backend::Zero => {}
            Backend::Oracle(mix) => {
                for (j, &t) in ts.iter().enumerate() {
                    let v = sched.eval_unchecked(t);
                    let y = &ys[j * dim..(j + 1) * dim];
                    let e = mix.eval_at(&v, y)?;
                    for l in 0..dim {
                        out[j * dim + l] = (-y[l] + v.m * self.f_scale * e.f_value[l]) / v.tvar;
                    }
                }
            }
            Backend::Net(net) => {
                let mut x = vec![0.0; dim + 1];
                let mut scratch = Vec::new();
                for (j, &t) in ts.iter().enumerate() {
                    let y = &ys[j * dim..(j + 1) * dim];
                    x[..dim].copy_from_slice(y);
                    x[dim] = t;
                    let f = net.evaluate_with(&x, &mut scratch);
                    self.recompose(sched, y, t, &f, &mut out[j * dim..(j + 1) * dim]);
                }
            }
            Backend::Trainable(mlp) => {
                let f = mlp.forward(ys, ts);
                for (j, &t) in ts.iter().enumerate() {
                    let y = &ys[j * dim..(j + 1) * dim];
                    self.recompose(sched, y, t, f.column(j).as_slice(), &mut out[j * dim..(j + 1) * dim]);
                }
            }
        }
        Ok(out)
    }

    pub fn score(&self, sched: &DiffusionSchedule, y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.score_batch(sched, y, &[t])
    }

    fn recompose(&self, sched: &DiffusionSchedule, y: &[f64], t: f64, f: &[f64], out: &mut [f64]) {
        let v = sched.eval_unchecked(t);
        let den = v.m * v.m * self.sigma * self.sigma + v.var;
        let scaled: Vec<f64> = f.iter().map(|x| self.f_scale * x).collect();
        let c = clip_to_ball(&scaled, CLIP_RADIUS);
        for l in 0..y.len() {
            out[l] = (-y[l] + v.m * c[l]) / den;
        }
    }

    /// The network behind a network backend, for configuration statistics.
    pub fn network(&self) -> Result<Option<ReluNet>> {
        Ok(match &self.backend {
            Backend::Net(n) => Some((**n).clone()),
            Backend::Trainable(m) => Some(m.to_relunet()?),
            Backend::Oracle(_) | Backend::Zero => None,
        })
    }

    /// Text form: a short header followed by the network text format.
    pub fn to_text(&self) -> Result<String> {
        let (kind, net) = match &self.backend {
            Backend::Net(n) => ("constructed-net", (**n).clone()),
            Backend::Trainable(m) => ("trainable-net", m.to_relunet()?),
            Backend::Oracle(_) | Backend::Zero => {
                return Err(Error::invalid(
                    "only network backends are persisted; oracle and zero models are rebuilt from the config",
                ))
            }
        };
        let mut s = String::new();
        writeln!(s, "scoremodel 1").unwrap();
        writeln!(s, "backend {kind}").unwrap();
        writeln!(s, "dim {}", self.dim).unwrap();
        writeln!(s, "sigma {:.16e}", self.sigma).unwrap();
        writeln!(s, "f_scale {:.16e}", self.f_scale).unwrap();
        writeln!(s, "clip_radius {CLIP_RADIUS}").unwrap();
        s.push_str(&net.to_text());
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        const KEYS: [&str; 6] = ["scoremodel", "backend", "dim", "sigma", "f_scale", "clip_radius"];
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        });
        let mut vals = Vec::with_capacity(KEYS.len());
        let mut consumed = 0;
        for key in KEYS {
            let Some((i, line)) = lines.next() else {
                return Err(Error::parse(
                    "end of file",
                    format!("missing field `{key}` in score model header"),
                ));
            };
            consumed = i + 1;
            let mut parts = line.split_ascii_whitespace();
            let k = parts.next().unwrap_or("");
            let v = parts.next();
            match (k == key, v) {
                (true, Some(v)) => vals.push(v.to_string()),
                _ => {
                    return Err(Error::parse(
                        format!("line {}", i + 1),
                        format!("expected field `{key}`, found `{}`", line.trim()),
                    ))
                }
            }
        }
        let bad = |field: &str| Error::parse("score model header", format!("cannot parse field `{field}`"));
        if vals[0] != "1" {
            return Err(Error::parse("line 1", "unsupported score model format version"));
        }
        let dim: usize = vals[2].parse().map_err(|_| bad("dim"))?;
        let sigma: f64 = vals[3].parse().map_err(|_| bad("sigma"))?;
        let f_scale: f64 = vals[4].parse().map_err(|_| bad("f_scale"))?;
        let clip: f64 = vals[5].parse().map_err(|_| bad("clip_radius"))?;
        if clip != CLIP_RADIUS {
            return Err(Error::parse("score model header", "clip_radius must be 2"));
        }
        let rest: String = text.lines().skip(consumed).map(|l| format!("{l}\n")).collect();
        let net = ReluNet::from_text(&rest).map_err(|e| match e {
            Error::Parse { location, message } => Error::parse(format!("network section, {location}"), message),
            other => other,
        })?;
        let mut model = match vals[1].as_str() {
            "constructed-net" => Self::from_net(net, sigma)?,
            "trainable-net" => Self::trainable(Mlp::from_relunet(&net)?, sigma)?,
            other => return Err(Error::parse("score model header", format!("unknown backend `{other}`"))),
        };
        if model.dim != dim {
            return Err(Error::parse("score model header", "dim does not match the network"));
        }
        model.f_scale = f_scale;
        Ok(model)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if (0.0..1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must lie in [0,1), got {sigma}")))
    }
}

/// Monte-Carlo budget for loss estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Gauss-Legendre nodes in `log t`.
    pub n_t: usize,
    /// Draws of `X_t | X_0` per node.
    pub n_mc: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_t: usize, n_mc: usize, seed: u64) -> Self {
        Self { n_t, n_mc, seed }
    }

    fn check(&self) -> Result<()> {
        if self.n_t == 0 || self.n_mc == 0 {
            return Err(Error::invalid("Monte-Carlo budget needs n_t >= 1 and n_mc >= 1"));
        }
        Ok(())
    }

    fn reseed(self, tag: u64) -> Self {
        Self {
            seed: rng::mix(self.seed, tag),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Total number of `(X_0, t, X_t)` evaluations.
    pub n_mc: usize,
}

/// Nodes and weights for `int_{t0}^T dt` by Gauss-Legendre in `log t`.
pub fn time_nodes(sched: &DiffusionSchedule, n_t: usize) -> (Vec<f64>, Vec<f64>) {
    let (u, w) = gauss_legendre(n_t, sched.t0.ln(), sched.t_max.ln());
    let ts: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let ws = ts.iter().zip(&w).map(|(t, w)| t * w).collect();
    (ts, ws)
}

/// Draws of `X_t = m_t x + sigma_t z` for one data point, replicate-major.
struct PointDraws {
    ys: Vec<f64>,
    ts: Vec<f64>,
    /// `(X_t - m_t x) / sigma_t^2 = z / sigma_t`.
    targets: Vec<f64>,
}

fn draw_point(
    sched: &DiffusionSchedule,
    x: &[f64],
    nodes: &(Vec<f64>, Vec<f64>),
    n_mc: usize,
    r: &mut StreamRng,
) -> PointDraws {
    let dim = x.len();
    let n = n_mc * nodes.0.len();
    let mut ys = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n * dim);
    let mut ts = Vec::with_capacity(n);
    let vals: Vec<ScheduleValues> = nodes.0.iter().map(|&t| sched.eval_unchecked(t)).collect();
    for _ in 0..n_mc {
        for (k, v) in vals.iter().enumerate() {
            let s = v.sigma();
            for &xl in x {
                let z = rng::normal(r);
                ys.push(v.m * xl + s * z);
                targets.push(z / s);
            }
            ts.push(nodes.0[k]);
        }
    }
    PointDraws { ys, ts, targets }
}

/// Collapses per-point replicate values into an estimate.
///
/// A single point uses the replicate spread; several points use the spread of the
/// per-point means, which already contains the Monte-Carlo noise.
fn summarize(per_point: &[Vec<f64>], evals_per_rep: usize) -> LossEstimate {
    let n_mc = per_point.iter().map(|r| r.len()).sum::<usize>() * evals_per_rep;
    if per_point.len() == 1 {
        let reps = &per_point[0];
        return LossEstimate {
            value: stats::mean(reps),
            std_error: stats::std_error(reps),
            n_mc,
        };
    }
    let means: Vec<f64> = per_point.iter().map(|r| stats::mean(r)).collect();
    LossEstimate {
        value: stats::mean(&means),
        std_error: stats::std_error(&means),
        n_mc,
    }
}

/// `sum_k w_k ||a_k + b_k||^2` per replicate.
fn weighted_sq<F: Fn(usize) -> f64>(n_rep: usize, n_t: usize, dim: usize, w: &[f64], term: F) -> Vec<f64> {
    (0..n_rep)
        .map(|r| {
            let mut acc = 0.0;
            for k in 0..n_t {
                let base = (r * n_t + k) * dim;
                let mut sq = 0.0;
                for l in 0..dim {
                    let v = term(base + l);
                    sq += v * v;
                }
                acc += w[k] * sq;
            }
            acc
        })
        .collect()
}

/// Replicates of `l(s, x)` for every model on shared draws.
fn point_losses(
    models: &[&ScoreModel],
    sched: &DiffusionSchedule,
    x: &[f64],
    nodes: &(Vec<f64>, Vec<f64>),
    n_mc: usize,
    r: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    let dr = draw_point(sched, x, nodes, n_mc, r);
    let n_t = nodes.0.len();
    models
        .iter()
        .map(|m| {
            let s = m.score_batch(sched, &dr.ys, &dr.ts)?;
            Ok(weighted_sq(n_mc, n_t, x.len(), &nodes.1, |i| s[i] + dr.targets[i]))
        })
        .collect()
}

fn check_finite(e: LossEstimate) -> Result<LossEstimate> {
    if e.value.is_finite() {
        Ok(e)
    } else {
        Err(Error::numerical("loss estimate is not finite"))
    }
}

/// `l(s, x) = int E ||s(X_t,t) + (X_t - m_t x)/sigma_t^2||^2 dt` for one data point.
pub fn pointwise_loss(s: &ScoreModel, x: &[f64], sched: &DiffusionSchedule, mc: &McConfig) -> Result<LossEstimate> {
    mc.check()?;
    crate::error::ensure_dim(s.dim, x.len(), "data point")?;
    let nodes = time_nodes(sched, mc.n_t);
    let mut r = rng::stream(mc.seed, 0);
    let reps = point_losses(&[s], sched, x, &nodes, mc.n_mc, &mut r)?.remove(0);
    check_finite(summarize(&[reps], mc.n_t))
}

/// Mean of [`pointwise_loss`] over `data`; point `i` draws from stream `i`.
pub fn empirical_risk(
    s: &ScoreModel,
    data: &[Vec<f64>],
    sched: &DiffusionSchedule,
    mc: &McConfig,
) -> Result<LossEstimate> {
    let per = risk_terms(&[s], data, sched, mc)?;
    check_finite(summarize(&per.into_iter().map(|mut v| v.remove(0)).collect::<Vec<_>>(), mc.n_t))
}

fn risk_terms(
    models: &[&ScoreModel],
    data: &[Vec<f64>],
    sched: &DiffusionSchedule,
    mc: &McConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    mc.check()?;
    if data.is_empty() {
        return Err(Error::invalid("empirical risk needs at least one data point"));
    }
    for m in models {
        for x in data {
            crate::error::ensure_dim(m.dim, x.len(), "data point")?;
        }
    }
    let nodes = time_nodes(sched, mc.n_t);
    let parts = exec::map_range(data.len(), |i| {
        let mut r = rng::stream(mc.seed, i as u64);
        point_losses(models, sched, &data[i], &nodes, mc.n_mc, &mut r)
    });
    parts.into_iter().collect()
}

/// `E l(s) - E l(reference)` over `data` with common random numbers.
pub fn excess_risk(
    s: &ScoreModel,
    reference: &ScoreModel,
    data: &[Vec<f64>],
    sched: &DiffusionSchedule,
    mc: &McConfig,
) -> Result<LossEstimate> {
    let per = risk_terms(&[s, reference], data, sched, mc)?;
    let diffs: Vec<Vec<f64>> = per
        .iter()
        .map(|m| m[0].iter().zip(&m[1]).map(|(a, b)| a - b).collect())
        .collect();
    check_finite(summarize(&diffs, mc.n_t))
}

/// Per-point replicates of `int E[||s - s'||^2 | X_0 = x] dt`.
fn conditional_errors(
    s: &ScoreModel,
    reference: &ScoreModel,
    data: &[Vec<f64>],
    sched: &DiffusionSchedule,
    mc: &McConfig,
) -> Result<Vec<Vec<f64>>> {
    mc.check()?;
    let nodes = time_nodes(sched, mc.n_t);
    let n_t = mc.n_t;
    let parts = exec::map_range(data.len(), |i| -> Result<Vec<f64>> {
        let x = &data[i];
        let mut r = rng::stream(mc.seed, i as u64);
        let dr = draw_point(sched, x, &nodes, mc.n_mc, &mut r);
        let a = s.score_batch(sched, &dr.ys, &dr.ts)?;
        let b = reference.score_batch(sched, &dr.ys, &dr.ts)?;
        Ok(weighted_sq(mc.n_mc, n_t, x.len(), &nodes.1, |k| a[k] - b[k]))
    });
    parts.into_iter().collect()
}

/// `int E ||s - reference||^2 dt` with `X_t` drawn forward from the given data points.
pub fn integrated_error_on(
    s: &ScoreModel,
    reference: &ScoreModel,
    data: &[Vec<f64>],
    sched: &DiffusionSchedule,
    mc: &McConfig,
) -> Result<LossEstimate> {
    if data.is_empty() {
        return Err(Error::invalid("integrated error needs at least one data point"));
    }
    let per = conditional_errors(s, reference, data, sched, mc)?;
    check_finite(summarize(&per, mc.n_t))
}

/// `int_{t0}^T E ||s(X_t,t) - s*(X_t,t)||^2 dt` with ancestral draws of `X_0`.
pub fn integrated_score_error(
    s: &ScoreModel,
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    n_data: usize,
    mc: &McConfig,
) -> Result<LossEstimate> {
    let oracle = ScoreModel::oracle(gen, sched)?;
    integrated_score_error_vs(s, &oracle, gen, sched, n_data, mc)
}

/// [`integrated_score_error`] against a prebuilt oracle.
pub fn integrated_score_error_vs(
    s: &ScoreModel,
    oracle: &ScoreModel,
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    n_data: usize,
    mc: &McConfig,
) -> Result<LossEstimate> {
    let data = gen.sample_data(sched.sigma_data, n_data, &mut rng::stream(mc.seed, u64::MAX))?;
    integrated_error_on(s, oracle, &data, sched, &mc.reseed(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VincentReport {
    pub lhs: LossEstimate,
    pub rhs: LossEstimate,
    pub gap_sigmas: f64,
}

/// Compares the integrated score error with the excess denoising risk on fresh samples.
pub fn vincent_check(
    s: &ScoreModel,
    oracle: &ScoreModel,
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    n_data: usize,
    mc: &McConfig,
) -> Result<VincentReport> {
    let lhs = integrated_score_error_vs(s, oracle, gen, sched, n_data, &mc.reseed(11))?;
    let data = gen.sample_data(sched.sigma_data, n_data, &mut rng::stream(mc.seed, 12))?;
    let rhs = excess_risk(s, oracle, &data, sched, &mc.reseed(13))?;
    let se = (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
    let gap = (lhs.value - rhs.value).abs();
    let gap_sigmas = if se > 0.0 {
        gap / se
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(VincentReport { lhs, rhs, gap_sigmas })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinReport {
    /// Mean of `(l(s,x) - l(s*,x))^2`.
    pub lhs: f64,
    /// Mean of `48 A(x) I(x)` with `I(x)` the conditional score-error integral.
    pub rhs: f64,
    /// Fraction of points where the per-point inequality held.
    pub pointwise_fraction: f64,
}

/// One-sided spot check of the squared loss-difference inequality on a shared sample.
pub fn bernstein_check(
    s: &ScoreModel,
    oracle: &ScoreModel,
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    n_data: usize,
    mc: &McConfig,
) -> Result<BernsteinReport> {
    let data = gen.sample_data(sched.sigma_data, n_data, &mut rng::stream(mc.seed, 21))?;
    let mc = mc.reseed(22);
    let losses = risk_terms(&[s, oracle], &data, sched, &mc)?;
    let errs = conditional_errors(s, oracle, &data, sched, &mc)?;
    let var0 = sched.eval_unchecked(sched.t0).var;
    let d = gen.dim as f64;
    let mut lhs = Vec::with_capacity(data.len());
    let mut rhs = Vec::with_capacity(data.len());
    let mut ok = 0usize;
    for (i, x) in data.iter().enumerate() {
        let diff = stats::mean(&losses[i][0]) - stats::mean(&losses[i][1]);
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let a = (x2 + 1.0) / var0 + d * (1.0 / var0).ln() + d * (sched.t_max - sched.t0);
        let b = 48.0 * a * stats::mean(&errs[i]);
        if diff * diff <= b {
            ok += 1;
        }
        lhs.push(diff * diff);
        rhs.push(b);
    }
    Ok(BernsteinReport {
        lhs: stats::mean(&lhs),
        rhs: stats::mean(&rhs),
        pointwise_fraction: ok as f64 / data.len() as f64,
    })
}

/// Cosine decay from `initial` to `final_value` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub final_value: f64,
}

impl StepSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.final_value + 0.5 * (self.initial - self.final_value) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub batch_size: usize,
    pub step_size: StepSchedule,
    /// Time nodes of the validation risk.
    pub n_t_quadrature: usize,
    /// `X_t` draws per `(x, t)` in the validation risk.
    pub n_mc_per_sample: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub validation_fraction: f64,
    /// Global gradient-norm cap.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_epochs: 40,
            batch_size: 64,
            step_size: StepSchedule {
                initial: 2e-3,
                final_value: 1e-4,
            },
            n_t_quadrature: 16,
            n_mc_per_sample: 1,
            seed: 0,
            hidden: vec![64, 64, 64],
            validation_fraction: 0.2,
            max_grad_norm: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 || self.batch_size == 0 || self.n_t_quadrature == 0 || self.n_mc_per_sample == 0 {
            return Err(Error::invalid("training counts must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        let s = self.step_size;
        if !(s.initial > 0.0 && s.final_value > 0.0 && s.final_value <= s.initial) {
            return Err(Error::invalid("step sizes must be positive and non-increasing"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::invalid("gradient cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_risk: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoreModel,
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Median nearest-neighbour distance over at most 1024 points, clipped to `[0.05, 0.9]`.
pub fn initial_sigma(data: &[Vec<f64>]) -> f64 {
    let m = data.len().min(1024);
    if m < 2 {
        return 0.5;
    }
    let pts = &data[..m];
    let nn: Vec<f64> = exec::map_range(m, |i| {
        pts.iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| pts[i].iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    });
    stats::quantile(&nn, 0.5).clamp(0.05, 0.9)
}

struct Adam {
    m: Grads,
    v: Grads,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(model: &Mlp) -> Self {
        Self {
            m: Grads::zeros_like(model),
            v: Grads::zeros_like(model),
            step: 0,
        }
    }

    fn update(&mut self, mlp: &mut Mlp, theta: &mut f64, g: &Grads, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let upd = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        };
        for j in 0..mlp.weights.len() {
            let (w, m, v) = (&mut mlp.weights[j], &mut self.m.w[j], &mut self.v.w[j]);
            for (((p, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.w[j].iter()) {
                upd(p, m, v, *g);
            }
            let (b, m, v) = (&mut mlp.biases[j], &mut self.m.b[j], &mut self.v.b[j]);
            for (((p, m), v), g) in b.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.b[j].iter()) {
                upd(p, m, v, *g);
            }
        }
        upd(theta, &mut self.m.theta, &mut self.v.theta, g.theta);
    }
}

struct Draw {
    idx: usize,
    t: f64,
    weight: f64,
    z: Vec<f64>,
}

/// Loss sum and gradient of `sum_i w_i ||s(X_t,t) + z/sigma_t||^2 / n_total` over `draws`.
fn batch_grad(
    mlp: &Mlp,
    theta: f64,
    sched: &DiffusionSchedule,
    data: &[Vec<f64>],
    draws: &[Draw],
    n_total: usize,
) -> (f64, Grads) {
    let dim = mlp.dim;
    let n = draws.len();
    let sigma = sigmoid(theta);
    let mut ys = Vec::with_capacity(n * dim);
    let mut ts = Vec::with_capacity(n);
    let vals: Vec<ScheduleValues> = draws.iter().map(|d| sched.eval_unchecked(d.t)).collect();
    for (d, v) in draws.iter().zip(&vals) {
        let s = v.sigma();
        for l in 0..dim {
            ys.push(v.m * data[d.idx][l] + s * d.z[l]);
        }
        ts.push(d.t);
    }
    let cache = mlp.forward_cache(mlp.feature_matrix(&ys, &ts));
    let mut g_out = DMatrix::zeros(dim, n);
    let mut loss = 0.0;
    let mut g_sigma = 0.0;
    for j in 0..n {
        let v = &vals[j];
        let d = &draws[j];
        let den = v.m * v.m * sigma * sigma + v.var;
        let f: Vec<f64> = cache.out.column(j).iter().copied().collect();
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = clip_to_ball(&f, CLIP_RADIUS);
        let y = &ys[j * dim..(j + 1) * dim];
        let s_std = v.sigma();
        let resid: Vec<f64> = (0..dim).map(|l| (-y[l] + v.m * c[l]) / den + d.z[l] / s_std).collect();
        loss += d.weight * resid.iter().map(|r| r * r).sum::<f64>();
        let g_s: Vec<f64> = resid.iter().map(|r| 2.0 * d.weight * r / n_total as f64).collect();
        // ds/dv = (y - m c)/v^2 and dv/dsigma = 2 m^2 sigma
        let dv: f64 = (0..dim).map(|l| g_s[l] * (y[l] - v.m * c[l]) / (den * den)).sum();
        g_sigma += dv * 2.0 * v.m * v.m * sigma;
        let g_c: Vec<f64> = g_s.iter().map(|g| g * v.m / den).collect();
        if norm <= CLIP_RADIUS {
            for l in 0..dim {
                g_out[(l, j)] = g_c[l];
            }
        } else {
            // Jacobian of f -> R f/|f| is (R/|f|)(I - f f^T/|f|^2)
            let dot: f64 = g_c.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
            for l in 0..dim {
                g_out[(l, j)] = CLIP_RADIUS / norm * (g_c[l] - dot * f[l]);
            }
        }
    }
    let mut grads = mlp.backward(&cache, g_out);
    grads.theta = g_sigma * sigma * (1.0 - sigma);
    (loss, grads)
}

/// Mini-batch Adam on the network weights and `sigma = sigmoid(theta)`.
///
/// Each draw uses `t` log-uniform on `[t0, T]` with weight `t log(T/t0)`, an unbiased
/// single-sample estimate of the time integral. The returned model is the one with
/// the lowest validation risk (validation draws are fixed across epochs).
pub fn erm_train(cfg: &TrainConfig, data: &[Vec<f64>], sched: &DiffusionSchedule) -> Result<TrainOutcome> {
    cfg.validate()?;
    sched.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid("training needs at least two data points"));
    }
    let dim = data[0].len();
    for x in data {
        crate::error::ensure_dim(dim, x.len(), "training point")?;
    }
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let (train, val) = data.split_at(n - n_val);
    let mut mlp = Mlp::random(dim, &cfg.hidden, cfg.seed);
    let sigma0 = initial_sigma(train);
    let mut theta = (sigma0 / (1.0 - sigma0)).ln();
    let val_mc = McConfig::new(cfg.n_t_quadrature, cfg.n_mc_per_sample, rng::mix(cfg.seed, 0x7A1));
    let model_of = |mlp: &Mlp, theta: f64| ScoreModel::trainable(mlp.clone(), sigmoid(theta).min(1.0 - 1e-12));

    let initial = empirical_risk(&model_of(&mlp, theta)?, val, sched, &val_mc)?.value;
    let mut trace = vec![TraceRow {
        epoch: 0,
        train_loss: f64::NAN,
        val_risk: initial,
        sigma: sigmoid(theta),
    }];
    let mut best = (initial, mlp.clone(), theta, 0usize);
    let mut adam = Adam::new(&mlp);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.n_epochs) as f64;
    let log_ratio = (sched.t_max / sched.t0).ln();
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.n_epochs {
        let mut r = rng::stream(cfg.seed, epoch as u64);
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let draws: Vec<Draw> = batch
                .iter()
                .map(|&idx| {
                    let t = sched.t0 * (log_ratio * rng::uniform(&mut r)).exp();
                    let z = (0..dim).map(|_| rng::normal(&mut r)).collect();
                    Draw {
                        idx,
                        t,
                        weight: t * log_ratio,
                        z,
                    }
                })
                .collect();
            let parts = exec::map_chunks(draws.len(), GRAD_CHUNK, |range| {
                batch_grad(&mlp, theta, sched, train, &draws[range], draws.len())
            });
            let mut g = Grads::zeros_like(&mlp);
            let mut loss = 0.0;
            for (l, pg) in &parts {
                loss += l;
                g.add(pg);
            }
            let gn = g.norm();
            if !gn.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::INFINITY,
                    initial,
                });
            }
            if gn > cfg.max_grad_norm {
                g.scale(cfg.max_grad_norm / gn);
            }
            let step = ((epoch - 1) * steps_per_epoch + b) as f64;
            adam.update(&mut mlp, &mut theta, &g, cfg.step_size.at(step / total_steps));
            theta = theta.clamp(-30.0, 30.0);
            epoch_loss += loss;
        }
        let val_risk = empirical_risk(&model_of(&mlp, theta)?, val, sched, &val_mc)?.value;
        trace.push(TraceRow {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_risk,
            sigma: sigmoid(theta),
        });
        if val_risk < best.0 {
            best = (val_risk, mlp.clone(), theta, epoch);
        }
        if !val_risk.is_finite() || val_risk > 10.0 * initial {
            bad_epochs += 1;
            if bad_epochs >= 3 {
                return Err(Error::Divergence {
                    epoch,
                    loss: val_risk,
                    initial,
                });
            }
        } else {
            bad_epochs = 0;
        }
    }
    Ok(TrainOutcome {
        model: model_of(&best.1, best.2)?,
        trace,
        best_epoch: best.3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::zoo;

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::new(0.3, 0.05, 2.0).unwrap()
    }

    /// Composite Simpson in `log t` on a fine grid, independent of the GL nodes.
    fn simpson_log(sched: &DiffusionSchedule, f: impl Fn(f64) -> f64) -> f64 {
        let n = 20_000;
        let (a, b) = (sched.t0.ln(), sched.t_max.ln());
        let h = (b - a) / n as f64;
        let g = |u: f64| {
            let t = u.exp();
            t * f(t)
        };
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn time_nodes_integrate_reciprocal() {
        let s = DiffusionSchedule::new(0.1, 0.01, 5.0).unwrap();
        let (ts, ws) = time_nodes(&s, 16);
        let v: f64 = ts.iter().zip(&ws).map(|(t, w)| w / t).sum();
        assert!((v - (500f64).ln()).abs() < 1e-12);
        let v: f64 = ws.iter().sum();
        assert!((v - 4.99).abs() < 1e-12);
    }

    #[test]
    fn oracle_loss_for_point_mass_matches_gaussian_integral() {
        let s = sched();
        let c = vec![0.4, -0.2];
        let gen = zoo::constant(c.clone());
        let model = ScoreModel::oracle(&gen, &s).unwrap();
        let est = pointwise_loss(&model, &c, &s, &McConfig::new(32, 4000, 5)).unwrap();
        // s* + z/sigma_t = z (1/sigma_t - sigma_t/tvar), conditional on X_0 = c
        let exact = simpson_log(&s, |t| {
            let v = s.eval_unchecked(t);
            2.0 * v.var * (1.0 / v.var - 1.0 / v.tvar).powi(2)
        });
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error,
            "{} vs {exact} (se {})",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn conditional_score_has_zero_loss() {
        // a net computing f = x exactly with sigma = 0 is -(y - m x)/sigma_t^2
        let s = sched();
        let x = [0.3];
        let net = ReluNet::constant(2, &x).unwrap();
        let model = ScoreModel::from_net(net, 0.0).unwrap();
        let est = pointwise_loss(&model, &x, &s, &McConfig::new(16, 200, 1)).unwrap();
        assert!(est.value.abs() < 1e-20 + 3.0 * est.std_error, "{est:?}");
        assert!(est.value < 1e-10);
    }

    #[test]
    fn std_error_scales_with_draws() {
        let s = sched();
        let gen = zoo::constant(vec![0.1]);
        let model = ScoreModel::oracle(&gen, &s).unwrap().with_f_scale(0.5);
        let a = pointwise_loss(&model, &[0.5], &s, &McConfig::new(16, 4000, 2)).unwrap();
        let b = pointwise_loss(&model, &[0.5], &s, &McConfig::new(16, 8000, 2)).unwrap();
        let ratio = b.std_error / a.std_error;
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{ratio}");
    }

    #[test]
    fn single_point_risk_is_pointwise_loss() {
        let s = sched();
        let model = ScoreModel::oracle(&zoo::sine(), &s).unwrap();
        let mc = McConfig::new(8, 50, 9);
        let x = vec![0.2];
        let a = pointwise_loss(&model, &x, &s, &mc).unwrap();
        let b = empirical_risk(&model, &[x], &s, &mc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_data_keeps_value_and_shrinks_error() {
        let s = sched();
        let gen = zoo::sine();
        let model = ScoreModel::oracle(&gen, &s).unwrap();
        let data = gen.sample_data(0.3, 200, &mut rng::stream(3, 0)).unwrap();
        let mut dup = data.clone();
        dup.extend(data.iter().cloned());
        let mc = McConfig::new(8, 2, 4);
        let a = empirical_risk(&model, &data, &s, &mc).unwrap();
        let b = empirical_risk(&model, &dup, &s, &mc).unwrap();
        assert!((a.value - b.value).abs() <= 3.0 * a.std_error);
        assert!(b.std_error < a.std_error);
    }

    #[test]
    fn oracle_has_zero_integrated_error_and_scaled_one_does_not() {
        let s = sched();
        let gen = zoo::sine();
        let oracle = ScoreModel::oracle(&gen, &s).unwrap();
        let mc = McConfig::new(8, 1, 6);
        let e = integrated_score_error_vs(&oracle, &oracle, &gen, &s, 100, &mc).unwrap();
        assert_eq!(e.value, 0.0);
        let scaled = oracle.clone().with_f_scale(0.9);
        let e = integrated_score_error_vs(&scaled, &oracle, &gen, &s, 400, &mc).unwrap();
        assert!(e.value > 5.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn mlp_relunet_round_trip_matches() {
        let mlp = Mlp::random(2, &[8, 8], 3);
        let net = mlp.to_relunet().unwrap();
        let back = Mlp::from_relunet(&net).unwrap();
        assert_eq!(mlp, back);
        let ys = [0.3, -0.2, 1.0, 0.5];
        let ts = [0.4, 1.3];
        let f = mlp.forward(&ys, &ts);
        for j in 0..2 {
            let mut x = vec![0.0; Mlp::in_dim(2)];
            Mlp::features_into(&ys[2 * j..2 * j + 2], ts[j], &mut x);
            let g = net.evaluate(&x).unwrap();
            for l in 0..2 {
                assert!((f[(l, j)] - g[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = sched();
        let mlp = Mlp::random(2, &[6, 5], 8);
        // push outputs beyond the clip radius for some points
        let mut mlp = mlp;
        mlp.weights.last_mut().unwrap().scale_mut(80.0);
        let data = vec![vec![0.5, -0.3], vec![-0.8, 0.1], vec![0.2, 0.9]];
        let draws: Vec<Draw> = (0..3)
            .map(|i| Draw {
                idx: i,
                t: 0.1 + 0.4 * i as f64,
                weight: 0.7,
                z: vec![0.3 - 0.2 * i as f64, 0.5],
            })
            .collect();
        let theta = -0.4;
        let (_, g) = batch_grad(&mlp, theta, &s, &data, &draws, 3);
        let loss = |m: &Mlp, th: f64| batch_grad(m, th, &s, &data, &draws, 3).0 / 3.0;
        let h = 1e-6;
        for (j, (r, c)) in [(0usize, (1usize, 2usize)), (1, (0, 3)), (2, (1, 4))] {
            let mut p = mlp.clone();
            p.weights[j][(r, c)] += h;
            let mut q = mlp.clone();
            q.weights[j][(r, c)] -= h;
            let fd = (loss(&p, theta) - loss(&q, theta)) / (2.0 * h);
            assert!((fd - g.w[j][(r, c)]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g.w[j][(r, c)]);
        }
        let mut p = mlp.clone();
        p.biases[1][2] += h;
        let mut q = mlp.clone();
        q.biases[1][2] -= h;
        let fd = (loss(&p, theta) - loss(&q, theta)) / (2.0 * h);
        assert!((fd - g.b[1][2]).abs() < 1e-5 * (1.0 + fd.abs()));
        let fd = (loss(&mlp, theta + h) - loss(&mlp, theta - h)) / (2.0 * h);
        assert!((fd - g.theta).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g.theta);
    }

    #[test]
    fn training_decreases_risk_and_is_deterministic() {
        let s = sched();
        let gen = zoo::constant(vec![0.5]);
        let data = gen.sample_data(0.3, 256, &mut rng::stream(1, 0)).unwrap();
        let cfg = TrainConfig {
            n_epochs: 6,
            hidden: vec![16, 16],
            seed: 4,
            ..TrainConfig::default()
        };
        let a = erm_train(&cfg, &data, &s).unwrap();
        let b = erm_train(&cfg, &data, &s).unwrap();
        let bits = |t: &[TraceRow]| t.iter().map(|r| (r.train_loss.to_bits(), r.val_risk.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a.trace), bits(&b.trace));
        let best = a.trace[a.best_epoch].val_risk;
        assert!(best <= a.trace[0].val_risk);
    }

    #[test]
    fn score_model_text_round_trip() {
        let m = ScoreModel::trainable(Mlp::random(1, &[5], 2), 0.25).unwrap();
        let text = m.to_text().unwrap();
        let back = ScoreModel::from_text(&text).unwrap();
        let s = sched();
        for i in 0..20 {
            let y = [-1.0 + 0.1 * i as f64];
            let t = 0.05 + 0.09 * i as f64;
            assert_eq!(m.score(&s, &y, t).unwrap(), back.score(&s, &y, t).unwrap());
        }
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        let err = ScoreModel::from_text(&cut).unwrap_err().to_string();
        assert!(err.contains("sigma"), "{err}");
    }
}
