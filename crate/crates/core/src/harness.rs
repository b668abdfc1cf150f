//! Experiment configuration, orchestration, and persistence of networks, models and records.
//!
//! A config is a TOML file; every section has defaults, and the materialized config is
//! written next to the records under its hash so each CSV row can be traced back to it.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constructions::{self, assemble_score_net, AssembledScore, AssemblyOptions};
use crate::dsm::{self, McConfig, ScoreModel, TraceRow, TrainConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::{surrogate_error_bound, zoo, GeneratorConfig, GeneratorSpec, LocalPolySurrogate};
use crate::netcalc::ReluNet;
use crate::oracle::{self, Mixture, QuadratureRule};
use crate::rng;
use crate::sampler::{self, ReverseRunConfig};
use crate::schedule::DiffusionSchedule;
use crate::stats;

/// Built-in generator by name, or explicit parameters with `name = "params"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorChoice {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Overrides the computed Hölder constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GeneratorConfig>,
}

fn one() -> usize {
    1
}

pub const GENERATOR_NAMES: [&str; 8] = [
    "sine",
    "gentle_curve",
    "affine_segment",
    "affine_plane",
    "quadratic_patch",
    "constant",
    "two_atoms",
    "params",
];

impl GeneratorChoice {
    pub fn named(name: &str, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            beta: None,
            center: None,
            holder: None,
            params: None,
        }
    }

    pub fn build(&self) -> Result<GeneratorSpec> {
        let dim = self.dim;
        if dim == 0 {
            return Err(Error::invalid("generator dim must be positive"));
        }
        let fixed_beta = |g: GeneratorSpec| -> Result<GeneratorSpec> {
            match self.beta {
                Some(b) if b != g.beta => Err(Error::invalid(format!(
                    "generator `{}` has beta = {}; a different beta needs `params`",
                    self.name, g.beta
                ))),
                _ => Ok(g),
            }
        };
        let g = match self.name.as_str() {
            // (sin(2 pi u + l pi/2))_l: the sine for D = 1, the circle for D = 2
            "sine" => GeneratorSpec::curve(
                vec![1.0; dim],
                vec![2.0 * PI; dim],
                (0..dim).map(|l| l as f64 * FRAC_PI_2).collect(),
                self.beta.unwrap_or(2.0),
            )?,
            "gentle_curve" => fixed_beta(zoo::gentle_curve(dim))?,
            "affine_segment" => fixed_beta(zoo::affine_segment(dim))?,
            "affine_plane" => fixed_beta(zoo::affine_plane())?,
            "quadratic_patch" => fixed_beta(zoo::quadratic_patch())?,
            "two_atoms" => fixed_beta(zoo::two_atoms(dim))?,
            "constant" => {
                let c = self.center.clone().unwrap_or_else(|| vec![0.5; dim]);
                GeneratorSpec::constant(c, self.beta.unwrap_or(2.0))?
            }
            "params" => self
                .params
                .as_ref()
                .ok_or_else(|| Error::invalid("generator `params` needs a [generator.params] table"))?
                .build()?,
            other => {
                return Err(Error::invalid(format!(
                    "unknown generator `{other}`; known: {}",
                    GENERATOR_NAMES.join(", ")
                )))
            }
        };
        Ok(match self.holder {
            Some(h) => g.with_holder(h),
            None => g,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Oracle,
    Constructed {
        eps: f64,
        /// Defaults to `0.1 sqrt(D) eps^beta`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps_prime: Option<f64>,
    },
    Trained {
        #[serde(default)]
        train: TrainConfig,
        /// Training sample size outside sweeps.
        #[serde(default = "default_n")]
        n: usize,
        /// When set, epochs are chosen to give about this many SGD steps for every `n`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
}

fn default_n() -> usize {
    4096
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec::Oracle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub n: Vec<usize>,
    pub eps: Vec<f64>,
    pub t0: Vec<f64>,
    /// Independent trainings (fresh data and init) averaged at each `n`.
    pub replicates: usize,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            n: vec![128, 256, 512, 1024, 2048, 4096, 8192],
            eps: vec![0.2, 0.1, 0.05],
            t0: vec![0.01, 0.02, 0.05],
            replicates: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBudget {
    /// Time nodes for loss and score-error integrals.
    pub n_t: usize,
    /// `X_t` draws per `(x, t)`.
    pub n_mc: usize,
    /// Data points for score-error and identity estimates.
    pub n_data: usize,
    pub tail_draws: usize,
    pub derivative_points: usize,
    pub construction_points: usize,
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            n_t: 16,
            n_mc: 1,
            n_data: 2000,
            tail_draws: 100_000,
            derivative_points: 50,
            construction_points: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub n_samples: usize,
    pub n_steps: usize,
    pub bins: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            n_steps: 500,
            bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub generator: GeneratorChoice,
    pub schedule: DiffusionSchedule,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub mc: McBudget,
    #[serde(default)]
    pub sampler: SamplerSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("scorelab-out")
}

impl Default for ExperimentConfig {
    /// The sine generator in one dimension with `sigma_data = 0.1`, `t0 = 0.01`, `T = 1`.
    fn default() -> Self {
        Self::new(
            GeneratorChoice::named("sine", 1),
            DiffusionSchedule {
                sigma_data: 0.1,
                t0: 0.01,
                t_max: 1.0,
            },
            0,
        )
    }
}

impl ExperimentConfig {
    /// Defaults for `generator` and `schedule`, everything else default.
    pub fn new(generator: GeneratorChoice, schedule: DiffusionSchedule, seed: u64) -> Self {
        Self {
            seed,
            out_dir: default_out(),
            generator,
            schedule,
            estimator: EstimatorSpec::default(),
            sweep: SweepAxes::default(),
            mc: McBudget::default(),
            sampler: SamplerSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let loc = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].lines().count().max(1);
                    format!("config line {line}")
                }
                None => "config".to_string(),
            };
            Error::parse(loc, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::parse(format!("{}: {location}", path.display()), message),
            other => other,
        })
    }

    /// The config with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.generator.build()?;
        let s = &self.sweep;
        if s.n.is_empty() || s.eps.is_empty() || s.t0.is_empty() {
            return Err(Error::invalid("every sweep axis needs at least one value"));
        }
        if s.replicates == 0 {
            return Err(Error::invalid("sweep replicates must be positive"));
        }
        if s.n.iter().any(|&n| n < 2) || s.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::invalid("sweep n must be >= 2 and eps in (0, 1]"));
        }
        if s.t0.iter().any(|&t| !(t > 0.0 && t <= self.schedule.t_max)) {
            return Err(Error::invalid("sweep t0 values must lie in (0, T]"));
        }
        let m = &self.mc;
        if m.n_t == 0 || m.n_mc == 0 || m.n_data == 0 || m.tail_draws == 0 || m.derivative_points == 0 || m.construction_points < 2 {
            return Err(Error::invalid("Monte-Carlo budgets must be positive"));
        }
        let sp = &self.sampler;
        if sp.n_samples == 0 || sp.n_steps == 0 || sp.bins == 0 {
            return Err(Error::invalid("sampler counts must be positive"));
        }
        match &self.estimator {
            EstimatorSpec::Trained { train, n, .. } => {
                train.validate()?;
                if *n < 2 {
                    return Err(Error::invalid("trained estimator needs n >= 2"));
                }
            }
            EstimatorSpec::Constructed { eps, eps_prime } => {
                if !(*eps > 0.0 && *eps < 1.0) || eps_prime.is_some_and(|e| !(e > 0.0)) {
                    return Err(Error::invalid("constructed estimator needs eps in (0,1) and eps_prime > 0"));
                }
            }
            EstimatorSpec::Oracle => {}
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the materialized config, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn mc_config(&self, tag: u64) -> McConfig {
        McConfig::new(self.mc.n_t, self.mc.n_mc, rng::mix(self.seed, tag))
    }
}

/// One metric row; `bound` and `pass` are empty for plain measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub std_error: f64,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
    pub runtime_s: f64,
    /// `deterministic` or `monte_carlo`.
    pub origin: String,
}

/// Builds records that share a config hash and seed.
#[derive(Debug, Clone)]
pub struct Recorder {
    hash: String,
    seed: u64,
    pub rows: Vec<ExperimentRecord>,
}

impl Recorder {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            hash: cfg.hash(),
            seed: cfg.seed,
            rows: Vec::new(),
        }
    }

    pub fn measure(&mut self, metric: impl Into<String>, value: f64, std_error: f64, runtime_s: f64, mc: bool) {
        self.push(metric, value, std_error, None, None, runtime_s, mc);
    }

    /// A pass/fail row for `value <= bound`.
    pub fn check(&mut self, metric: impl Into<String>, value: f64, std_error: f64, bound: f64, runtime_s: f64, mc: bool) {
        let pass = value <= bound;
        self.push(metric, value, std_error, Some(bound), Some(pass), runtime_s, mc);
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        metric: impl Into<String>,
        value: f64,
        std_error: f64,
        bound: Option<f64>,
        pass: Option<bool>,
        runtime_s: f64,
        mc: bool,
    ) {
        self.rows.push(ExperimentRecord {
            config_hash: self.hash.clone(),
            seed: self.seed,
            metric: metric.into(),
            value,
            std_error,
            bound,
            pass,
            runtime_s,
            origin: if mc { "monte_carlo" } else { "deterministic" }.into(),
        });
    }
}

/// Appends rows to a CSV file, writing the header when the file is new or empty.
pub fn append_records(path: &Path, rows: &[ExperimentRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize()
        .map(|r| r.map_err(csv_err))
        .collect::<Result<Vec<ExperimentRecord>>>()
}

fn csv_err(e: csv::Error) -> Error {
    let loc = e
        .position()
        .map(|p| format!("csv line {}", p.line()))
        .unwrap_or_else(|| "csv".into());
    Error::parse(loc, e.to_string())
}

/// Writes the materialized config and appends the rows under `cfg.out_dir`.
pub fn persist_run(cfg: &ExperimentConfig, rows: &[ExperimentRecord]) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("config-{}.toml", cfg.hash())), cfg.to_toml())?;
    let path = cfg.out_dir.join("records.csv");
    append_records(&path, rows)?;
    Ok(path)
}

pub fn save_net(path: &Path, net: &ReluNet) -> Result<()> {
    fs::write(path, net.to_text())?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<ReluNet> {
    ReluNet::from_text(&fs::read_to_string(path)?)
}

pub fn save_model(path: &Path, model: &ScoreModel) -> Result<()> {
    fs::write(path, model.to_text()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ScoreModel> {
    ScoreModel::from_text(&fs::read_to_string(path)?)
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in trace {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Points as CSV with columns `x1..xD`.
pub fn write_points(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let dim = points.first().map_or(0, |p| p.len());
    let head: Vec<String> = (1..=dim).map(|l| format!("x{l}")).collect();
    writeln!(f, "{}", head.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Rows sharing one key set as CSV, columns in key order.
pub fn write_table(path: &Path, rows: &[BTreeMap<String, f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if let Some(first) = rows.first() {
        w.write_record(first.keys()).map_err(csv_err)?;
    }
    for r in rows {
        w.write_record(r.values().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Default `eps'` for the assembled network.
pub fn default_eps_prime(gen: &GeneratorSpec, eps: f64) -> f64 {
    0.1 * (gen.dim as f64).sqrt() * eps.powf(gen.beta)
}

pub fn assemble(cfg: &ExperimentConfig, eps: f64, eps_prime: Option<f64>) -> Result<AssembledScore> {
    let gen = cfg.generator.build()?;
    let ep = eps_prime.unwrap_or_else(|| default_eps_prime(&gen, eps));
    assemble_score_net(&gen, &cfg.schedule, eps, ep, &AssemblyOptions::default())
}

/// Epochs giving about `steps` SGD steps on `n` points with the configured split.
pub fn epochs_for_steps(train: &TrainConfig, n: usize, steps: usize) -> usize {
    let n_val = ((n as f64 * train.validation_fraction).round() as usize).clamp(1, n - 1);
    let per_epoch = (n - n_val).div_ceil(train.batch_size);
    steps.div_ceil(per_epoch).max(1)
}

/// Trains on `n` fresh samples; `replicate` selects independent data and initialization.
pub fn train_on_fresh(cfg: &ExperimentConfig, n: usize, replicate: usize) -> Result<dsm::TrainOutcome> {
    let EstimatorSpec::Trained { train, steps, .. } = &cfg.estimator else {
        return Err(Error::invalid("training needs estimator kind = \"trained\""));
    };
    let gen = cfg.generator.build()?;
    let key = rng::mix(n as u64, replicate as u64);
    let data = gen.sample_data(cfg.schedule.sigma_data, n, &mut rng::stream(rng::mix(cfg.seed, 0xDA7A), key))?;
    let mut tc = train.clone();
    tc.seed = rng::mix(rng::mix(cfg.seed, train.seed), key);
    if let Some(s) = steps {
        tc.n_epochs = epochs_for_steps(&tc, n, *s);
    }
    dsm::erm_train(&tc, &data, &cfg.schedule)
}

/// The score model named by the estimator section.
pub fn estimator_model(cfg: &ExperimentConfig) -> Result<ScoreModel> {
    let gen = cfg.generator.build()?;
    match &cfg.estimator {
        EstimatorSpec::Oracle => ScoreModel::oracle(&gen, &cfg.schedule),
        EstimatorSpec::Constructed { eps, eps_prime } => Ok(ScoreModel::from_assembly(&assemble(cfg, *eps, *eps_prime)?)),
        EstimatorSpec::Trained { n, .. } => Ok(train_on_fresh(cfg, *n, 0)?.model),
    }
}

#[derive(Debug, Clone)]
pub struct RateSweep {
    pub slope: f64,
    pub intercept: f64,
    pub n: Vec<usize>,
    pub errors: Vec<dsm::LossEstimate>,
    pub rows: Vec<ExperimentRecord>,
}

impl RateSweep {
    /// `e(n_{k+1}) <= e(n_k) + combined std error` for every consecutive pair.
    pub fn monotone_within_one_se(&self) -> bool {
        self.errors.windows(2).all(|w| {
            let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].value <= w[0].value + se
        })
    }
}

/// Trains at every `n` on fresh data and fits `log error` against `log n`.
pub fn rate_sweep(cfg: &ExperimentConfig) -> Result<RateSweep> {
    cfg.validate()?;
    if !matches!(cfg.estimator, EstimatorSpec::Trained { .. }) {
        return Err(Error::invalid(
            "rate sweep needs a trained estimator: the oracle has zero score error, so the log-log slope is undefined",
        ));
    }
    let mut ns = cfg.sweep.n.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 || ns[ns.len() - 1] < 16 * ns[0] {
        return Err(Error::invalid("rate sweep needs at least 4 sample sizes spanning a factor of 16"));
    }
    let gen = cfg.generator.build()?;
    let oracle = ScoreModel::oracle(&gen, &cfg.schedule)?;
    let mc = cfg.mc_config(0x5EE9);
    let reps = cfg.sweep.replicates;
    let jobs: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let results = exec::map_slice(&jobs, |&(n, r)| -> Result<(f64, f64)> {
        let start = Instant::now();
        let out = train_on_fresh(cfg, n, r).map_err(|e| match e {
            Error::Divergence { epoch, loss, initial } => Error::numerical(format!(
                "training at n = {n} diverged at epoch {epoch}: loss {loss:.4e} vs initial {initial:.4e}"
            )),
            other => other,
        })?;
        let err = dsm::integrated_score_error_vs(&out.model, &oracle, &gen, &cfg.schedule, cfg.mc.n_data, &mc)?;
        Ok((err.value, secs(start)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rec = Recorder::new(cfg);
    let mut errors = Vec::with_capacity(ns.len());
    for (n, chunk) in ns.iter().zip(results.chunks(reps)) {
        let values: Vec<f64> = chunk.iter().map(|c| c.0).collect();
        let runtime: f64 = chunk.iter().map(|c| c.1).sum();
        let se = if reps > 1 { stats::std_error(&values) } else { 0.0 };
        let e = dsm::LossEstimate {
            value: stats::mean(&values),
            std_error: se,
            n_mc: reps,
        };
        rec.measure(format!("score_error_n{n}"), e.value, e.std_error, runtime, true);
        errors.push(e);
    }
    if errors.iter().any(|e| !(e.value > 0.0)) {
        return Err(Error::numerical("a sweep point has non-positive score error; log-log fit undefined"));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.value.ln()).collect();
    let (slope, intercept) = stats::linear_fit(&x, &y);
    rec.measure("rate_slope", slope, 0.0, 0.0, true);
    rec.measure("rate_intercept", intercept, 0.0, 0.0, true);
    Ok(RateSweep {
        slope,
        intercept,
        n: ns,
        errors,
        rows: rec.rows,
    })
}

/// Surrogate sup error against the bound for every `eps` on the sweep axis.
pub fn surrogate_rows(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let gen = cfg.generator.build()?;
    for &eps in &cfg.sweep.eps {
        let start = Instant::now();
        let sur = LocalPolySurrogate::build(&gen, eps)?;
        let per_cell = 10 * gen.d + 1;
        let err = sur.sup_error(&gen, per_cell);
        rec.check(format!("g_approx_eps{eps}"), err, 0.0, surrogate_error_bound(&gen, eps), secs(start), false);
    }
    Ok(())
}

/// Tail mass outside `K_t` at the radius `R_t`, for every `t0` on the sweep axis.
pub fn tail_rows(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let gen = cfg.generator.build()?;
    let eps = cfg.sweep.eps[0];
    for (i, &t) in cfg.sweep.t0.iter().enumerate() {
        let start = Instant::now();
        let r = oracle::truncation_radius(&cfg.schedule, t, eps, gen.beta, gen.dim);
        let mut g = rng::stream(cfg.seed, 0x7A11 + i as u64);
        let c = oracle::tail_mass_check(&gen, &cfg.schedule, t, r, cfg.mc.tail_draws, &mut g)?;
        rec.check(format!("tail_mass_t{t}"), c.empirical, c.std_error, c.bound, secs(start), true);
    }
    Ok(())
}

/// Finite-difference derivative norms of `log h` for `sigma in {0.3, 0.7}`, `k in {1, 2}`.
pub fn analytic_rows(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let gen = cfg.generator.build()?;
    for (i, &sigma) in [0.3, 0.7].iter().enumerate() {
        for k in [1usize, 2] {
            let start = Instant::now();
            let mut g = rng::stream(cfg.seed, 0xA7A + 2 * i as u64 + k as u64);
            let c = oracle::analytic_derivative_check(&gen, sigma, k, cfg.mc.derivative_points, &mut g)?;
            rec.check(format!("analytic_k{k}_sigma{sigma}"), c.max_norm, 0.0, c.bound * 1.01, secs(start), false);
        }
    }
    Ok(())
}

/// Audits every construction and returns the reports.
pub fn construction_rows(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<Vec<constructions::ConstructionReport>> {
    let start = Instant::now();
    let (reports, pou) = constructions::verify_all(cfg.mc.construction_points, cfg.seed)?;
    let t = secs(start) / (reports.len() + 1) as f64;
    for r in &reports {
        rec.check(
            format!("construction_{}_eps{}", r.name, r.target_accuracy),
            r.measured_error,
            0.0,
            r.bound,
            t,
            false,
        );
    }
    rec.check("partition_of_unity", pou, 0.0, 1e-12, t, false);
    Ok(reports)
}

/// Identity gap, in combined standard errors, for the oracle with `f` scaled by 0.9.
pub fn vincent_rows(cfg: &ExperimentConfig, rec: &mut Recorder, model: &ScoreModel, label: &str) -> Result<()> {
    let gen = cfg.generator.build()?;
    let oracle = ScoreModel::oracle(&gen, &cfg.schedule)?;
    let start = Instant::now();
    let v = dsm::vincent_check(model, &oracle, &gen, &cfg.schedule, cfg.mc.n_data, &cfg.mc_config(0x71C))?;
    let t = secs(start);
    rec.measure(format!("vincent_lhs_{label}"), v.lhs.value, v.lhs.std_error, t, true);
    rec.measure(format!("vincent_rhs_{label}"), v.rhs.value, v.rhs.std_error, 0.0, true);
    rec.check(format!("vincent_gap_sigmas_{label}"), v.gap_sigmas, 0.0, 3.0, 0.0, true);
    Ok(())
}

/// Runs every computable bound check for the configured generator.
///
/// A constructed estimator adds the assembly audit; its preconditions are enforced and
/// violations are returned as errors.
pub fn bound_audit(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let mut rec = Recorder::new(cfg);
    surrogate_rows(cfg, &mut rec)?;
    tail_rows(cfg, &mut rec)?;
    analytic_rows(cfg, &mut rec)?;
    construction_rows(cfg, &mut rec)?;
    let gen = cfg.generator.build()?;
    let scaled = ScoreModel::oracle(&gen, &cfg.schedule)?.with_f_scale(0.9);
    vincent_rows(cfg, &mut rec, &scaled, "scaled_oracle")?;
    if let EstimatorSpec::Constructed { eps, eps_prime } = &cfg.estimator {
        let start = Instant::now();
        let a = assemble(cfg, *eps, *eps_prime)?;
        let t = secs(start);
        rec.check("assembly_sup_error", a.audit.sup_error, 0.0, a.audit.bound, t, false);
        rec.check("assembly_denominator_ratio", 1.0 / a.audit.min_q_ratio, 0.0, 1.0, 0.0, false);
    }
    Ok(rec.rows)
}

pub fn all_passed(rows: &[ExperimentRecord]) -> bool {
    rows.iter().all(|r| r.pass != Some(false))
}

/// Oracle density, score and `f` on a grid of `(y, t)`, one map per row.
pub fn oracle_grid(cfg: &ExperimentConfig, per_axis: usize, n_times: usize) -> Result<Vec<BTreeMap<String, f64>>> {
    let gen = cfg.generator.build()?;
    let mix = Mixture::from_generator(&gen, &dsm::oracle_rule(&gen, &cfg.schedule))?;
    let s = &cfg.schedule;
    let dim = gen.dim;
    if dim > 2 {
        return Err(Error::invalid("oracle grid output supports D <= 2"));
    }
    let n_times = n_times.max(1);
    let mut rows = Vec::new();
    for i in 0..n_times {
        let t = if n_times == 1 {
            s.t0
        } else {
            s.t0 * (s.t_max / s.t0).powf(i as f64 / (n_times - 1) as f64)
        };
        let v = s.eval(t)?;
        let half = 3.0 * v.tsigma() + v.m;
        let total = per_axis.pow(dim as u32);
        for idx in 0..total {
            let mut r = idx;
            let y: Vec<f64> = (0..dim)
                .map(|_| {
                    let k = r % per_axis;
                    r /= per_axis;
                    -half + 2.0 * half * k as f64 / (per_axis - 1).max(1) as f64
                })
                .collect();
            let e = mix.eval_at(&v, &y)?;
            let mut row = BTreeMap::new();
            row.insert("t".to_string(), t);
            for l in 0..dim {
                row.insert(format!("y{}", l + 1), y[l]);
                row.insert(format!("score{}", l + 1), e.score[l]);
                row.insert(format!("f{}", l + 1), e.f_value[l]);
            }
            row.insert("log_density".to_string(), e.log_density);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// TV between data and reverse samples for the configured estimator.
pub fn end_to_end_row(cfg: &ExperimentConfig, model: &ScoreModel) -> Result<(sampler::EndToEnd, Vec<ExperimentRecord>)> {
    let gen = cfg.generator.build()?;
    let sp = &cfg.sampler;
    let e = sampler::end_to_end(&gen, &cfg.schedule, model, sp.n_samples, sp.n_steps, sp.bins, cfg.seed)?;
    let mut rec = Recorder::new(cfg);
    let label = if e.tv.marginal { "tv_max_marginal" } else { "tv" };
    rec.measure(label, e.tv.tv, e.tv_std_error, e.runtime.as_secs_f64(), true);
    Ok((e, rec.rows))
}

pub fn sample_points(cfg: &ExperimentConfig, model: &ScoreModel) -> Result<Vec<Vec<f64>>> {
    let sp = &cfg.sampler;
    sampler::reverse_sample(
        model,
        &cfg.schedule,
        &ReverseRunConfig {
            n_steps: sp.n_steps,
            n_samples: sp.n_samples,
            seed: cfg.seed,
        },
    )
}

/// Quadrature rule used by the oracle rows, exposed for reporting.
pub fn oracle_rule_for(cfg: &ExperimentConfig) -> Result<QuadratureRule> {
    Ok(dsm::oracle_rule(&cfg.generator.build()?, &cfg.schedule))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            GeneratorChoice::named("sine", 1),
            DiffusionSchedule::new(0.3, 0.05, 2.0).unwrap(),
            7,
        );
        c.mc.n_data = 200;
        c.mc.tail_draws = 5000;
        c.mc.derivative_points = 5;
        c.mc.construction_points = 300;
        c
    }

    #[test]
    fn toml_round_trip_materializes_defaults() {
        let text = r#"
            seed = 3
            [generator]
            name = "sine"
            [schedule]
            sigma_data = 0.2
            t0 = 0.05
            T = 2.0
            [estimator]
            kind = "constructed"
            eps = 0.3
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.sweep, SweepAxes::default());
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.out_dir = PathBuf::from("elsewhere");
        assert_eq!(d.hash(), c.hash());
        d.seed = 4;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn config_errors_name_the_problem() {
        let missing = "seed = 1\n[generator]\nname = \"sine\"\n";
        let e = ExperimentConfig::from_toml_str(missing).unwrap_err().to_string();
        assert!(e.contains("schedule"), "{e}");
        let unknown = "seed = 1\n[generator]\nname = \"spiral\"\n[schedule]\nsigma_data = 0.1\nt0 = 0.1\nT = 1.0\n";
        let e = ExperimentConfig::from_toml_str(unknown).unwrap_err().to_string();
        assert!(e.contains("spiral"), "{e}");
        let mut c = base();
        c.sweep.n.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn records_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new(&base());
        rec.measure("a", 1.5, 0.1, 0.01, true);
        rec.check("b", 0.2, 0.0, 0.3, 0.0, false);
        let p = dir.path().join("r.csv");
        append_records(&p, &rec.rows[..1]).unwrap();
        append_records(&p, &rec.rows[1..]).unwrap();
        assert_eq!(read_records(&p).unwrap(), rec.rows);
        fs::write(&p, "config_hash,seed,metric\nabc,1,x\n").unwrap();
        let e = read_records(&p).unwrap_err().to_string();
        assert!(e.contains("value") || e.contains("missing"), "{e}");
    }

    #[test]
    fn oracle_sweep_is_rejected() {
        let e = rate_sweep(&base()).unwrap_err().to_string();
        assert!(e.contains("slope is undefined"), "{e}");
    }

    #[test]
    fn understated_holder_fails_the_surrogate_row() {
        let mut c = base();
        c.sweep.eps = vec![0.1];
        let mut rec = Recorder::new(&c);
        surrogate_rows(&c, &mut rec).unwrap();
        assert!(all_passed(&rec.rows));
        let h = c.generator.build().unwrap().holder;
        c.generator.holder = Some(h / 10.0);
        let mut rec = Recorder::new(&c);
        surrogate_rows(&c, &mut rec).unwrap();
        assert!(!all_passed(&rec.rows));
    }

    #[test]
    fn assembly_refuses_large_eps() {
        let mut c = base();
        c.generator = GeneratorChoice::named("gentle_curve", 1);
        c.schedule = DiffusionSchedule::new(0.1, 0.01, 1.0).unwrap();
        c.estimator = EstimatorSpec::Constructed {
            eps: 0.9,
            eps_prime: None,
        };
        let e = estimator_model(&c).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)), "{e}");
    }
}
