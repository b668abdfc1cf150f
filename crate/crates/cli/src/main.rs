use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scorelab::constructions::ConstructionReport;
use scorelab::dsm::{self, ScoreModel};
use scorelab::harness::{self, EstimatorSpec, ExperimentConfig, ExperimentRecord, Recorder};
use scorelab::{exec, Error};

#[derive(Parser, Debug)]
#[command(name = "scorelab", version, about = "Score oracles, ReLU constructions, DSM training and reverse sampling")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Oracle density, score and f on a (y, t) grid.
    OracleEval {
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = 5)]
        times: usize,
    },
    /// Assembles the constructive score network and audits it.
    Construct {
        /// Defaults to the estimator eps, else the first sweep eps.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        eps_prime: Option<f64>,
    },
    /// Audits every basic construction against its bound.
    VerifyConstructions,
    /// Trains the score network by empirical risk minimization.
    Train,
    /// Checks the Vincent identity for the configured estimator.
    Vincent {
        /// Scales f of the estimator.
        #[arg(long, default_value_t = 1.0)]
        f_scale: f64,
    },
    /// Draws reverse-diffusion samples.
    Sample {
        /// Saved score model; the configured estimator otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Total variation between data and reverse samples.
    EndToEnd {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sample-size sweep and log-log rate fit.
    Rates,
    /// Empirical tail mass against its bound.
    Tails,
    /// Finite-difference derivative bounds of log h.
    AnalyticCheck,
    /// Every computable bound check; exit status 1 if any fails.
    Audit,
}

enum Outcome {
    Done,
    Failed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads;
    match exec::with_threads(threads, || run(&cli.command, &cfg)) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Audit(_) | Error::Numerical(_) | Error::Divergence { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(cli: &Cli) -> scorelab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(cfg: &ExperimentConfig, rows: &[ExperimentRecord]) -> scorelab::Result<Outcome> {
    println!("{:<36} {:>13} {:>10} {:>13} {:>5}", "metric", "value", "std_error", "bound", "pass");
    for r in rows {
        let bound = r.bound.map_or(String::from("-"), |b| format!("{b:.6e}"));
        let pass = r.pass.map_or("-", |p| if p { "yes" } else { "NO" });
        println!("{:<36} {:>13.6e} {:>10.3e} {:>13} {:>5}", r.metric, r.value, r.std_error, bound, pass);
    }
    let path = harness::persist_run(cfg, rows)?;
    eprintln!("records appended to {}", path.display());
    Ok(if harness::all_passed(rows) { Outcome::Done } else { Outcome::Failed })
}

fn model_from(cfg: &ExperimentConfig, path: &Option<PathBuf>) -> scorelab::Result<ScoreModel> {
    match path {
        Some(p) => harness::load_model(p),
        None => harness::estimator_model(cfg),
    }
}

fn artifact(cfg: &ExperimentConfig, stem: &str, ext: &str) -> scorelab::Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.join(format!("{stem}-{}.{ext}", cfg.hash())))
}

fn run(cmd: &Command, cfg: &ExperimentConfig) -> scorelab::Result<Outcome> {
    let mut rec = Recorder::new(cfg);
    match cmd {
        Command::OracleEval { grid, times } => {
            let rows = harness::oracle_grid(cfg, (*grid).max(2), *times)?;
            let path = artifact(cfg, "oracle-eval", "csv")?;
            harness::write_table(&path, &rows)?;
            eprintln!("{} grid points written to {}", rows.len(), path.display());
            let rule = harness::oracle_rule_for(cfg)?;
            rec.measure("oracle_nodes_per_axis", (rule.nodes_per_axis * rule.panels) as f64, 0.0, 0.0, false);
        }
        Command::Construct { eps, eps_prime } => {
            let (e0, ep0) = match &cfg.estimator {
                EstimatorSpec::Constructed { eps, eps_prime } => (*eps, *eps_prime),
                _ => (cfg.sweep.eps[0], None),
            };
            let start = std::time::Instant::now();
            let a = harness::assemble(cfg, eps.unwrap_or(e0), eps_prime.or(ep0))?;
            let t = start.elapsed().as_secs_f64();
            let path = artifact(cfg, "f-net", "txt")?;
            harness::save_net(&path, &a.f_net)?;
            eprintln!("network written to {}", path.display());
            rec.check("assembly_sup_error", a.audit.sup_error, 0.0, a.audit.bound, t, false);
            rec.check("assembly_denominator_ratio", 1.0 / a.audit.min_q_ratio, 0.0, 1.0, 0.0, false);
            let s = a.f_net.stats();
            rec.measure("assembly_depth", s.depth as f64, 0.0, 0.0, false);
            rec.measure("assembly_nonzeros", s.nonzeros as f64, 0.0, 0.0, false);
        }
        Command::VerifyConstructions => {
            let reports = harness::construction_rows(cfg, &mut rec)?;
            let path = artifact(cfg, "constructions", "csv")?;
            let mut text = String::from(ConstructionReport::HEADER);
            for r in &reports {
                text.push('\n');
                text.push_str(&r.row());
            }
            text.push('\n');
            std::fs::write(&path, text)?;
        }
        Command::Train => {
            let EstimatorSpec::Trained { n, .. } = &cfg.estimator else {
                return Err(Error::invalid("`train` needs [estimator] kind = \"trained\""));
            };
            let start = std::time::Instant::now();
            let out = harness::train_on_fresh(cfg, *n, 0)?;
            let t = start.elapsed().as_secs_f64();
            let mp = artifact(cfg, "model", "txt")?;
            harness::save_model(&mp, &out.model)?;
            harness::write_trace(&artifact(cfg, "trace", "csv")?, &out.trace)?;
            eprintln!("model written to {}", mp.display());
            let best = &out.trace[out.best_epoch];
            rec.measure("best_val_risk", best.val_risk, 0.0, t, true);
            rec.measure("learned_sigma", out.model.sigma, 0.0, 0.0, false);
            if let Some(net) = out.model.network()? {
                let st = net.stats();
                rec.measure("net_nonzeros", st.nonzeros as f64, 0.0, 0.0, false);
                rec.measure("net_magnitude", st.magnitude, 0.0, 0.0, false);
                rec.measure("net_depth", st.depth as f64, 0.0, 0.0, false);
            }
            let gen = cfg.generator.build()?;
            let oracle = ScoreModel::oracle(&gen, &cfg.schedule)?;
            let e = dsm::integrated_score_error_vs(&out.model, &oracle, &gen, &cfg.schedule, cfg.mc.n_data, &cfg.mc_config(0x5EE9))?;
            rec.measure("score_error", e.value, e.std_error, 0.0, true);
        }
        Command::Vincent { f_scale } => {
            let model = harness::estimator_model(cfg)?.with_f_scale(*f_scale);
            harness::vincent_rows(cfg, &mut rec, &model, model.backend_name())?;
        }
        Command::Sample { model } => {
            let m = model_from(cfg, model)?;
            let start = std::time::Instant::now();
            let pts = harness::sample_points(cfg, &m)?;
            let path = artifact(cfg, "samples", "csv")?;
            harness::write_points(&path, &pts)?;
            eprintln!("{} samples written to {}", pts.len(), path.display());
            rec.measure("samples", pts.len() as f64, 0.0, start.elapsed().as_secs_f64(), true);
        }
        Command::EndToEnd { model } => {
            let m = model_from(cfg, model)?;
            let (_, rows) = harness::end_to_end_row(cfg, &m)?;
            rec.rows.extend(rows);
        }
        Command::Rates => {
            let r = harness::rate_sweep(cfg)?;
            rec.rows.extend(r.rows);
        }
        Command::Tails => harness::tail_rows(cfg, &mut rec)?,
        Command::AnalyticCheck => harness::analytic_rows(cfg, &mut rec)?,
        Command::Audit => rec.rows = harness::bound_audit(cfg)?,
    }
    finish(cfg, &rec.rows)
}
