//! `savi`: run allocation experiments, print event traces and run the
//! verification suites.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad config/usage or guard
//! violation, 3 numeric failure inside a solver.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use savi_core::alloc::{compare_methods, fmt_float, Method};
use savi_core::diff::{grad_check, CorruptedGradient};
use savi_core::models::{CodecModel, LatentModel};
use savi_core::savi::complexity::predict_dag;
use savi_core::savi::{format_trace, solve_2_level, solve_approx_dag, solve_bao, solve_dag, solve_dag_on, SolveResult};
use savi_core::verify::{self, Profile, VerifyOptions};
use savi_core::{Error, NodeId};

use config::{BuiltModel, ExperimentConfig, QuadraticMethod};

#[derive(Parser)]
#[command(
    name = "savi",
    version,
    about = "Semi-amortized variational inference on DAG latents"
)]
struct Cli {
    /// Output directory (overrides `run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured methods and write CSV reports.
    Run { config: PathBuf },
    /// Run a verification profile: thm1, thm2, complexity, gap, factorized,
    /// ordering, monotone, gradcheck or all.
    Verify {
        profile: String,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Run the exact solver and write its event trace.
    Trace { config: PathBuf },
    /// Compare model gradients against central differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::RecursionDepth { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { config } => cmd_run(&cli, config),
        Cmd::Verify { profile, inject_fault } => cmd_verify(&cli, profile, *inject_fault),
        Cmd::Trace { config } => cmd_trace(&cli, config),
        Cmd::Gradcheck {
            config,
            trials,
            tol,
            inject_fault,
        } => cmd_gradcheck(&cli, config, *trials, *tol, *inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(Failure::config)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(cli: &Cli, path: &Path) -> CliResult {
    let cfg = load(path)?;
    if cfg.run.methods.is_empty() || cfg.run.optimize.is_empty() {
        return Err(Failure::config("no methods selected"));
    }
    let model = cfg.build_model(cli.seed).map_err(Failure::config)?;
    match model {
        BuiltModel::Codec(m) => run_codec(cli, &cfg, &m)?,
        BuiltModel::Quadratic(m) => run_quadratic(cli, &cfg, &m)?,
    }
    // Resolved settings, so every output directory records its provenance.
    let mut resolved = cfg.clone();
    resolved.run.seed = Some(cfg.seed(cli.seed));
    write(
        &out_dir(cli, &cfg)?,
        &format!("{}_config.toml", cfg.name()),
        &resolved.to_toml(),
    )
}

fn run_codec(cli: &Cli, cfg: &ExperimentConfig, model: &CodecModel) -> CliResult {
    let methods = cfg.codec_methods().map_err(Failure::config)?;
    let mut optim = cfg.optim(model.dag()).map_err(Failure::config)?;
    if cfg.run.events {
        optim = optim.with_events();
    }
    let runs: Vec<_> = methods
        .iter()
        .flat_map(|&m| cfg.run.optimize.iter().map(move |&o| (m, o)))
        .collect();
    let cmp = compare_methods(model, &runs, &optim, cfg.guard())?;
    let dir = out_dir(cli, cfg)?;
    for r in &cmp.reports {
        write(&dir, &r.file_name(), &r.to_csv())?;
        if r.method == Method::Exact && cfg.run.events {
            let name = r.file_name().replace(".csv", "_events.txt");
            write(&dir, &name, &format_trace(&r.events))?;
        }
    }
    write(&dir, &format!("{}_summary.csv", cmp.spec), &cmp.to_csv())?;
    print!("{}", cmp.summary());
    Ok(())
}

fn quadratic_solve<M: LatentModel + ?Sized>(
    model: &M,
    method: QuadraticMethod,
    optim: &savi_core::savi::OptimConfig,
) -> Result<SolveResult, Failure> {
    Ok(match method {
        // Zero steps leaves the joint initialization untouched.
        QuadraticMethod::Favi => {
            let mut r = solve_bao(model, &savi_core::savi::OptimConfig::new(optim.alpha, 0))?;
            r.method = "favi".into();
            r
        }
        QuadraticMethod::Bao => solve_bao(model, optim)?,
        QuadraticMethod::Approx => solve_approx_dag(model, optim)?,
        QuadraticMethod::Exact => solve_dag(model, optim)?,
        QuadraticMethod::TwoLevel => solve_2_level(model, optim)?,
    })
}

fn run_quadratic(cli: &Cli, cfg: &ExperimentConfig, model: &savi_core::models::QuadraticModel) -> CliResult {
    let methods = cfg.quadratic_methods().map_err(Failure::config)?;
    let optim = cfg.optim(model.dag()).map_err(Failure::config)?;
    let k = model
        .dag()
        .latent_nodes()
        .map(|n| optim.steps_for(n))
        .max()
        .unwrap_or(0);
    if methods.contains(&QuadraticMethod::Exact) && k > cfg.run.exact_max_steps {
        return Err(Failure::config(format!(
            "guard violated: exact method limited to K <= {} (got K = {k})",
            cfg.run.exact_max_steps
        )));
    }
    let optim = &optim;
    let results: Vec<Result<SolveResult, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = methods
            .iter()
            .map(|&m| s.spawn(move || quadratic_solve(model, m, optim)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let dir = out_dir(cli, cfg)?;
    let name = cfg.name();
    let mut summary = String::from("method,L,gradient_calls,hvp_calls,favi_calls,jacobian_calls\n");
    println!("{:<10} {:>24} {:>14}", "method", "L", "gradient_calls");
    for (m, r) in methods.iter().zip(results) {
        let r = r?;
        let c = r.counter;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            m.as_str(),
            fmt_float(r.objective),
            c.gradient_calls,
            c.hvp_calls,
            c.favi_calls,
            c.jacobian_calls
        );
        println!("{:<10} {:>24.16e} {:>14}", m.as_str(), r.objective, c.gradient_calls);
        let mut trace = String::from("event,L\n");
        for (i, l) in r.trace.iter().enumerate() {
            let _ = writeln!(trace, "{i},{}", fmt_float(*l));
        }
        write(&dir, &format!("{name}_{}_trace.csv", m.as_str()), &trace)?;
    }
    write(&dir, &format!("{name}_summary.csv"), &summary)?;
    Ok(())
}

fn cmd_trace(cli: &Cli, path: &Path) -> CliResult {
    let cfg = load(path)?;
    let model = cfg.build_model(cli.seed).map_err(Failure::config)?;
    let guard = cfg.guard();
    let result = match &model {
        BuiltModel::Codec(m) => {
            let optim = cfg.optim(m.dag()).map_err(Failure::config)?.with_events();
            let reduced = m.dag().transitive_reduction();
            check_trace_guard(
                m.frames() <= guard.max_frames,
                m.dag(),
                &reduced,
                &optim,
                guard.max_steps,
            )?;
            solve_dag_on(m.as_ref(), &reduced, &optim)?
        }
        BuiltModel::Quadratic(m) => {
            let optim = cfg.optim(m.dag()).map_err(Failure::config)?.with_events();
            check_trace_guard(true, m.dag(), m.dag(), &optim, guard.max_steps)?;
            solve_dag(m.as_ref(), &optim)?
        }
    };
    let dir = out_dir(cli, &cfg)?;
    write(
        &dir,
        &format!("{}_trace.txt", cfg.name()),
        &format_trace(&result.events),
    )?;
    println!(
        "{} events, L = {:.16e}, {} gradient calls",
        result.events.len(),
        result.objective,
        result.counter.gradient_calls
    );
    Ok(())
}

fn check_trace_guard(
    frames_ok: bool,
    model_dag: &savi_core::LatentDag,
    solve: &savi_core::LatentDag,
    optim: &savi_core::savi::OptimConfig,
    max_steps: usize,
) -> CliResult {
    let k = model_dag.latent_nodes().map(|n| optim.steps_for(n)).max().unwrap_or(0);
    if frames_ok && k <= max_steps {
        return Ok(());
    }
    let (cost, events) = predict_dag(model_dag, solve, optim, false)?;
    Err(Failure::config(format!(
        "guard violated: exact trace outside the configured limits (K = {k}, limit {max_steps}; predicted {} gradient calls, {events} events)",
        cost.gradient_calls
    )))
}

fn cmd_verify(cli: &Cli, profile: &str, inject_fault: bool) -> CliResult {
    let profile: Profile = profile.parse()?;
    let opts = VerifyOptions {
        seed: cli.seed.unwrap_or(0),
        inject_fault,
    };
    let checks = verify::run(profile, &opts)?;
    for c in &checks {
        println!("{}", c.line());
    }
    match checks.iter().find(|c| !c.passed) {
        Some(c) => Err(Failure::check(format!(
            "check `{}` failed (seed {}): {}",
            c.name, opts.seed, c.detail
        ))),
        None => Ok(()),
    }
}

fn cmd_gradcheck(cli: &Cli, path: &Path, trials: usize, tol: f64, inject_fault: bool) -> CliResult {
    let cfg = load(path)?;
    let seed = cfg.seed(cli.seed);
    let model: Box<dyn LatentModel> = match cfg.build_model(cli.seed).map_err(Failure::config)? {
        BuiltModel::Codec(m) if inject_fault => Box::new(CorruptedGradient::new(*m, NodeId(1))),
        BuiltModel::Codec(m) => m,
        BuiltModel::Quadratic(m) if inject_fault => Box::new(CorruptedGradient::new(*m, NodeId(1))),
        BuiltModel::Quadratic(m) => m,
    };
    let h = cfg.optim.fd_h;
    let report = grad_check(model.as_ref(), trials, tol, h, seed)?;
    for n in &report.per_node {
        println!("node {}: max rel err {:.3e}", n.node, n.max_rel_error);
    }
    if report.passed {
        println!(
            "[PASS] {} trials, max rel err {:.3e} < {tol:e}",
            trials, report.max_rel_error
        );
        Ok(())
    } else {
        Err(Failure::check(format!(
            "gradient check failed at node {} (seed {seed}): rel err {:.3e} >= {tol:e}",
            report.worst_node, report.max_rel_error
        )))
    }
}
