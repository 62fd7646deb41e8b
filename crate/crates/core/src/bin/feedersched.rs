use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use feedersched::admm::{solve, AdmmConfig, Initialization};
use feedersched::gmm::MdlSelection;
use feedersched::pipeline::{
    alpha_sweep, emit_hour, emit_reports, emit_sweep, fit_error_models, load_inputs, read_feeder,
    run_with_inputs, HourOpf, PipelineError, RunConfig, Stage, StageError,
};
use feedersched::socp::{allocate_renewable, InjectionOptions, OpfProblem};

#[derive(Parser)]
#[command(
    name = "feedersched",
    version,
    about = "Day-ahead purchase scheduling and loss-minimizing OPF for radial feeders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Flat,
    Sweep,
    Loadflow,
}

impl From<InitArg> for Initialization {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Flat => Initialization::Flat,
            InitArg::Sweep => Initialization::Sweep,
            InitArg::Loadflow => Initialization::LoadFlow,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full run: fit errors, schedule purchases, solve every hour's OPF.
    Schedule {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve one hour's loss-minimizing power flow.
    Opf {
        #[arg(long)]
        feeder: PathBuf,
        /// Hour of the load profile, starting at 1.
        #[arg(long)]
        hour: usize,
        /// Total renewable output in kW, spread over the renewable buses by capacity.
        #[arg(long, default_value_t = 0.0)]
        pv_kw: f64,
        #[arg(long, default_value_t = 1.0)]
        pv_power_factor: f64,
        /// Squared root voltage in per-unit.
        #[arg(long, default_value_t = 1.0)]
        v_root: f64,
        #[arg(long)]
        rho: Option<f64>,
        /// Stopping threshold for both residuals.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rerun the full pipeline for several confidence levels.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit forecast-error mixtures and pick the component count.
    FitErrors {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        nmax: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// One mixture per hour of day.
        #[arg(long)]
        per_hour: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Schedule { config, out } => schedule(&config, &out),
        Command::Opf {
            feeder,
            hour,
            pv_kw,
            pv_power_factor,
            v_root,
            rho,
            eps,
            max_iter,
            init,
            out,
        } => {
            let mut admm = AdmmConfig::default();
            if let Some(r) = rho {
                admm.rho = r;
            }
            if let Some(e) = eps {
                admm.eps_primal = e;
                admm.eps_dual = e;
            }
            if let Some(m) = max_iter {
                admm.max_iter = m;
            }
            if let Some(i) = init {
                admm.init = i.into();
            }
            let injection = InjectionOptions {
                pv_buses: None,
                pv_power_factor,
                v_root,
            };
            opf(&feeder, hour, pv_kw, &injection, &admm, &out)
        }
        Command::Sweep {
            config,
            alphas,
            out,
        } => sweep(&config, &alphas, &out),
        Command::FitErrors {
            history,
            nmax,
            seed,
            per_hour,
            out,
        } => fit_errors(&history, nmax, seed, per_hour, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn schedule(config: &Path, out: &Path) -> Result<(), PipelineError> {
    let cfg = RunConfig::load(config)?;
    let inputs = load_inputs(&cfg)?;
    let report = run_with_inputs(&cfg.settings, &inputs)?;
    emit_reports(&report, out)?;
    println!(
        "f1 = {:.4} (±{:.4})  f2 = {:.3} kWh  beta = {:.4}  C = {:.4}",
        report.f1, report.f1_half_width, report.f2_kwh, report.beta, report.total_cost
    );
    println!(
        "{} hours: {} converged, {} tight; reports in {}",
        report.hours.len(),
        report.converged_hours(),
        report.tight_hours(),
        out.display()
    );
    Ok(())
}

fn opf(
    feeder: &Path,
    hour: usize,
    pv_kw: f64,
    injection: &InjectionOptions,
    admm: &AdmmConfig,
    out: &Path,
) -> Result<(), PipelineError> {
    let network = Arc::new(read_feeder(feeder)?);
    if hour == 0 || hour > network.horizon() {
        return Err(PipelineError::new(
            Stage::Config,
            StageError::Invalid(format!(
                "hour must be in 1..={}, got {hour}",
                network.horizon()
            )),
        ));
    }
    let t = hour - 1;
    let generation = allocate_renewable(&network, pv_kw, injection)
        .map_err(|e| PipelineError::at_hour(Stage::Opf, t, e))?;
    let problem = OpfProblem::from_generation(network.clone(), t, &generation, injection.v_root)
        .map_err(|e| PipelineError::at_hour(Stage::Opf, t, e))?;
    let outcome = solve(&problem, admm).map_err(|e| PipelineError::at_hour(Stage::Opf, t, e))?;
    std::fs::create_dir_all(out).map_err(|e| {
        PipelineError::new(
            Stage::Report,
            StageError::Io {
                path: out.display().to_string(),
                source: e,
            },
        )
    })?;
    let loss_kw = outcome.solution.objective * network.base_mva * 1000.0;
    let hour_opf = HourOpf { problem, outcome };
    emit_hour(out, hour, &hour_opf)?;
    let o = &hour_opf.outcome;
    println!(
        "hour {hour}: loss = {loss_kw:.4} kW, {} iterations, converged = {}, tight = {} (max relative gap {:.2e})",
        o.iterations, o.converged, o.tight, o.max_relative_gap
    );
    Ok(())
}

fn sweep(config: &Path, alphas: &[f64], out: &Path) -> Result<(), PipelineError> {
    let cfg = RunConfig::load(config)?;
    let inputs = load_inputs(&cfg)?;
    let table = alpha_sweep(&cfg.settings, &inputs, alphas)?;
    emit_sweep(out, &table)?;
    for r in &table.rows {
        println!(
            "alpha = {:<5} expected C = {:.4} (±{:.4})",
            r.alpha, r.total_cost, r.f1_half_width
        );
    }
    println!(
        "expected cost is {} in alpha; break-even alpha ranges from {:.4} to {:.4}",
        table.direction.as_str(),
        table.break_even.0,
        table.break_even.1
    );
    Ok(())
}

fn mdl_table(selections: &[MdlSelection]) -> String {
    let mut out = String::from("hour,n_components,log_likelihood,mdl,converged,selected\n");
    for (h, sel) in selections.iter().enumerate() {
        let hour = if selections.len() == 1 {
            "all".to_string()
        } else {
            (h + 1).to_string()
        };
        for (i, c) in sel.candidates.iter().enumerate() {
            writeln!(
                out,
                "{hour},{},{},{},{},{}",
                c.n_components,
                c.fit.log_likelihood,
                c.score,
                u8::from(c.fit.converged),
                u8::from(i == sel.best)
            )
            .unwrap();
        }
    }
    out
}

fn fit_errors(
    history: &Path,
    nmax: usize,
    seed: u64,
    per_hour: bool,
    out: &Path,
) -> Result<(), PipelineError> {
    if nmax == 0 {
        return Err(PipelineError::new(
            Stage::Config,
            StageError::Invalid("--nmax must be at least 1".into()),
        ));
    }
    let selections = fit_error_models(history, nmax, seed, per_hour)?;
    let io = |path: PathBuf, e| {
        PipelineError::new(
            Stage::Report,
            StageError::Io {
                path: path.display().to_string(),
                source: e,
            },
        )
    };
    std::fs::create_dir_all(out).map_err(|e| io(out.to_path_buf(), e))?;
    let models: String = selections
        .iter()
        .enumerate()
        .map(|(h, s)| {
            if selections.len() == 1 {
                s.model().to_text()
            } else {
                format!("# hour {}\n{}", h + 1, s.model().to_text())
            }
        })
        .collect();
    let model_path = out.join("error_model.txt");
    std::fs::write(&model_path, &models).map_err(|e| io(model_path.clone(), e))?;
    let mdl_path = out.join("mdl.csv");
    std::fs::write(&mdl_path, mdl_table(&selections)).map_err(|e| io(mdl_path.clone(), e))?;
    for (h, s) in selections.iter().enumerate() {
        let m = s.model();
        let label = if selections.len() == 1 {
            String::new()
        } else {
            format!("hour {}: ", h + 1)
        };
        println!(
            "{label}N = {} (mean {:.4}, std {:.4})",
            m.n_components(),
            m.mean(),
            m.variance().sqrt()
        );
    }
    Ok(())
}
