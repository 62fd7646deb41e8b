//! End-to-end run: error model, day-ahead schedule, per-hour OPF, the
//! combined cost `C = f1 + β·f2`, and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ini::Ini;
use rayon::prelude::*;
use thiserror::Error;

use crate::admm::{solve, AdmmConfig, AdmmError, AdmmOutcome, Initialization};
use crate::gmm::{
    history_errors, history_errors_by_hour, mdl_select, read_history, GmmError, GmmModel,
    MdlSelection,
};
use crate::grid::{parse_feeder, FeederNetwork, GridError};
use crate::scheduler::{
    evaluate_f1, expected_f1, read_prices_demand, schedule_day_ahead, DayAheadSchedule,
    DemandSeries, ErrorTarget, HourCost, Interval, PriceSchedule, PurchaseBounds, ResaleSign,
    ScheduleError, ScheduledHour,
};
use crate::socp::{
    build_problem, write_branch_csv, write_bus_csv, InjectionOptions, OpfError, OpfProblem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    ErrorModel,
    Schedule,
    Opf,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::ErrorModel => "error-model",
            Stage::Schedule => "schedule",
            Stage::Opf => "opf",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A failure tagged with the pipeline stage and, where relevant, the hour
/// (numbered from 1).
#[derive(Debug, Error)]
#[error("{stage}{}: {source}", hour.map(|h| format!(" (hour {h})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub hour: Option<usize>,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<StageError>) -> Self {
        Self {
            stage,
            hour: None,
            source: source.into(),
        }
    }

    pub fn at_hour(stage: Stage, hour: usize, source: impl Into<StageError>) -> Self {
        Self {
            stage,
            hour: Some(hour + 1),
            source: source.into(),
        }
    }

    fn invalid(stage: Stage, msg: impl Into<String>) -> Self {
        Self::new(stage, StageError::Invalid(msg.into()))
    }
}

fn io_error(stage: Stage, path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::new(
        stage,
        StageError::Io {
            path: path.display().to_string(),
            source,
        },
    )
}

/// Loss weight in $/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Beta {
    /// Mean day-ahead price over the horizon.
    #[default]
    Auto,
    Fixed(f64),
}

impl Beta {
    pub fn resolve(self, prices: &PriceSchedule) -> f64 {
        match self {
            Beta::Auto => prices.mean_c_da(),
            Beta::Fixed(b) => b,
        }
    }
}

/// Everything about a run except where the inputs live.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub alpha: f64,
    pub beta: Beta,
    pub horizon: usize,
    pub seed: u64,
    pub resale_sign: ResaleSign,
    pub error_target: ErrorTarget,
    /// Fit one mixture per hour of day instead of one for the whole horizon.
    pub per_hour_errors: bool,
    pub n_max: usize,
    pub mc_samples: usize,
    pub bounds: PurchaseBounds,
    pub injection: InjectionOptions,
    pub admm: AdmmConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: Beta::Auto,
            horizon: 24,
            seed: 1,
            resale_sign: ResaleSign::Cost,
            error_target: ErrorTarget::Demand,
            per_hour_errors: false,
            n_max: 5,
            mc_samples: 100_000,
            bounds: PurchaseBounds::default(),
            injection: InjectionOptions::default(),
            admm: AdmmConfig::default(),
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::invalid(Stage::Config, msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1".into());
        }
        if let Beta::Fixed(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("beta must be nonnegative, got {b}"));
            }
        }
        self.admm
            .validate()
            .map_err(|e| PipelineError::new(Stage::Config, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub feeder: PathBuf,
    pub prices: PathBuf,
    pub history: PathBuf,
    pub settings: RunSettings,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("data", &["feeder", "prices", "history"]),
    (
        "schedule",
        &[
            "alpha",
            "beta",
            "horizon",
            "seed",
            "resale_sign",
            "error_target",
            "per_hour_errors",
            "n_max",
            "mc_samples",
        ],
    ),
    (
        "bounds",
        &[
            "g_da_min", "g_da_max", "g_rt_min", "g_rt_max", "g_pv_min", "g_pv_max",
        ],
    ),
    ("opf", &["pv_buses", "pv_power_factor", "v_root"]),
    (
        "admm",
        &[
            "rho",
            "eps_primal",
            "eps_dual",
            "max_iter",
            "over_relaxation",
            "adaptive_rho",
            "init",
            "parallel",
        ],
    ),
];

struct Fields<'a> {
    ini: &'a Ini,
}

impl Fields<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini
            .section(Some(section))
            .and_then(|s| s.get(key))
            .map(str::trim)
    }

    fn parse<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>, PipelineError> {
        self.raw(section, key)
            .map(|v| {
                v.parse().map_err(|_| {
                    PipelineError::invalid(
                        Stage::Config,
                        format!("[{section}] {key}: cannot parse `{v}`"),
                    )
                })
            })
            .transpose()
    }

    fn set<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        slot: &mut T,
    ) -> Result<(), PipelineError> {
        if let Some(v) = self.parse(section, key)? {
            *slot = v;
        }
        Ok(())
    }
}

impl RunConfig {
    /// Reads a `key = value` file with `[section]` headers. Relative paths
    /// are resolved against `base_dir`.
    pub fn from_ini_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let ini = Ini::load_from_str(text)
            .map_err(|e| PipelineError::invalid(Stage::Config, e.to_string()))?;
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("");
            let Some((_, keys)) = KNOWN_KEYS.iter().find(|(s, _)| *s == name) else {
                if props.is_empty() && section.is_none() {
                    continue;
                }
                return Err(PipelineError::invalid(
                    Stage::Config,
                    format!("unknown section [{name}]"),
                ));
            };
            if let Some((k, _)) = props.iter().find(|(k, _)| !keys.contains(k)) {
                return Err(PipelineError::invalid(
                    Stage::Config,
                    format!("unknown key `{k}` in [{name}]"),
                ));
            }
        }
        let f = Fields { ini: &ini };
        let path = |key: &str| -> Result<PathBuf, PipelineError> {
            let raw = f.raw("data", key).ok_or_else(|| {
                PipelineError::invalid(Stage::Config, format!("[data] {key} is required"))
            })?;
            Ok(base_dir.join(raw))
        };

        let mut s = RunSettings::default();
        f.set("schedule", "alpha", &mut s.alpha)?;
        if let Some(beta) = f.raw("schedule", "beta") {
            s.beta = if beta == "auto" {
                Beta::Auto
            } else {
                Beta::Fixed(f.parse("schedule", "beta")?.expect("present"))
            };
        }
        f.set("schedule", "horizon", &mut s.horizon)?;
        f.set("schedule", "seed", &mut s.seed)?;
        if let Some(sign) = f.raw("schedule", "resale_sign") {
            s.resale_sign = sign
                .parse()
                .map_err(|e| PipelineError::new(Stage::Config, e))?;
        }
        if let Some(target) = f.raw("schedule", "error_target") {
            s.error_target = match target {
                "demand" => ErrorTarget::Demand,
                "net_demand" => ErrorTarget::NetDemand,
                _ => {
                    return Err(PipelineError::invalid(
                        Stage::Config,
                        format!("error_target must be `demand` or `net_demand`, got `{target}`"),
                    ))
                }
            };
        }
        f.set("schedule", "per_hour_errors", &mut s.per_hour_errors)?;
        f.set("schedule", "n_max", &mut s.n_max)?;
        f.set("schedule", "mc_samples", &mut s.mc_samples)?;

        let interval = |lo: &str, hi: &str, default: Interval| -> Result<Interval, PipelineError> {
            let min = f.parse("bounds", lo)?.unwrap_or(default.min);
            let max = f.parse("bounds", hi)?.unwrap_or(default.max);
            Interval::new(min, max).map_err(|e| PipelineError::new(Stage::Config, e))
        };
        s.bounds = PurchaseBounds {
            g_da: interval("g_da_min", "g_da_max", Interval::NONNEGATIVE)?,
            g_rt: interval("g_rt_min", "g_rt_max", Interval::NONNEGATIVE)?,
            g_pv: interval("g_pv_min", "g_pv_max", Interval::NONNEGATIVE)?,
        };

        if let Some(list) = f.raw("opf", "pv_buses") {
            let ids = list
                .split(',')
                .map(|t| t.trim().parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| {
                    PipelineError::invalid(
                        Stage::Config,
                        format!("[opf] pv_buses: cannot parse `{list}`"),
                    )
                })?;
            s.injection.pv_buses = Some(ids);
        }
        f.set("opf", "pv_power_factor", &mut s.injection.pv_power_factor)?;
        f.set("opf", "v_root", &mut s.injection.v_root)?;

        f.set("admm", "rho", &mut s.admm.rho)?;
        f.set("admm", "eps_primal", &mut s.admm.eps_primal)?;
        f.set("admm", "eps_dual", &mut s.admm.eps_dual)?;
        f.set("admm", "max_iter", &mut s.admm.max_iter)?;
        f.set("admm", "over_relaxation", &mut s.admm.over_relaxation)?;
        f.set("admm", "adaptive_rho", &mut s.admm.adaptive_rho)?;
        f.set("admm", "parallel", &mut s.admm.parallel)?;
        if let Some(init) = f.raw("admm", "init") {
            s.admm.init = match init {
                "flat" => Initialization::Flat,
                "sweep" => Initialization::Sweep,
                "loadflow" => Initialization::LoadFlow,
                _ => {
                    return Err(PipelineError::invalid(
                        Stage::Config,
                        format!("[admm] init must be flat, sweep or loadflow, got `{init}`"),
                    ))
                }
            };
        }
        s.validate()?;
        Ok(Self {
            feeder: path("feeder")?,
            prices: path("prices")?,
            history: path("history")?,
            settings: s,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(Stage::Config, path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_ini_str(&text, base)?;
        for p in [&cfg.feeder, &cfg.prices, &cfg.history] {
            if !p.is_file() {
                return Err(PipelineError::invalid(
                    Stage::Config,
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(cfg)
    }
}

/// Parsed inputs shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub network: Arc<FeederNetwork>,
    pub prices: PriceSchedule,
    pub demand: DemandSeries,
    /// One mixture, or one per hour of day.
    pub errors: Vec<GmmModel>,
}

pub fn read_feeder(path: &Path) -> Result<FeederNetwork, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(Stage::Ingest, path, e))?;
    parse_feeder(&text).map_err(|e| PipelineError::new(Stage::Ingest, e))
}

/// Fits the error mixtures from a forecast history.
pub fn fit_error_models(
    history: &Path,
    n_max: usize,
    seed: u64,
    per_hour: bool,
) -> Result<Vec<MdlSelection>, PipelineError> {
    let rows = read_history(history).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    if per_hour {
        let groups =
            history_errors_by_hour(&rows).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
        groups
            .iter()
            .enumerate()
            .map(|(h, g)| {
                mdl_select(g, n_max, seed)
                    .map_err(|e| PipelineError::at_hour(Stage::ErrorModel, h, e))
            })
            .collect()
    } else {
        let sample = history_errors(&rows).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
        Ok(vec![mdl_select(&sample, n_max, seed)
            .map_err(|e| PipelineError::new(Stage::ErrorModel, e))?])
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let s = &cfg.settings;
    let network = Arc::new(read_feeder(&cfg.feeder)?);
    let (prices, demand) =
        read_prices_demand(&cfg.prices).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    let nt = s.horizon;
    if prices.horizon() < nt {
        return Err(PipelineError::invalid(
            Stage::Ingest,
            format!(
                "{} covers {} hours, horizon is {nt}",
                cfg.prices.display(),
                prices.horizon()
            ),
        ));
    }
    if network.horizon() < nt {
        return Err(PipelineError::invalid(
            Stage::Ingest,
            format!(
                "feeder profile covers {} hours, horizon is {nt}",
                network.horizon()
            ),
        ));
    }
    let prices = PriceSchedule::new(
        prices.c_da()[..nt].to_vec(),
        prices.c_rt()[..nt].to_vec(),
        prices.c_pv()[..nt].to_vec(),
        prices.c_s()[..nt].to_vec(),
    )
    .map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    let demand = DemandSeries::new(
        demand.g_dl()[..nt].to_vec(),
        demand.g_pv_forecast()[..nt].to_vec(),
    )
    .map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    let errors = fit_error_models(&cfg.history, s.n_max, s.seed, s.per_hour_errors)?
        .iter()
        .map(|sel| sel.model().clone())
        .collect();
    Ok(Inputs {
        network,
        prices,
        demand,
        errors,
    })
}

#[derive(Debug, Clone)]
pub struct HourOpf {
    pub problem: OpfProblem,
    pub outcome: AdmmOutcome,
}

#[derive(Debug, Clone)]
pub struct HourReport {
    pub plan: ScheduledHour,
    /// Cost at the point forecast.
    pub point_cost: HourCost,
    /// Monte Carlo mean cost.
    pub expected_cost: f64,
    pub shortfall_rate: f64,
    pub loss_kwh: f64,
    pub opf: Option<HourOpf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub alpha: f64,
    pub beta: f64,
    pub f1: f64,
    pub f1_half_width: f64,
    pub f1_point: f64,
    pub f2_kwh: f64,
    pub total_cost: f64,
    pub hours: Vec<HourReport>,
    pub error_models: Vec<GmmModel>,
    pub sweep: Option<SweepTable>,
}

impl RunReport {
    pub fn converged_hours(&self) -> usize {
        self.hours
            .iter()
            .filter(|h| h.opf.as_ref().is_some_and(|o| o.outcome.converged))
            .count()
    }

    pub fn tight_hours(&self) -> usize {
        self.hours
            .iter()
            .filter(|h| h.opf.as_ref().is_some_and(|o| o.outcome.tight))
            .count()
    }
}

/// Solves the OPF of every hour, in parallel, ordered by hour.
pub fn solve_hours(
    network: &Arc<FeederNetwork>,
    schedule: &DayAheadSchedule,
    settings: &RunSettings,
) -> Result<Vec<HourOpf>, PipelineError> {
    (0..schedule.horizon())
        .into_par_iter()
        .map(|t| {
            let problem = build_problem(network.clone(), schedule, t, &settings.injection)
                .map_err(|e| PipelineError::at_hour(Stage::Opf, t, e))?;
            let outcome = solve(&problem, &settings.admm)
                .map_err(|e| PipelineError::at_hour(Stage::Opf, t, e))?;
            Ok(HourOpf { problem, outcome })
        })
        .collect()
}

fn loss_kwh(network: &FeederNetwork, opf: &HourOpf) -> f64 {
    opf.outcome.solution.objective * network.base_mva * 1000.0
}

/// Runs both steps at `settings.alpha`.
pub fn run_with_inputs(
    settings: &RunSettings,
    inputs: &Inputs,
) -> Result<RunReport, PipelineError> {
    settings.validate()?;
    let schedule = schedule_day_ahead(
        &inputs.demand,
        &inputs.prices,
        &inputs.errors,
        settings.alpha,
        &settings.bounds,
        settings.error_target,
        settings.resale_sign,
    )
    .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
    let point = evaluate_f1(
        &schedule,
        &inputs.prices,
        inputs.demand.g_dl(),
        settings.resale_sign,
    )
    .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
    let expected = expected_f1(
        &schedule,
        &inputs.prices,
        &inputs.errors,
        settings.mc_samples,
        settings.seed,
        settings.resale_sign,
    )
    .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
    let opf = solve_hours(&inputs.network, &schedule, settings)?;

    let beta = settings.beta.resolve(&inputs.prices);
    let hours: Vec<HourReport> = opf
        .into_iter()
        .enumerate()
        .map(|(t, o)| HourReport {
            plan: schedule.hours[t],
            point_cost: point.hours[t],
            expected_cost: expected.per_hour[t],
            shortfall_rate: expected.shortfall_rate[t],
            loss_kwh: loss_kwh(&inputs.network, &o),
            opf: Some(o),
        })
        .collect();
    let f1: f64 = hours.iter().map(|h| h.expected_cost).sum();
    let f2_kwh: f64 = hours.iter().map(|h| h.loss_kwh).sum();
    Ok(RunReport {
        alpha: settings.alpha,
        beta,
        f1,
        f1_half_width: expected.half_width,
        f1_point: point.total,
        f2_kwh,
        total_cost: f1 + beta * f2_kwh,
        hours,
        error_models: inputs.errors.clone(),
        sweep: None,
    })
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let inputs = load_inputs(cfg)?;
    run_with_inputs(&cfg.settings, &inputs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub f1: f64,
    pub f1_half_width: f64,
    pub f2_kwh: f64,
    pub beta: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostDirection {
    Nonincreasing,
    Nondecreasing,
    Constant,
    Mixed,
}

impl CostDirection {
    pub fn of(values: &[f64]) -> Self {
        let down = values.windows(2).all(|w| w[1] <= w[0]);
        let up = values.windows(2).all(|w| w[1] >= w[0]);
        match (down, up) {
            (true, true) => Self::Constant,
            (true, false) => Self::Nonincreasing,
            (false, true) => Self::Nondecreasing,
            (false, false) => Self::Mixed,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nonincreasing => "nonincreasing",
            Self::Nondecreasing => "nondecreasing",
            Self::Constant => "constant",
            Self::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Direction of expected total cost as alpha increases over the rows
    /// sorted by alpha.
    pub direction: CostDirection,
    /// Range over hours of the confidence level beyond which buying more
    /// day-ahead raises expected cost.
    pub break_even: (f64, f64),
}

/// Confidence level at which the marginal day-ahead kWh stops paying off:
/// `c_da = c_rt·(1 − α) − s·c_s·α`, with `s = −1` when resale adds to cost.
pub fn break_even_alpha(prices: &PriceSchedule, sign: ResaleSign, t: usize) -> f64 {
    let (c_da, c_rt, c_s) = (prices.c_da()[t], prices.c_rt()[t], prices.c_s()[t]);
    match sign {
        ResaleSign::Cost => (c_rt - c_da) / (c_rt + c_s),
        ResaleSign::Revenue => (c_rt - c_da) / (c_rt - c_s),
    }
}

/// Reruns both steps for every alpha with the same seed.
pub fn alpha_sweep(
    settings: &RunSettings,
    inputs: &Inputs,
    alphas: &[f64],
) -> Result<SweepTable, PipelineError> {
    if alphas.is_empty() {
        return Err(PipelineError::invalid(Stage::Config, "no alphas to sweep"));
    }
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let run = RunSettings {
                alpha,
                ..settings.clone()
            };
            let report = run_with_inputs(&run, inputs)?;
            Ok(SweepRow {
                alpha,
                f1: report.f1,
                f1_half_width: report.f1_half_width,
                f2_kwh: report.f2_kwh,
                beta: report.beta,
                total_cost: report.total_cost,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let costs: Vec<f64> = sorted.iter().map(|r| r.total_cost).collect();
    let be: Vec<f64> = (0..inputs.prices.horizon())
        .map(|t| break_even_alpha(&inputs.prices, settings.resale_sign, t))
        .collect();
    Ok(SweepTable {
        rows,
        direction: CostDirection::of(&costs),
        break_even: (
            be.iter().copied().fold(f64::INFINITY, f64::min),
            be.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| io_error(Stage::Report, path, e))
}

fn csv_bytes(
    f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    path: &Path,
) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| {
        PipelineError::new(
            Stage::Report,
            StageError::Io {
                path: path.display().to_string(),
                source: e.into(),
            },
        )
    })?;
    Ok(buf)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn schedule_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "hour,g_dl,g_da,g_pv,lambda,expected_rt,clamped,cost_da,cost_pv,cost_rt,cost_resale,cost_point,expected_cost,shortfall_rate,loss_kwh\n",
    );
    for (t, h) in report.hours.iter().enumerate() {
        let (p, c) = (&h.plan, &h.point_cost);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t + 1,
            p.g_dl,
            p.g_da,
            p.g_pv,
            flag(p.lambda),
            p.expected_rt,
            flag(p.clamped),
            c.day_ahead,
            c.renewable,
            c.real_time,
            c.resale,
            c.total,
            h.expected_cost,
            h.shortfall_rate,
            h.loss_kwh
        )
        .unwrap();
    }
    out
}

pub fn residual_csv(outcome: &AdmmOutcome) -> String {
    let mut out = String::from("iter,primal_residual,dual_residual,objective\n");
    for r in &outcome.trace {
        writeln!(out, "{},{},{},{}", r.iter, r.primal, r.dual, r.objective).unwrap();
    }
    out
}

pub fn summary_text(report: &RunReport) -> String {
    let mut out = String::new();
    writeln!(out, "alpha = {}", report.alpha).unwrap();
    writeln!(out, "beta = {}", report.beta).unwrap();
    writeln!(out, "f1 = {}", report.f1).unwrap();
    writeln!(out, "f1_half_width = {}", report.f1_half_width).unwrap();
    writeln!(out, "f1_point = {}", report.f1_point).unwrap();
    writeln!(out, "f2_kwh = {}", report.f2_kwh).unwrap();
    writeln!(out, "f2_cost = {}", report.beta * report.f2_kwh).unwrap();
    writeln!(out, "C = {}", report.total_cost).unwrap();
    writeln!(out, "hours = {}", report.hours.len()).unwrap();
    writeln!(out, "converged_hours = {}", report.converged_hours()).unwrap();
    writeln!(out, "tight_hours = {}", report.tight_hours()).unwrap();
    out
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("alpha,f1,f1_half_width,f2_kwh,beta,expected_cost\n");
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha, r.f1, r.f1_half_width, r.f2_kwh, r.beta, r.total_cost
        )
        .unwrap();
    }
    out
}

/// Whitespace-separated columns for plotting tools.
pub fn sweep_plot_data(table: &SweepTable) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# expected total cost is {} in alpha",
        table.direction.as_str()
    )
    .unwrap();
    writeln!(
        out,
        "# buying more day-ahead lowers expected cost while alpha < break-even, which ranges over hours from {} to {}",
        table.break_even.0, table.break_even.1
    )
    .unwrap();
    writeln!(out, "# alpha expected_cost half_width").unwrap();
    for r in &table.rows {
        writeln!(out, "{} {} {}", r.alpha, r.total_cost, r.f1_half_width).unwrap();
    }
    out
}

/// Writes one hour's OPF files: `opf_hour_<t>.csv`, `opf_hour_<t>_buses.csv`
/// and `residuals_hour_<t>.csv`, with `t` numbered from 1.
pub fn emit_hour(out_dir: &Path, label: usize, opf: &HourOpf) -> Result<(), PipelineError> {
    let sol = &opf.outcome.solution;
    let branch_path = out_dir.join(format!("opf_hour_{label}.csv"));
    let bytes = csv_bytes(|b| write_branch_csv(&opf.problem, sol, b), &branch_path)?;
    write_file(&branch_path, &bytes)?;
    let bus_path = out_dir.join(format!("opf_hour_{label}_buses.csv"));
    let bytes = csv_bytes(|b| write_bus_csv(&opf.problem, sol, b), &bus_path)?;
    write_file(&bus_path, &bytes)?;
    write_file(
        &out_dir.join(format!("residuals_hour_{label}.csv")),
        residual_csv(&opf.outcome).as_bytes(),
    )
}

pub fn emit_sweep(out_dir: &Path, table: &SweepTable) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(Stage::Report, out_dir, e))?;
    write_file(
        &out_dir.join("alpha_sweep.csv"),
        sweep_csv(table).as_bytes(),
    )?;
    write_file(
        &out_dir.join("alpha_sweep.dat"),
        sweep_plot_data(table).as_bytes(),
    )
}

pub fn emit_reports(report: &RunReport, out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(Stage::Report, out_dir, e))?;
    write_file(
        &out_dir.join("summary.txt"),
        summary_text(report).as_bytes(),
    )?;
    write_file(
        &out_dir.join("schedule.csv"),
        schedule_csv(report).as_bytes(),
    )?;
    if !report.error_models.is_empty() {
        let text: String = report
            .error_models
            .iter()
            .enumerate()
            .map(|(h, m)| {
                if report.error_models.len() == 1 {
                    m.to_text()
                } else {
                    format!("# hour {}\n{}", h + 1, m.to_text())
                }
            })
            .collect();
        write_file(&out_dir.join("error_model.txt"), text.as_bytes())?;
    }
    for (t, h) in report.hours.iter().enumerate() {
        if let Some(opf) = &h.opf {
            emit_hour(out_dir, t + 1, opf)?;
        }
    }
    if let Some(table) = &report.sweep {
        emit_sweep(out_dir, table)?;
    }
    Ok(())
}
