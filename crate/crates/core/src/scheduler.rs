//! Substation-level day-ahead purchases under a probabilistic no-shortfall
//! requirement, and the resulting operation cost.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gmm::{mixture_quantile, ErrorByHour, GmmError, GmmModel};

/// Monte Carlo samples drawn from one independently seeded stream.
pub const MC_BLOCK: usize = 4096;
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("confidence level {0} outside (0, 1)")]
    Alpha(f64),
    #[error("hour {hour}: {msg}")]
    Price { hour: usize, msg: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("horizon mismatch: {left} vs {right} hours")]
    Horizon { left: usize, right: usize },
    #[error("error model: {0}")]
    Model(#[from] GmmError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Hourly prices in $/kWh. Construction enforces `c_s < c_da < c_rt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSchedule {
    c_da: Vec<f64>,
    c_rt: Vec<f64>,
    c_pv: Vec<f64>,
    c_s: Vec<f64>,
}

impl PriceSchedule {
    pub fn new(
        c_da: Vec<f64>,
        c_rt: Vec<f64>,
        c_pv: Vec<f64>,
        c_s: Vec<f64>,
    ) -> Result<Self, ScheduleError> {
        let n = c_da.len();
        if n == 0 {
            return Err(ScheduleError::Input("empty price schedule".into()));
        }
        for other in [&c_rt, &c_pv, &c_s] {
            if other.len() != n {
                return Err(ScheduleError::Horizon {
                    left: n,
                    right: other.len(),
                });
            }
        }
        for t in 0..n {
            let prices = [c_da[t], c_rt[t], c_pv[t], c_s[t]];
            if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ScheduleError::Price {
                    hour: t,
                    msg: format!("prices must be finite and nonnegative: {prices:?}"),
                });
            }
            if !(c_s[t] < c_da[t] && c_da[t] < c_rt[t]) {
                return Err(ScheduleError::Price {
                    hour: t,
                    msg: format!(
                        "need c_s < c_da < c_rt, got {} / {} / {}",
                        c_s[t], c_da[t], c_rt[t]
                    ),
                });
            }
        }
        Ok(Self {
            c_da,
            c_rt,
            c_pv,
            c_s,
        })
    }

    pub fn uniform(
        n: usize,
        c_da: f64,
        c_rt: f64,
        c_pv: f64,
        c_s: f64,
    ) -> Result<Self, ScheduleError> {
        Self::new(vec![c_da; n], vec![c_rt; n], vec![c_pv; n], vec![c_s; n])
    }

    pub fn horizon(&self) -> usize {
        self.c_da.len()
    }
    pub fn c_da(&self) -> &[f64] {
        &self.c_da
    }
    pub fn c_rt(&self) -> &[f64] {
        &self.c_rt
    }
    pub fn c_pv(&self) -> &[f64] {
        &self.c_pv
    }
    pub fn c_s(&self) -> &[f64] {
        &self.c_s
    }

    pub fn mean_c_da(&self) -> f64 {
        self.c_da.iter().sum::<f64>() / self.c_da.len() as f64
    }
}

/// Hourly demand and renewable forecast in kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    g_dl: Vec<f64>,
    g_pv_forecast: Vec<f64>,
}

impl DemandSeries {
    pub fn new(g_dl: Vec<f64>, g_pv_forecast: Vec<f64>) -> Result<Self, ScheduleError> {
        if g_dl.is_empty() {
            return Err(ScheduleError::Input("empty demand series".into()));
        }
        if g_dl.len() != g_pv_forecast.len() {
            return Err(ScheduleError::Horizon {
                left: g_dl.len(),
                right: g_pv_forecast.len(),
            });
        }
        if let Some(t) = g_dl
            .iter()
            .chain(&g_pv_forecast)
            .position(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(ScheduleError::Input(format!(
                "negative or non-finite energy at entry {t}"
            )));
        }
        Ok(Self {
            g_dl,
            g_pv_forecast,
        })
    }

    pub fn horizon(&self) -> usize {
        self.g_dl.len()
    }
    pub fn g_dl(&self) -> &[f64] {
        &self.g_dl
    }
    pub fn g_pv_forecast(&self) -> &[f64] {
        &self.g_pv_forecast
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const NONNEGATIVE: Interval = Interval {
        min: 0.0,
        max: f64::INFINITY,
    };

    pub fn new(min: f64, max: f64) -> Result<Self, ScheduleError> {
        if !(min >= 0.0 && min <= max) {
            return Err(ScheduleError::Input(format!("bad bounds [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Per-hour energy limits, kWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurchaseBounds {
    pub g_da: Interval,
    pub g_rt: Interval,
    pub g_pv: Interval,
}

impl Default for PurchaseBounds {
    fn default() -> Self {
        Self {
            g_da: Interval::NONNEGATIVE,
            g_rt: Interval::NONNEGATIVE,
            g_pv: Interval::NONNEGATIVE,
        }
    }
}

/// Which quantity the fractional forecast error multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorTarget {
    /// Realized demand is `g_dl·(1 + e)`.
    #[default]
    Demand,
    /// Realized net demand is `(g_dl − g_pv)·(1 + e)`, folding the
    /// renewable error into the same scalar.
    NetDemand,
}

/// Whether surplus energy resold at `c_s` is added to cost as written in the
/// cost model, or subtracted as revenue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResaleSign {
    /// Config value `paper`.
    #[default]
    Cost,
    /// Config value `revenue`.
    Revenue,
}

impl ResaleSign {
    fn factor(self) -> f64 {
        match self {
            ResaleSign::Cost => 1.0,
            ResaleSign::Revenue => -1.0,
        }
    }
}

impl std::str::FromStr for ResaleSign {
    type Err = ScheduleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Cost),
            "revenue" => Ok(Self::Revenue),
            _ => Err(ScheduleError::Input(format!(
                "resale_sign must be `paper` or `revenue`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledHour {
    pub g_da: f64,
    pub g_pv: f64,
    /// Forecast demand the purchase was planned against.
    pub g_dl: f64,
    pub lambda: bool,
    /// Expected real-time purchase under the error model, kWh.
    pub expected_rt: f64,
    /// The unclamped purchase fell outside the day-ahead bounds.
    pub clamped: bool,
    /// The required margin exceeds the day-ahead upper bound.
    pub unreachable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayAheadSchedule {
    pub hours: Vec<ScheduledHour>,
    pub alpha: f64,
    pub target: ErrorTarget,
    /// Cost at the point forecast, $.
    pub f1: f64,
}

impl DayAheadSchedule {
    pub fn horizon(&self) -> usize {
        self.hours.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub point: f64,
    pub distribution: GmmModel,
}

/// Next value of a purchase series: `last·(1 + e)`.
pub fn forecast_next(history: &[f64], model: &GmmModel) -> Result<Forecast, ScheduleError> {
    let &last = history
        .last()
        .ok_or_else(|| ScheduleError::Input("empty purchase history".into()))?;
    Ok(Forecast {
        point: last * (1.0 + model.mean()),
        distribution: model.affine(last, last),
    })
}

/// `λ = 1` exactly when day-ahead plus renewable supply falls short.
pub fn recourse_indicator(g_da: f64, g_pv: f64, g_dl: f64) -> bool {
    g_da + g_pv < g_dl
}

fn check_alpha(alpha: f64) -> Result<(), ScheduleError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ScheduleError::Alpha(alpha))
    }
}

/// Demand that the error model scales in `hour`, and the part of supply
/// that does not scale.
fn error_base(target: ErrorTarget, g_dl: f64, g_pv: f64) -> f64 {
    match target {
        ErrorTarget::Demand => g_dl,
        ErrorTarget::NetDemand => g_dl - g_pv,
    }
}

/// Realized demand for fractional error `e`.
pub fn realized_demand(target: ErrorTarget, g_dl: f64, g_pv: f64, e: f64) -> f64 {
    match target {
        ErrorTarget::Demand => g_dl * (1.0 + e),
        ErrorTarget::NetDemand => g_pv + (g_dl - g_pv) * (1.0 + e),
    }
}

/// Unclamped day-ahead purchase that covers demand with probability `alpha`.
pub fn required_purchase(target: ErrorTarget, g_dl: f64, g_pv: f64, quantile: f64) -> f64 {
    realized_demand(target, g_dl, g_pv, quantile) - g_pv
}

/// Day-ahead purchases for each hour.
pub fn deterministic_purchase<E: ErrorByHour + ?Sized>(
    demand: &DemandSeries,
    errors: &E,
    alpha: f64,
    bounds: &PurchaseBounds,
    target: ErrorTarget,
) -> Result<Vec<ScheduledHour>, ScheduleError> {
    check_alpha(alpha)?;
    (0..demand.horizon())
        .map(|t| {
            let model = errors.at_hour(t);
            let g_dl = demand.g_dl[t];
            let g_pv = bounds.g_pv.clamp(demand.g_pv_forecast[t]);
            let q = mixture_quantile(model, alpha)?;
            let wanted = required_purchase(target, g_dl, g_pv, q);
            let g_da = bounds.g_da.clamp(wanted);
            let base = error_base(target, g_dl, g_pv);
            let expected_rt = model.affine(g_dl - g_da - g_pv, base).positive_part_mean();
            Ok(ScheduledHour {
                g_da,
                g_pv,
                g_dl,
                lambda: recourse_indicator(g_da, g_pv, g_dl),
                expected_rt,
                clamped: g_da != wanted,
                unreachable: wanted > bounds.g_da.max,
            })
        })
        .collect()
}

/// Plans the horizon and prices it at the point forecast.
pub fn schedule_day_ahead<E: ErrorByHour + ?Sized>(
    demand: &DemandSeries,
    prices: &PriceSchedule,
    errors: &E,
    alpha: f64,
    bounds: &PurchaseBounds,
    target: ErrorTarget,
    sign: ResaleSign,
) -> Result<DayAheadSchedule, ScheduleError> {
    let hours = deterministic_purchase(demand, errors, alpha, bounds, target)?;
    let mut schedule = DayAheadSchedule {
        hours,
        alpha,
        target,
        f1: 0.0,
    };
    schedule.f1 = evaluate_f1(&schedule, prices, demand.g_dl(), sign)?.total;
    Ok(schedule)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HourCost {
    pub lambda: bool,
    pub g_rt: f64,
    pub surplus: f64,
    pub day_ahead: f64,
    pub renewable: f64,
    pub real_time: f64,
    pub resale: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub hours: Vec<HourCost>,
    pub total: f64,
}

fn hour_cost(
    t: usize,
    h: &ScheduledHour,
    prices: &PriceSchedule,
    g_dl: f64,
    sign: f64,
) -> HourCost {
    let lambda = recourse_indicator(h.g_da, h.g_pv, g_dl);
    let supply = h.g_da + h.g_pv;
    let (g_rt, surplus) = if lambda {
        (g_dl - supply, 0.0)
    } else {
        (0.0, supply - g_dl)
    };
    let day_ahead = prices.c_da[t] * h.g_da;
    let renewable = prices.c_pv[t] * h.g_pv;
    let real_time = prices.c_rt[t] * g_rt;
    let resale = sign * prices.c_s[t] * surplus;
    HourCost {
        lambda,
        g_rt,
        surplus,
        day_ahead,
        renewable,
        real_time,
        resale,
        total: day_ahead + renewable + real_time + resale,
    }
}

/// Substation cost of a schedule against realized hourly demand.
pub fn evaluate_f1(
    schedule: &DayAheadSchedule,
    prices: &PriceSchedule,
    realized_demand: &[f64],
    sign: ResaleSign,
) -> Result<CostBreakdown, ScheduleError> {
    let n = schedule.horizon();
    for len in [prices.horizon(), realized_demand.len()] {
        if len != n {
            return Err(ScheduleError::Horizon {
                left: n,
                right: len,
            });
        }
    }
    let hours: Vec<HourCost> = schedule
        .hours
        .iter()
        .zip(realized_demand)
        .enumerate()
        .map(|(t, (h, &g_dl))| hour_cost(t, h, prices, g_dl, sign.factor()))
        .collect();
    let total = hours.iter().map(|h| h.total).sum();
    Ok(CostBreakdown { hours, total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCost {
    pub mean: f64,
    pub std_error: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub per_hour: Vec<f64>,
    /// Fraction of samples with a real-time purchase, per hour.
    pub shortfall_rate: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
struct BlockSums {
    total: f64,
    total_sq: f64,
    per_hour: Vec<f64>,
    shortfalls: Vec<u64>,
}

/// Stream for Monte Carlo block `block`; identical for any thread count.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Monte Carlo mean of the substation cost over demand realizations, with
/// independent errors per hour.
pub fn expected_f1<E: ErrorByHour + ?Sized>(
    schedule: &DayAheadSchedule,
    prices: &PriceSchedule,
    errors: &E,
    n_samples: usize,
    seed: u64,
    sign: ResaleSign,
) -> Result<ExpectedCost, ScheduleError> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(ScheduleError::Input(format!(
            "need at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let nt = schedule.horizon();
    if prices.horizon() != nt {
        return Err(ScheduleError::Horizon {
            left: nt,
            right: prices.horizon(),
        });
    }
    let factor = sign.factor();
    let n_blocks = n_samples.div_ceil(MC_BLOCK);
    let blocks: Vec<BlockSums> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b as u64);
            let count = MC_BLOCK.min(n_samples - b * MC_BLOCK);
            let mut sums = BlockSums {
                total: 0.0,
                total_sq: 0.0,
                per_hour: vec![0.0; nt],
                shortfalls: vec![0; nt],
            };
            for _ in 0..count {
                let mut cost = 0.0;
                for (t, h) in schedule.hours.iter().enumerate() {
                    let e = errors.at_hour(t).sample(&mut rng);
                    let g_dl = realized_demand(schedule.target, h.g_dl, h.g_pv, e);
                    let c = hour_cost(t, h, prices, g_dl, factor);
                    sums.per_hour[t] += c.total;
                    sums.shortfalls[t] += u64::from(c.lambda);
                    cost += c.total;
                }
                sums.total += cost;
                sums.total_sq += cost * cost;
            }
            sums
        })
        .collect();

    let mut acc = BlockSums {
        total: 0.0,
        total_sq: 0.0,
        per_hour: vec![0.0; nt],
        shortfalls: vec![0; nt],
    };
    for b in &blocks {
        acc.total += b.total;
        acc.total_sq += b.total_sq;
        for t in 0..nt {
            acc.per_hour[t] += b.per_hour[t];
            acc.shortfalls[t] += b.shortfalls[t];
        }
    }
    let n = n_samples as f64;
    let mean = acc.total / n;
    let var = ((acc.total_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let std_error = (var / n).sqrt();
    Ok(ExpectedCost {
        mean,
        std_error,
        half_width: 1.96 * std_error,
        per_hour: acc.per_hour.iter().map(|s| s / n).collect(),
        shortfall_rate: acc.shortfalls.iter().map(|&s| s as f64 / n).collect(),
        n_samples,
    })
}

#[derive(Debug, serde::Deserialize)]
struct PriceRow {
    hour: usize,
    c_da: f64,
    c_rt: f64,
    c_pv: f64,
    c_s: f64,
    g_dl: f64,
    g_pv_forecast: f64,
}

/// Reads `hour,c_da,c_rt,c_pv,c_s,g_dl,g_pv_forecast` with hours numbered
/// consecutively from 1.
pub fn read_prices_demand(path: &Path) -> Result<(PriceSchedule, DemandSeries), ScheduleError> {
    let io = |msg: String| ScheduleError::Io {
        path: path.display().to_string(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io(e.to_string()))?;
    let rows: Vec<PriceRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| io(e.to_string()))?;
    if let Some((i, row)) = rows.iter().enumerate().find(|(i, r)| r.hour != i + 1) {
        return Err(io(format!(
            "row {} has hour {}, expected {}",
            i + 1,
            row.hour,
            i + 1
        )));
    }
    let col = |f: fn(&PriceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let prices = PriceSchedule::new(
        col(|r| r.c_da),
        col(|r| r.c_rt),
        col(|r| r.c_pv),
        col(|r| r.c_s),
    )?;
    let demand = DemandSeries::new(col(|r| r.g_dl), col(|r| r.g_pv_forecast))?;
    Ok((prices, demand))
}
