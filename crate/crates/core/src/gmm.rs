//! One-dimensional Gaussian mixtures for fractional forecast errors: EM
//! fitting, component-count selection by minimum description length, and
//! CDF/quantile queries.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erfc;
use thiserror::Error;

/// Smallest variance a fitted component may have.
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// EM stops once the log-likelihood improves by less than this.
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("all samples are identical; cannot fit {0} components")]
    DegenerateData(usize),
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("invalid mixture: {0}")]
    InvalidModel(String),
    #[error("probability {0} outside (0, 1)")]
    Domain(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("history {path}: {msg}")]
    History { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Finite mixture of normals. A component with zero variance is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<Component>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl GmmModel {
    pub fn new(components: Vec<Component>) -> Result<Self, GmmError> {
        if components.is_empty() {
            return Err(GmmError::InvalidModel("no components".into()));
        }
        for (n, c) in components.iter().enumerate() {
            if !(c.weight >= 0.0
                && c.mean.is_finite()
                && c.variance >= 0.0
                && c.variance.is_finite())
            {
                return Err(GmmError::InvalidModel(format!("component {n}: {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}")));
        }
        // Absorb rounding so the weights sum to one.
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self { components })
    }

    pub fn gaussian(mean: f64, std_dev: f64) -> Self {
        Self::new(vec![Component {
            weight: 1.0,
            mean,
            variance: std_dev * std_dev,
        }])
        .expect("single component is valid")
    }

    pub fn point_mass(at: f64) -> Self {
        Self::gaussian(at, 0.0)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - m).powi(2)))
            .sum()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.variance > 0.0)
            .map(|c| c.weight * std_normal_pdf((t - c.mean) / c.std_dev()) / c.std_dev())
            .sum()
    }

    /// Mixture of `offset + scale·e` for `e` drawn from this mixture.
    pub fn affine(&self, offset: f64, scale: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| Component {
                    weight: c.weight,
                    mean: offset + scale * c.mean,
                    variance: scale * scale * c.variance,
                })
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.last().expect("nonempty");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                pick = c;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        pick.mean + pick.std_dev() * z
    }

    /// `E[max(X, 0)]` for `X` distributed as this mixture.
    pub fn positive_part_mean(&self) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s = c.std_dev();
                let part = if s == 0.0 {
                    c.mean.max(0.0)
                } else {
                    c.mean * std_normal_cdf(c.mean / s) + s * std_normal_pdf(c.mean / s)
                };
                c.weight * part
            })
            .sum()
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| log_sum_exp(&self.log_terms(x))).sum()
    }

    fn log_terms(&self, x: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.weight.ln()
                    - 0.5 * (2.0 * PI * c.variance).ln()
                    - (x - c.mean).powi(2) / (2.0 * c.variance)
            })
            .collect()
    }

    /// `component <n> weight=<w> mean=<m> var=<v>` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, c) in self.components.iter().enumerate() {
            writeln!(
                out,
                "component {n} weight={} mean={} var={}",
                c.weight, c.mean, c.variance
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GmmError> {
        let mut components = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| GmmError::Parse { line: n + 1, msg };
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("component") {
                return Err(err("expected `component`".into()));
            }
            let index: usize = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("missing component index".into()))?;
            if index != components.len() {
                return Err(err(format!("component {index} out of order")));
            }
            let (mut w, mut m, mut v) = (None, None, None);
            for tok in tokens {
                let (k, val) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("bad field `{tok}`")))?;
                let val: f64 = val
                    .parse()
                    .map_err(|_| err(format!("bad number `{val}`")))?;
                match k {
                    "weight" => w = Some(val),
                    "mean" => m = Some(val),
                    "var" => v = Some(val),
                    _ => return Err(err(format!("unknown field `{k}`"))),
                }
            }
            components.push(Component {
                weight: w.ok_or_else(|| err("missing weight".into()))?,
                mean: m.ok_or_else(|| err("missing mean".into()))?,
                variance: v.ok_or_else(|| err("missing var".into()))?,
            });
        }
        Self::new(components)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `Σ ε_n·Φ((t − μ_n)/σ_n)`.
pub fn mixture_cdf(model: &GmmModel, t: f64) -> f64 {
    model
        .components
        .iter()
        .map(|c| {
            let phi = if c.variance == 0.0 {
                if t >= c.mean {
                    1.0
                } else {
                    0.0
                }
            } else {
                std_normal_cdf((t - c.mean) / c.std_dev())
            };
            c.weight * phi
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Smallest `t` with `mixture_cdf(t) ≥ p`, by bisection.
pub fn mixture_quantile(model: &GmmModel, p: f64) -> Result<f64, GmmError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GmmError::Domain(p));
    }
    let comps = &model.components;
    if comps.iter().all(|c| c.variance == 0.0) {
        let mut atoms: Vec<&Component> = comps.iter().collect();
        atoms.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        let mut acc = 0.0;
        for c in &atoms {
            acc += c.weight;
            if acc >= p {
                return Ok(c.mean);
            }
        }
        return Ok(atoms.last().expect("nonempty").mean);
    }
    let max_sd = comps.iter().map(|c| c.std_dev()).fold(0.0, f64::max);
    let min_mu = comps.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let max_mu = comps
        .iter()
        .map(|c| c.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = min_mu - 10.0 * max_sd;
    let mut hi = max_mu + 10.0 * max_sd;
    let mut width = hi - lo;
    while mixture_cdf(model, lo) >= p {
        lo -= width;
        width *= 2.0;
    }
    while mixture_cdf(model, hi) < p {
        hi += width;
        width *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_cdf(model, mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Scalar fractional forecast errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample(Vec<f64>);

impl ErrorSample {
    pub fn new(values: Vec<f64>) -> Result<Self, GmmError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: GmmModel,
    pub log_likelihood: f64,
    /// Log-likelihood at each EM iteration, ending with the returned model.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Fits an `n_components` mixture by expectation maximization.
pub fn em_fit(data: &ErrorSample, n_components: usize, seed: u64) -> Result<FitResult, GmmError> {
    let x = data.values();
    let needed = n_components.max(2);
    if n_components == 0 || x.len() < needed {
        return Err(GmmError::InsufficientData {
            needed,
            got: x.len(),
        });
    }
    let first = x[0];
    if n_components > 1 && x.iter().all(|&v| v == first) {
        return Err(GmmError::DegenerateData(n_components));
    }

    let mut model = initial_model(x, n_components, seed);
    let mut history = Vec::new();
    let mut resp = vec![0.0; x.len() * n_components];
    let mut converged = false;
    for iter in 0..=EM_MAX_ITER {
        let ll = e_step(&model, x, &mut resp);
        history.push(ll);
        if iter > 0 && (ll - history[iter - 1]).abs() < EM_TOLERANCE {
            converged = true;
            break;
        }
        if iter == EM_MAX_ITER {
            break;
        }
        model = m_step(&model, x, &resp);
    }
    Ok(FitResult {
        log_likelihood: *history.last().expect("at least one iteration"),
        model,
        history,
        converged,
    })
}

/// Quantile-spaced means refined by Lloyd iterations, uniform weights and the
/// pooled within-cluster variance. The seed only matters when a cluster
/// empties and must be reseeded.
fn initial_model(x: &[f64], n: usize, seed: u64) -> GmmModel {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted.len();
    let mut means: Vec<f64> = (0..n)
        .map(|k| sorted[(((k as f64 + 0.5) / n as f64) * q as f64) as usize])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; q];
    for _ in 0..50 {
        for (a, &v) in assign.iter_mut().zip(x) {
            *a = nearest(&means, v);
        }
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (&a, &v) in assign.iter().zip(x) {
            sums[a] += v;
            counts[a] += 1;
        }
        let mut moved = false;
        for k in 0..n {
            let next = if counts[k] == 0 {
                x[rng.random_range(0..q)]
            } else {
                sums[k] / counts[k] as f64
            };
            moved |= next != means[k];
            means[k] = next;
        }
        if !moved {
            break;
        }
    }
    let pooled = assign
        .iter()
        .zip(x)
        .map(|(&a, &v)| (v - means[a]).powi(2))
        .sum::<f64>()
        / q as f64;
    let variance = pooled.max(VARIANCE_FLOOR);
    GmmModel {
        components: means
            .into_iter()
            .map(|mean| Component {
                weight: 1.0 / n as f64,
                mean,
                variance,
            })
            .collect(),
    }
}

fn nearest(means: &[f64], v: f64) -> usize {
    let mut best = 0;
    for k in 1..means.len() {
        if (v - means[k]).abs() < (v - means[best]).abs() {
            best = k;
        }
    }
    best
}

/// Fills responsibilities (row-major, one row per sample) and returns the
/// log-likelihood of `model`.
fn e_step(model: &GmmModel, x: &[f64], resp: &mut [f64]) -> f64 {
    let n = model.components.len();
    // Per component: ln w − ½ln(2πσ²) and 1/(2σ²).
    let consts: Vec<(f64, f64, f64)> = model
        .components
        .iter()
        .map(|c| {
            (
                c.weight.ln() - 0.5 * (2.0 * PI * c.variance).ln(),
                c.mean,
                0.5 / c.variance,
            )
        })
        .collect();
    let mut ll = 0.0;
    for (&v, row) in x.iter().zip(resp.chunks_exact_mut(n)) {
        for (t, &(offset, mean, inv)) in row.iter_mut().zip(&consts) {
            *t = offset - (v - mean).powi(2) * inv;
        }
        let norm = log_sum_exp(row);
        ll += norm;
        row.iter_mut().for_each(|t| *t = (*t - norm).exp());
    }
    ll
}

fn m_step(model: &GmmModel, x: &[f64], resp: &[f64]) -> GmmModel {
    let n = model.components.len();
    let q = x.len() as f64;
    let components = (0..n)
        .map(|k| {
            let nk: f64 = (0..x.len()).map(|i| resp[i * n + k]).sum();
            if nk <= f64::MIN_POSITIVE {
                return Component {
                    weight: 0.0,
                    ..model.components[k]
                };
            }
            let mean = x
                .iter()
                .enumerate()
                .map(|(i, v)| resp[i * n + k] * v)
                .sum::<f64>()
                / nk;
            let var = x
                .iter()
                .enumerate()
                .map(|(i, v)| resp[i * n + k] * (v - mean).powi(2))
                .sum::<f64>()
                / nk;
            Component {
                weight: nk / q,
                mean,
                variance: var.max(VARIANCE_FLOOR),
            }
        })
        .collect();
    GmmModel { components }
}

/// `−log L + (3N − 1)/2 · ln q`.
pub fn mdl_score(log_likelihood: f64, n_components: usize, n_samples: usize) -> f64 {
    let k = (3 * n_components - 1) as f64;
    -log_likelihood + 0.5 * k * (n_samples as f64).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdlCandidate {
    pub n_components: usize,
    pub fit: FitResult,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdlSelection {
    pub best: usize,
    pub candidates: Vec<MdlCandidate>,
}

impl MdlSelection {
    pub fn model(&self) -> &GmmModel {
        &self.candidates[self.best].fit.model
    }
}

/// Fits `N = 1..=n_max` and keeps the fit with the smallest description
/// length. Ties go to the smaller `N`. Component counts the data cannot
/// support are left out of `candidates`.
pub fn mdl_select(data: &ErrorSample, n_max: usize, seed: u64) -> Result<MdlSelection, GmmError> {
    if n_max == 0 {
        return Err(GmmError::InvalidModel("n_max must be at least 1".into()));
    }
    let fits: Vec<Option<MdlCandidate>> = (1..=n_max)
        .into_par_iter()
        .map(|n| match em_fit(data, n, seed) {
            Ok(fit) => Ok(Some(MdlCandidate {
                n_components: n,
                score: mdl_score(fit.log_likelihood, n, data.len()),
                fit,
            })),
            // Data with fewer distinct values than components cannot support the fit.
            Err(GmmError::DegenerateData(_) | GmmError::InsufficientData { .. }) if n > 1 => {
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_, GmmError>>()?;
    let candidates: Vec<MdlCandidate> = fits.into_iter().flatten().collect();
    let best = (0..candidates.len())
        .min_by(|&a, &b| candidates[a].score.total_cmp(&candidates[b].score))
        .expect("n_max >= 1");
    Ok(MdlSelection { best, candidates })
}

/// A row of the forecast history.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct HistoryRow {
    pub timestamp: String,
    pub forecast: f64,
    pub actual: f64,
}

impl HistoryRow {
    /// `(actual − forecast) / forecast`.
    pub fn error(&self) -> f64 {
        (self.actual - self.forecast) / self.forecast
    }

    /// Hour of day taken from `YYYY-MM-DD HH:MM` or `YYYY-MM-DDTHH:MM`.
    pub fn hour_of_day(&self) -> Option<usize> {
        let time = self.timestamp.split(['T', ' ']).nth(1)?;
        let hour: usize = time.split(':').next()?.parse().ok()?;
        (hour < 24).then_some(hour)
    }
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>, GmmError> {
    let err = |msg: String| GmmError::History {
        path: path.display().to_string(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<HistoryRow>().enumerate() {
        let row = rec.map_err(|e| err(e.to_string()))?;
        if row.forecast == 0.0 {
            return Err(err(format!("row {}: zero forecast", i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn history_errors(rows: &[HistoryRow]) -> Result<ErrorSample, GmmError> {
    ErrorSample::new(rows.iter().map(HistoryRow::error).collect())
}

/// Errors grouped by hour of day; rows without a readable hour are skipped.
pub fn history_errors_by_hour(rows: &[HistoryRow]) -> Result<Vec<ErrorSample>, GmmError> {
    let mut by_hour = vec![Vec::new(); 24];
    for row in rows {
        if let Some(h) = row.hour_of_day() {
            by_hour[h].push(row.error());
        }
    }
    by_hour.into_iter().map(ErrorSample::new).collect()
}

/// Error mixture used at a given hour of the horizon.
pub trait ErrorByHour: Sync {
    fn at_hour(&self, hour: usize) -> &GmmModel;
}

impl ErrorByHour for GmmModel {
    fn at_hour(&self, _hour: usize) -> &GmmModel {
        self
    }
}

impl ErrorByHour for [GmmModel] {
    fn at_hour(&self, hour: usize) -> &GmmModel {
        &self[hour % self.len()]
    }
}

impl ErrorByHour for Vec<GmmModel> {
    fn at_hour(&self, hour: usize) -> &GmmModel {
        self.as_slice().at_hour(hour)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_cdf_points() {
        let m = GmmModel::gaussian(0.0, 1.0);
        assert_eq!(mixture_cdf(&m, 0.0), 0.5);
        assert!((mixture_cdf(&m, 1.0) - 0.841344746).abs() < 1e-8);
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        let m = GmmModel::gaussian(0.0, 1.0);
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(mixture_quantile(&m, p), Err(GmmError::Domain(_))));
        }
    }

    #[test]
    fn point_mass_quantile_is_exact() {
        let m = GmmModel::point_mass(0.0);
        for p in [0.01, 0.5, 0.99] {
            assert_eq!(mixture_quantile(&m, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_data_single_component() {
        let data = ErrorSample::new(vec![0.25; 40]).unwrap();
        let fit = em_fit(&data, 1, 0).unwrap();
        let c = fit.model.components()[0];
        assert_eq!(c.mean, 0.25);
        assert_eq!(c.variance, VARIANCE_FLOOR);
        assert!(matches!(
            em_fit(&data, 2, 0),
            Err(GmmError::DegenerateData(2))
        ));
    }

    #[test]
    fn insufficient_data() {
        let one = ErrorSample::new(vec![0.1]).unwrap();
        assert!(matches!(
            em_fit(&one, 1, 0),
            Err(GmmError::InsufficientData { .. })
        ));
        let three = ErrorSample::new(vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            em_fit(&three, 4, 0),
            Err(GmmError::InsufficientData { .. })
        ));
        assert!(ErrorSample::new(vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = GmmModel::new(vec![
            Component {
                weight: 0.3,
                mean: -0.02,
                variance: 0.0009,
            },
            Component {
                weight: 0.7,
                mean: 0.01,
                variance: 0.0004,
            },
        ])
        .unwrap();
        let text = m.to_text();
        assert!(text.starts_with("component 0 weight=0.3 mean=-0.02 var=0.0009\n"));
        assert_eq!(GmmModel::from_text(&text).unwrap(), m);
    }

    #[test]
    fn invalid_weights_rejected() {
        let bad = vec![Component {
            weight: 0.5,
            mean: 0.0,
            variance: 1.0,
        }];
        assert!(GmmModel::new(bad).is_err());
    }

    #[test]
    fn hour_of_day_parsing() {
        let row = |ts: &str| HistoryRow {
            timestamp: ts.into(),
            forecast: 1.0,
            actual: 1.0,
        };
        assert_eq!(row("2026-03-01 13:00").hour_of_day(), Some(13));
        assert_eq!(row("2026-03-01T07:00").hour_of_day(), Some(7));
        assert_eq!(row("garbage").hour_of_day(), None);
    }
}
