//! Monte-Carlo checks of survival selection in linear structural models.
//!
//! Covariates follow a recursive linear model
//! `X_k = b_k0 + sum_{j<k} b_kj X_j + W_k` with independent errors. A subject
//! survives to `t` with probability `exp(-H(t | X))`, where the cumulative
//! hazard is either additive, `H = B_0(t) + sum_j X_j B_j(t)`, or
//! multiplicative, `H = L_0(t) exp(sum_j beta_j X_j)`. Under the additive form
//! selection on survival leaves independence between errors intact, keeps the
//! structural slopes, and makes the hazard collapsible over factors that
//! affect survival only. The suites below check these statements by
//! simulation; multiplicative runs are reported for contrast only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::hazard::{fit_additive, HazardSpec};
use crate::regress::NormalEquations;
use crate::rng::{self, tags};
use crate::spline::SplineFunction;

const DEFAULT_CONFIG: &str = include_str!("../configs/verify_default.json");

/// Draws per parallel chunk.
const CHUNK: usize = 8192;
/// Chunks generated per round while collecting survivors.
const CHUNKS_PER_ROUND: usize = 32;
/// Smallest survivor fraction accepted.
pub const MIN_SURVIVOR_FRACTION: f64 = 1e-4;
/// Assertions allow this many Monte-Carlo standard errors.
pub const SE_MULTIPLIER: f64 = 3.0;

/// A coefficient function of time: a constant or a spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Constant(f64),
    Spline(SplineFunction),
}

impl Weight {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::Spline(f) => f.eval(s),
        }
    }

    /// Integral over `[0, t]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Weight::Constant(c) => c * t,
            Weight::Spline(f) => f.integral_to(t),
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Weight::Constant(c) => Some(*c),
            Weight::Spline(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Gaussian { sd: f64 },
    /// `scale * (E - 1)` with `E ~ Exp(1)`: mean zero, right skewed.
    ShiftedExponential { scale: f64 },
    Constant,
}

impl ErrorDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ErrorDist::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            ErrorDist::ShiftedExponential { scale } => {
                let u: f64 = rng.random();
                scale * (-(1.0 - u).ln() - 1.0)
            }
            ErrorDist::Constant => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum HazardModel {
    Additive { baseline: Weight, weights: Vec<Weight> },
    /// Proportional hazards with constant log-hazard ratios.
    Multiplicative { baseline: Weight, weights: Vec<f64> },
}

impl HazardModel {
    pub fn is_additive(&self) -> bool {
        matches!(self, HazardModel::Additive { .. })
    }

    fn cumulative(&self, x: &[f64], t: f64) -> f64 {
        match self {
            HazardModel::Additive { baseline, weights } => {
                baseline.cumulative(t) + weights.iter().zip(x).map(|(w, v)| v * w.cumulative(t)).sum::<f64>()
            }
            HazardModel::Multiplicative { baseline, weights } => {
                let lp: f64 = weights.iter().zip(x).map(|(b, v)| b * v).sum();
                baseline.cumulative(t) * lp.exp()
            }
        }
    }

    fn rate(&self, x: &[f64], s: f64) -> f64 {
        match self {
            HazardModel::Additive { baseline, weights } => {
                baseline.eval(s) + weights.iter().zip(x).map(|(w, v)| v * w.eval(s)).sum::<f64>()
            }
            HazardModel::Multiplicative { baseline, weights } => {
                let lp: f64 = weights.iter().zip(x).map(|(b, v)| b * v).sum();
                baseline.eval(s) * lp.exp()
            }
        }
    }

    /// Constant total rate, when every coefficient is constant.
    fn constant_rate(&self, x: &[f64]) -> Option<f64> {
        match self {
            HazardModel::Additive { baseline, weights } => {
                let mut r = baseline.constant()?;
                for (w, v) in weights.iter().zip(x) {
                    r += v * w.constant()?;
                }
                Some(r)
            }
            HazardModel::Multiplicative { baseline, weights } => {
                let lp: f64 = weights.iter().zip(x).map(|(b, v)| b * v).sum();
                Some(baseline.constant()? * lp.exp())
            }
        }
    }
}

/// Recursive linear structural model with a survival hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemSpec {
    pub names: Vec<String>,
    pub intercepts: Vec<f64>,
    /// Row `k` holds `b_k0..b_k(k-1)`; the matrix is strictly lower triangular.
    pub coefficients: Vec<Vec<f64>>,
    pub errors: Vec<ErrorDist>,
    pub hazard: HazardModel,
}

impl SemSpec {
    pub fn vars(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vars();
        if n == 0 || self.intercepts.len() != n || self.coefficients.len() != n || self.errors.len() != n {
            return Err(Error::invalid("names, intercepts, coefficients and errors must have one entry per variable"));
        }
        for (k, row) in self.coefficients.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "coefficient row {k} must have {k} entries (strictly lower triangular)"
                )));
            }
        }
        let finite = self
            .intercepts
            .iter()
            .chain(self.coefficients.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite structural coefficient"));
        }
        for e in &self.errors {
            let ok = match *e {
                ErrorDist::Gaussian { sd } => sd >= 0.0 && sd.is_finite(),
                ErrorDist::ShiftedExponential { scale } => scale >= 0.0 && scale.is_finite(),
                ErrorDist::Constant => true,
            };
            if !ok {
                return Err(Error::invalid("error scales must be finite and >= 0"));
            }
        }
        let weights = match &self.hazard {
            HazardModel::Additive { weights, .. } => weights.len(),
            HazardModel::Multiplicative { weights, .. } => weights.len(),
        };
        if weights != n {
            return Err(Error::invalid(format!("hazard has {weights} weights for {n} variables")));
        }
        Ok(())
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    fn draw(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) {
        for k in 0..x.len() {
            let mut v = self.intercepts[k] + self.errors[k].sample(rng);
            for (j, b) in self.coefficients[k].iter().enumerate() {
                v += b * x[j];
            }
            x[k] = v;
        }
    }

    /// Same structural model under a different hazard.
    pub fn with_hazard(&self, hazard: HazardModel) -> Self {
        Self { hazard, ..self.clone() }
    }
}

/// Survivor draws stored by variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivorSample {
    pub columns: Vec<Vec<f64>>,
    /// Total draws needed to collect the survivors.
    pub draws: usize,
}

impl SurvivorSample {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn survivor_fraction(&self) -> f64 {
        self.len() as f64 / self.draws as f64
    }
}

fn check_positive(spec: &SemSpec, t: f64, rows: &[Vec<f64>]) -> Result<()> {
    if !spec.hazard.is_additive() {
        return Ok(());
    }
    const POINTS: usize = 32;
    for (i, x) in rows.iter().enumerate() {
        for p in 0..=POINTS {
            let s = t * p as f64 / POINTS as f64;
            let r = spec.hazard.rate(x, s);
            if r < 0.0 {
                return Err(Error::NegativeHazard {
                    time: s,
                    subject: i,
                    value: r,
                });
            }
        }
    }
    Ok(())
}

/// Collect `m` draws from the model conditional on `T > t`.
///
/// Draws come in fixed-size chunks with their own random streams and are
/// merged in chunk order, so the sample does not depend on the thread count.
/// The first chunk doubles as the pilot for the hazard positivity check.
pub fn sample_survivors(spec: &SemSpec, t: f64, m: usize, seed: u64) -> Result<SurvivorSample> {
    spec.validate()?;
    if !(t >= 0.0 && t.is_finite()) || m == 0 {
        return Err(Error::invalid("survival time must be finite and >= 0 and m positive"));
    }
    let vars = spec.vars();
    let chunk = |c: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = rng::stream(seed, tags::SEM_CHUNK, c as u64);
        let mut x = vec![0.0; vars];
        let mut kept = Vec::new();
        let mut pilot = Vec::new();
        for _ in 0..CHUNK {
            spec.draw(&mut rng, &mut x);
            let u: f64 = rng.random();
            if c == 0 {
                pilot.push(x.clone());
            }
            if u < (-spec.hazard.cumulative(&x, t)).exp() {
                kept.push(x.clone());
            }
        }
        (kept, pilot)
    };

    let mut columns = vec![Vec::with_capacity(m); vars];
    let mut draws = 0;
    let mut next = 0;
    let max_draws = (m as f64 / MIN_SURVIVOR_FRACTION) as usize + CHUNK * CHUNKS_PER_ROUND;
    while columns[0].len() < m {
        let round: Vec<_> = (next..next + CHUNKS_PER_ROUND).into_par_iter().map(chunk).collect();
        if next == 0 {
            check_positive(spec, t, &round[0].1)?;
        }
        next += CHUNKS_PER_ROUND;
        for (kept, _) in round {
            for row in kept {
                if columns[0].len() == m {
                    break;
                }
                for (col, v) in columns.iter_mut().zip(row) {
                    col.push(v);
                }
            }
            draws += CHUNK;
            if columns[0].len() == m {
                break;
            }
        }
        let fraction = columns[0].len() as f64 / draws as f64;
        if (next == CHUNKS_PER_ROUND && fraction < MIN_SURVIVOR_FRACTION) || draws > max_draws {
            return Err(Error::VanishingSurvivors { time: t, fraction });
        }
    }
    Ok(SurvivorSample { columns, draws })
}

/// Event time by inversion of the cumulative hazard, censored at `horizon`.
fn event_time(hazard: &HazardModel, x: &[f64], e: f64, horizon: f64) -> (f64, bool) {
    if let Some(rate) = hazard.constant_rate(x) {
        let t = if rate > 0.0 { e / rate } else { f64::INFINITY };
        return if t <= horizon { (t, true) } else { (horizon, false) };
    }
    if hazard.cumulative(x, horizon) < e {
        return (horizon, false);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if hazard.cumulative(x, mid) < e {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * horizon {
            break;
        }
    }
    (hi, true)
}

/// One simulated cohort with continuous event times, first variable as the
/// treatment and the rest as baseline covariates.
pub fn simulate_cohort(spec: &SemSpec, n: usize, horizon: f64, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let subjects: Vec<Subject> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, tags::COLLIDER_EVENTS, i as u64);
            let mut x = vec![0.0; spec.vars()];
            spec.draw(&mut rng, &mut x);
            let u: f64 = rng.random();
            let (followup, event) = event_time(&spec.hazard, &x, -(1.0 - u).ln(), horizon);
            Subject {
                id: (i + 1).to_string(),
                treatment: x[0],
                baseline: x[1..].to_vec(),
                mediators: Vec::new(),
                followup: followup.max(f64::MIN_POSITIVE),
                event,
            }
        })
        .collect();
    Dataset::new(subjects, spec.names[0].clone(), spec.names[1..].to_vec(), Vec::new())
}

/// One checked (or reported) quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionReport {
    pub suite: String,
    pub name: String,
    pub time: f64,
    pub estimate: f64,
    pub target: f64,
    pub se: Option<f64>,
    /// Largest accepted `|estimate - target|`, or the null quantile for
    /// one-sided checks.
    pub threshold: f64,
    pub pass: bool,
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub draws: usize,
    pub suites: Vec<String>,
    pub assertions: Vec<AssertionReport>,
    pub all_pass: bool,
}

impl VerifyReport {
    pub fn new(seed: u64, draws: usize, suites: Vec<String>, assertions: Vec<AssertionReport>) -> Self {
        let all_pass = assertions.iter().all(|a| a.informational || a.pass);
        Self {
            seed,
            draws,
            suites,
            assertions,
            all_pass,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionReport> {
        self.assertions.iter().filter(|a| !a.informational && !a.pass)
    }
}

fn two_sided(suite: &str, name: String, time: f64, estimate: f64, target: f64, se: f64, informational: bool) -> AssertionReport {
    let threshold = SE_MULTIPLIER * se;
    AssertionReport {
        suite: suite.to_string(),
        name,
        time,
        estimate,
        target,
        se: Some(se),
        threshold,
        pass: (estimate - target).abs() <= threshold,
        informational,
    }
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    sxy / (sxx * syy).sqrt()
}

const MI_BINS: usize = 10;

/// Decile bin of every value, by rank.
fn quantile_bins(x: &[f64]) -> Vec<u8> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut bins = vec![0u8; x.len()];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = (rank * MI_BINS / x.len()) as u8;
    }
    bins
}

/// Plug-in mutual information of two binned variables, in nats.
pub fn binned_mutual_information(a: &[u8], b: &[u8]) -> f64 {
    let mut joint = [[0usize; MI_BINS]; MI_BINS];
    for (&i, &j) in a.iter().zip(b) {
        joint[i as usize][j as usize] += 1;
    }
    let n = a.len() as f64;
    let row: Vec<f64> = joint.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..MI_BINS).map(|j| joint.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let mut mi = 0.0;
    for i in 0..MI_BINS {
        for j in 0..MI_BINS {
            let c = joint[i][j] as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (row[i] * col[j])).ln();
            }
        }
    }
    mi
}

/// Mutual information and the 99th percentile of its permutation null.
fn mutual_information_test(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> (f64, f64) {
    let bx = quantile_bins(x);
    let by = quantile_bins(y);
    let observed = binned_mutual_information(&bx, &by);
    let mut null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, tags::PERMUTATION, p as u64);
            let mut shuffled = by.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            binned_mutual_information(&bx, &shuffled)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let idx = ((0.99 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    (observed, null[idx])
}

/// Drop columns that are constant in the sample; they lie in the span of
/// the intercept.
fn varying(columns: &[&[f64]]) -> Vec<usize> {
    (0..columns.len())
        .filter(|&j| columns[j].iter().any(|v| *v != columns[j][0]))
        .collect()
}

/// OLS of `y` on an intercept and `xs`, returning slopes and their SEs.
fn slopes(y: &[f64], xs: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ne = NormalEquations::new(xs.len() + 1);
    let mut row = vec![1.0; xs.len() + 1];
    for i in 0..y.len() {
        for (slot, x) in row[1..].iter_mut().zip(xs) {
            *slot = x[i];
        }
        ne.add(&row, y[i]);
    }
    let fit = ne.fit()?;
    Ok((fit.coefficients[1..].to_vec(), fit.std_errors[1..].to_vec()))
}

/// Suite settings and models, as read from a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub draws: usize,
    pub times: Vec<f64>,
    pub permutations: usize,
    pub batches: usize,
    pub cohort_reps: usize,
    pub cohort_size: usize,
    pub horizon: f64,
    pub independence: SemSpec,
    pub stability: Vec<SemSpec>,
    /// Last variable is the survival-only factor.
    pub collapsibility: SemSpec,
    /// Proportional-hazards contrast applied to each model.
    pub multiplicative: MultiplicativeContrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicativeContrast {
    pub baseline: Weight,
    /// Log-hazard ratios, one per variable; shorter models use a prefix.
    pub weights: Vec<f64>,
}

impl MultiplicativeContrast {
    fn apply(&self, spec: &SemSpec) -> Result<SemSpec> {
        if self.weights.len() < spec.vars() {
            return Err(Error::invalid("multiplicative contrast has too few weights"));
        }
        Ok(spec.with_hazard(HazardModel::Multiplicative {
            baseline: self.baseline.clone(),
            weights: self.weights[..spec.vars()].to_vec(),
        }))
    }
}

impl VerifyConfig {
    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("bundled verify config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws < 2 * self.batches.max(1) || self.batches < 2 {
            return Err(Error::invalid("need at least 2 batches and 2 draws per batch"));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid("times must be non-empty, finite and >= 0"));
        }
        if self.permutations == 0 || self.cohort_reps < 2 || self.cohort_size == 0 {
            return Err(Error::invalid("permutations, cohort_reps (>= 2) and cohort_size must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be > 0"));
        }
        self.independence.validate()?;
        for s in &self.stability {
            s.validate()?;
        }
        self.collapsibility.validate()?;
        if self.independence.vars() != 2 {
            return Err(Error::invalid("the independence model must have two variables"));
        }
        if self.independence.coefficients[1][0] != 0.0 {
            return Err(Error::invalid("the independence model needs b_21 = 0"));
        }
        let c = &self.collapsibility;
        let u = c.vars() - 1;
        if c.vars() < 3 || c.coefficients[u].iter().any(|b| *b != 0.0) {
            return Err(Error::invalid(
                "the collapsibility model needs at least three variables and no arrows into its last one",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Independence,
    Stability,
    Collapsibility,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Independence, Suite::Stability, Suite::Collapsibility];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Independence => "independence",
            Suite::Stability => "stability",
            Suite::Collapsibility => "collapsibility",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite `{s}`")))
    }
}

/// Which hazard forms a verify run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forms {
    /// Additive assertions plus informational multiplicative contrasts.
    Both,
    /// Multiplicative contrasts only.
    MultiplicativeOnly,
}

pub fn verify(cfg: &VerifyConfig, suites: &[Suite], forms: Forms) -> Result<VerifyReport> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (i, &suite) in suites.iter().enumerate() {
        let seed = rng::derive_seed(cfg.seed, tags::SUITE, i as u64);
        let run = |spec: &SemSpec, informational: bool, out: &mut Vec<AssertionReport>| match suite {
            Suite::Independence => verify_independence(cfg, spec, seed, informational, out),
            Suite::Stability => verify_stability(cfg, spec, seed, informational, out),
            Suite::Collapsibility => verify_collapsibility(cfg, spec, seed, informational, out),
        };
        let specs: Vec<&SemSpec> = match suite {
            Suite::Independence => vec![&cfg.independence],
            Suite::Stability => cfg.stability.iter().collect(),
            Suite::Collapsibility => vec![&cfg.collapsibility],
        };
        for spec in specs {
            if forms == Forms::Both {
                run(spec, false, &mut out)?;
            }
            run(&cfg.multiplicative.apply(spec)?, true, &mut out)?;
        }
    }
    Ok(VerifyReport::new(
        cfg.seed,
        cfg.draws,
        suites.iter().map(|s| s.name().to_string()).collect(),
        out,
    ))
}

/// Each time point gets its own draws so the assertions are independent.
fn time_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, tags::SEM_CHUNK, i as u64)
}

fn form_label(spec: &SemSpec) -> &'static str {
    if spec.hazard.is_additive() {
        "additive"
    } else {
        "multiplicative"
    }
}

fn verify_independence(
    cfg: &VerifyConfig,
    spec: &SemSpec,
    seed: u64,
    informational: bool,
    out: &mut Vec<AssertionReport>,
) -> Result<()> {
    let suite = Suite::Independence.name();
    for (i, &t) in cfg.times.iter().enumerate() {
        let s = sample_survivors(spec, t, cfg.draws, time_seed(seed, i))?;
        let (x, y) = (&s.columns[0], &s.columns[1]);
        let rho = correlation(x, y);
        let bound = 3.0 / (s.len() as f64).sqrt();
        out.push(AssertionReport {
            suite: suite.into(),
            name: format!("{}: corr({}, {}) among survivors", form_label(spec), spec.names[0], spec.names[1]),
            time: t,
            estimate: rho,
            target: 0.0,
            se: Some(1.0 / (s.len() as f64).sqrt()),
            threshold: bound,
            pass: rho.abs() < bound,
            informational,
        });
        let (mi, q99) = mutual_information_test(x, y, cfg.permutations, rng::derive_seed(seed, tags::PERMUTATION, i as u64));
        out.push(AssertionReport {
            suite: suite.into(),
            name: format!("{}: binned mutual information vs permutation 99th percentile", form_label(spec)),
            time: t,
            estimate: mi,
            target: 0.0,
            se: None,
            threshold: q99,
            pass: mi <= q99,
            informational,
        });
    }
    Ok(())
}

fn verify_stability(
    cfg: &VerifyConfig,
    spec: &SemSpec,
    seed: u64,
    informational: bool,
    out: &mut Vec<AssertionReport>,
) -> Result<()> {
    let suite = Suite::Stability.name();
    for (i, &t) in cfg.times.iter().enumerate() {
        let s = sample_survivors(spec, t, cfg.draws, time_seed(seed, i))?;
        for k in 1..spec.vars() {
            let xs: Vec<&[f64]> = s.columns[..k].iter().map(Vec::as_slice).collect();
            let (b, se) = slopes(&s.columns[k], &xs)?;
            for j in 0..k {
                out.push(two_sided(
                    suite,
                    format!(
                        "{}: slope of {} on {}",
                        form_label(spec),
                        spec.names[k],
                        spec.names[j]
                    ),
                    t,
                    b[j],
                    spec.coefficients[k][j],
                    se[j],
                    informational,
                ));
            }
        }
    }
    Ok(())
}

fn verify_collapsibility(
    cfg: &VerifyConfig,
    spec: &SemSpec,
    seed: u64,
    informational: bool,
    out: &mut Vec<AssertionReport>,
) -> Result<()> {
    let suite = Suite::Collapsibility.name();
    let u = spec.vars() - 1;
    let (x1, x2) = (0, 1);
    for (i, &t) in cfg.times.iter().enumerate() {
        let s = sample_survivors(spec, t, cfg.draws, time_seed(seed, i))?;
        let diff = |lo: usize, hi: usize| -> Result<f64> {
            let y = &s.columns[x2][lo..hi];
            let base = &s.columns[x1][lo..hi];
            let with_u = &s.columns[u][lo..hi];
            let (b_without, _) = slopes(y, &[base])?;
            let mut xs = vec![base];
            if !varying(&[with_u]).is_empty() {
                xs.push(with_u);
            }
            let (b_with, _) = slopes(y, &xs)?;
            Ok(b_with[0] - b_without[0])
        };
        let m = s.len();
        let estimate = diff(0, m)?;
        let k = cfg.batches;
        let batch: Vec<f64> = (0..k).map(|b| diff(b * m / k, (b + 1) * m / k)).collect::<Result<_>>()?;
        let mean = batch.iter().sum::<f64>() / k as f64;
        let var = batch.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        out.push(two_sided(
            suite,
            format!(
                "{}: change in slope of {} on {} when adjusting for {}",
                form_label(spec),
                spec.names[x2],
                spec.names[x1],
                spec.names[u]
            ),
            t,
            estimate,
            0.0,
            (var / k as f64).sqrt(),
            informational,
        ));
    }

    // Hazard part: cumulative treatment coefficient with and without U.
    let without: Vec<String> = spec.names[..u].to_vec();
    let reps: Vec<Vec<f64>> = (0..cfg.cohort_reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let ds = simulate_cohort(spec, cfg.cohort_size, cfg.horizon, rng::derive_seed(seed, tags::COLLIDER_EVENTS, r as u64))?;
            let u_col: Vec<f64> = ds.subjects.iter().map(|s| s.baseline[u - 1]).collect();
            let mut with = without.clone();
            if !varying(&[&u_col]).is_empty() {
                with.push(spec.names[u].clone());
            }
            let a = fit_additive(&ds, &HazardSpec::new(with))?;
            let b = fit_additive(&ds, &HazardSpec::new(without.clone()))?;
            let label = &spec.names[x1];
            cfg.times
                .iter()
                .map(|&t| Ok(a.eval(label, t)? - b.eval(label, t)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let r = reps.len() as f64;
    for (i, &t) in cfg.times.iter().enumerate() {
        let mean = reps.iter().map(|d| d[i]).sum::<f64>() / r;
        let var = reps.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (r - 1.0);
        out.push(two_sided(
            suite,
            format!(
                "{}: change in cumulative {} hazard coefficient when adjusting for {}",
                form_label(spec),
                spec.names[x1],
                spec.names[u]
            ),
            t,
            mean,
            0.0,
            (var / r).sqrt(),
            informational,
        ));
    }
    Ok(())
}
