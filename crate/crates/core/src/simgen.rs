//! Discrete-time trial generator.
//!
//! Time runs on the grid `t_h = h * delta`, `h = 0..=H`. At every step a
//! subject still under follow-up has an event with probability
//! `clamp(alpha(t_h) * delta, 0, 1)` where
//! `alpha = beta0 + beta_treat * X1 + beta_med * X2(t_{h-1})`, and otherwise
//! gets a new mediator measurement `X2(t_h) = U + b21(t_h) * X1 + noise`.
//! Uniform censoring and administrative censoring at the horizon end
//! follow-up.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MediatorSeries, Subject};
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::spline::SplineFunction;

const DEFAULT_CONFIG: &str = include_str!("../configs/trial_default.json");

/// Tolerance when matching measurement times to snapshot times.
pub const SNAPSHOT_TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub delta: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splines {
    pub beta0: SplineFunction,
    pub beta_treat: SplineFunction,
    pub beta_med: SplineFunction,
    pub b21: SplineFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distributions {
    pub treat_prob: f64,
    pub med_baseline_mean: f64,
    pub med_baseline_sd: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Censoring {
    /// Upper bound of the uniform censoring time; `null` disables it.
    pub censor_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeHazardPolicy {
    #[default]
    Error,
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: Grid,
    pub splines: Splines,
    pub distributions: Distributions,
    pub censoring: Censoring,
    #[serde(default)]
    pub negative_hazard: NegativeHazardPolicy,
    pub n: usize,
    pub seed: u64,
}

impl SimConfig {
    /// The shipped default configuration.
    pub fn trial_default() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("bundled default config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.delta > 0.0 && g.delta.is_finite()) {
            return Err(Error::invalid("grid.delta must be finite and > 0"));
        }
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            return Err(Error::invalid("grid.horizon must be finite and > 0"));
        }
        let steps = g.horizon / g.delta;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::invalid("grid.horizon must be a multiple of grid.delta"));
        }
        let d = &self.distributions;
        if !(0.0..=1.0).contains(&d.treat_prob) {
            return Err(Error::invalid("treat_prob must lie in [0, 1]"));
        }
        if !(d.med_baseline_sd >= 0.0) || !(d.noise_sd >= 0.0) || !d.med_baseline_mean.is_finite() {
            return Err(Error::invalid("standard deviations must be >= 0 and the mean finite"));
        }
        if let Some(m) = self.censoring.censor_max {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::invalid("censor_max must be finite and > 0"));
            }
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.grid.horizon / self.grid.delta).round() as usize
    }

    /// Grid time `t_h`.
    pub fn time(&self, h: usize) -> f64 {
        h as f64 * self.grid.delta
    }
}

/// Event-time grid `t_1..t_H`.
pub fn grid_times(cfg: &SimConfig) -> Vec<f64> {
    (1..=cfg.steps()).map(|h| cfg.time(h)).collect()
}

/// A generated trial with its run counters.
#[derive(Debug, Clone)]
pub struct Trial {
    pub dataset: Dataset,
    /// Subject-steps whose hazard was clamped to zero.
    pub clamped: usize,
    pub censoring_fraction: f64,
}

/// Coefficient values tabulated on the grid.
struct Tables {
    beta0: Vec<f64>,
    beta_treat: Vec<f64>,
    beta_med: Vec<f64>,
    b21: Vec<f64>,
}

impl Tables {
    fn new(cfg: &SimConfig) -> Self {
        let tab = |f: &SplineFunction| (0..=cfg.steps()).map(|h| f.eval(cfg.time(h))).collect();
        let s = &cfg.splines;
        Self {
            beta0: tab(&s.beta0),
            beta_treat: tab(&s.beta_treat),
            beta_med: tab(&s.beta_med),
            b21: tab(&s.b21),
        }
    }
}

struct Outcome {
    treatment: f64,
    measurements: Vec<(f64, f64)>,
    followup: f64,
    event: bool,
    clamped: usize,
}

/// Simulate subject `index`. The draw order per subject is fixed (treatment,
/// baseline mediator, censoring, then per step), so the latent event path
/// does not depend on whether censoring is switched on.
fn simulate_subject(cfg: &SimConfig, tab: &Tables, index: usize, record: bool) -> Result<Outcome> {
    let d = &cfg.distributions;
    let mut rng = rng::stream(cfg.seed, tags::SUBJECT, index as u64);
    let x1 = if rng.random::<f64>() < d.treat_prob { 1.0 } else { 0.0 };
    let u = d.med_baseline_mean + d.med_baseline_sd * rng.sample::<f64, _>(StandardNormal);
    let censor_u: f64 = rng.random();
    let censor = cfg.censoring.censor_max.map(|m| m * (1.0 - censor_u));

    let noise = |rng: &mut rand_chacha::ChaCha8Rng| d.noise_sd * rng.sample::<f64, _>(StandardNormal);
    let mut x2 = u + tab.b21[0] * x1 + noise(&mut rng);
    let mut measurements = Vec::new();
    if record {
        measurements.push((0.0, x2));
    }
    let mut clamped = 0;
    let steps = cfg.steps();
    for h in 1..=steps {
        let t = cfg.time(h);
        if let Some(c) = censor {
            if c < t {
                return Ok(Outcome {
                    treatment: x1,
                    measurements,
                    followup: c,
                    event: false,
                    clamped,
                });
            }
        }
        let mut alpha = tab.beta0[h] + tab.beta_treat[h] * x1 + tab.beta_med[h] * x2;
        if alpha < 0.0 {
            match cfg.negative_hazard {
                NegativeHazardPolicy::Error => {
                    return Err(Error::NegativeHazard {
                        time: t,
                        subject: index,
                        value: alpha,
                    })
                }
                NegativeHazardPolicy::Clamp => {
                    alpha = 0.0;
                    clamped += 1;
                }
            }
        }
        let p = (alpha * cfg.grid.delta).min(1.0);
        if rng.random::<f64>() < p {
            return Ok(Outcome {
                treatment: x1,
                measurements,
                followup: t,
                event: true,
                clamped,
            });
        }
        if h < steps {
            x2 = u + tab.b21[h] * x1 + noise(&mut rng);
            if record {
                measurements.push((t, x2));
            }
        }
    }
    Ok(Outcome {
        treatment: x1,
        measurements,
        followup: cfg.time(steps),
        event: false,
        clamped,
    })
}

pub fn generate_trial(cfg: &SimConfig) -> Result<Dataset> {
    Ok(simulate(cfg)?.dataset)
}

/// Generate a trial and report the clamp counter and censoring fraction.
pub fn simulate(cfg: &SimConfig) -> Result<Trial> {
    cfg.validate()?;
    let tab = Tables::new(cfg);
    let outcomes: Vec<Outcome> = (0..cfg.n)
        .into_par_iter()
        .map(|i| simulate_subject(cfg, &tab, i, true))
        .collect::<Result<_>>()?;
    let clamped = outcomes.iter().map(|o| o.clamped).sum();
    let subjects = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let (times, values) = o.measurements.into_iter().unzip();
            Subject {
                id: (i + 1).to_string(),
                treatment: o.treatment,
                baseline: Vec::new(),
                mediators: vec![MediatorSeries { times, values }],
                followup: o.followup,
                event: o.event,
            }
        })
        .collect();
    let dataset = Dataset::with_default_names(subjects)?;
    Ok(Trial {
        censoring_fraction: dataset.censoring_fraction(),
        dataset,
        clamped,
    })
}

/// Choose `censor_max` so the expected censored fraction equals `target`.
///
/// A pilot of `pilot_n` subjects is simulated without uniform censoring. For
/// a subject with latent event time `T` the probability of being censored by
/// `C ~ U(0, m)` is `min(T / m, 1)`; subjects without an event by the horizon
/// are always censored. The resulting expected fraction is decreasing in `m`
/// and is solved by bisection.
pub fn calibrate_censor_max(cfg: &SimConfig, target: f64, pilot_n: usize, seed: u64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || pilot_n == 0 {
        return Err(Error::invalid("target must lie in (0, 1) and the pilot be non-empty"));
    }
    let mut pilot = cfg.clone();
    pilot.censoring.censor_max = None;
    pilot.n = pilot_n;
    pilot.seed = seed;
    pilot.validate()?;
    let tab = Tables::new(&pilot);
    let latent: Vec<Option<f64>> = (0..pilot_n)
        .into_par_iter()
        .map(|i| simulate_subject(&pilot, &tab, i, false).map(|o| o.event.then_some(o.followup)))
        .collect::<Result<_>>()?;
    let fraction = |m: f64| {
        latent
            .iter()
            .map(|t| t.map_or(1.0, |t| (t / m).min(1.0)))
            .sum::<f64>()
            / pilot_n as f64
    };
    let administrative = latent.iter().filter(|t| t.is_none()).count() as f64 / pilot_n as f64;
    if administrative >= target {
        return Err(Error::invalid(format!(
            "administrative censoring alone is {administrative:.4}, above the target {target}"
        )));
    }
    let mut lo = cfg.grid.delta * 1e-3;
    let mut hi = cfg.grid.horizon;
    while fraction(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Keep only mediator measurements taken at `keep_times` while the subject
/// is still under follow-up.
pub fn snapshot(ds: &Dataset, keep_times: &[f64]) -> Result<Dataset> {
    if keep_times.is_empty() {
        return Err(Error::invalid("snapshot needs at least one kept time"));
    }
    if keep_times.iter().any(|t| !t.is_finite() || *t < 0.0) || keep_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("snapshot times must be finite, >= 0 and strictly increasing"));
    }
    let kept = |s: f64| {
        let i = keep_times.partition_point(|k| *k < s - SNAPSHOT_TIME_TOL);
        i < keep_times.len() && (keep_times[i] - s).abs() <= SNAPSHOT_TIME_TOL
    };
    let subjects = ds
        .subjects
        .iter()
        .map(|s| {
            let mediators = s
                .mediators
                .iter()
                .map(|m| {
                    let (times, values) = m
                        .times
                        .iter()
                        .zip(&m.values)
                        .filter(|(t, _)| kept(**t) && **t <= s.followup)
                        .map(|(t, v)| (*t, *v))
                        .unzip();
                    MediatorSeries { times, values }
                })
                .collect();
            Subject {
                mediators,
                ..s.clone()
            }
        })
        .collect();
    Ok(ds.with_subjects(subjects))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthCurves {
    pub times: Vec<f64>,
    pub direct: Vec<f64>,
    pub indirect: Vec<f64>,
}

impl TruthCurves {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "direct", "indirect", "total"])?;
        for k in 0..self.times.len() {
            w.write_record([
                self.times[k].to_string(),
                self.direct[k].to_string(),
                self.indirect[k].to_string(),
                (self.direct[k] + self.indirect[k]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const TRUTH_REFINEMENT: usize = 16;

/// Integrated direct and indirect effects of the generator on `grid`,
/// by composite trapezoid with each grid interval (starting from 0) split
/// into 16 pieces.
pub fn true_curves(cfg: &SimConfig, grid: &[f64]) -> TruthCurves {
    let s = &cfg.splines;
    let direct_rate = |t: f64| s.beta_treat.eval(t);
    let indirect_rate = |t: f64| s.b21.eval(t) * s.beta_med.eval(t);
    let mut direct = Vec::with_capacity(grid.len());
    let mut indirect = Vec::with_capacity(grid.len());
    let (mut acc_d, mut acc_i, mut prev) = (0.0, 0.0, 0.0);
    for &g in grid {
        let h = (g - prev) / TRUTH_REFINEMENT as f64;
        for j in 0..TRUTH_REFINEMENT {
            let a = prev + j as f64 * h;
            let b = if j + 1 == TRUTH_REFINEMENT { g } else { a + h };
            acc_d += 0.5 * (b - a) * (direct_rate(a) + direct_rate(b));
            acc_i += 0.5 * (b - a) * (indirect_rate(a) + indirect_rate(b));
        }
        direct.push(acc_d);
        indirect.push(acc_i);
        prev = g;
    }
    TruthCurves {
        times: grid.to_vec(),
        direct,
        indirect,
    }
}
