//! Dynamic path analysis.
//!
//! The causal ordering is `exposure → mediator₁ → … → mediator_k → dN(t)`,
//! with optional baseline adjustment covariates entering every regression.
//! At each event time the same risk set is used for
//!
//! * the additive-hazard solve on `(1, exposure, mediators, adjust)`, and
//! * one OLS regression per mediator on `(1, exposure, earlier mediators, adjust)`.
//!
//! A path effect multiplies the edge coefficients along the path with the
//! hazard increment of its last node and sums over event times. If any solve
//! fails at a time, that time contributes zero to every curve.

use std::io::Write;

use serde::Serialize;

use crate::data::{Covariate, Dataset, Subject};
use crate::error::{Error, Result};
use crate::hazard::{
    labels_for, solve_hazard, step_value, CumulativeCurve, FitDiagnostics, RiskRows, RiskSets, SkipReason,
};
use crate::regress::NormalEquations;

/// Largest number of mediators accepted by [`total_decomposition`] (2^15 paths).
pub const MAX_DECOMPOSITION_MEDIATORS: usize = 15;

/// Node ordering and adjustment set of a path model, by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathModel {
    pub exposure: String,
    pub mediators: Vec<String>,
    pub adjust: Vec<String>,
}

impl PathModel {
    pub fn new<M: Into<String>, A: Into<String>>(
        exposure: impl Into<String>,
        mediators: impl IntoIterator<Item = M>,
        adjust: impl IntoIterator<Item = A>,
    ) -> Self {
        Self {
            exposure: exposure.into(),
            mediators: mediators.into_iter().map(Into::into).collect(),
            adjust: adjust.into_iter().map(Into::into).collect(),
        }
    }

    /// Exposure followed by the mediators.
    pub fn nodes(&self) -> Vec<String> {
        std::iter::once(self.exposure.clone())
            .chain(self.mediators.iter().cloned())
            .collect()
    }
}

/// A causal path `X_{i₁} → … → X_{i_k} → outcome` by node label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PathSpec {
    pub nodes: Vec<String>,
}

impl PathSpec {
    pub fn new<S: Into<String>>(nodes: impl IntoIterator<Item = S>) -> Self {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn name(&self) -> String {
        let mut s = self.nodes.join("->");
        s.push_str("->outcome");
        s
    }
}

struct ResolvedModel {
    exposure: Covariate,
    mediators: Vec<Covariate>,
    adjust: Vec<Covariate>,
}

impl ResolvedModel {
    fn resolve(ds: &Dataset, model: &PathModel) -> Result<Self> {
        let exposure = ds.resolve(&model.exposure)?;
        if exposure.is_mediator() {
            return Err(Error::invalid(format!(
                "exposure `{}` must be a time-fixed covariate",
                model.exposure
            )));
        }
        let mediators = model
            .mediators
            .iter()
            .map(|l| match ds.resolve(l)? {
                c @ Covariate::Mediator(_) => Ok(c),
                _ => Err(Error::invalid(format!("`{l}` is not a mediator"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let adjust = model
            .adjust
            .iter()
            .map(|l| match ds.resolve(l)? {
                c @ Covariate::Baseline(_) => Ok(c),
                _ => Err(Error::invalid(format!("adjustment `{l}` must be a baseline covariate"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = std::collections::HashSet::new();
        let distinct = std::iter::once(exposure)
            .chain(mediators.iter().copied())
            .chain(adjust.iter().copied())
            .all(|c| seen.insert(c));
        if !distinct {
            return Err(Error::invalid("a covariate appears twice in the path model"));
        }
        Ok(Self {
            exposure,
            mediators,
            adjust,
        })
    }

    /// Hazard design columns after the intercept.
    fn hazard_covariates(&self) -> Vec<Covariate> {
        std::iter::once(self.exposure)
            .chain(self.mediators.iter().copied())
            .chain(self.adjust.iter().copied())
            .collect()
    }
}

/// Per-event-time local estimates shared by every path.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimates {
    pub model: PathModel,
    pub times: Vec<f64>,
    /// Hazard increments, columns `(intercept, exposure, mediators…, adjust…)`.
    pub hazard: Vec<Vec<f64>>,
    /// `edges[k][j]`: coefficients of mediator `j` regressed on
    /// `(1, exposure, mediators < j, adjust…)` at `times[k]`.
    pub edges: Vec<Vec<Vec<f64>>>,
    pub at_risk: Vec<usize>,
    pub skipped: Vec<Option<SkipReason>>,
    pub hazard_labels: Vec<String>,
    pub diagnostics: FitDiagnostics,
}

impl LocalEstimates {
    /// Hazard column of node `i` (0 = exposure, `j + 1` = mediator `j`).
    fn hazard_column(i: usize) -> usize {
        i + 1
    }

    /// Coefficient of node `source` in the regression of mediator node `target`.
    fn edge(&self, k: usize, target: usize, source: usize) -> f64 {
        debug_assert!(source < target && target >= 1);
        self.edges[k][target - 1][source + 1]
    }

    fn node_index(&self, label: &str) -> Result<usize> {
        if label == self.model.exposure {
            return Ok(0);
        }
        self.model
            .mediators
            .iter()
            .position(|m| m == label)
            .map(|j| j + 1)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn path_indices(&self, path: &PathSpec) -> Result<Vec<usize>> {
        if path.nodes.is_empty() {
            return Err(Error::invalid("path needs at least one node"));
        }
        let idx = path
            .nodes
            .iter()
            .map(|l| self.node_index(l))
            .collect::<Result<Vec<_>>>()?;
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "path {} does not follow the measurement order",
                path.name()
            )));
        }
        Ok(idx)
    }

    fn path_increment(&self, k: usize, idx: &[usize]) -> f64 {
        if self.skipped[k].is_some() {
            return 0.0;
        }
        let last = *idx.last().expect("non-empty path");
        let mut v = self.hazard[k][Self::hazard_column(last)];
        for w in idx.windows(2).rev() {
            v *= self.edge(k, w[1], w[0]);
        }
        v
    }

    pub fn path_effect(&self, path: &PathSpec) -> Result<CumulativeCurve> {
        let idx = self.path_indices(path)?;
        let increments = (0..self.times.len())
            .map(|k| vec![self.path_increment(k, &idx)])
            .collect();
        Ok(CumulativeCurve::from_increments(
            vec![path.name()],
            self.times.clone(),
            increments,
            self.skipped.clone(),
            self.diagnostics,
        ))
    }

    /// All increasing paths from the exposure through subsets of the mediators.
    pub fn decomposition(&self) -> Result<Decomposition> {
        let m = self.model.mediators.len();
        if m > MAX_DECOMPOSITION_MEDIATORS {
            return Err(Error::TooManyPaths { mediators: m });
        }
        let direct = self.path_effect(&PathSpec::new([self.model.exposure.clone()]))?;
        let mut paths = Vec::with_capacity((1usize << m) - 1);
        for mask in 1usize..(1 << m) {
            let mut nodes = vec![self.model.exposure.clone()];
            nodes.extend((0..m).filter(|j| mask >> j & 1 == 1).map(|j| self.model.mediators[j].clone()));
            let spec = PathSpec { nodes };
            let curve = self.path_effect(&spec)?;
            paths.push((spec, curve));
        }
        let total = (0..self.times.len())
            .map(|k| {
                let mut v = direct.cumulative[k][0];
                for (_, c) in &paths {
                    v += c.cumulative[k][0];
                }
                v
            })
            .collect();
        Ok(Decomposition {
            times: self.times.clone(),
            direct,
            paths,
            total,
        })
    }

    pub fn hazard_curve(&self) -> CumulativeCurve {
        CumulativeCurve::from_increments(
            self.hazard_labels.clone(),
            self.times.clone(),
            self.hazard.clone(),
            self.skipped.clone(),
            self.diagnostics,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub times: Vec<f64>,
    pub direct: CumulativeCurve,
    pub paths: Vec<(PathSpec, CumulativeCurve)>,
    /// `direct + Σ paths` per time, summed in path-enumeration order.
    pub total: Vec<f64>,
}

pub fn fit_local(ds: &Dataset, model: &PathModel) -> Result<LocalEstimates> {
    let subjects: Vec<&Subject> = ds.subjects.iter().collect();
    fit_local_on(ds, &subjects, model)
}

pub(crate) fn fit_local_on(ds: &Dataset, subjects: &[&Subject], model: &PathModel) -> Result<LocalEstimates> {
    let resolved = ResolvedModel::resolve(ds, model)?;
    let covs = resolved.hazard_covariates();
    let risk = RiskSets::prepare(subjects, &covs);
    let m = resolved.mediators.len();
    let q = covs.len() + 1;

    let mut hazard = Vec::with_capacity(risk.times.len());
    let mut edges = Vec::with_capacity(risk.times.len());
    let mut at_risk = Vec::with_capacity(risk.times.len());
    let mut skipped = Vec::with_capacity(risk.times.len());
    let mut dropped = 0;
    for &t in &risk.times {
        let rows = risk.rows_at(t);
        dropped += rows.dropped;
        at_risk.push(rows.len());
        let solved = solve_hazard(&rows).and_then(|d| {
            let e = (0..m)
                .map(|j| solve_edge(&rows, j, m))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok((d, e))
        });
        match solved {
            Ok((d, e)) => {
                hazard.push(d);
                edges.push(e);
                skipped.push(None);
            }
            Err(reason) => {
                hazard.push(vec![0.0; q]);
                edges.push((0..m).map(|j| vec![0.0; edge_columns(j, m, q)]).collect());
                skipped.push(Some(reason));
            }
        }
    }
    let n_skipped = skipped.iter().filter(|s| s.is_some()).count();
    if n_skipped == risk.times.len() {
        return Err(Error::NoUsableEventTimes { skipped: n_skipped });
    }
    if n_skipped > 0 {
        log::warn!("{n_skipped} of {} event times skipped in path model", risk.times.len());
    }
    Ok(LocalEstimates {
        model: model.clone(),
        times: risk.times,
        hazard,
        edges,
        at_risk,
        skipped,
        hazard_labels: labels_for(ds, &covs),
        diagnostics: FitDiagnostics {
            excluded_subjects: risk.excluded,
            dropped_missing: dropped,
        },
    })
}

// Columns of the regression for mediator j: 1, exposure, mediators < j, adjust.
fn edge_columns(j: usize, m: usize, q: usize) -> usize {
    let adjust = q - 2 - m;
    2 + j + adjust
}

/// OLS of mediator `j` (hazard column `2 + j`) on its predecessors.
fn solve_edge(rows: &RiskRows, j: usize, m: usize) -> std::result::Result<Vec<f64>, SkipReason> {
    let q = rows.q;
    let cols: Vec<usize> = (0..2 + j).chain(2 + m..q).collect();
    if rows.len() < cols.len() {
        return Err(SkipReason::SmallRiskSet);
    }
    let mut ne = NormalEquations::new(cols.len());
    let mut x = vec![0.0; cols.len()];
    for row in rows.iter() {
        for (slot, &c) in x.iter_mut().zip(&cols) {
            *slot = row[c];
        }
        ne.add(&x, row[2 + j]);
    }
    ne.solve().map_err(|_| SkipReason::RankDeficient)
}

/// Mediator regression `X₂(t-) ~ (1, treatment, adjust…)` on the risk set at `t`,
/// with the same exclusion rules as [`fit_dpa`].
pub fn mediator_regression_at<S: AsRef<str>>(
    ds: &Dataset,
    t: f64,
    treatment: &str,
    mediator: &str,
    adjust: &[S],
) -> Result<Vec<f64>> {
    let model = PathModel::new(
        treatment.to_string(),
        [mediator.to_string()],
        adjust.iter().map(|s| s.as_ref().to_string()),
    );
    let resolved = ResolvedModel::resolve(ds, &model)?;
    let covs = resolved.hazard_covariates();
    let subjects: Vec<&Subject> = ds.subjects.iter().collect();
    let risk = RiskSets::prepare(&subjects, &covs);
    let rows = risk.rows_at(t);
    solve_edge(&rows, 0, 1).map_err(|r| match r {
        SkipReason::SmallRiskSet => Error::Underdetermined {
            rows: rows.len(),
            cols: edge_columns(0, 1, rows.q),
        },
        SkipReason::RankDeficient => Error::RankDeficient,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpaResult {
    pub times: Vec<f64>,
    pub direct: Vec<f64>,
    pub indirect: Vec<f64>,
    /// `direct[k] + indirect[k]`.
    pub total: Vec<f64>,
    /// `b̂₂,₁(t)`; NaN at skipped times.
    pub local_b21: Vec<f64>,
    pub skipped: Vec<Option<SkipReason>>,
    pub diagnostics: FitDiagnostics,
}

impl DpaResult {
    fn from_local(local: &LocalEstimates) -> Result<Self> {
        let model = &local.model;
        if model.mediators.len() != 1 {
            return Err(Error::invalid("single-mediator model expected"));
        }
        let direct = local.path_effect(&PathSpec::new([model.exposure.clone()]))?;
        let indirect = local.path_effect(&PathSpec::new([model.exposure.clone(), model.mediators[0].clone()]))?;
        let direct: Vec<f64> = direct.cumulative.iter().map(|c| c[0]).collect();
        let indirect: Vec<f64> = indirect.cumulative.iter().map(|c| c[0]).collect();
        let total = direct.iter().zip(&indirect).map(|(d, i)| d + i).collect();
        let local_b21 = (0..local.times.len())
            .map(|k| {
                if local.skipped[k].is_some() {
                    f64::NAN
                } else {
                    local.edge(k, 1, 0)
                }
            })
            .collect();
        Ok(Self {
            times: local.times.clone(),
            direct,
            indirect,
            total,
            local_b21,
            skipped: local.skipped.clone(),
            diagnostics: local.diagnostics,
        })
    }

    pub fn skip_count(&self) -> usize {
        self.skipped.iter().filter(|s| s.is_some()).count()
    }

    pub fn direct_at(&self, t: f64) -> f64 {
        step_value(&self.times, t, |k| self.direct[k])
    }

    pub fn indirect_at(&self, t: f64) -> f64 {
        step_value(&self.times, t, |k| self.indirect[k])
    }

    pub fn total_at(&self, t: f64) -> f64 {
        step_value(&self.times, t, |k| self.total[k])
    }

    /// The three cumulative curves evaluated on `grid` by right-continuous steps.
    pub fn on_grid(&self, grid: &[f64]) -> [Vec<f64>; 3] {
        [
            grid.iter().map(|&t| self.direct_at(t)).collect(),
            grid.iter().map(|&t| self.indirect_at(t)).collect(),
            grid.iter().map(|&t| self.total_at(t)).collect(),
        ]
    }

    pub(crate) const CSV_HEADER: [&'static str; 6] = ["time", "direct", "indirect", "total", "local_b21", "skipped"];

    pub(crate) fn csv_record(&self, k: usize) -> Vec<String> {
        let b21 = if self.local_b21[k].is_nan() {
            String::new()
        } else {
            self.local_b21[k].to_string()
        };
        vec![
            self.times[k].to_string(),
            self.direct[k].to_string(),
            self.indirect[k].to_string(),
            self.total[k].to_string(),
            b21,
            u8::from(self.skipped[k].is_some()).to_string(),
        ]
    }

    /// CSV `time, direct, indirect, total, local_b21, skipped`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for k in 0..self.times.len() {
            w.write_record(self.csv_record(k))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fit_dpa<S: AsRef<str>>(ds: &Dataset, treatment: &str, mediator: &str, adjust: &[S]) -> Result<DpaResult> {
    let subjects: Vec<&Subject> = ds.subjects.iter().collect();
    fit_dpa_on(ds, &subjects, &single_mediator_model(treatment, mediator, adjust))
}

pub(crate) fn single_mediator_model<S: AsRef<str>>(treatment: &str, mediator: &str, adjust: &[S]) -> PathModel {
    PathModel::new(
        treatment.to_string(),
        [mediator.to_string()],
        adjust.iter().map(|s| s.as_ref().to_string()),
    )
}

pub(crate) fn fit_dpa_on(ds: &Dataset, subjects: &[&Subject], model: &PathModel) -> Result<DpaResult> {
    DpaResult::from_local(&fit_local_on(ds, subjects, model)?)
}

pub fn path_effect(ds: &Dataset, model: &PathModel, path: &PathSpec) -> Result<CumulativeCurve> {
    fit_local(ds, model)?.path_effect(path)
}

pub fn total_decomposition(ds: &Dataset, model: &PathModel) -> Result<Decomposition> {
    if model.mediators.len() > MAX_DECOMPOSITION_MEDIATORS {
        return Err(Error::TooManyPaths {
            mediators: model.mediators.len(),
        });
    }
    fit_local(ds, model)?.decomposition()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Proportion {
    Defined { value: f64, unstable: bool },
    Undefined,
}

pub const PROPORTION_TOL_ABS: f64 = 1e-8;
pub const PROPORTION_UNSTABLE_FRACTION: f64 = 0.05;

/// `indirect(t) / total(t)`, flagged unstable when `|total(t)|` is below 5% of
/// the largest `|total|`, undefined below `PROPORTION_TOL_ABS` or before the
/// first event time.
pub fn proportion_mediated(r: &DpaResult, t: f64) -> Proportion {
    if r.times.first().is_none_or(|&t0| t < t0) {
        return Proportion::Undefined;
    }
    let total = r.total_at(t);
    if !(total.abs() > PROPORTION_TOL_ABS) {
        return Proportion::Undefined;
    }
    let max_total = r.total.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Proportion::Defined {
        value: r.indirect_at(t) / total,
        unstable: total.abs() < PROPORTION_UNSTABLE_FRACTION * max_total,
    }
}
