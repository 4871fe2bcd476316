//! Aalen additive-hazard estimator.
//!
//! At each distinct event time `t` the at-risk rows `(1, x₁, …, x_q)` are
//! regressed on the jump indicator `dN(t)`; the solutions `dB̂(t)` are summed in
//! ascending time order to give the cumulative regression functions `B̂(t)`.
//! Event times whose risk set is smaller than the number of design columns or
//! whose normal matrix is rank deficient are kept on the time axis with a zero
//! increment and recorded in the skip log.

use std::io::Write;

use serde::Serialize;

use crate::data::{Covariate, Dataset, Subject, INTERCEPT};
use crate::error::{Error, Result};
use crate::regress::NormalEquations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    SmallRiskSet,
    RankDeficient,
}

/// Subject counts removed from fits because of missing mediator values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FitDiagnostics {
    /// Subjects without a mediator value before the first event time.
    pub excluded_subjects: usize,
    /// (subject, time) pairs dropped from a risk set for a missing mediator.
    pub dropped_missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// `increments[k][j]`: local estimate for covariate `j` at `times[k]`.
    pub increments: Vec<Vec<f64>>,
    pub cumulative: Vec<Vec<f64>>,
    pub skipped: Vec<Option<SkipReason>>,
    pub diagnostics: FitDiagnostics,
}

impl CumulativeCurve {
    /// Build from per-time increments, summing in ascending time order.
    pub fn from_increments(
        labels: Vec<String>,
        times: Vec<f64>,
        increments: Vec<Vec<f64>>,
        skipped: Vec<Option<SkipReason>>,
        diagnostics: FitDiagnostics,
    ) -> Self {
        let width = labels.len();
        let mut running = vec![0.0; width];
        let cumulative = increments
            .iter()
            .map(|inc| {
                for (r, d) in running.iter_mut().zip(inc) {
                    *r += d;
                }
                running.clone()
            })
            .collect();
        Self {
            labels,
            times,
            increments,
            cumulative,
            skipped,
            diagnostics,
        }
    }

    pub fn column(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Right-continuous step value of `B̂_label(t)`; zero before the first time.
    pub fn eval(&self, label: &str, t: f64) -> Result<f64> {
        let j = self.column(label)?;
        Ok(step_value(&self.times, t, |k| self.cumulative[k][j]))
    }

    pub fn series(&self, label: &str) -> Result<Vec<f64>> {
        let j = self.column(label)?;
        Ok(self.cumulative.iter().map(|c| c[j]).collect())
    }

    pub fn increment_series(&self, label: &str) -> Result<Vec<f64>> {
        let j = self.column(label)?;
        Ok(self.increments.iter().map(|c| c[j]).collect())
    }

    pub fn skip_count(&self) -> usize {
        self.skipped.iter().filter(|s| s.is_some()).count()
    }

    /// CSV with columns `time, <label>_dB, <label>_B` per covariate.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        for l in &self.labels {
            header.push(format!("{l}_dB"));
            header.push(format!("{l}_B"));
        }
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut rec = vec![self.times[k].to_string()];
            for j in 0..self.labels.len() {
                rec.push(self.increments[k][j].to_string());
                rec.push(self.cumulative[k][j].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Right-continuous step interpolation of `value(k)` defined at sorted `times`.
pub fn step_value(times: &[f64], t: f64, value: impl Fn(usize) -> f64) -> f64 {
    let idx = times.partition_point(|&s| s <= t);
    if idx == 0 {
        0.0
    } else {
        value(idx - 1)
    }
}

/// Covariate selection for an additive-hazard fit; the intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HazardSpec {
    pub covariates: Vec<String>,
}

impl HazardSpec {
    pub fn new<S: Into<String>>(covariates: impl IntoIterator<Item = S>) -> Self {
        Self {
            covariates: covariates.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn fit_additive(ds: &Dataset, spec: &HazardSpec) -> Result<CumulativeCurve> {
    let covs = spec
        .covariates
        .iter()
        .map(|l| ds.resolve(l))
        .collect::<Result<Vec<_>>>()?;
    let subjects: Vec<&Subject> = ds.subjects.iter().collect();
    fit_additive_on(&subjects, &covs, labels_for(ds, &covs))
}

pub(crate) fn labels_for(ds: &Dataset, covs: &[Covariate]) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string())
        .chain(covs.iter().map(|&c| ds.label(c).to_string()))
        .collect()
}

pub(crate) fn fit_additive_on(
    subjects: &[&Subject],
    covs: &[Covariate],
    labels: Vec<String>,
) -> Result<CumulativeCurve> {
    let risk = RiskSets::prepare(subjects, covs);
    let q = covs.len() + 1;
    let mut increments = Vec::with_capacity(risk.times.len());
    let mut skipped = Vec::with_capacity(risk.times.len());
    let mut dropped = 0;
    for &t in &risk.times {
        let rows = risk.rows_at(t);
        dropped += rows.dropped;
        match solve_hazard(&rows) {
            Ok(d) => {
                increments.push(d);
                skipped.push(None);
            }
            Err(reason) => {
                increments.push(vec![0.0; q]);
                skipped.push(Some(reason));
            }
        }
    }
    let diagnostics = FitDiagnostics {
        excluded_subjects: risk.excluded,
        dropped_missing: dropped,
    };
    let curve = CumulativeCurve::from_increments(labels, risk.times, increments, skipped, diagnostics);
    if curve.skip_count() == curve.times.len() {
        return Err(Error::NoUsableEventTimes {
            skipped: curve.skip_count(),
        });
    }
    if curve.skip_count() > 0 {
        log::warn!("{} event times skipped in additive fit", curve.skip_count());
    }
    Ok(curve)
}

pub(crate) fn solve_hazard(rows: &RiskRows) -> std::result::Result<Vec<f64>, SkipReason> {
    if rows.len() < rows.q {
        return Err(SkipReason::SmallRiskSet);
    }
    let mut ne = NormalEquations::new(rows.q);
    for (x, &dn) in rows.iter().zip(&rows.dn) {
        ne.add(x, dn);
    }
    ne.solve().map_err(|_| SkipReason::RankDeficient)
}

/// Eligible subjects sorted by decreasing follow-up, so every risk set is a prefix.
pub(crate) struct RiskSets<'a> {
    subjects: Vec<&'a Subject>,
    covs: Vec<Covariate>,
    pub times: Vec<f64>,
    pub excluded: usize,
}

/// Design rows `(1, covariates…)` and jump indicators of one risk set.
pub(crate) struct RiskRows {
    pub q: usize,
    pub values: Vec<f64>,
    pub dn: Vec<f64>,
    pub dropped: usize,
}

impl RiskRows {
    pub fn len(&self) -> usize {
        self.dn.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.q)
    }
}

impl<'a> RiskSets<'a> {
    pub fn prepare(subjects: &[&'a Subject], covs: &[Covariate]) -> Self {
        let mediators: Vec<usize> = covs
            .iter()
            .filter_map(|c| match c {
                Covariate::Mediator(j) => Some(*j),
                _ => None,
            })
            .collect();
        let first_event = subjects
            .iter()
            .filter(|s| s.event)
            .map(|s| s.followup)
            .min_by(f64::total_cmp);
        let mut eligible: Vec<&Subject> = Vec::with_capacity(subjects.len());
        let mut excluded = 0;
        for &s in subjects {
            let ok = match first_event {
                Some(t0) if !mediators.is_empty() => mediators
                    .iter()
                    .all(|&j| s.mediators[j].first_time().is_some_and(|m| m < t0)),
                _ => true,
            };
            if ok {
                eligible.push(s);
            } else {
                excluded += 1;
            }
        }
        if excluded > 0 {
            log::warn!("{excluded} subjects without a mediator value before the first event time excluded");
        }
        let times = crate::data::event_times(eligible.iter().copied());
        eligible.sort_by(|a, b| b.followup.total_cmp(&a.followup));
        Self {
            subjects: eligible,
            covs: covs.to_vec(),
            times,
            excluded,
        }
    }

    pub fn rows_at(&self, t: f64) -> RiskRows {
        let n = self.subjects.partition_point(|s| s.followup >= t);
        let q = self.covs.len() + 1;
        let mut values = Vec::with_capacity(n * q);
        let mut dn = Vec::with_capacity(n);
        let mut dropped = 0;
        let mut row = vec![0.0; q];
        'subjects: for s in &self.subjects[..n] {
            row[0] = 1.0;
            for (slot, &c) in row[1..].iter_mut().zip(&self.covs) {
                match s.value(c, t) {
                    Some(v) => *slot = v,
                    None => {
                        dropped += 1;
                        continue 'subjects;
                    }
                }
            }
            values.extend_from_slice(&row);
            dn.push(if s.event && s.followup == t { 1.0 } else { 0.0 });
        }
        RiskRows { q, values, dn, dropped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(id: &str, x: f64, followup: f64, event: bool) -> Subject {
        Subject::new(id, x, vec![], &[(0.0, 1.0)], followup, event).unwrap()
    }

    #[test]
    fn intercept_only_is_nelson_aalen() {
        let ds = Dataset::with_default_names(vec![
            subj("a", 0.0, 1.0, true),
            subj("b", 0.0, 2.0, true),
            subj("c", 0.0, 3.0, false),
        ])
        .unwrap();
        let c = fit_additive(&ds, &HazardSpec::default()).unwrap();
        assert_eq!(c.times, vec![1.0, 2.0]);
        assert!((c.increments[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.increments[1][0] - 0.5).abs() < 1e-15);
        assert!((c.cumulative[1][0] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn eval_is_right_continuous_step() {
        let ds = Dataset::with_default_names(vec![
            subj("a", 0.0, 1.0, true),
            subj("b", 0.0, 2.0, true),
            subj("c", 0.0, 3.0, false),
        ])
        .unwrap();
        let c = fit_additive(&ds, &HazardSpec::default()).unwrap();
        assert_eq!(c.eval(INTERCEPT, 0.5).unwrap(), 0.0);
        assert_eq!(c.eval(INTERCEPT, 1.0).unwrap(), c.cumulative[0][0]);
        assert_eq!(c.eval(INTERCEPT, 1.5).unwrap(), c.cumulative[0][0]);
        assert_eq!(c.eval(INTERCEPT, 10.0).unwrap(), c.cumulative[1][0]);
        assert!(matches!(c.eval("nope", 1.0), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn no_events_is_insufficient() {
        let ds = Dataset::with_default_names(vec![subj("a", 0.0, 1.0, false), subj("b", 1.0, 2.0, false)])
            .unwrap();
        assert!(matches!(
            fit_additive(&ds, &HazardSpec::default()),
            Err(Error::NoUsableEventTimes { skipped: 0 })
        ));
    }

    #[test]
    fn collinear_treatment_and_mediator_skips_everything() {
        // mediator equals treatment at every time
        let subjects: Vec<Subject> = (0..6)
            .map(|i| {
                let x = (i % 2) as f64;
                Subject::new(i.to_string(), x, vec![], &[(0.0, x)], 1.0 + i as f64, i < 4).unwrap()
            })
            .collect();
        let ds = Dataset::with_default_names(subjects).unwrap();
        let err = fit_additive(&ds, &HazardSpec::new(["treatment", "med_value"])).unwrap_err();
        assert!(matches!(err, Error::NoUsableEventTimes { skipped: 4 }));
    }

    #[test]
    fn small_risk_sets_are_skipped_with_zero_increment() {
        let ds = Dataset::with_default_names(vec![
            subj("a", 0.0, 1.0, true),
            subj("b", 1.0, 2.0, true),
            subj("c", 0.0, 3.0, true),
        ])
        .unwrap();
        let c = fit_additive(&ds, &HazardSpec::new(["treatment"])).unwrap();
        // t=3 has a single subject at risk for two columns
        assert_eq!(c.skipped[2], Some(SkipReason::SmallRiskSet));
        assert_eq!(c.increments[2], vec![0.0, 0.0]);
        assert_eq!(c.cumulative[2], c.cumulative[1]);
    }

    #[test]
    fn mediator_missing_before_first_event_excludes_subject() {
        let subjects = vec![
            Subject::new("a", 1.0, vec![], &[(0.0, 2.0)], 1.0, true).unwrap(),
            Subject::new("b", 0.0, vec![], &[(0.0, 1.0)], 2.0, true).unwrap(),
            Subject::new("c", 1.0, vec![], &[(1.5, 3.0)], 3.0, true).unwrap(),
            Subject::new("d", 0.0, vec![], &[(0.0, 0.5)], 4.0, false).unwrap(),
            Subject::new("e", 1.0, vec![], &[(0.0, 1.5)], 4.0, false).unwrap(),
        ];
        let ds = Dataset::with_default_names(subjects).unwrap();
        let c = fit_additive(&ds, &HazardSpec::new(["treatment", "med_value"])).unwrap();
        assert_eq!(c.diagnostics.excluded_subjects, 1);
        assert_eq!(c.times, vec![1.0, 2.0]);
    }

    #[test]
    fn csv_export_columns() {
        let ds = Dataset::with_default_names(vec![
            subj("a", 0.0, 1.0, true),
            subj("b", 1.0, 2.0, true),
            subj("c", 0.0, 3.0, false),
            subj("d", 1.0, 3.0, false),
        ])
        .unwrap();
        let c = fit_additive(&ds, &HazardSpec::new(["treatment"])).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,intercept_dB,intercept_B,treatment_dB,treatment_B\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
