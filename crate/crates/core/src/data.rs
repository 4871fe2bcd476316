//! Counting-process data model.
//!
//! A [`Subject`] carries a time-fixed treatment, baseline covariates, one or
//! more time-stamped mediator series, the follow-up time and the event flag.
//! The at-risk indicator and counting process are derived from
//! `followup`/`event`; mediator values entering a design at time `t` are
//! always the left limit `X(t-)`, i.e. the last measurement strictly before
//! `t`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Time-stamped measurements of one mediator, times strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediatorSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MediatorSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("mediator times and values differ in length"));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite mediator entry"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mediator times must be strictly increasing"));
        }
        if times.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::invalid("mediator times must be >= 0"));
        }
        Ok(Self { times, values })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Last observation carried forward, strict left limit: the latest value
    /// measured at a time `< t`.
    pub fn locf(&self, t: f64) -> Option<f64> {
        let idx = self.times.partition_point(|&s| s < t);
        (idx > 0).then(|| self.values[idx - 1])
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub treatment: f64,
    pub baseline: Vec<f64>,
    pub mediators: Vec<MediatorSeries>,
    pub followup: f64,
    pub event: bool,
}

impl Subject {
    /// Single-mediator convenience constructor.
    pub fn new(
        id: impl Into<String>,
        treatment: f64,
        baseline: Vec<f64>,
        mediator: &[(f64, f64)],
        followup: f64,
        event: bool,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            treatment,
            baseline,
            mediators: vec![MediatorSeries::from_pairs(mediator)?],
            followup,
            event,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.followup > 0.0) || !self.followup.is_finite() {
            return Err(Error::invalid(format!(
                "subject {}: followup must be finite and > 0",
                self.id
            )));
        }
        if !self.treatment.is_finite() || self.baseline.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("subject {}: non-finite covariate", self.id)));
        }
        for m in &self.mediators {
            if m.times.len() != m.values.len() || m.times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "subject {}: mediator times must be strictly increasing",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// `X₂(t-)` for the first mediator.
    pub fn locf(&self, t: f64) -> Option<f64> {
        self.mediators.first().and_then(|m| m.locf(t))
    }

    pub fn at_risk(&self, t: f64) -> bool {
        self.followup >= t
    }

    /// Value of a covariate entering a design at time `t`.
    pub fn value(&self, cov: Covariate, t: f64) -> Option<f64> {
        match cov {
            Covariate::Treatment => Some(self.treatment),
            Covariate::Baseline(j) => self.baseline.get(j).copied(),
            Covariate::Mediator(j) => self.mediators.get(j).and_then(|m| m.locf(t)),
        }
    }
}

/// A resolved covariate reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Covariate {
    Treatment,
    Baseline(usize),
    Mediator(usize),
}

impl Covariate {
    pub fn is_mediator(self) -> bool {
        matches!(self, Covariate::Mediator(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub treatment_name: String,
    pub covariate_names: Vec<String>,
    pub mediator_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        subjects: Vec<Subject>,
        treatment_name: impl Into<String>,
        covariate_names: Vec<String>,
        mediator_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            subjects,
            treatment_name: treatment_name.into(),
            covariate_names,
            mediator_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset with the default labels `treatment`, `z_1..z_p`, `med_value`.
    pub fn with_default_names(subjects: Vec<Subject>) -> Result<Self> {
        let p = subjects.first().map_or(0, |s| s.baseline.len());
        let k = subjects.first().map_or(1, |s| s.mediators.len());
        let mediators = if k == 1 {
            vec!["med_value".to_string()]
        } else {
            (1..=k).map(|j| format!("med_{j}")).collect()
        };
        Self::new(
            subjects,
            "treatment",
            (1..=p).map(|j| format!("z_{j}")).collect(),
            mediators,
        )
    }

    fn validate(&self) -> Result<()> {
        let p = self.covariate_names.len();
        let k = self.mediator_names.len();
        let mut seen = std::collections::HashSet::with_capacity(self.subjects.len());
        for s in &self.subjects {
            s.validate()?;
            if s.baseline.len() != p {
                return Err(Error::invalid(format!(
                    "subject {} has {} baseline covariates, expected {p}",
                    s.id,
                    s.baseline.len()
                )));
            }
            if s.mediators.len() != k {
                return Err(Error::invalid(format!(
                    "subject {} has {} mediator series, expected {k}",
                    s.id,
                    s.mediators.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id {}", s.id)));
            }
        }
        let mut labels = std::collections::HashSet::new();
        for l in self.labels() {
            if l == INTERCEPT || !labels.insert(l) {
                return Err(Error::invalid(format!("duplicate or reserved label `{l}`")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.treatment_name.as_str())
            .chain(self.covariate_names.iter().map(String::as_str))
            .chain(self.mediator_names.iter().map(String::as_str))
    }

    pub fn resolve(&self, label: &str) -> Result<Covariate> {
        if label == self.treatment_name {
            return Ok(Covariate::Treatment);
        }
        if let Some(j) = self.covariate_names.iter().position(|n| n == label) {
            return Ok(Covariate::Baseline(j));
        }
        if let Some(j) = self.mediator_names.iter().position(|n| n == label) {
            return Ok(Covariate::Mediator(j));
        }
        Err(Error::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, cov: Covariate) -> &str {
        match cov {
            Covariate::Treatment => &self.treatment_name,
            Covariate::Baseline(j) => &self.covariate_names[j],
            Covariate::Mediator(j) => &self.mediator_names[j],
        }
    }

    pub fn event_times(&self) -> Vec<f64> {
        event_times(self.subjects.iter())
    }

    pub fn risk_set(&self, t: f64) -> Vec<&Subject> {
        self.subjects.iter().filter(|s| s.at_risk(t)).collect()
    }

    pub fn event_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    /// Fraction of subjects without an observed event.
    pub fn censoring_fraction(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        1.0 - self.event_count() as f64 / self.subjects.len() as f64
    }

    /// Same labels, different subjects (used for resampling).
    pub(crate) fn with_subjects(&self, subjects: Vec<Subject>) -> Self {
        Self {
            subjects,
            treatment_name: self.treatment_name.clone(),
            covariate_names: self.covariate_names.clone(),
            mediator_names: self.mediator_names.clone(),
        }
    }
}

pub const INTERCEPT: &str = "intercept";

/// Distinct observed event times in ascending order.
pub fn event_times<'a>(subjects: impl IntoIterator<Item = &'a Subject>) -> Vec<f64> {
    let mut times: Vec<f64> = subjects
        .into_iter()
        .filter(|s| s.event)
        .map(|s| s.followup)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

// ---------------------------------------------------------------------------
// CSV long format
// ---------------------------------------------------------------------------

const MED_TIME: &str = "med_time";
const FOLLOWUP: &str = "followup";
const EVENT: &str = "event";

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::invalid(format!("line {line}: bad {what} value `{field}`")))
}

fn parse_event(field: &str, line: u64) -> Result<bool> {
    match field.trim() {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        other => Err(Error::invalid(format!("line {line}: bad event value `{other}`"))),
    }
}

struct Pending {
    subject: Subject,
    // (time, value per mediator)
    rows: Vec<(f64, Vec<Option<f64>>)>,
}

/// Read the long-format CSV: `id, <treatment>, <z...>, med_time, <mediators...>,
/// followup, event`, one row per mediator measurement.
///
/// The treatment label is the second header field; baseline covariates are
/// the columns between it and `med_time`, mediators the columns between
/// `med_time` and `followup`. An empty mediator cell marks a missing value at
/// that time; an empty `med_time` marks a subject row without measurements.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (med_idx, fu_idx, ev_idx) = match (col(MED_TIME), col(FOLLOWUP), col(EVENT)) {
        (Some(m), Some(f), Some(e)) if m >= 2 && f > m && e == f + 1 && e + 1 == header.len() => {
            (m, f, e)
        }
        _ => {
            return Err(Error::invalid(
                "header must be: id, treatment, z..., med_time, mediator..., followup, event",
            ))
        }
    };
    if header.get(0) != Some("id") {
        return Err(Error::invalid("first column must be `id`"));
    }
    let treatment_name = header[1].to_string();
    let covariate_names: Vec<String> = (2..med_idx).map(|i| header[i].to_string()).collect();
    let mediator_names: Vec<String> = (med_idx + 1..fu_idx).map(|i| header[i].to_string()).collect();
    if mediator_names.is_empty() {
        return Err(Error::invalid("no mediator value column"));
    }

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        let treatment = parse_f64(&rec[1], "treatment", line)?;
        let baseline = (2..med_idx)
            .map(|i| parse_f64(&rec[i], &header[i], line))
            .collect::<Result<Vec<_>>>()?;
        let followup = parse_f64(&rec[fu_idx], FOLLOWUP, line)?;
        let event = parse_event(&rec[ev_idx], line)?;
        let slot = match index.get(&id) {
            Some(&k) => {
                let s = &order[k].subject;
                if s.treatment != treatment
                    || s.baseline != baseline
                    || s.followup != followup
                    || s.event != event
                {
                    return Err(Error::invalid(format!(
                        "line {line}: subject {id} has inconsistent fixed fields"
                    )));
                }
                k
            }
            None => {
                index.insert(id.clone(), order.len());
                order.push(Pending {
                    subject: Subject {
                        id,
                        treatment,
                        baseline,
                        mediators: Vec::new(),
                        followup,
                        event,
                    },
                    rows: Vec::new(),
                });
                order.len() - 1
            }
        };
        if rec[med_idx].trim().is_empty() {
            continue;
        }
        let t = parse_f64(&rec[med_idx], MED_TIME, line)?;
        let values = (med_idx + 1..fu_idx)
            .map(|i| {
                if rec[i].trim().is_empty() {
                    Ok(None)
                } else {
                    parse_f64(&rec[i], &header[i], line).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        order[slot].rows.push((t, values));
    }

    let k = mediator_names.len();
    let mut subjects = Vec::with_capacity(order.len());
    for mut p in order {
        p.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if p.rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!(
                "subject {}: duplicate mediator measurement time",
                p.subject.id
            )));
        }
        let mut series = vec![MediatorSeries::default(); k];
        for (t, vals) in &p.rows {
            for (j, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    series[j].times.push(*t);
                    series[j].values.push(*v);
                }
            }
        }
        p.subject.mediators = series;
        subjects.push(p.subject);
    }
    let ds = Dataset::new(subjects, treatment_name, covariate_names, mediator_names)?;
    if ds.event_count() == 0 {
        return Err(Error::NoUsableEventTimes { skipped: 0 });
    }
    Ok(ds)
}

pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), ds.treatment_name.clone()];
    header.extend(ds.covariate_names.iter().cloned());
    header.push(MED_TIME.into());
    header.extend(ds.mediator_names.iter().cloned());
    header.push(FOLLOWUP.into());
    header.push(EVENT.into());
    w.write_record(&header)?;

    for s in &ds.subjects {
        let fixed: Vec<String> = std::iter::once(s.id.clone())
            .chain(std::iter::once(s.treatment.to_string()))
            .chain(s.baseline.iter().map(f64::to_string))
            .collect();
        let tail = [s.followup.to_string(), u8::from(s.event).to_string()];

        let mut times: Vec<f64> = s.mediators.iter().flat_map(|m| m.times.iter().copied()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        if times.is_empty() {
            let mut rec = fixed.clone();
            rec.push(String::new());
            rec.extend(std::iter::repeat_n(String::new(), ds.mediator_names.len()));
            rec.extend(tail.iter().cloned());
            w.write_record(&rec)?;
            continue;
        }
        let mut cursors = vec![0usize; s.mediators.len()];
        for t in times {
            let mut rec = fixed.clone();
            rec.push(t.to_string());
            for (j, m) in s.mediators.iter().enumerate() {
                let c = cursors[j];
                if c < m.times.len() && m.times[c] == t {
                    rec.push(m.values[c].to_string());
                    cursors[j] += 1;
                } else {
                    rec.push(String::new());
                }
            }
            rec.extend(tail.iter().cloned());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_path(path: &std::path::Path) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_csv_path(ds: &Dataset, path: &std::path::Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(ds, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, followup: f64, event: bool) -> Subject {
        Subject::new(id, 0.0, vec![], &[(0.0, 1.0)], followup, event).unwrap()
    }

    #[test]
    fn locf_is_strict_left_limit() {
        let s = MediatorSeries::from_pairs(&[(0.0, 5.0), (2.0, 7.0)]).unwrap();
        assert_eq!(s.locf(1.5), Some(5.0));
        assert_eq!(s.locf(2.0), Some(5.0));
        assert_eq!(s.locf(2.5), Some(7.0));
        assert_eq!(s.locf(0.0), None);
        let late = MediatorSeries::from_pairs(&[(1.0, 3.0)]).unwrap();
        assert_eq!(late.locf(0.5), None);
    }

    #[test]
    fn event_times_dedup_and_sort() {
        let ds = Dataset::with_default_names(vec![
            subject("a", 3.0, true),
            subject("b", 1.0, false),
            subject("c", 3.0, true),
        ])
        .unwrap();
        assert_eq!(ds.event_times(), vec![3.0]);

        let ds = Dataset::with_default_names(vec![subject("a", 2.0, true), subject("b", 1.0, true)])
            .unwrap();
        assert_eq!(ds.event_times(), vec![1.0, 2.0]);
    }

    #[test]
    fn risk_set_membership() {
        let ds = Dataset::with_default_names(vec![
            subject("a", 1.0, true),
            subject("b", 2.0, true),
            subject("c", 3.0, false),
        ])
        .unwrap();
        let ids = |t| ds.risk_set(t).iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(2.0), vec!["b", "c"]);
        assert_eq!(ids(0.5).len(), 3);
        assert!(ids(3.5).is_empty());
    }

    #[test]
    fn rejects_bad_subjects() {
        assert!(Subject::new("x", 0.0, vec![], &[(0.0, 1.0)], 0.0, true).is_err());
        assert!(Subject::new("x", 0.0, vec![], &[(1.0, 1.0), (1.0, 2.0)], 2.0, true).is_err());
        let dup = Dataset::with_default_names(vec![subject("a", 1.0, true), subject("a", 2.0, true)]);
        assert!(dup.is_err());
    }

    #[test]
    fn resolve_labels() {
        let s = Subject::new("a", 1.0, vec![0.5], &[(0.0, 1.0)], 1.0, true).unwrap();
        let ds = Dataset::with_default_names(vec![s]).unwrap();
        assert_eq!(ds.resolve("treatment").unwrap(), Covariate::Treatment);
        assert_eq!(ds.resolve("z_1").unwrap(), Covariate::Baseline(0));
        assert_eq!(ds.resolve("med_value").unwrap(), Covariate::Mediator(0));
        assert!(matches!(ds.resolve("ldl"), Err(Error::UnknownLabel(l)) if l == "ldl"));
    }

    #[test]
    fn csv_round_trip() {
        let subjects = vec![
            Subject::new("1", 1.0, vec![0.25], &[(0.0, 11.5), (0.5, 9.125)], 1.75, true).unwrap(),
            Subject::new("2", 0.0, vec![-1.0], &[(0.0, 10.0)], 5.0, false).unwrap(),
        ];
        let ds = Dataset::with_default_names(subjects).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,treatment,z_1,med_time,med_value,followup,event\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_rejects_inconsistent_fixed_fields() {
        let text = "id,treatment,med_time,med_value,followup,event\n\
                    1,1,0,5,2,1\n\
                    1,1,1,6,3,1\n";
        assert!(read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn csv_multiple_mediators_with_gaps() {
        let text = "id,arm,age,med_time,ldl,apob,followup,event\n\
                    1,1,60,0,3.1,1.2,2,1\n\
                    1,1,60,0.25,2.5,,2,1\n\
                    2,0,55,0,3.3,1.1,4,0\n";
        let ds = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.treatment_name, "arm");
        assert_eq!(ds.mediator_names, vec!["ldl", "apob"]);
        assert_eq!(ds.subjects[0].mediators[0].len(), 2);
        assert_eq!(ds.subjects[0].mediators[1].len(), 1);
        assert_eq!(ds.resolve("apob").unwrap(), Covariate::Mediator(1));
    }

    #[test]
    fn csv_without_events_is_insufficient() {
        let text = "id,treatment,med_time,med_value,followup,event\n1,1,0,5,2,0\n";
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::NoUsableEventTimes { .. })
        ));
    }
}
