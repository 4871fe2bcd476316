//! Subject-level nonparametric bootstrap bands for the DPA effect curves.
//!
//! Each replicate resamples `n` subjects with replacement from its own random
//! stream, refits the path model and evaluates the three cumulative curves on
//! the event-time grid of the original fit. Pointwise limits are empirical
//! order statistics without interpolation: with `B` kept replicates sorted
//! ascending, the lower limit is element `floor((B-1)(1-level)/2)` and the
//! upper limit element `ceil((B-1)(1+level)/2)`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, Subject};
use crate::dpa::{fit_dpa_on, DpaResult, PathModel};
use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// Largest tolerated fraction of discarded replicates.
pub const MAX_DISCARD_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads, 0 for the global pool. Does not affect results.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            seed: 1,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSet {
    pub name: String,
    pub grid: Vec<f64>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapBands {
    pub fit: DpaResult,
    pub direct: BandSet,
    pub indirect: BandSet,
    pub total: BandSet,
    pub discarded: usize,
}

impl BootstrapBands {
    pub fn bands(&self) -> [&BandSet; 3] {
        [&self.direct, &self.indirect, &self.total]
    }

    /// The point-estimate CSV with `<curve>_lower, <curve>_upper` columns appended.
    pub fn write_wide_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = DpaResult::CSV_HEADER.iter().map(|h| h.to_string()).collect();
        for band in self.bands() {
            header.push(format!("{}_lower", band.name));
            header.push(format!("{}_upper", band.name));
        }
        w.write_record(&header)?;
        for k in 0..self.fit.times.len() {
            let mut record = self.fit.csv_record(k);
            for band in self.bands() {
                record.push(band.lower[k].to_string());
                record.push(band.upper[k].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format CSV `time, point, lower, upper, curve_name`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "point", "lower", "upper", "curve_name"])?;
        for band in self.bands() {
            for k in 0..band.grid.len() {
                w.write_record([
                    band.grid[k].to_string(),
                    band.point[k].to_string(),
                    band.lower[k].to_string(),
                    band.upper[k].to_string(),
                    band.name.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Order-statistic indices `(lower, upper)` for `b` sorted replicates.
pub fn quantile_indices(b: usize, level: f64) -> (usize, usize) {
    let span = (b - 1) as f64;
    let lo = (span * (1.0 - level) / 2.0).floor() as usize;
    let hi = ((span * (1.0 + level) / 2.0).ceil() as usize).min(b - 1);
    (lo, hi)
}

/// Pointwise percentile limits over `curves` (each of length `grid`).
pub fn percentile_band(curves: &[&[f64]], level: f64) -> (Vec<f64>, Vec<f64>) {
    let width = curves.first().map_or(0, |c| c.len());
    let (lo, hi) = quantile_indices(curves.len(), level);
    let mut column = vec![0.0; curves.len()];
    let mut lower = Vec::with_capacity(width);
    let mut upper = Vec::with_capacity(width);
    for k in 0..width {
        for (slot, c) in column.iter_mut().zip(curves) {
            *slot = c[k];
        }
        column.sort_by(f64::total_cmp);
        lower.push(column[lo]);
        upper.push(column[hi]);
    }
    (lower, upper)
}

pub fn bootstrap_bands(ds: &Dataset, model: &PathModel, cfg: &BootstrapConfig) -> Result<BootstrapBands> {
    if cfg.replicates < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::invalid("bootstrap level must lie in (0, 1)"));
    }
    let subjects: Vec<&Subject> = ds.subjects.iter().collect();
    let fit = fit_dpa_on(ds, &subjects, model)?;
    let grid = fit.times.clone();
    let n = subjects.len();

    let replicate = |b: usize| -> Result<Option<[Vec<f64>; 3]>> {
        let mut rng = rng::stream(cfg.seed, tags::BOOTSTRAP, b as u64);
        let sample: Vec<&Subject> = (0..n).map(|_| subjects[rng.random_range(0..n)]).collect();
        match fit_dpa_on(ds, &sample, model) {
            Ok(r) => Ok(Some(r.on_grid(&grid))),
            Err(Error::NoUsableEventTimes { .. }) => {
                log::warn!("bootstrap replicate {b} has no usable event times; discarded");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let results: Vec<Option<[Vec<f64>; 3]>> = rng::with_threads(cfg.threads, || {
        (0..cfg.replicates)
            .into_par_iter()
            .map(replicate)
            .collect::<Result<Vec<_>>>()
    })?;

    let kept: Vec<[Vec<f64>; 3]> = results.into_iter().flatten().collect();
    let discarded = cfg.replicates - kept.len();
    if discarded as f64 > MAX_DISCARD_FRACTION * cfg.replicates as f64 || kept.len() < 2 {
        return Err(Error::BootstrapFailed {
            discarded,
            total: cfg.replicates,
        });
    }

    let band = |which: usize, name: &str, point: &[f64]| {
        let curves: Vec<&[f64]> = kept.iter().map(|c| c[which].as_slice()).collect();
        let (lower, upper) = percentile_band(&curves, cfg.level);
        BandSet {
            name: name.to_string(),
            grid: grid.clone(),
            point: point.to_vec(),
            lower,
            upper,
            replicates: kept.len(),
            level: cfg.level,
            seed: cfg.seed,
        }
    };
    Ok(BootstrapBands {
        direct: band(0, "direct", &fit.direct),
        indirect: band(1, "indirect", &fit.indirect),
        total: band(2, "total", &fit.total),
        fit,
        discarded,
    })
}
