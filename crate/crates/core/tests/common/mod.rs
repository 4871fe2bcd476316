//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dynpath::{Dataset, MediatorSeries, Subject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse of a 2x2 matrix by the adjugate formula.
pub fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

/// Inverse of a 3x3 matrix by cofactors.
pub fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

/// Least squares through explicit `(XᵀX)⁻¹ Xᵀy` with 2 or 3 columns.
pub fn ls_explicit(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let q = rows[0].len();
    let mut xtx = vec![vec![0.0; q]; q];
    let mut xty = vec![0.0; q];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..q {
            xty[i] += r[i] * yi;
            for j in 0..q {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    let inv: Vec<Vec<f64>> = match q {
        2 => inv2([[xtx[0][0], xtx[0][1]], [xtx[1][0], xtx[1][1]]]).iter().map(|r| r.to_vec()).collect(),
        3 => inv3([
            [xtx[0][0], xtx[0][1], xtx[0][2]],
            [xtx[1][0], xtx[1][1], xtx[1][2]],
            [xtx[2][0], xtx[2][1], xtx[2][2]],
        ])
        .iter()
        .map(|r| r.to_vec())
        .collect(),
        _ => panic!("explicit inverse only for 2 or 3 columns"),
    };
    (0..q).map(|i| (0..q).map(|j| inv[i][j] * xty[j]).sum()).collect()
}

/// Least squares by Gauss-Jordan elimination with partial pivoting on the
/// normal equations; `None` when singular.
pub fn ls_gauss_jordan(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let q = rows[0].len();
    let mut a = vec![vec![0.0; q + 1]; q];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..q {
            a[i][q] += r[i] * yi;
            for j in 0..q {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    for col in 0..q {
        let piv = (col..q).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for i in 0..q {
            if i != col {
                let f = a[i][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[i].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    Some(a.iter().map(|r| r[q]).collect())
}

/// Last value measured strictly before `t`, by linear scan.
pub fn left_limit(series: &MediatorSeries, t: f64) -> Option<f64> {
    let mut out = None;
    for (s, v) in series.times.iter().zip(&series.values) {
        if *s < t {
            out = Some(*v);
        }
    }
    out
}

/// Nelson-Aalen estimate at every distinct event time, by direct counting.
pub fn nelson_aalen<'a>(subjects: impl IntoIterator<Item = &'a Subject> + Clone) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = subjects.clone().into_iter().filter(|s| s.event).map(|s| s.followup).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut acc = 0.0;
    times
        .into_iter()
        .map(|t| {
            let mut d = 0usize;
            let mut y = 0usize;
            for s in subjects.clone() {
                if s.followup >= t {
                    y += 1;
                }
                if s.event && s.followup == t {
                    d += 1;
                }
            }
            acc += d as f64 / y as f64;
            (t, acc)
        })
        .collect()
}

/// Step value of an oracle curve at `t` (0 before the first time).
pub fn step_at(curve: &[(f64, f64)], t: f64) -> f64 {
    curve.iter().take_while(|(s, _)| *s <= t).last().map_or(0.0, |(_, v)| *v)
}

pub struct RandomSpec {
    pub n: usize,
    pub baseline: usize,
    pub mediators: usize,
}

/// Small random dataset with tied follow-up times, binary treatment and
/// mediators measured from time 0 onwards.
pub fn random_dataset(seed: u64, spec: RandomSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let subjects: Vec<Subject> = (0..spec.n)
            .map(|i| {
                let followup = rng.random_range(1..=12) as f64 / 4.0;
                let treatment = if i % 2 == 0 { 1.0 } else { 0.0 };
                let baseline = (0..spec.baseline).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mediators = (0..spec.mediators)
                    .map(|_| {
                        let mut times = vec![0.0];
                        let extra = rng.random_range(0..4);
                        for _ in 0..extra {
                            let last = *times.last().unwrap();
                            times.push(last + rng.random_range(1..=4) as f64 / 8.0);
                        }
                        let values = times
                            .iter()
                            .map(|_| treatment * 0.7 + rng.random_range(-1.0..1.0))
                            .collect();
                        MediatorSeries { times, values }
                    })
                    .collect();
                Subject {
                    id: format!("s{i}"),
                    treatment,
                    baseline,
                    mediators,
                    followup,
                    event: rng.random_bool(0.7),
                }
            })
            .collect();
        if subjects.iter().any(|s| s.event) {
            let names = (1..=spec.baseline).map(|j| format!("z_{j}")).collect();
            let meds = if spec.mediators == 1 {
                vec!["med_value".to_string()]
            } else {
                (1..=spec.mediators).map(|j| format!("med_{j}")).collect()
            };
            return Dataset::new(subjects, "treatment", names, meds).unwrap();
        }
    }
}

/// The hand-worked example: two subjects per arm, events at t = 1 and t = 2.
pub fn four_subjects() -> Dataset {
    let s = |id: &str, x: f64, med: &[(f64, f64)], f: f64, e: bool| Subject::new(id, x, vec![], med, f, e).unwrap();
    Dataset::with_default_names(vec![
        s("a", 1.0, &[(0.0, 2.0)], 1.0, true),
        s("b", 1.0, &[(0.0, 1.0), (0.5, 3.0)], 3.0, false),
        s("c", 0.0, &[(0.0, 0.5)], 2.0, true),
        s("d", 0.0, &[(0.0, 1.5), (1.5, 2.5)], 4.0, false),
    ])
    .unwrap()
}

/// Explicit-inversion oracle for the four-subject example: per event time,
/// the hazard increments `(intercept, treatment, mediator)` and the
/// mediator-on-treatment coefficients `(intercept, treatment)`.
pub fn four_subject_oracle() -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    // t = 1: rows a, b, c, d with mediator left limits 2, 3, 0.5, 1.5
    let l1 = vec![
        vec![1.0, 1.0, 2.0],
        vec![1.0, 1.0, 3.0],
        vec![1.0, 0.0, 0.5],
        vec![1.0, 0.0, 1.5],
    ];
    let dn1 = [1.0, 0.0, 0.0, 0.0];
    // t = 2: rows b, c, d; d's measurement at 1.5 is now visible
    let l2 = vec![vec![1.0, 1.0, 3.0], vec![1.0, 0.0, 0.5], vec![1.0, 0.0, 2.5]];
    let dn2 = [0.0, 1.0, 0.0];
    let edge = |l: &[Vec<f64>]| {
        let rows: Vec<Vec<f64>> = l.iter().map(|r| vec![r[0], r[1]]).collect();
        let y: Vec<f64> = l.iter().map(|r| r[2]).collect();
        ls_explicit(&rows, &y)
    };
    vec![
        (1.0, ls_explicit(&l1, &dn1), edge(&l1)),
        (2.0, ls_explicit(&l2, &dn2), edge(&l2)),
    ]
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
