//! Dense least squares through the normal equations.
//!
//! The normal matrix is factorized as `L D Lᵀ` without square roots, so a
//! column scaled by a power of two scales its coefficient by the reciprocal
//! exactly. A pivot `D_j` is accepted when it exceeds `PIVOT_TOL` times the
//! diagonal entry it was reduced from; otherwise the system is reported as
//! rank deficient.

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-10;

/// Row-major dense design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut d = Self::new(cols);
        for r in rows {
            d.push_row(r)?;
        }
        Ok(d)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::invalid(format!(
                "row has {} entries, design has {} columns",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `designᵀ v`.
    pub fn t_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &y) in self.iter_rows().zip(v) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x * y;
            }
        }
        out
    }

    /// `design · b`.
    pub fn mul(&self, b: &[f64]) -> Vec<f64> {
        self.iter_rows()
            .map(|row| row.iter().zip(b).map(|(x, c)| x * c).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub design: Design,
    pub response: Vec<f64>,
}

impl LinearSystem {
    pub fn new(design: Design, response: Vec<f64>) -> Result<Self> {
        if design.rows() != response.len() {
            return Err(Error::invalid("design and response differ in length"));
        }
        if design.cols() == 0 {
            return Err(Error::invalid("design has no columns"));
        }
        if design.data.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in linear system"));
        }
        Ok(Self { design, response })
    }

    fn normal_equations(&self) -> NormalEquations {
        let mut ne = NormalEquations::new(self.design.cols());
        for (row, &y) in self.design.iter_rows().zip(&self.response) {
            ne.add(row, y);
        }
        ne
    }
}

/// Incrementally accumulated `XᵀX` (lower triangle) and `Xᵀy`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    q: usize,
    n: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    yy: f64,
}

impl NormalEquations {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            n: 0,
            gram: vec![0.0; q * q],
            rhs: vec![0.0; q],
            yy: 0.0,
        }
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.q);
        let q = self.q;
        for i in 0..q {
            let xi = x[i];
            let row = &mut self.gram[i * q..i * q + i + 1];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += xi * xj;
            }
            self.rhs[i] += xi * y;
        }
        self.yy += y * y;
        self.n += 1;
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.q
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        if self.n < self.q {
            return Err(Error::Underdetermined {
                rows: self.n,
                cols: self.q,
            });
        }
        Ok(self.factor()?.solve(&self.rhs))
    }

    /// Solve and attach classical OLS standard errors.
    pub fn fit(&self) -> Result<OlsFit> {
        let coefficients = self.solve()?;
        let ldl = self.factor()?;
        // RSS = yᵀy − bᵀXᵀy at the normal-equation solution
        let rss = (self.yy - dot(&coefficients, &self.rhs)).max(0.0);
        let dof = self.n.saturating_sub(self.q);
        let residual_variance = if dof > 0 { rss / dof as f64 } else { f64::NAN };
        let std_errors = (0..self.q)
            .map(|j| {
                let mut e = vec![0.0; self.q];
                e[j] = 1.0;
                (residual_variance * ldl.solve(&e)[j]).sqrt()
            })
            .collect();
        Ok(OlsFit {
            coefficients,
            std_errors,
            residual_variance,
            rows: self.n,
        })
    }

    fn factor(&self) -> Result<Ldl> {
        Ldl::factor(&self.gram, self.q).ok_or(Error::RankDeficient)
    }

    pub fn full_rank(&self) -> bool {
        Ldl::factor(&self.gram, self.q).is_some()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Ldl {
    q: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl Ldl {
    /// Factor the symmetric matrix whose lower triangle is stored in `a`.
    fn factor(a: &[f64], q: usize) -> Option<Self> {
        let mut l = vec![0.0; q * q];
        let mut d = vec![0.0; q];
        for j in 0..q {
            let ajj = a[j * q + j];
            let mut dj = ajj;
            for k in 0..j {
                dj -= l[j * q + k] * l[j * q + k] * d[k];
            }
            if !(ajj > 0.0) || !(dj > PIVOT_TOL * ajj) {
                return None;
            }
            d[j] = dj;
            l[j * q + j] = 1.0;
            for i in j + 1..q {
                let mut v = a[i * q + j];
                for k in 0..j {
                    v -= l[i * q + k] * l[j * q + k] * d[k];
                }
                l[i * q + j] = v / dj;
            }
        }
        Some(Self { q, l, d })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut z = b.to_vec();
        for i in 0..q {
            for k in 0..i {
                z[i] -= self.l[i * q + k] * z[k];
            }
        }
        for (zi, di) in z.iter_mut().zip(&self.d) {
            *zi /= di;
        }
        for i in (0..q).rev() {
            for k in i + 1..q {
                z[i] -= self.l[k * q + i] * z[k];
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residual_variance: f64,
    pub rows: usize,
}

/// Least-squares coefficients; `RankDeficient` when a pivot falls below tolerance.
pub fn ols(sys: &LinearSystem) -> Result<Vec<f64>> {
    sys.normal_equations().solve()
}

pub fn ols_fit(sys: &LinearSystem) -> Result<OlsFit> {
    sys.normal_equations().fit()
}

pub fn rank_check(design: &Design) -> bool {
    let mut ne = NormalEquations::new(design.cols());
    for row in design.iter_rows() {
        ne.add(row, 0.0);
    }
    ne.full_rank()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn system(rows: &[Vec<f64>], y: &[f64]) -> LinearSystem {
        LinearSystem::new(Design::from_rows(rows).unwrap(), y.to_vec()).unwrap()
    }

    #[test]
    fn mean_of_constant() {
        let b = ols(&system(&vec![vec![1.0]; 4], &[3.0; 4])).unwrap();
        assert_eq!(b, vec![3.0]);
    }

    #[test]
    fn exact_line() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let b = ols(&system(&rows, &[1.0, 3.0, 5.0])).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_inversion_oracle() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let y = [1.0, 2.0, 4.0];
        // XᵀX = [[3,3],[3,5]], Xᵀy = [7,10]; explicit inverse 1/6 [[5,-3],[-3,3]]
        let expected: [f64; 2] = [(5.0 * 7.0 - 3.0 * 10.0) / 6.0, (-3.0 * 7.0 + 3.0 * 10.0) / 6.0];
        assert!((expected[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((expected[1] - 1.5).abs() < 1e-15);
        let b = ols(&system(&rows, &y)).unwrap();
        assert!((b[0] - expected[0]).abs() < 1e-14);
        assert!((b[1] - expected[1]).abs() < 1e-14);
    }

    #[test]
    fn rank_checks() {
        let dup = Design::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert!(!rank_check(&dup));
        let ortho = Design::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(rank_check(&ortho));
        let const_med =
            Design::from_rows(&[vec![1.0, 11.3], vec![1.0, 11.3], vec![1.0, 11.3], vec![1.0, 11.3]]).unwrap();
        assert!(!rank_check(&const_med));
        let zero_col = Design::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(!rank_check(&zero_col));
    }

    #[test]
    fn rank_deficient_and_underdetermined_errors() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        assert!(matches!(ols(&system(&rows, &[1.0, 2.0, 3.0])), Err(Error::RankDeficient)));
        let rows = vec![vec![1.0, 2.0]];
        assert!(matches!(
            ols(&system(&rows, &[1.0])),
            Err(Error::Underdetermined { rows: 1, cols: 2 })
        ));
        assert!(LinearSystem::new(Design::from_rows(&[vec![f64::NAN]]).unwrap(), vec![1.0]).is_err());
    }

    #[test]
    fn standard_errors_match_closed_form_slope() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.1, 0.9, 2.2, 2.8, 4.1];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let fit = ols_fit(&system(&rows, &ys)).unwrap();
        let n = xs.len() as f64;
        let xbar = xs.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        let resid: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - fit.coefficients[0] - fit.coefficients[1] * x).powi(2))
            .sum();
        let se = (resid / (n - 2.0) / sxx).sqrt();
        assert!((fit.std_errors[1] - se).abs() < 1e-12);
    }

    #[test]
    fn power_of_two_scaling_is_exact() {
        let rows = vec![
            vec![1.0, 0.3, 2.0],
            vec![1.0, -1.2, 0.5],
            vec![1.0, 0.7, -0.25],
            vec![1.0, 2.1, 1.0],
            vec![1.0, -0.4, 3.5],
        ];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        let b = ols(&system(&rows, &y)).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1] * 4.0, r[2]]).collect();
        let bs = ols(&system(&scaled, &y)).unwrap();
        assert_eq!(bs[1], b[1] / 4.0);
        assert_eq!(bs[0], b[0]);
        assert_eq!(bs[2], b[2]);
    }

    fn random_system() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..5).prop_flat_map(|q| {
            (q + 1..q + 20).prop_flat_map(move |n| {
                (
                    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, q), n),
                    prop::collection::vec(-5.0f64..5.0, n),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_design((rows, y) in random_system()) {
            let sys = system(&rows, &y);
            if let Ok(b) = ols(&sys) {
                let fitted = sys.design.mul(&b);
                let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
                let g = sys.design.t_mul(&resid);
                let scale = sys.design.t_mul(&y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let cond_ok = g.iter().all(|v| v.abs() <= 1e-8 * scale.max(1.0));
                prop_assert!(cond_ok, "{g:?}");
            }
        }

        #[test]
        fn row_permutation_invariant((rows, y) in random_system(), seed in 0u64..1000) {
            let sys = system(&rows, &y);
            if let Ok(b) = ols(&sys) {
                let mut idx: Vec<usize> = (0..rows.len()).collect();
                // deterministic shuffle
                let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
                for i in (1..idx.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    idx.swap(i, (s >> 33) as usize % (i + 1));
                }
                let prow: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
                let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                let bp = ols(&system(&prow, &py)).unwrap();
                for (a, c) in b.iter().zip(&bp) {
                    prop_assert!((a - c).abs() <= 1e-8 * (1.0 + a.abs()));
                }
            }
        }

        #[test]
        fn duplicating_all_rows_keeps_solution((rows, y) in random_system()) {
            let sys = system(&rows, &y);
            if let Ok(b) = ols(&sys) {
                let drows: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
                let dy: Vec<f64> = y.iter().chain(&y).copied().collect();
                let bd = ols(&system(&drows, &dy)).unwrap();
                for (a, c) in b.iter().zip(&bd) {
                    prop_assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()) * 100.0);
                }
            }
        }
    }
}
