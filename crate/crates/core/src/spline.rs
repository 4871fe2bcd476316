//! Natural cubic interpolating splines.
//!
//! Used for the time-varying coefficient functions of the simulator. Outside
//! the knot range the spline is extended by the endpoint value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knot times and values as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineSpec", into = "SplineSpec")]
pub struct SplineFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    second_derivatives: Vec<f64>,
}

impl TryFrom<SplineSpec> for SplineFunction {
    type Error = Error;

    fn try_from(spec: SplineSpec) -> Result<Self> {
        SplineFunction::build(&spec.times, &spec.values)
    }
}

impl From<SplineFunction> for SplineSpec {
    fn from(f: SplineFunction) -> Self {
        SplineSpec {
            times: f.knots,
            values: f.values,
        }
    }
}

impl SplineFunction {
    /// Natural cubic spline through `(knots[i], values[i])`.
    pub fn build(knots: &[f64], values: &[f64]) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::invalid(format!(
                "spline has {} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::invalid("spline needs at least two knots"));
        }
        if knots.iter().chain(values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite spline knot or value"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("spline knots must be strictly increasing"));
        }
        Ok(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second_derivatives: natural_second_derivatives(knots, values),
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::build(&[0.0, 1.0], &[c, c]).expect("constant spline")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.second_derivatives
    }

    fn segment(&self, t: f64) -> usize {
        // index i with knots[i] <= t < knots[i+1], clamped to the last segment
        let n = self.knots.len();
        self.knots.partition_point(|&k| k <= t).clamp(1, n - 1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if t <= self.knots[0] {
            return self.values[0];
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second_derivatives[i]
                + (b * b * b - b) * self.second_derivatives[i + 1])
                * h
                * h
                / 6.0
    }

    /// Integral of the segment polynomial `i` from its left knot to `knots[i] + u`.
    fn segment_integral(&self, i: usize, u: f64) -> f64 {
        let h = self.knots[i + 1] - self.knots[i];
        let b = u / h;
        let a = 1.0 - b;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second_derivatives[i], self.second_derivatives[i + 1]);
        y0 * (u - u * u / (2.0 * h))
            + y1 * u * u / (2.0 * h)
            + h * h * h / 6.0
                * (-m0 * (a.powi(4) / 4.0 - a * a / 2.0 + 0.25) + m1 * (b.powi(4) / 4.0 - b * b / 2.0))
    }

    /// Exact integral over `[0, t]` including the constant extensions.
    pub fn integral_to(&self, t: f64) -> f64 {
        self.antiderivative(t) - self.antiderivative(0.0)
    }

    /// Exact integral over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }

    // Antiderivative anchored at the first knot.
    fn antiderivative(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let first = self.knots[0];
        if t <= first {
            return self.values[0] * (t - first);
        }
        let end = t.min(self.knots[n - 1]);
        let seg = self.segment(end);
        let mut acc = 0.0;
        for i in 0..seg {
            acc += self.segment_integral(i, self.knots[i + 1] - self.knots[i]);
        }
        acc += self.segment_integral(seg, end - self.knots[seg]);
        if t > self.knots[n - 1] {
            acc += self.values[n - 1] * (t - self.knots[n - 1]);
        }
        acc
    }
}

/// Second derivatives at the knots with zero curvature at both ends
/// (tridiagonal system solved by forward elimination / back substitution).
fn natural_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for k in 0..inner {
        let i = k + 1;
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[k] = 2.0 * (h0 + h1);
        upper[k] = h1;
        rhs[k] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for k in 1..inner {
        let lower = x[k + 1] - x[k];
        let w = lower / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    m[inner] = rhs[inner - 1] / diag[inner - 1];
    for k in (0..inner - 1).rev() {
        m[k + 1] = (rhs[k] - upper[k] * m[k + 2]) / diag[k];
    }
    m
}
