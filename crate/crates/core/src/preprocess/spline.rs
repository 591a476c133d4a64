use crate::error::{Error, Result};

/// Natural cubic interpolating spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    knots: Vec<f64>,
    values: Vec<f64>,
    second_derivatives: Vec<f64>,
}

/// Fits the natural cubic spline through `(times[i], values[i])`.
///
/// Needs at least two strictly increasing knots; with exactly two the result
/// is the straight line through them.
pub fn spline_fit(times: &[f64], values: &[f64]) -> Result<SplineModel> {
    let n = times.len();
    if n != values.len() {
        return Err(Error::contract(format!("spline: {n} knots but {} values", values.len())));
    }
    if n < 2 {
        return Err(Error::contract(format!("spline: need at least 2 knots, got {n}")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::contract("spline: knot times must be strictly increasing"));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::contract("spline: non-finite knot"));
    }

    let mut m = vec![0.0; n];
    if n > 2 {
        // Thomas algorithm on the (n-2)×(n-2) interior system
        let k = n - 2;
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h[i + 1] - (values[i + 1] - values[i]) / h[i]);
        }
        // sub-diagonal entry for row i is h[i], super-diagonal is h[i+1]
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    Ok(SplineModel {
        knots: times.to_vec(),
        values: values.to_vec(),
        second_derivatives: m,
    })
}

impl SplineModel {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.second_derivatives
    }

    fn interval(&self, x: f64) -> usize {
        let i = self.knots.partition_point(|&k| k <= x);
        i.clamp(1, self.knots.len() - 1) - 1
    }

    /// Spline value; outside the knot range the nearest end value is held.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return self.values[0];
        }
        if x >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let i = self.interval(x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second_derivatives[i], self.second_derivatives[i + 1]);
        let h = x1 - x0;
        let a = x1 - x;
        let b = x - x0;
        m0 * a * a * a / (6.0 * h) + m1 * b * b * b / (6.0 * h) + (y0 / h - m0 * h / 6.0) * a + (y1 / h - m1 * h / 6.0) * b
    }

    /// Second derivative inside the knot range (piecewise linear).
    pub fn second_derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let x = x.clamp(self.knots[0], self.knots[n - 1]);
        let i = self.interval(x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let t = (x - x0) / (x1 - x0);
        self.second_derivatives[i] * (1.0 - t) + self.second_derivatives[i + 1] * t
    }
}
