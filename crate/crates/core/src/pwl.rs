//! Continuous piecewise-linear functions on a closed interval `[0, upper]`
//! and their piecewise-constant derivatives.
//!
//! Every operation is exact on the breakpoint grid: results are built from
//! the union of the operands' breakpoints (plus crossing points for
//! [`PwlFunction::max_with_identity`]), never by sampling. Breakpoints closer
//! than [`DEDUP_RELATIVE`]` * upper` are merged, keeping the left one.

use std::fmt::Write as _;

/// Relative distance below which two breakpoints are treated as one.
pub const DEDUP_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PwlError {
    #[error("domain upper bound must be positive and finite, got {0}")]
    InvalidDomain(f64),
    #[error("domain mismatch: [0, {0}] vs [0, {1}]")]
    DomainMismatch(f64, f64),
    #[error("breakpoints must start at 0, end at the upper bound and strictly increase")]
    InvalidBreakpoints,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in piecewise function")]
    NonFinite,
    #[error("function never meets the identity line on [0, {0}]")]
    NoFixedPoint(f64),
}

fn check_upper(upper: f64) -> Result<(), PwlError> {
    if upper.is_finite() && upper > 0.0 {
        Ok(())
    } else {
        Err(PwlError::InvalidDomain(upper))
    }
}

fn same_domain(a: f64, b: f64) -> Result<(), PwlError> {
    if (a - b).abs() <= DEDUP_RELATIVE * a.max(b) {
        Ok(())
    } else {
        Err(PwlError::DomainMismatch(a, b))
    }
}

/// Union of two breakpoint grids over the same domain with near-duplicates
/// merged. Both endpoints are preserved exactly.
fn merge_grids(a: &[f64], b: &[f64]) -> Vec<f64> {
    let upper = *a.last().expect("grid is never empty");
    let tol = DEDUP_RELATIVE * upper;
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let x = if j == b.len() || (i < a.len() && a[i] <= b[j]) {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1]
        };
        match out.last() {
            Some(&last) if x - last <= tol => {}
            _ => out.push(x),
        }
    }
    // the right endpoint wins over an interior point that crowded it
    if let Some(last) = out.last_mut() {
        *last = upper;
    }
    out
}

/// Continuous piecewise-linear function given by its values at breakpoints
/// `0 = x_0 < x_1 < ... < x_k = upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PwlFunction {
    /// `slope * m + intercept` on `[0, upper]`, a single piece.
    pub fn affine(slope: f64, intercept: f64, upper: f64) -> Result<Self, PwlError> {
        check_upper(upper)?;
        Self::from_points(vec![0.0, upper], vec![intercept, slope * upper + intercept])
    }

    pub fn identity(upper: f64) -> Result<Self, PwlError> {
        Self::affine(1.0, 0.0, upper)
    }

    pub fn constant(value: f64, upper: f64) -> Result<Self, PwlError> {
        Self::affine(0.0, value, upper)
    }

    /// Builds a function from explicit breakpoints and values.
    pub fn from_points(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, PwlError> {
        if xs.len() != ys.len() {
            return Err(PwlError::LengthMismatch { expected: xs.len(), got: ys.len() });
        }
        if xs.len() < 2 || xs[0] != 0.0 || xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PwlError::InvalidBreakpoints);
        }
        check_upper(xs[xs.len() - 1])?;
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(PwlError::NonFinite);
        }
        Ok(Self { xs, ys })
    }

    pub fn upper(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn pieces(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    /// Value at `m`; arguments outside the domain are clamped to it.
    pub fn eval(&self, m: f64) -> f64 {
        let m = m.clamp(0.0, self.upper());
        // first breakpoint strictly greater than m
        let hi = self.xs.partition_point(|&x| x <= m).min(self.xs.len() - 1);
        let lo = hi - 1;
        if m == self.xs[lo] {
            return self.ys[lo];
        }
        let t = (m - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + t * (self.ys[hi] - self.ys[lo])
    }

    /// Slope of every piece.
    pub fn slopes(&self) -> Vec<f64> {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect()
    }

    pub fn add(&self, other: &Self) -> Result<Self, PwlError> {
        same_domain(self.upper(), other.upper())?;
        let xs = merge_grids(&self.xs, &other.xs);
        let ys = xs.iter().map(|&x| self.eval(x) + other.eval(x)).collect();
        Ok(Self { xs, ys })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { xs: self.xs.clone(), ys: self.ys.iter().map(|y| c * y).collect() }
    }

    pub fn add_const(&self, c: f64) -> Self {
        Self { xs: self.xs.clone(), ys: self.ys.iter().map(|y| y + c).collect() }
    }

    /// Pointwise `max(f(m), m)`. Crossings with the identity line become
    /// breakpoints and runs of pieces lying on the identity are fused.
    pub fn max_with_identity(&self) -> Self {
        let tol = DEDUP_RELATIVE * self.upper();
        let mut xs = Vec::with_capacity(self.xs.len() + 1);
        let mut ys = Vec::with_capacity(self.xs.len() + 1);
        xs.push(self.xs[0]);
        ys.push(self.ys[0].max(self.xs[0]));
        for i in 0..self.pieces() {
            let (x0, x1) = (self.xs[i], self.xs[i + 1]);
            let (d0, d1) = (self.ys[i] - x0, self.ys[i + 1] - x1);
            if (d0 > 0.0 && d1 < 0.0) || (d0 < 0.0 && d1 > 0.0) {
                let cross = x0 + d0 / (d0 - d1) * (x1 - x0);
                if cross - x0 > tol && x1 - cross > tol {
                    xs.push(cross);
                    ys.push(cross);
                }
            }
            xs.push(x1);
            ys.push(self.ys[i + 1].max(x1));
        }
        fuse_identity_runs(xs, ys)
    }

    /// Piecewise-constant derivative.
    pub fn derivative(&self) -> PwcFunction {
        PwcFunction { xs: self.xs.clone(), values: self.slopes() }
    }

    /// Smallest `m` with `f(m) = m`, assuming `f(m) >= m` on the whole domain.
    ///
    /// The scan stops at the first breakpoint where `f` touches the identity
    /// (within `1e-12 * upper`), or at the crossing inside the first piece
    /// that ends below it.
    pub fn first_fixed_point(&self) -> Result<f64, PwlError> {
        let tol = DEDUP_RELATIVE * self.upper().max(1.0);
        let gap = |i: usize| self.ys[i] - self.xs[i];
        if gap(0) <= tol {
            return Ok(0.0);
        }
        for i in 0..self.pieces() {
            let (d0, d1) = (gap(i), gap(i + 1));
            if d1.abs() <= tol {
                return Ok(self.xs[i + 1]);
            }
            if d1 < 0.0 {
                return Ok(self.xs[i] + d0 / (d0 - d1) * (self.xs[i + 1] - self.xs[i]));
            }
        }
        Err(PwlError::NoFixedPoint(self.upper()))
    }

    /// One line per piece: `x_left x_right value_left value_right`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for i in 0..self.pieces() {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                self.xs[i],
                self.xs[i + 1],
                self.ys[i],
                self.ys[i + 1]
            );
        }
        out
    }
}

fn fuse_identity_runs(xs: Vec<f64>, ys: Vec<f64>) -> PwlFunction {
    let on_identity = |i: usize| ys[i] == xs[i];
    let mut out_x = Vec::with_capacity(xs.len());
    let mut out_y = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let interior = i > 0 && i + 1 < xs.len();
        if interior && on_identity(i - 1) && on_identity(i) && on_identity(i + 1) {
            continue;
        }
        out_x.push(xs[i]);
        out_y.push(ys[i]);
    }
    PwlFunction { xs: out_x, ys: out_y }
}

/// Piecewise-constant function: one value per piece of a breakpoint grid.
/// Values at the breakpoints themselves are left unspecified.
#[derive(Debug, Clone, PartialEq)]
pub struct PwcFunction {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl PwcFunction {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self, PwlError> {
        if xs.len() < 2 || xs[0] != 0.0 || xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PwlError::InvalidBreakpoints);
        }
        check_upper(xs[xs.len() - 1])?;
        if values.len() + 1 != xs.len() {
            return Err(PwlError::LengthMismatch { expected: xs.len() - 1, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PwlError::NonFinite);
        }
        Ok(Self { xs, values })
    }

    pub fn constant(value: f64, upper: f64) -> Result<Self, PwlError> {
        check_upper(upper)?;
        Self::new(vec![0.0, upper], vec![value])
    }

    pub fn upper(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of the piece containing `m` (right-continuous; the last piece
    /// also covers `upper`).
    pub fn eval(&self, m: f64) -> f64 {
        let idx = self.xs.partition_point(|&x| x <= m).clamp(1, self.values.len());
        self.values[idx - 1]
    }

    pub fn multiply(&self, other: &Self) -> Result<Self, PwlError> {
        same_domain(self.upper(), other.upper())?;
        let xs = merge_grids(&self.xs, &other.xs);
        let values = xs
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                self.eval(mid) * other.eval(mid)
            })
            .collect();
        Ok(Self { xs, values })
    }

    /// `h(m) = ∫_m^upper a(k) dk`, so `h(upper) = 0`.
    pub fn integrate_to_upper(&self) -> PwlFunction {
        let mut ys = vec![0.0; self.xs.len()];
        for i in (0..self.values.len()).rev() {
            ys[i] = ys[i + 1] + self.values[i] * (self.xs[i + 1] - self.xs[i]);
        }
        PwlFunction { xs: self.xs.clone(), ys }
    }
}
