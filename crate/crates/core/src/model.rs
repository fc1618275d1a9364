//! Network parameters, activations and the delay phase space.
//!
//! The state equation is
//!
//! ```text
//! du = [-C u + H f(u) + B g(u_delayed)] dt + Sigma (u ⋄ dW),
//! ```
//!
//! where component `j` of `u_delayed` is `u_j(t - tau_j)` and `(u ⋄ dW)_j = u_j dW_j`.
//! History segments live on a uniform grid over `[-tau, 0]` and are linearly
//! interpolated between nodes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{grid_steps, is_diagonal, spectral_norm};

/// Half-width of the sampling window used for the numerical Lipschitz estimate of `g - L`.
pub const LGTILDE_SAMPLE_HALF_WIDTH: f64 = 10.0;
/// Number of sample points for the numerical Lipschitz estimate of `g - L`.
pub const LGTILDE_SAMPLE_POINTS: usize = 10_000;

/// Piecewise-linear scalar function given by nodes `(xs[i], ys[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let table = Table { xs, ys };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        if self.xs.len() != self.ys.len() || self.xs.len() < 2 {
            return Err(Error::config(
                "activation table needs at least two (x, y) pairs of equal length",
            ));
        }
        if self.xs.iter().chain(&self.ys).any(|v| !v.is_finite()) {
            return Err(Error::config("activation table contains non-finite values"));
        }
        if self.xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("activation table abscissae must be strictly increasing"));
        }
        Ok(())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    // Index of the cell [xs[i], xs[i+1]] containing x (x assumed in range).
    fn cell(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&node| node <= x);
        i.saturating_sub(1).min(self.xs.len() - 2)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&x) {
            return Err(Error::Domain {
                what: "activation argument",
                value: x,
                lo,
                hi,
            });
        }
        let i = self.cell(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let w = (x - x0) / (x1 - x0);
        Ok(self.ys[i] * (1.0 - w) + self.ys[i + 1] * w)
    }

    /// Slope of the cell containing `x`; at an interior node the right cell is used.
    pub fn slope(&self, x: f64) -> f64 {
        let i = self.cell(x);
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    fn max_slope(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    // Average of the one-sided slopes at x.
    fn central_slope(&self, x: f64) -> f64 {
        let right = self.slope(x);
        let i = self.xs.partition_point(|&node| node < x);
        if i > 0 && i < self.xs.len() && self.xs[i] == x {
            let left = (self.ys[i] - self.ys[i - 1]) / (self.xs[i] - self.xs[i - 1]);
            0.5 * (left + right)
        } else {
            right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationKind {
    Tanh,
    CustomTable { f: Table, g: Table },
}

/// Selects the instantaneous (`F`) or delayed (`G`) activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    F,
    G,
}

/// Componentwise activations `f`, `g` with their Lipschitz data.
#[derive(Clone, Debug)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub lipschitz_f: f64,
    pub lipschitz_g: f64,
    /// Componentwise bound `M` on `|f|` and `|g|`.
    pub bound: f64,
    /// Linear part `L` of `g`.
    pub linear_part: DMatrix<f64>,
    /// Numerical Lipschitz constant of `g - L`.
    pub lipschitz_g_tilde: f64,
}

impl ActivationSpec {
    pub fn tanh(n: usize) -> Self {
        let mut spec = ActivationSpec {
            kind: ActivationKind::Tanh,
            lipschitz_f: 1.0,
            lipschitz_g: 1.0,
            bound: 1.0,
            linear_part: DMatrix::identity(n, n),
            lipschitz_g_tilde: 0.0,
        };
        spec.lipschitz_g_tilde = spec.estimate_lipschitz_g_tilde();
        spec
    }

    /// Table-driven activation. Declared constants are cross-checked against
    /// the tables; each violation produces a warning string (also logged).
    pub fn custom_table(
        n: usize,
        f: Table,
        g: Table,
        lipschitz_f: f64,
        lipschitz_g: f64,
        bound: f64,
        linear_part: Option<DMatrix<f64>>,
    ) -> Result<(Self, Vec<String>)> {
        f.check()?;
        g.check()?;
        if !(bound > 0.0) || !(lipschitz_f >= 0.0) || !(lipschitz_g >= 0.0) {
            return Err(Error::config(
                "activation constants need bound > 0 and non-negative Lipschitz constants",
            ));
        }
        for (name, table) in [("f", &f), ("g", &g)] {
            let (lo, hi) = table.range();
            if !(lo <= 0.0 && 0.0 <= hi) {
                return Err(Error::config(format!("table {name} does not cover 0")));
            }
            let at_zero = table.eval(0.0)?;
            if at_zero != 0.0 {
                return Err(Error::config(format!(
                    "table {name} must vanish at 0 (got {at_zero})"
                )));
            }
        }
        let linear_part = match linear_part {
            Some(l) if l.nrows() != n || l.ncols() != n => {
                return Err(Error::config("linear_part must be n x n"));
            }
            Some(l) => l,
            None => DMatrix::from_diagonal_element(n, n, g.central_slope(0.0)),
        };

        let mut warnings = Vec::new();
        for (name, table, declared) in [("f", &f, lipschitz_f), ("g", &g, lipschitz_g)] {
            let sampled = table.max_slope();
            if sampled > declared * (1.0 + 1e-12) {
                warnings.push(format!(
                    "declared Lipschitz constant {declared} of {name} is below the tabulated slope {sampled}"
                ));
            }
            let peak = table.ys.iter().fold(0.0_f64, |acc, y| acc.max(y.abs()));
            if peak > bound {
                warnings.push(format!(
                    "declared bound {bound} is below max |{name}| = {peak} on the table"
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        let mut spec = ActivationSpec {
            kind: ActivationKind::CustomTable { f, g },
            lipschitz_f,
            lipschitz_g,
            bound,
            linear_part,
            lipschitz_g_tilde: 0.0,
        };
        spec.lipschitz_g_tilde = spec.estimate_lipschitz_g_tilde();
        Ok((spec, warnings))
    }

    pub fn evaluate(&self, x: &DVector<f64>, which: Which) -> Result<DVector<f64>> {
        match &self.kind {
            ActivationKind::Tanh => Ok(x.map(f64::tanh)),
            ActivationKind::CustomTable { f, g } => {
                let table = match which {
                    Which::F => f,
                    Which::G => g,
                };
                let mut out = DVector::zeros(x.len());
                for (o, &xi) in out.iter_mut().zip(x.iter()) {
                    *o = table.eval(xi)?;
                }
                Ok(out)
            }
        }
    }

    fn g_derivative(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::CustomTable { g, .. } => g.slope(x),
        }
    }

    /// `sup_x ||Dg(x·1) - L||_2` over a dense sample of `[-10, 10]`
    /// (clipped to the table range for tabulated `g`).
    pub fn estimate_lipschitz_g_tilde(&self) -> f64 {
        let (mut lo, mut hi) = (-LGTILDE_SAMPLE_HALF_WIDTH, LGTILDE_SAMPLE_HALF_WIDTH);
        if let ActivationKind::CustomTable { g, .. } = &self.kind {
            let (a, b) = g.range();
            lo = lo.max(a);
            hi = hi.min(b);
        }
        let n = self.linear_part.nrows();
        let diagonal_l = is_diagonal(&self.linear_part);
        let mut sup = 0.0_f64;
        for i in 0..LGTILDE_SAMPLE_POINTS {
            let x = lo + (hi - lo) * i as f64 / (LGTILDE_SAMPLE_POINTS - 1) as f64;
            let d = self.g_derivative(x);
            let gap = if diagonal_l {
                (0..n)
                    .map(|j| (d - self.linear_part[(j, j)]).abs())
                    .fold(0.0, f64::max)
            } else {
                spectral_norm(&(DMatrix::from_diagonal_element(n, n, d) - &self.linear_part))
            };
            sup = sup.max(gap);
        }
        sup
    }

    /// The closed-form value `L_g - ||L||` (reported alongside the numerical estimate).
    pub fn lipschitz_g_tilde_formula(&self) -> f64 {
        self.lipschitz_g - spectral_norm(&self.linear_part)
    }
}

pub fn evaluate_activation(
    spec: &ActivationSpec,
    x: &DVector<f64>,
    which: Which,
) -> Result<DVector<f64>> {
    spec.evaluate(x, which)
}

#[derive(Clone, Debug)]
pub struct NetworkParams {
    /// Diagonal reset-velocity matrix.
    pub c: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Per-component delays `tau_j`.
    pub delays: Vec<f64>,
    pub activation: ActivationSpec,
}

impl NetworkParams {
    pub fn new(
        c: DMatrix<f64>,
        h: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma: DMatrix<f64>,
        delays: Vec<f64>,
        activation: ActivationSpec,
    ) -> Result<Self> {
        let params = NetworkParams {
            c,
            h,
            b,
            sigma,
            delays,
            activation,
        };
        let issues = structural_issues(&params);
        if issues.is_empty() {
            Ok(params)
        } else {
            Err(Error::Config(issues.join("; ")))
        }
    }

    /// Two-neuron tanh network with `tau_1 = tau_2 = 0.1`:
    /// `C = diag(5, 5)`, `H = [[0.2, 0.1], [0.3, 0.1]]`, `B = [[-0.3, 0.2], [0.1, 0.3]]`,
    /// `Sigma = diag(0.01, 0.02)`.
    pub fn reference_two_neuron() -> Self {
        NetworkParams {
            c: DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 5.0])),
            h: DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.3, 0.1]),
            b: DMatrix::from_row_slice(2, 2, &[-0.3, 0.2, 0.1, 0.3]),
            sigma: DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.02])),
            delays: vec![0.1, 0.1],
            activation: ActivationSpec::tanh(2),
        }
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// `tau = max_j tau_j`.
    pub fn tau(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    /// Delays expressed in grid steps; errors unless every `tau_j / dt` is a positive integer.
    pub fn delay_steps(&self, dt: f64) -> Result<Vec<usize>> {
        self.delays
            .iter()
            .map(|&d| match grid_steps(d, dt) {
                Some(k) if k > 0 => Ok(k),
                _ => Err(Error::config(format!(
                    "delay {d} is not a positive integer multiple of dt = {dt}"
                ))),
            })
            .collect()
    }

    /// Number of grid steps spanned by `[-tau, 0]`.
    pub fn history_steps(&self, dt: f64) -> Result<usize> {
        grid_steps(self.tau(), dt)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::config(format!("tau = {} is not a multiple of dt = {dt}", self.tau())))
    }

    /// `B L`, the coefficient of the delayed state in the linearization.
    pub fn delayed_linear_coupling(&self) -> DMatrix<f64> {
        &self.b * &self.activation.linear_part
    }

    pub fn sigma_is_diagonal(&self) -> bool {
        is_diagonal(&self.sigma)
    }

    /// Drift `-C u + H f(u) + B g(u_delayed)`.
    pub fn drift(&self, u: &DVector<f64>, delayed: &DVector<f64>) -> Result<DVector<f64>> {
        let fu = self.activation.evaluate(u, Which::F)?;
        let gd = self.activation.evaluate(delayed, Which::G)?;
        Ok(-(&self.c * u) + &self.h * fu + &self.b * gd)
    }

    /// `Sigma (u ⋄ dw)`.
    pub fn diffusion_increment(&self, u: &DVector<f64>, dw: &[f64]) -> DVector<f64> {
        let prod = DVector::from_iterator(u.len(), u.iter().zip(dw).map(|(a, b)| a * b));
        &self.sigma * prod
    }
}

/// Report-style parameter validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Config(self.issues.join("; ")))
        }
    }
}

fn structural_issues(p: &NetworkParams) -> Vec<String> {
    let mut issues = Vec::new();
    let n = p.c.nrows();
    if n == 0 {
        issues.push("state dimension must be positive".to_string());
        return issues;
    }
    for (name, m) in [("C", &p.c), ("H", &p.h), ("B", &p.b), ("Sigma", &p.sigma)] {
        if m.nrows() != n || m.ncols() != n {
            issues.push(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols()));
        } else if m.iter().any(|v| !v.is_finite()) {
            issues.push(format!("{name} has non-finite entries"));
        }
    }
    if p.c.is_square() {
        if !is_diagonal(&p.c) {
            issues.push("C must be diagonal".to_string());
        }
        for i in 0..p.c.nrows() {
            if !(p.c[(i, i)] > 0.0) {
                issues.push(format!("c_{} = {} must be positive", i + 1, p.c[(i, i)]));
            }
        }
    }
    if p.delays.len() != n {
        issues.push(format!("expected {n} delays, got {}", p.delays.len()));
    }
    for (j, &d) in p.delays.iter().enumerate() {
        if !(d > 0.0) || !d.is_finite() {
            issues.push(format!("tau_{} = {d} must be positive", j + 1));
        }
    }
    let l = &p.activation.linear_part;
    if l.nrows() != n || l.ncols() != n {
        issues.push(format!("activation linear part is {}x{}, expected {n}x{n}", l.nrows(), l.ncols()));
    }
    issues
}

/// Every violated invariant of `p`, plus the integrator constraint that each
/// `tau_j / dt` is a positive integer.
pub fn validate_params(p: &NetworkParams, dt: f64) -> ValidationReport {
    let mut issues = structural_issues(p);
    if !(dt > 0.0) || !dt.is_finite() {
        issues.push(format!("dt = {dt} must be positive"));
    } else {
        for (j, &d) in p.delays.iter().enumerate() {
            if d > 0.0 && !matches!(grid_steps(d, dt), Some(k) if k > 0) {
                issues.push(format!(
                    "tau_{} / dt = {} is not a positive integer",
                    j + 1,
                    d / dt
                ));
            }
        }
    }
    ValidationReport { issues }
}

/// An element of `C([-tau, 0], R^n)` sampled on a uniform grid.
/// `values[0]` sits at `s = -tau`, the last entry at `s = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySegment {
    step: f64,
    values: Vec<DVector<f64>>,
}

impl HistorySegment {
    pub fn new(step: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::config("segment step must be positive"));
        }
        if values.len() < 2 {
            return Err(Error::config("segment needs at least two nodes"));
        }
        let n = values[0].len();
        if n == 0 || values.iter().any(|v| v.len() != n) {
            return Err(Error::config("segment nodes must share a positive dimension"));
        }
        Ok(HistorySegment { step, values })
    }

    pub fn constant(head: &[f64], tau: f64, step: f64) -> Result<Self> {
        Self::from_fn(tau, step, |_| DVector::from_column_slice(head))
    }

    pub fn zero(n: usize, tau: f64, step: f64) -> Result<Self> {
        Self::from_fn(tau, step, |_| DVector::zeros(n))
    }

    /// Samples `f(s)` at the nodes `s = -tau, ..., 0`.
    pub fn from_fn(tau: f64, step: f64, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let steps = grid_steps(tau, step)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::config(format!("tau = {tau} is not a multiple of step = {step}")))?;
        let values = (0..=steps)
            .map(|i| f(-((steps - i) as f64) * step))
            .collect();
        Self::new(step, values)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn tau(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    pub fn head(&self) -> &DVector<f64> {
        &self.values[self.values.len() - 1]
    }

    pub fn eval(&self, s: f64) -> Result<DVector<f64>> {
        let tau = self.tau();
        if !(-tau..=0.0).contains(&s) {
            return Err(Error::Domain {
                what: "segment argument",
                value: s,
                lo: -tau,
                hi: 0.0,
            });
        }
        let last = self.values.len() - 1;
        let pos = (s + tau) / self.step;
        let nearest = pos.round();
        if (pos - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            return Ok(self.values[(nearest as usize).min(last)].clone());
        }
        let i = (pos.floor() as usize).min(last - 1);
        let w = pos - i as f64;
        Ok(&self.values[i] * (1.0 - w) + &self.values[i + 1] * w)
    }

    /// `sup_s |phi(s)|` over the grid nodes.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        HistorySegment {
            step: self.step,
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Sup-norm distance to a segment on the same grid.
    pub fn distance(&self, other: &HistorySegment) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "segments on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub fn segment_eval(seg: &HistorySegment, s: f64) -> Result<DVector<f64>> {
    seg.eval(s)
}

pub fn segment_norm(seg: &HistorySegment) -> f64 {
    seg.norm()
}
