//! Fundamental solution `v(t)` of the noise-only linear equation
//! `dv = Sigma (v ⋄ dW)`, `v(0) = I`, together with its inverse and the
//! path-wise bound `L_v = max_t ||v(t)||`.
//!
//! With diagonal `Sigma` the flow is known in closed form,
//! `v_jj(t) = exp(sigma_jj W_j(t) - sigma_jj^2 t / 2)`. Otherwise the Itô
//! equation is stepped with Euler–Maruyama (backward in time through the
//! inverse of the one-step map). The Wong–Zakai flow solves the random ODE
//! `v' = [Sigma diag((W^k)') - 1/2 Sigma diag(sigma_11, ..., sigma_nn)] v`
//! with explicit Euler.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, grid_index, is_diagonal, spectral_norm};
use crate::model::NetworkParams;
use crate::noise::{BrownianPath, WongZakaiView};

/// Numerical inverses are rejected above this 2-norm condition number.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FlowMode {
    ExactDiagonal,
    NumericGeneral,
    WongZakai { k: u64 },
}

/// Where a flow (and hence an `L_v` estimate) came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowProvenance {
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct LinearFlow {
    mode: FlowMode,
    step: f64,
    /// Grid index (relative to t = 0) of the first sample.
    first: isize,
    samples: Vec<DMatrix<f64>>,
    inverse_samples: Vec<DMatrix<f64>>,
    bound: f64,
    seed: u64,
}

fn check_horizon(path: &BrownianPath, horizon: (f64, f64)) -> Result<(isize, isize)> {
    let (t0, t1) = horizon;
    if !(t0 <= 0.0 && 0.0 <= t1) {
        return Err(Error::config(format!("flow horizon [{t0}, {t1}] must contain 0")));
    }
    let step = path.step();
    let i0 = grid_index(t0, step)
        .ok_or_else(|| Error::config(format!("flow horizon start {t0} is off the path grid")))?;
    let i1 = grid_index(t1, step)
        .ok_or_else(|| Error::config(format!("flow horizon end {t1} is off the path grid")))?;
    path.require_cover(t0, t1)?;
    Ok((i0, i1))
}

fn guarded_inverse(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::FlowDegenerate { t, condition });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::FlowDegenerate { t, condition })
}

pub fn build_flow(params: &NetworkParams, path: &BrownianPath, horizon: (f64, f64)) -> Result<LinearFlow> {
    LinearFlow::build(params, path, horizon)
}

impl LinearFlow {
    pub fn build(params: &NetworkParams, path: &BrownianPath, horizon: (f64, f64)) -> Result<Self> {
        let n = params.n();
        if path.components() != n {
            return Err(Error::config(format!(
                "path has {} components, network has {n}",
                path.components()
            )));
        }
        let (i0, i1) = check_horizon(path, horizon)?;
        if params.sigma_is_diagonal() {
            Ok(Self::exact_diagonal(params, path, i0, i1))
        } else {
            let sigma = &params.sigma;
            Self::propagate(FlowMode::NumericGeneral, path, i0, i1, |i| {
                let dw = path.increments(i);
                let mut step = DMatrix::identity(n, n);
                for r in 0..n {
                    for c in 0..n {
                        step[(r, c)] += sigma[(r, c)] * dw[c];
                    }
                }
                step
            })
        }
    }

    /// Flow of the Wong–Zakai random ODE on `[0, t_max]`.
    pub fn wong_zakai(params: &NetworkParams, view: &WongZakaiView<'_>, t_max: f64) -> Result<Self> {
        let path = view.parent();
        let n = params.n();
        if path.components() != n {
            return Err(Error::config(format!(
                "path has {} components, network has {n}",
                path.components()
            )));
        }
        let (i0, i1) = check_horizon(path, (0.0, t_max))?;
        let dt = path.step();
        let sigma = &params.sigma;
        let correction = sigma * DMatrix::from_diagonal(&sigma.diagonal()) * 0.5;
        Self::propagate(FlowMode::WongZakai { k: view.k() }, path, i0, i1, |i| {
            let mut generator = -&correction;
            for r in 0..n {
                for c in 0..n {
                    generator[(r, c)] += sigma[(r, c)] * view.derivative_at_node(c, i);
                }
            }
            DMatrix::identity(n, n) + generator * dt
        })
    }

    fn exact_diagonal(params: &NetworkParams, path: &BrownianPath, i0: isize, i1: isize) -> Self {
        let n = params.n();
        let step = path.step();
        let sigma = params.sigma.diagonal();
        let mut samples = Vec::with_capacity((i1 - i0 + 1) as usize);
        let mut inverse_samples = Vec::with_capacity(samples.capacity());
        let mut bound = 0.0_f64;
        for i in i0..=i1 {
            let t = i as f64 * step;
            let diag = DVector::from_iterator(
                n,
                (0..n).map(|j| (sigma[j] * path.node_value(j, i) - 0.5 * sigma[j] * sigma[j] * t).exp()),
            );
            bound = bound.max(diag.max());
            inverse_samples.push(DMatrix::from_diagonal(&diag.map(|x| 1.0 / x)));
            samples.push(DMatrix::from_diagonal(&diag));
        }
        LinearFlow {
            mode: FlowMode::ExactDiagonal,
            step,
            first: i0,
            samples,
            inverse_samples,
            bound,
            seed: path.seed(),
        }
    }

    // Steps v_{i+1} = M_i v_i forward from 0 and v_i = M_i^{-1} v_{i+1} backward.
    fn propagate(
        mode: FlowMode,
        path: &BrownianPath,
        i0: isize,
        i1: isize,
        one_step: impl Fn(isize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let n = path.components();
        let step = path.step();
        let len = (i1 - i0 + 1) as usize;
        let zero = (-i0) as usize;
        let mut samples = vec![DMatrix::zeros(n, n); len];
        samples[zero] = DMatrix::identity(n, n);
        for i in 0..i1 {
            let idx = (i - i0) as usize;
            samples[idx + 1] = one_step(i) * &samples[idx];
        }
        for i in (i0..0).rev() {
            let idx = (i - i0) as usize;
            let inv = guarded_inverse(&one_step(i), i as f64 * step)?;
            samples[idx] = inv * &samples[idx + 1];
        }
        let mut inverse_samples = Vec::with_capacity(len);
        let mut bound = 0.0_f64;
        for (idx, v) in samples.iter().enumerate() {
            let t = (i0 + idx as isize) as f64 * step;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::FlowDegenerate {
                    t,
                    condition: f64::INFINITY,
                });
            }
            inverse_samples.push(guarded_inverse(v, t)?);
            bound = bound.max(spectral_norm(v));
        }
        Ok(LinearFlow {
            mode,
            step,
            first: i0,
            samples,
            inverse_samples,
            bound,
            seed: path.seed(),
        })
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> (f64, f64) {
        let last = self.first + self.samples.len() as isize - 1;
        (self.first as f64 * self.step, last as f64 * self.step)
    }

    pub fn provenance(&self) -> FlowProvenance {
        let (t_min, t_max) = self.horizon();
        FlowProvenance {
            seed: self.seed,
            t_min,
            t_max,
            step: self.step,
        }
    }

    /// Whether grid node `i` (relative to t = 0) is inside the horizon.
    pub fn has_node(&self, i: isize) -> bool {
        i >= self.first && i < self.first + self.samples.len() as isize
    }

    /// `v(i·step)`. Panics outside the horizon.
    pub fn at_node(&self, i: isize) -> &DMatrix<f64> {
        &self.samples[(i - self.first) as usize]
    }

    /// `v^{-1}(i·step)`. Panics outside the horizon.
    pub fn inverse_at_node(&self, i: isize) -> &DMatrix<f64> {
        &self.inverse_samples[(i - self.first) as usize]
    }

    fn node_of(&self, t: f64) -> Result<isize> {
        let (lo, hi) = self.horizon();
        match grid_index(t, self.step) {
            Some(i) if self.has_node(i) => Ok(i),
            _ => Err(Error::Domain {
                what: "flow time",
                value: t,
                lo,
                hi,
            }),
        }
    }

    pub fn matrix(&self, t: f64) -> Result<&DMatrix<f64>> {
        Ok(self.at_node(self.node_of(t)?))
    }

    pub fn inverse(&self, t: f64) -> Result<&DMatrix<f64>> {
        Ok(self.inverse_at_node(self.node_of(t)?))
    }

    /// `v(t) x`, or `v^{-1}(t) x` when `inverse` is set.
    pub fn apply(&self, t: f64, x: &DVector<f64>, inverse: bool) -> Result<DVector<f64>> {
        let i = self.node_of(t)?;
        Ok(if inverse {
            self.inverse_at_node(i) * x
        } else {
            self.at_node(i) * x
        })
    }

    /// Empirical `L_v`: max over horizon nodes of `||v(t)||_2`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    /// CSV with header `t,norm_v,norm_v_inv,log_det_v`.
    pub fn write_diagnostics_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "norm_v", "norm_v_inv", "log_det_v"])?;
        for idx in (0..self.samples.len()).step_by(stride.max(1)) {
            let t = (self.first + idx as isize) as f64 * self.step;
            let v = &self.samples[idx];
            let log_det = if is_diagonal(v) {
                v.diagonal().iter().map(|x| x.abs().ln()).sum::<f64>()
            } else {
                v.determinant().abs().ln()
            };
            w.write_record([
                t.to_string(),
                spectral_norm(v).to_string(),
                spectral_norm(&self.inverse_samples[idx]).to_string(),
                log_det.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn flow_apply(flow: &LinearFlow, t: f64, x: &DVector<f64>, inverse: bool) -> Result<DVector<f64>> {
    flow.apply(t, x, inverse)
}

pub fn estimate_bound(flow: &LinearFlow) -> f64 {
    flow.bound()
}
