//! Fixed-step integration of the delayed network along a sampled path.
//!
//! Three routes produce the same trajectory in the limit `dt -> 0`:
//!
//! * **direct**: Euler–Maruyama (Itô) on the state equation;
//! * **conjugated**: explicit Euler on the path-wise random delay ODE
//!   `d~u/dt = v^{-1}(t) [-C v(t)~u + H f(v(t)~u) + B g(w_delayed)]`, followed by
//!   `u = v ~u`;
//! * **wong-zakai(k)**: the conjugated route driven by the Wong–Zakai flow.
//!
//! Delays must be integer multiples of `dt`, so delayed values are read by
//! index and never interpolated.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{grid_index, grid_steps};
use crate::linearflow::LinearFlow;
use crate::model::{validate_params, HistorySegment, NetworkParams};
use crate::noise::{BrownianPath, WongZakaiView};

/// States with Euclidean norm above this abort the integration.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "kebab-case")]
pub enum Route {
    Direct,
    Conjugated,
    WongZakai { k: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub steps: usize,
    pub delayed_reads: usize,
    /// Delayed reads that fell between grid nodes. Always zero on aligned grids.
    pub interpolated_delay_reads: usize,
}

/// States on `[t_start - tau, t_start + T]` with uniform spacing.
#[derive(Clone, Debug)]
pub struct Trajectory {
    step: f64,
    t_start: f64,
    /// Index of `t_start` in `states`; equals `tau / step`.
    history_steps: usize,
    states: Vec<DVector<f64>>,
    route: Route,
    stats: IntegrationStats,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.states.len() - 1)
    }

    pub fn route(&self) -> Route {
        self.route
    }

    pub fn stats(&self) -> IntegrationStats {
        self.stats
    }

    pub fn history_steps(&self) -> usize {
        self.history_steps
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Time of `states[idx]`.
    pub fn time(&self, idx: usize) -> f64 {
        self.t_start + (idx as f64 - self.history_steps as f64) * self.step
    }

    /// States from `t_start` onwards.
    pub fn forward_states(&self) -> &[DVector<f64>] {
        &self.states[self.history_steps..]
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        let lo = self.time(0);
        match grid_steps(t - lo, self.step) {
            Some(i) if i < self.states.len() => Ok(i),
            _ => Err(Error::Domain {
                what: "trajectory time",
                value: t,
                lo,
                hi: self.t_end(),
            }),
        }
    }

    pub fn state_at(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.states[self.index_of(t)?])
    }

    /// The segment `s -> u(t + s)`, `s in [-tau, 0]`.
    pub fn end_segment(&self, t: f64) -> Result<HistorySegment> {
        if t < self.t_start - 1e-9 * self.step {
            return Err(Error::Domain {
                what: "segment end time",
                value: t,
                lo: self.t_start,
                hi: self.t_end(),
            });
        }
        let end = self.index_of(t)?;
        let start = end - self.history_steps;
        HistorySegment::new(self.step, self.states[start..=end].to_vec())
    }

    /// CSV with header `t,u_1,...,u_n` at every `stride`-th node from `t_start`.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let n = self.states[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("u_{j}")));
        w.write_record(&header)?;
        for idx in (self.history_steps..self.states.len()).step_by(stride.max(1)) {
            let mut row = vec![self.time(idx).to_string()];
            row.extend(self.states[idx].iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn end_segment(traj: &Trajectory, t: f64) -> Result<HistorySegment> {
    traj.end_segment(t)
}

struct Grid {
    steps: usize,
    history: usize,
    lags: Vec<usize>,
    /// Path node index of `t_start`.
    start_node: isize,
}

fn prepare(
    params: &NetworkParams,
    path: &BrownianPath,
    phi: &HistorySegment,
    dt: f64,
    t_start: f64,
    horizon: f64,
) -> Result<Grid> {
    validate_params(params, dt).into_result()?;
    let n = params.n();
    if (path.step() - dt).abs() > 1e-12 * dt {
        return Err(Error::config(format!(
            "path grid step {} must equal dt = {dt}",
            path.step()
        )));
    }
    if path.components() != n {
        return Err(Error::config(format!(
            "path has {} components, network has {n}",
            path.components()
        )));
    }
    let history = params.history_steps(dt)?;
    if phi.dim() != n || (phi.step() - dt).abs() > 1e-12 * dt || phi.values().len() != history + 1 {
        return Err(Error::config(format!(
            "initial segment must have dimension {n}, step {dt} and {} nodes",
            history + 1
        )));
    }
    let steps = grid_steps(horizon, dt)
        .ok_or_else(|| Error::config(format!("horizon {horizon} is not a multiple of dt = {dt}")))?;
    let start_node = grid_index(t_start, dt)
        .ok_or_else(|| Error::config(format!("start time {t_start} is off the grid")))?;
    path.require_cover(t_start, t_start + horizon)?;
    Ok(Grid {
        steps,
        history,
        lags: params.delay_steps(dt)?,
        start_node,
    })
}

fn check_finite(u: &DVector<f64>, t: f64) -> Result<()> {
    let norm = u.norm();
    if !(norm <= DIVERGENCE_THRESHOLD) {
        return Err(Error::Divergence { t, norm });
    }
    Ok(())
}

// Component j of the delayed state read at index `idx - lag_j`.
fn delayed(states: &[DVector<f64>], idx: usize, lags: &[usize], stats: &mut IntegrationStats) -> DVector<f64> {
    stats.delayed_reads += lags.len();
    DVector::from_iterator(lags.len(), lags.iter().enumerate().map(|(j, &lag)| states[idx - lag][j]))
}

/// Euler–Maruyama on `[0, T]`.
pub fn integrate_direct(
    params: &NetworkParams,
    path: &BrownianPath,
    phi: &HistorySegment,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    integrate_direct_from(params, path, phi, dt, 0.0, horizon)
}

/// Euler–Maruyama on `[t_start, t_start + T]` reading the path increments of
/// that window (so `t_start < 0` realizes a pullback run).
pub fn integrate_direct_from(
    params: &NetworkParams,
    path: &BrownianPath,
    phi: &HistorySegment,
    dt: f64,
    t_start: f64,
    horizon: f64,
) -> Result<Trajectory> {
    let grid = prepare(params, path, phi, dt, t_start, horizon)?;
    let mut states = Vec::with_capacity(grid.history + grid.steps + 1);
    states.extend_from_slice(phi.values());
    let mut stats = IntegrationStats::default();
    for i in 0..grid.steps {
        let idx = grid.history + i;
        let u = &states[idx];
        let ud = delayed(&states, idx, &grid.lags, &mut stats);
        let drift = params.drift(u, &ud)?;
        let noise = params.diffusion_increment(u, path.increments(grid.start_node + i as isize));
        let next = u + drift * dt + noise;
        check_finite(&next, t_start + (i + 1) as f64 * dt)?;
        states.push(next);
        stats.steps += 1;
    }
    Ok(Trajectory {
        step: dt,
        t_start,
        history_steps: grid.history,
        states,
        route: Route::Direct,
        stats,
    })
}

fn integrate_through_flow(
    params: &NetworkParams,
    flow: &LinearFlow,
    grid: &Grid,
    phi: &HistorySegment,
    dt: f64,
    route: Route,
) -> Result<Trajectory> {
    if (flow.step() - dt).abs() > 1e-12 * dt {
        return Err(Error::config(format!("flow grid step {} must equal dt = {dt}", flow.step())));
    }
    if !flow.has_node(0) || !flow.has_node(grid.steps as isize) {
        let (lo, hi) = flow.horizon();
        return Err(Error::config(format!(
            "flow horizon [{lo}, {hi}] does not cover [0, {}]",
            grid.steps as f64 * dt
        )));
    }
    // `states` holds the reconstructed u = v ~u (history prefix = phi).
    let mut states = Vec::with_capacity(grid.history + grid.steps + 1);
    states.extend_from_slice(phi.values());
    let mut tilde = phi.head().clone();
    let mut stats = IntegrationStats::default();
    for i in 0..grid.steps {
        let idx = grid.history + i;
        let node = i as isize;
        let ud = delayed(&states, idx, &grid.lags, &mut stats);
        let drift = params.drift(&states[idx], &ud)?;
        tilde += flow.inverse_at_node(node) * drift * dt;
        let next = flow.at_node(node + 1) * &tilde;
        check_finite(&next, (i + 1) as f64 * dt)?;
        states.push(next);
        stats.steps += 1;
    }
    Ok(Trajectory {
        step: dt,
        t_start: 0.0,
        history_steps: grid.history,
        states,
        route,
        stats,
    })
}

/// Conjugated route on `[0, T]` using a prebuilt flow covering `[0, T]`.
pub fn integrate_conjugated(
    params: &NetworkParams,
    flow: &LinearFlow,
    path: &BrownianPath,
    phi: &HistorySegment,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    let grid = prepare(params, path, phi, dt, 0.0, horizon)?;
    integrate_through_flow(params, flow, &grid, phi, dt, Route::Conjugated)
}

/// Wong–Zakai route on `[0, T]` with mesh `1/k`.
pub fn integrate_wong_zakai(
    params: &NetworkParams,
    path: &BrownianPath,
    k: u64,
    phi: &HistorySegment,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    let grid = prepare(params, path, phi, dt, 0.0, horizon)?;
    let view = WongZakaiView::new(path, k)?;
    // The last Euler step reads the slope of the mesh cell containing T - dt.
    let mesh = view.ratio() as isize;
    let needed = ((grid.steps as isize - 1).div_euclid(mesh) + 1) * mesh;
    path.require_cover(0.0, needed as f64 * dt)?;
    let flow = LinearFlow::wong_zakai(params, &view, horizon)?;
    integrate_through_flow(params, &flow, &grid, phi, dt, Route::WongZakai { k })
}

/// Dispatches on `route`; builds the exact/numeric flow on `[0, T]` when needed.
pub fn integrate(
    params: &NetworkParams,
    path: &BrownianPath,
    phi: &HistorySegment,
    dt: f64,
    horizon: f64,
    route: Route,
) -> Result<Trajectory> {
    match route {
        Route::Direct => integrate_direct(params, path, phi, dt, horizon),
        Route::Conjugated => {
            let flow = LinearFlow::build(params, path, (0.0, horizon))?;
            integrate_conjugated(params, &flow, path, phi, dt, horizon)
        }
        Route::WongZakai { k } => integrate_wong_zakai(params, path, k, phi, dt, horizon),
    }
}

/// Largest node-wise Euclidean distance over the common forward window.
pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.forward_states()
        .iter()
        .zip(b.forward_states())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
