//! Pullback experiments on a fixed sample path.
//!
//! A pullback run to time 0 from `-t` integrates on `[-t, 0]` over the original
//! path, which is the same increment stream as integrating on `[0, t]` over
//! `theta_{-t} w`.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{integrate_direct, integrate_direct_from, integrate_wong_zakai, Trajectory};
use crate::model::{HistorySegment, NetworkParams};
use crate::noise::BrownianPath;

/// Distances below this end the attraction-rate fit window.
pub const DISTANCE_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct PullbackLevel {
    pub time: f64,
    /// `U(t, theta_{-t} w, phi)` for each initial segment, in input order.
    pub endpoints: Vec<HistorySegment>,
    /// Largest pairwise sup-norm distance among the endpoints.
    pub diameter: f64,
}

#[derive(Clone, Debug)]
pub struct PullbackRun {
    pub seed: u64,
    pub initial_set: Vec<HistorySegment>,
    pub levels: Vec<PullbackLevel>,
}

impl PullbackRun {
    pub fn pullback_times(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.time).collect()
    }

    pub fn diameters(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.diameter).collect()
    }

    /// CSV with header `seed,t_n,diameter`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "t_n", "diameter"])?;
        for level in &self.levels {
            w.write_record([
                self.seed.to_string(),
                level.time.to_string(),
                level.diameter.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn diameter(segments: &[HistorySegment]) -> f64 {
    let mut d = 0.0_f64;
    for (i, a) in segments.iter().enumerate() {
        for b in &segments[i + 1..] {
            d = d.max(a.distance(b));
        }
    }
    d
}

/// Endpoint at time 0 of the run started at `-t` from `phi`.
pub fn pullback_endpoint(
    params: &NetworkParams,
    path: &BrownianPath,
    t: f64,
    phi: &HistorySegment,
    dt: f64,
) -> Result<HistorySegment> {
    path.require_cover(-t, 0.0)?;
    integrate_direct_from(params, path, phi, dt, -t, t)?.end_segment(0.0)
}

pub fn pullback_endpoints(
    params: &NetworkParams,
    path: &BrownianPath,
    pullback_times: &[f64],
    initial_set: &[HistorySegment],
    dt: f64,
) -> Result<PullbackRun> {
    if pullback_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("pullback times must be strictly increasing"));
    }
    if initial_set.is_empty() {
        return Err(Error::config("pullback run needs at least one initial segment"));
    }
    if let Some(&t_max) = pullback_times.last() {
        path.require_cover(-t_max, 0.0)?;
    }
    let jobs: Vec<(usize, usize)> = (0..pullback_times.len())
        .flat_map(|a| (0..initial_set.len()).map(move |b| (a, b)))
        .collect();
    let results: Vec<Result<HistorySegment>> = jobs
        .par_iter()
        .map(|&(a, b)| pullback_endpoint(params, path, pullback_times[a], &initial_set[b], dt))
        .collect();
    let mut results = results.into_iter();
    let mut levels = Vec::with_capacity(pullback_times.len());
    for &time in pullback_times {
        let endpoints = results
            .by_ref()
            .take(initial_set.len())
            .collect::<Result<Vec<_>>>()?;
        levels.push(PullbackLevel {
            time,
            diameter: diameter(&endpoints),
            endpoints,
        });
    }
    Ok(PullbackRun {
        seed: path.seed(),
        initial_set: initial_set.to_vec(),
        levels,
    })
}

/// Sup over `[t1, t1 + t2]` of the distance between the single run to
/// `t1 + t2` and the run restarted at `t1` on `theta_{t1} w`.
pub fn cocycle_residual(
    params: &NetworkParams,
    path: &BrownianPath,
    t1: f64,
    t2: f64,
    phi: &HistorySegment,
    dt: f64,
) -> Result<f64> {
    let single = integrate_direct(params, path, phi, dt, t1 + t2)?;
    let first = integrate_direct(params, path, phi, dt, t1)?;
    let restart = first.end_segment(t1)?;
    let shifted = path.shift(t1)?;
    let second = integrate_direct(params, &shifted, &restart, dt, t2)?;
    let offset = first.forward_states().len() - 1;
    Ok(second
        .forward_states()
        .iter()
        .zip(&single.forward_states()[offset..])
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WongZakaiGap {
    pub k: u64,
    pub gap: f64,
}

/// For each `k`, the largest node-wise distance on `[0, T]` between the
/// Wong–Zakai and direct routes over the sampled initial segments.
pub fn wong_zakai_gap(
    params: &NetworkParams,
    path: &BrownianPath,
    ks: &[u64],
    horizon: f64,
    sample_initials: &[HistorySegment],
    dt: f64,
) -> Result<Vec<WongZakaiGap>> {
    let direct: Vec<Trajectory> = sample_initials
        .iter()
        .map(|phi| integrate_direct(params, path, phi, dt, horizon))
        .collect::<Result<_>>()?;
    ks.par_iter()
        .map(|&k| {
            let mut gap = 0.0_f64;
            for (phi, reference) in sample_initials.iter().zip(&direct) {
                let wz = integrate_wong_zakai(params, path, k, phi, dt, horizon)?;
                gap = gap.max(crate::integrator::sup_distance(&wz, reference));
            }
            Ok(WongZakaiGap { k, gap })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StationaryEstimate {
    /// Pullback endpoint at the largest time.
    pub segment: HistorySegment,
    pub times: Vec<f64>,
    /// Distances between endpoints at successive times.
    pub cauchy_residuals: Vec<f64>,
    /// Residuals non-increasing within 5%.
    pub converging: bool,
}

impl StationaryEstimate {
    /// CSV with header `seed,s,u_1,...,u_n`.
    pub fn write_csv<W: Write>(&self, out: W, seed: u64) -> Result<()> {
        let n = self.segment.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["seed".to_string(), "s".to_string()];
        header.extend((1..=n).map(|j| format!("u_{j}")));
        w.write_record(&header)?;
        let len = self.segment.values().len();
        for (i, v) in self.segment.values().iter().enumerate() {
            let s = -((len - 1 - i) as f64) * self.segment.step();
            let mut row = vec![seed.to_string(), s.to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stationary-point estimate from the zero segment.
pub fn stationary_point(
    params: &NetworkParams,
    path: &BrownianPath,
    times: &[f64],
    dt: f64,
) -> Result<StationaryEstimate> {
    let zero = HistorySegment::zero(params.n(), params.tau(), dt)?;
    stationary_point_from(params, path, times, dt, &zero)
}

pub fn stationary_point_from(
    params: &NetworkParams,
    path: &BrownianPath,
    times: &[f64],
    dt: f64,
    start: &HistorySegment,
) -> Result<StationaryEstimate> {
    if times.is_empty() {
        return Err(Error::config("stationary point needs at least one pullback time"));
    }
    let run = pullback_endpoints(params, path, times, std::slice::from_ref(start), dt)?;
    let endpoints: Vec<HistorySegment> = run.levels.into_iter().map(|l| l.endpoints[0].clone()).collect();
    let cauchy_residuals: Vec<f64> = endpoints.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let converging = cauchy_residuals.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    if !converging {
        log::warn!("pullback Cauchy residuals do not decrease: {cauchy_residuals:?}");
    }
    Ok(StationaryEstimate {
        segment: endpoints.last().cloned().expect("non-empty"),
        times: times.to_vec(),
        cauchy_residuals,
        converging,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(t, ln distance)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum AttractionRate {
    Fitted(RateFit),
    /// The two initial segments coincide, so no rate is defined.
    Coincident,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Least-squares slope of `ln ||U(t, w, phi) - U(t, w, psi)||` over `[1, T]`,
/// with segment sup-norms; the window stops once the distance drops below
/// [`DISTANCE_FLOOR`].
pub fn attraction_rate(
    params: &NetworkParams,
    path: &BrownianPath,
    phi: &HistorySegment,
    psi: &HistorySegment,
    horizon: f64,
    dt: f64,
) -> Result<AttractionRate> {
    if phi == psi {
        return Ok(AttractionRate::Coincident);
    }
    if horizon <= 1.0 {
        return Err(Error::config("attraction-rate horizon must exceed 1"));
    }
    let a = integrate_direct(params, path, phi, dt, horizon)?;
    let b = integrate_direct(params, path, psi, dt, horizon)?;
    let pointwise: Vec<f64> = a
        .states()
        .iter()
        .zip(b.states())
        .map(|(x, y): (&DVector<f64>, &DVector<f64>)| (x - y).norm())
        .collect();
    let window = a.history_steps();
    let start = a.history_steps() + crate::linalg::grid_steps(1.0, dt).unwrap_or(0);
    let mut points = Vec::new();
    for idx in start..pointwise.len() {
        let sup = pointwise[idx - window..=idx].iter().copied().fold(0.0, f64::max);
        if sup < DISTANCE_FLOOR {
            break;
        }
        points.push((a.time(idx), sup.ln()));
    }
    if points.len() < 2 {
        return Err(Error::config("distance underflowed before the fit window opened"));
    }
    let (slope, intercept, r_squared) = least_squares(&points);
    Ok(AttractionRate::Fitted(RateFit {
        slope,
        intercept,
        r_squared,
        points,
    }))
}

impl RateFit {
    /// CSV with header `seed,t,log_distance`.
    pub fn write_csv<W: Write>(&self, out: W, seed: u64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "t", "log_distance"])?;
        for (t, ld) in &self.points {
            w.write_record([seed.to_string(), t.to_string(), ld.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn decay_params() -> NetworkParams {
        let mut p = NetworkParams::reference_two_neuron();
        p.h = DMatrix::zeros(2, 2);
        p.b = DMatrix::zeros(2, 2);
        p.sigma = DMatrix::zeros(2, 2);
        p
    }

    fn seg(head: &[f64], dt: f64) -> HistorySegment {
        HistorySegment::constant(head, 0.1, dt).unwrap()
    }

    #[test]
    fn single_initial_condition_has_zero_diameter() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, -4.0, 0.0, 1).unwrap();
        let run = pullback_endpoints(&p, &path, &[1.0, 2.0, 4.0], &[seg(&[0.1, 0.2], dt)], dt).unwrap();
        assert_eq!(run.diameters(), vec![0.0, 0.0, 0.0]);
        assert_eq!(run.levels[0].endpoints.len(), 1);
    }

    #[test]
    fn linear_pullback_decays_exactly() {
        let p = decay_params();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, -2.0, 0.0, 1).unwrap();
        let phi = seg(&[1.0, 2.0], dt);
        let psi = seg(&[-1.0, 0.5], dt);
        let run = pullback_endpoints(&p, &path, &[0.5, 1.0, 2.0], &[phi.clone(), psi], dt).unwrap();
        for level in &run.levels {
            let head = level.endpoints[0].head();
            let factor = (1.0 - 5.0 * dt).powi((level.time / dt).round() as i32);
            assert!((head[1] - 2.0 * factor).abs() < 1e-12);
            let exact = (-5.0 * level.time).exp();
            assert!((head[0] - exact).abs() <= 25.0 * level.time * dt * exact);
        }
        let d = run.diameters();
        assert!(d[2] < d[1] && d[1] < d[0]);
    }

    #[test]
    fn path_too_short_is_reported() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, -1.0, 0.0, 1).unwrap();
        let err = pullback_endpoints(&p, &path, &[2.0], &[seg(&[0.1, 0.2], dt)], dt).unwrap_err();
        assert!(matches!(err, Error::PathTooShort { .. }));
        assert!(err.to_string().contains("extend"));
    }

    #[test]
    fn pullback_equals_forward_run_on_shifted_path() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, -3.0, 0.0, 8).unwrap();
        let phi = seg(&[10.0, 20.0], dt);
        let pulled = pullback_endpoint(&p, &path, 3.0, &phi, dt).unwrap();
        let shifted = path.shift(-3.0).unwrap();
        let forward = integrate_direct(&p, &shifted, &phi, dt, 3.0).unwrap().end_segment(3.0).unwrap();
        assert!(pulled.distance(&forward) <= 1e-12);
    }

    #[test]
    fn cocycle_identity_cases() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, 0.0, 2.0, 4).unwrap();
        let phi = seg(&[0.1, 0.2], dt);
        assert_eq!(cocycle_residual(&p, &path, 0.7, 0.0, &phi, dt).unwrap(), 0.0);
        assert!(cocycle_residual(&p, &path, 0.5, 0.5, &phi, dt).unwrap() < 1e-10);
        let mut q = p.clone();
        q.sigma = DMatrix::zeros(2, 2);
        assert!(cocycle_residual(&q, &path, 0.3, 0.7, &phi, dt).unwrap() < 1e-12);
    }

    #[test]
    fn wong_zakai_gap_without_noise() {
        let mut p = NetworkParams::reference_two_neuron();
        p.sigma = DMatrix::zeros(2, 2);
        let dt = 1.0 / 800.0;
        let path = BrownianPath::sample(2, dt, 0.0, 1.0, 4).unwrap();
        let initials = [seg(&[0.1, 0.2], dt), seg(&[10.0, 20.0], dt)];
        for g in wong_zakai_gap(&p, &path, &[10, 20, 40, 80], 1.0, &initials, dt).unwrap() {
            assert!(g.gap < 1e-8, "{g:?}");
        }
    }

    #[test]
    fn linear_noise_free_stationary_point_is_zero() {
        let p = decay_params();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, -4.0, 0.0, 1).unwrap();
        let est = stationary_point(&p, &path, &[1.0, 2.0, 4.0], dt).unwrap();
        assert_eq!(est.segment.norm(), 0.0);
        assert!(est.converging);
        let from = stationary_point_from(&p, &path, &[1.0, 2.0, 4.0], dt, &seg(&[1.0, 1.0], dt)).unwrap();
        assert!(from.segment.norm() < 1e-8);
        assert!(from.converging);
        assert_eq!(from.cauchy_residuals.len(), 2);
    }

    #[test]
    fn linear_contraction_rate() {
        let p = decay_params();
        let dt = 1e-4;
        let path = BrownianPath::sample(2, dt, 0.0, 3.0, 1).unwrap();
        let rate = attraction_rate(&p, &path, &seg(&[0.1, 0.2], dt), &seg(&[1.0, -1.0], dt), 3.0, dt).unwrap();
        let AttractionRate::Fitted(fit) = rate else { panic!("expected a fit") };
        assert!((fit.slope + 5.0).abs() < 0.01, "slope {}", fit.slope);
        assert!(fit.r_squared > 0.9999);
    }

    #[test]
    fn coincident_rate_marker() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-3;
        let path = BrownianPath::sample(2, dt, 0.0, 2.0, 1).unwrap();
        let phi = seg(&[0.1, 0.2], dt);
        assert_eq!(
            attraction_rate(&p, &path, &phi, &phi, 2.0, dt).unwrap(),
            AttractionRate::Coincident
        );
    }

    #[test]
    fn csv_outputs_have_seed_columns() {
        let p = NetworkParams::reference_two_neuron();
        let dt = 1e-2;
        let path = BrownianPath::sample(2, dt, -2.0, 0.0, 17).unwrap();
        let run = pullback_endpoints(&p, &path, &[1.0, 2.0], &[seg(&[0.1, 0.2], dt), seg(&[1.0, 1.0], dt)], dt)
            .unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,t_n,diameter\n17,1,"));
        let est = stationary_point(&p, &path, &[1.0, 2.0], dt).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf, 17).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,s,u_1,u_2\n17,-0.1,"));
        assert_eq!(text.lines().count(), 12);
    }
}
