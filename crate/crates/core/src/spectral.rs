//! Characteristic roots of the linearized delay equation
//!
//! ```text
//! det Δ(λ) = 0,   Δ(λ) = λ I + C - B L diag(e^{-λ τ_j}),
//! ```
//!
//! the fundamental solution `S(t)` of `x' = -C x + B L x_delayed`, and the
//! decay constants `γ`, `K0`, `K1` used by the condition checks.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{grid_steps, spectral_norm};
use crate::linearflow::LinearFlow;
use crate::model::NetworkParams;

pub type C64 = Complex<f64>;

/// Reported roots satisfy `|det Δ(λ)| < RESIDUAL_TOL`.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Converged Newton iterates closer than this are merged.
pub const DEDUP_DISTANCE: f64 = 1e-6;
pub const DEFAULT_GAMMA_FRACTION: f64 = 0.9;
pub const DEFAULT_START_GRID: (usize, usize) = (40, 40);

/// Linear delay system `x' = -C x + A x_delayed`, with `A = B L` for the
/// network linearization.
#[derive(Clone, Debug)]
pub struct CharacteristicSystem {
    c: DMatrix<f64>,
    delayed: DMatrix<f64>,
    delays: Vec<f64>,
}

impl CharacteristicSystem {
    pub fn from_params(params: &NetworkParams) -> Self {
        CharacteristicSystem {
            c: params.c.clone(),
            delayed: params.delayed_linear_coupling(),
            delays: params.delays.clone(),
        }
    }

    /// Frozen-coefficient system with `A = v^{-1}(t) B L v(t)` at flow node `i`.
    pub fn frozen(params: &NetworkParams, flow: &LinearFlow, i: isize) -> Self {
        CharacteristicSystem {
            c: params.c.clone(),
            delayed: flow.inverse_at_node(i) * params.delayed_linear_coupling() * flow.at_node(i),
            delays: params.delays.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    pub fn matrix(&self, lambda: C64) -> DMatrix<C64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { lambda } else { C64::new(0.0, 0.0) };
            diag + self.c[(i, j)] - (-lambda * self.delays[j]).exp() * self.delayed[(i, j)]
        })
    }

    /// `dΔ/dλ = I + A diag(τ_j e^{-λ τ_j})`.
    pub fn derivative_matrix(&self, lambda: C64) -> DMatrix<C64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            diag + (-lambda * self.delays[j]).exp() * (self.delays[j] * self.delayed[(i, j)])
        })
    }

    pub fn det(&self, lambda: C64) -> C64 {
        self.matrix(lambda).determinant()
    }

    /// Jacobi's formula `d det Δ = tr(adj(Δ) Δ')`, with the adjugate built from
    /// cofactors so it stays finite at the roots.
    pub fn det_derivative(&self, lambda: C64) -> C64 {
        let m = self.matrix(lambda);
        let dm = self.derivative_matrix(lambda);
        let n = self.n();
        if n == 1 {
            return dm[(0, 0)];
        }
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let minor = m.clone().remove_row(i).remove_column(j);
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                acc += minor.determinant() * sign * dm[(i, j)];
            }
        }
        acc
    }
}

pub fn characteristic_matrix(params: &NetworkParams, lambda: C64) -> DMatrix<C64> {
    CharacteristicSystem::from_params(params).matrix(lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl SearchBox {
    /// `Re in [-3 ||C||, 1 + ||C|| + ||BL||]`, `Im in [0, 50 / tau]`. A root
    /// with `Re >= 0` satisfies `|lambda| <= ||C|| + ||BL||`, so no unstable
    /// root falls right of the box.
    pub fn default_for(params: &NetworkParams) -> Self {
        let c = spectral_norm(&params.c);
        SearchBox {
            re_min: -3.0 * c,
            re_max: 1.0 + c + spectral_norm(&params.delayed_linear_coupling()),
            im_min: 0.0,
            im_max: 50.0 / params.tau(),
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        let eps = 1e-9;
        z.re >= self.re_min - eps
            && z.re <= self.re_max + eps
            && z.im >= self.im_min - eps
            && z.im <= self.im_max + eps
    }

    fn empty_error(&self) -> Error {
        Error::EmptySpectrum {
            re_min: self.re_min,
            re_max: self.re_max,
            im_min: self.im_min,
            im_max: self.im_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
    pub multiplicity: usize,
}

impl Root {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Distinct roots, closed under conjugation, sorted by decreasing real part.
    pub roots: Vec<Root>,
    pub abscissa: f64,
    pub search_box: SearchBox,
}

impl Spectrum {
    /// Roots repeated according to multiplicity.
    pub fn roots_with_multiplicity(&self) -> Vec<C64> {
        self.roots
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.value(), r.multiplicity))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RootSearchOptions {
    pub start_grid: (usize, usize),
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for RootSearchOptions {
    fn default() -> Self {
        RootSearchOptions {
            start_grid: DEFAULT_START_GRID,
            step_tol: 1e-14,
            max_iter: 200,
        }
    }
}

fn newton(sys: &CharacteristicSystem, start: C64, opts: &RootSearchOptions) -> Option<C64> {
    let mut z = start;
    for _ in 0..opts.max_iter {
        let f = sys.det(z);
        if f == C64::new(0.0, 0.0) {
            break;
        }
        let df = sys.det_derivative(z);
        let dz = f / df;
        if !dz.re.is_finite() || !dz.im.is_finite() {
            return None;
        }
        z -= dz;
        if dz.norm() <= opts.step_tol * (1.0 + z.norm()) {
            break;
        }
    }
    // Accept on residual: multiple roots converge linearly and may not meet the step test.
    (sys.det(z).norm() < RESIDUAL_TOL).then_some(z)
}

// Winding number of det Δ around a circle of radius r centred at z0.
fn multiplicity(sys: &CharacteristicSystem, z0: C64, r: f64) -> usize {
    const POINTS: usize = 128;
    let mut prev = sys.det(z0 + r);
    let mut total = 0.0;
    for k in 1..=POINTS {
        let angle = std::f64::consts::TAU * k as f64 / POINTS as f64;
        let cur = sys.det(z0 + C64::from_polar(r, angle));
        total += (cur / prev).arg();
        prev = cur;
    }
    ((total / std::f64::consts::TAU).round() as i64).max(1) as usize
}

/// Newton from a grid of starts over the box; distinct roots with conjugates.
pub fn dominant_roots_of(
    sys: &CharacteristicSystem,
    search_box: SearchBox,
    opts: &RootSearchOptions,
) -> Result<Spectrum> {
    let (nr, ni) = opts.start_grid;
    let starts: Vec<C64> = (0..ni.max(1))
        .flat_map(|b| {
            (0..nr.max(1)).map(move |a| {
                let fr = if nr > 1 { a as f64 / (nr - 1) as f64 } else { 0.5 };
                let fi = if ni > 1 { b as f64 / (ni - 1) as f64 } else { 0.0 };
                C64::new(
                    search_box.re_min + fr * (search_box.re_max - search_box.re_min),
                    search_box.im_min + fi * (search_box.im_max - search_box.im_min),
                )
            })
        })
        .collect();

    let converged: Vec<Option<C64>> = starts.par_iter().map(|&z| newton(sys, z, opts)).collect();

    let mut candidates: Vec<C64> = converged
        .into_iter()
        .flatten()
        .map(|z| {
            let z = if z.im < 0.0 { z.conj() } else { z };
            let snapped = C64::new(z.re, 0.0);
            if z.im.abs() <= 1e-9 * z.norm().max(1.0) && sys.det(snapped).norm() < RESIDUAL_TOL {
                snapped
            } else {
                z
            }
        })
        .filter(|&z| search_box.contains(z))
        .collect();
    candidates.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let mut distinct: Vec<(C64, f64)> = Vec::new();
    for z in candidates {
        let residual = sys.det(z).norm();
        match distinct
            .iter_mut()
            .find(|(w, _)| (*w - z).norm() < DEDUP_DISTANCE)
        {
            Some(kept) if residual < kept.1 => *kept = (z, residual),
            Some(_) => {}
            None => distinct.push((z, residual)),
        }
    }
    if distinct.is_empty() {
        return Err(search_box.empty_error());
    }

    let mut roots = Vec::new();
    for (idx, &(z, residual)) in distinct.iter().enumerate() {
        let nearest = distinct
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != idx)
            .map(|(_, (w, _))| (*w - z).norm().min((w.conj() - z).norm()))
            .fold(f64::INFINITY, f64::min);
        let radius = 1e-3_f64.min(0.4 * nearest).min(if z.im > 0.0 { 0.4 * z.im } else { f64::INFINITY });
        let multiplicity = multiplicity(sys, z, radius);
        roots.push(Root {
            re: z.re,
            im: z.im,
            residual,
            multiplicity,
        });
        if z.im > 0.0 {
            roots.push(Root {
                re: z.re,
                im: -z.im,
                residual: sys.det(z.conj()).norm(),
                multiplicity,
            });
        }
    }
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let abscissa = roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(Spectrum {
        roots,
        abscissa,
        search_box,
    })
}

pub fn dominant_roots(
    params: &NetworkParams,
    search_box: SearchBox,
    opts: &RootSearchOptions,
) -> Result<Spectrum> {
    dominant_roots_of(&CharacteristicSystem::from_params(params), search_box, opts)
}

/// `S(i·step)` for `i = 0..=T/step`.
#[derive(Clone, Debug)]
pub struct FundamentalSolution {
    pub step: f64,
    pub samples: Vec<DMatrix<f64>>,
}

impl FundamentalSolution {
    pub fn horizon(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.step
    }

    pub fn norms(&self) -> Vec<f64> {
        self.samples.iter().map(spectral_norm).collect()
    }
}

/// Explicit Euler for `S' = -C S + A S_delayed`, `S(0) = I`, `S = 0` on `[-tau, 0)`;
/// row `j` of `S_delayed(t)` is row `j` of `S(t - tau_j)`.
pub fn fundamental_solution_of(sys: &CharacteristicSystem, horizon: f64, dt: f64) -> Result<FundamentalSolution> {
    let n = sys.n();
    let steps = grid_steps(horizon, dt)
        .ok_or_else(|| Error::config(format!("horizon {horizon} is not a multiple of dt = {dt}")))?;
    let lags: Vec<usize> = sys
        .delays
        .iter()
        .map(|&d| {
            grid_steps(d, dt)
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::config(format!("delay {d} is not a positive multiple of dt = {dt}")))
        })
        .collect::<Result<_>>()?;
    let mut samples: Vec<DMatrix<f64>> = Vec::with_capacity(steps + 1);
    samples.push(DMatrix::identity(n, n));
    for i in 0..steps {
        let mut delayed = DMatrix::zeros(n, n);
        for (j, &lag) in lags.iter().enumerate() {
            if i >= lag {
                delayed.set_row(j, &samples[i - lag].row(j));
            }
        }
        let s = &samples[i];
        let next = s + (-(&sys.c * s) + &sys.delayed * delayed) * dt;
        let norm = next.norm();
        if !(norm <= crate::integrator::DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                t: (i + 1) as f64 * dt,
                norm,
            });
        }
        samples.push(next);
    }
    Ok(FundamentalSolution { step: dt, samples })
}

pub fn fundamental_solution(params: &NetworkParams, horizon: f64, dt: f64) -> Result<FundamentalSolution> {
    fundamental_solution_of(&CharacteristicSystem::from_params(params), horizon, dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub gamma: f64,
    pub k0: f64,
    pub k1: f64,
}

/// `γ = fraction·(-ϱ)`, `K1 = max ||S(t)|| e^{-ϱ t/2}`, `K0 = max(1, max ||S(t)|| e^{γ t})`.
pub fn decay_constants(rho: f64, s: &FundamentalSolution, gamma_fraction: f64) -> Result<DecayConstants> {
    if !(rho < 0.0) {
        return Err(Error::UnstableLinearization(rho));
    }
    if !(gamma_fraction > 0.0 && gamma_fraction < 1.0) {
        return Err(Error::config(format!("gamma fraction {gamma_fraction} must lie in (0, 1)")));
    }
    let needed = 10.0 / -rho;
    if s.horizon() < needed * (1.0 - 1e-12) {
        return Err(Error::config(format!(
            "fundamental solution horizon {} is shorter than 10 / |rho| = {needed}",
            s.horizon()
        )));
    }
    let gamma = gamma_fraction * -rho;
    let mut k0 = 1.0_f64;
    let mut k1 = 0.0_f64;
    for (i, norm) in s.norms().into_iter().enumerate() {
        let t = i as f64 * s.step;
        k0 = k0.max(norm * (gamma * t).exp());
        k1 = k1.max(norm * (-rho * t / 2.0).exp());
    }
    Ok(DecayConstants { gamma, k0, k1 })
}

#[derive(Clone, Debug)]
pub struct SpectralOptions {
    pub search_box: Option<SearchBox>,
    pub roots: RootSearchOptions,
    pub gamma_fraction: f64,
    /// Horizon of `S(t)`; defaults to `max(5, 10 / |rho|)` rounded up to the grid.
    pub horizon: Option<f64>,
    pub dt: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            search_box: None,
            roots: RootSearchOptions::default(),
            gamma_fraction: DEFAULT_GAMMA_FRACTION,
            horizon: None,
            dt: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    #[serde(flatten)]
    pub spectrum: Spectrum,
    pub gamma: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    /// Horizon and step of the fundamental solution behind `K0`, `K1`.
    pub s_horizon: f64,
    pub s_step: f64,
}

impl SpectralResult {
    pub fn abscissa(&self) -> f64 {
        self.spectrum.abscissa
    }
}

/// Roots, abscissa and decay constants of the network linearization.
pub fn spectral_analysis(params: &NetworkParams, opts: &SpectralOptions) -> Result<SpectralResult> {
    let search_box = opts.search_box.unwrap_or_else(|| SearchBox::default_for(params));
    let spectrum = dominant_roots(params, search_box, &opts.roots)?;
    let rho = spectrum.abscissa;
    if rho >= 0.0 {
        return Err(Error::UnstableLinearization(rho));
    }
    let horizon = match opts.horizon {
        Some(h) => h,
        None => {
            let wanted = 5.0_f64.max(10.0 / -rho);
            (wanted / opts.dt).ceil() * opts.dt
        }
    };
    let s = fundamental_solution(params, horizon, opts.dt)?;
    let decay = decay_constants(rho, &s, opts.gamma_fraction)?;
    Ok(SpectralResult {
        spectrum,
        gamma: decay.gamma,
        k0: decay.k0,
        k1: decay.k1,
        s_horizon: s.horizon(),
        s_step: opts.dt,
    })
}

/// Spectral abscissa of the frozen-coefficient system at the given flow nodes.
pub fn frozen_abscissae(
    params: &NetworkParams,
    flow: &LinearFlow,
    nodes: &[isize],
    search_box: SearchBox,
    opts: &RootSearchOptions,
) -> Result<Vec<(f64, f64)>> {
    nodes
        .iter()
        .map(|&i| {
            let sys = CharacteristicSystem::frozen(params, flow, i);
            let spectrum = dominant_roots_of(&sys, search_box, opts)?;
            Ok((i as f64 * flow.step(), spectrum.abscissa))
        })
        .collect()
}
