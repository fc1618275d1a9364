//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::process::Command;
use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use sdhnn_core::attractor::{
    attraction_rate, cocycle_residual, pullback_endpoints, stationary_point, wong_zakai_gap, AttractionRate,
};
use sdhnn_core::conditions::{compute_constants, ConditionOptions};
use sdhnn_core::integrator::{integrate, integrate_direct, sup_distance, Route};
use sdhnn_core::linearflow::LinearFlow;
use sdhnn_core::model::{ActivationSpec, HistorySegment, NetworkParams};
use sdhnn_core::noise::BrownianPath;
use sdhnn_core::spectral::{
    dominant_roots, spectral_analysis, CharacteristicSystem, RootSearchOptions, SearchBox, SpectralOptions, C64,
};

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn seg(head: &[f64], dt: f64) -> HistorySegment {
    HistorySegment::constant(head, 0.1, dt).unwrap()
}

fn max_abs(u: &DVector<f64>) -> f64 {
    u.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fitted_order(steps: &[f64], errors: &[f64]) -> f64 {
    let x: Vec<f64> = steps.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

/// Settling of both reference trajectories on five seeds; each run under 1 s.
fn criterion_1() -> Verdict {
    let p = NetworkParams::reference_two_neuron();
    let dt = 1e-3;
    let mut worst = 0.0_f64;
    let mut slowest = 0.0_f64;
    for seed in 1..=5 {
        for head in [[0.1, 0.2], [10.0, 20.0]] {
            let start = Instant::now();
            let path = BrownianPath::sample(2, dt, 0.0, 5.0, seed).unwrap();
            let traj = integrate_direct(&p, &path, &seg(&head, dt), dt, 5.0).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
            worst = worst.max(max_abs(traj.state_at(5.0).unwrap()));
        }
    }
    (
        worst < 1e-2 && slowest < 1.0,
        format!("max_j |u_j(5)| = {worst:.3e} (< 1e-2), slowest run {slowest:.3} s (< 1 s)"),
    )
}

fn scalar(bl: f64) -> NetworkParams {
    NetworkParams::new(
        DMatrix::from_element(1, 1, 5.0),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, bl),
        DMatrix::zeros(1, 1),
        vec![0.1],
        ActivationSpec::tanh(1),
    )
    .unwrap()
}

fn fixed_point_root(c: f64, bl: f64, tau: f64) -> f64 {
    let mut x = -c;
    for _ in 0..500 {
        x = -c + bl * (-x * tau).exp();
    }
    x
}

fn secant(sys: &CharacteristicSystem, z0: C64, h: f64) -> C64 {
    let (mut a, mut b) = (z0, z0 + Complex::new(h, h));
    let mut fa = sys.det(a);
    for _ in 0..100 {
        let fb = sys.det(b);
        let denom = fb - fa;
        if denom.norm() == 0.0 {
            break;
        }
        let c = b - fb * (b - a) / denom;
        if (c - b).norm() < 1e-15 * (1.0 + c.norm()) {
            return c;
        }
        a = b;
        fa = fb;
        b = c;
    }
    b
}

/// Scalar roots against fixed-point iteration; 2x2 spectrum against a
/// 2000 x 2000 dense scan of |det| polished by secant steps.
fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut scalar_err = 0.0_f64;
    for bl in [-0.3, 0.3] {
        let p = scalar(bl);
        let sp = dominant_roots(&p, SearchBox::default_for(&p), &RootSearchOptions::default()).unwrap();
        scalar_err = scalar_err.max((sp.abscissa - fixed_point_root(5.0, bl, 0.1)).abs());
    }

    let p = NetworkParams::reference_two_neuron();
    let bx = SearchBox::default_for(&p);
    let sys = CharacteristicSystem::from_params(&p);
    let sp = dominant_roots(&p, bx, &RootSearchOptions::default()).unwrap();
    let n = 2000;
    let dre = (bx.re_max - bx.re_min) / (n - 1) as f64;
    let dim = (bx.im_max - bx.im_min) / (n - 1) as f64;
    let at = |i: usize, j: usize| Complex::new(bx.re_min + i as f64 * dre, bx.im_min + j as f64 * dim);
    let grid: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sys.det(at(i, j)).norm()).collect()).collect();
    let mut missed = 0;
    for i in 1..n - 1 {
        for j in 0..n - 1 {
            let v = grid[i][j];
            let lower = j == 0 || grid[i][j - 1] >= v;
            if lower && grid[i - 1][j] >= v && grid[i + 1][j] >= v && grid[i][j + 1] >= v {
                let z = secant(&sys, at(i, j), dre.min(dim));
                if bx.contains(z) && sys.det(z).norm() < 1e-6 {
                    let nearest = sp.roots.iter().map(|r| (r.value() - z).norm()).fold(f64::INFINITY, f64::min);
                    if nearest > 1e-3 {
                        missed += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        scalar_err < 1e-8 && sp.abscissa < 0.0 && missed == 0 && secs < 10.0,
        format!(
            "scalar error {scalar_err:.1e} (< 1e-8), rho = {:.6} (< 0), missed roots {missed}, {secs:.2} s (< 10 s)",
            sp.abscissa
        ),
    )
}

fn reference_report(p: &NetworkParams) -> sdhnn_core::conditions::ConditionReport {
    let spectral = spectral_analysis(p, &SpectralOptions::default()).unwrap();
    let path = BrownianPath::sample(2, 1e-3, -20.0, 20.0, 1).unwrap();
    let flow = LinearFlow::build(p, &path, (-20.0, 20.0)).unwrap();
    compute_constants(p, &spectral, &flow, ConditionOptions::default()).unwrap()
}

fn criterion_3() -> Verdict {
    let p = NetworkParams::reference_two_neuron();
    let r = reference_report(&p);
    let mut long = p.clone();
    long.delays = vec![2.0, 2.0];
    let l = reference_report(&long);
    (
        r.lemma6_ok && r.theorem6_ok && !l.theorem6_ok,
        format!(
            "reference lemma6_ok = {}, theorem6_ok = {} (value {:.4}); tau = 2 theorem6_ok = {} (value {:.4})",
            r.lemma6_ok, r.theorem6_ok, r.theorem6_value, l.theorem6_ok, l.theorem6_value
        ),
    )
}

/// Direct vs conjugated on one path, coarsened to each step.
fn criterion_4() -> Verdict {
    let start = Instant::now();
    let p = NetworkParams::reference_two_neuron();
    let base = BrownianPath::sample(2, 1e-3, 0.0, 1.0, 5).unwrap();
    let steps = [4e-3, 2e-3, 1e-3];
    let gaps: Vec<f64> = [4usize, 2, 1]
        .iter()
        .map(|&factor| {
            let dt = 1e-3 * factor as f64;
            let path = base.coarsen(factor).unwrap();
            let a = integrate(&p, &path, &seg(&[0.1, 0.2], dt), dt, 1.0, Route::Direct).unwrap();
            let b = integrate(&p, &path, &seg(&[0.1, 0.2], dt), dt, 1.0, Route::Conjugated).unwrap();
            sup_distance(&a, &b)
        })
        .collect();
    let order = fitted_order(&steps, &gaps);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let secs = start.elapsed().as_secs_f64();
    (
        decreasing && order >= 0.4 && secs < 30.0,
        format!("gaps {}, fitted order {order:.3} (>= 0.4), {secs:.2} s (< 30 s)", sci(&gaps)),
    )
}

fn criterion_5() -> Verdict {
    let p = NetworkParams::reference_two_neuron();
    let dt = 1e-3;
    let mut worst = 0.0_f64;
    for seed in [1, 2, 3] {
        let path = BrownianPath::sample(2, dt, 0.0, 2.0, seed).unwrap();
        for (t1, t2) in [(0.5, 0.5), (0.3, 0.7), (1.0, 1.0)] {
            worst = worst.max(cocycle_residual(&p, &path, t1, t2, &seg(&[0.1, 0.2], dt), dt).unwrap());
        }
    }
    (worst < 1e-10, format!("max residual {worst:.3e} (< 1e-10)"))
}

/// dt = 1/1600 so that every mesh 1/k is a multiple of dt.
fn criterion_6() -> Verdict {
    let start = Instant::now();
    let p = NetworkParams::reference_two_neuron();
    let dt = 1.0 / 1600.0;
    let path = BrownianPath::sample(2, dt, 0.0, 2.0, 11).unwrap();
    let initials = [seg(&[0.1, 0.2], dt), seg(&[10.0, 20.0], dt), seg(&[-1.0, 1.0], dt)];
    let table = wong_zakai_gap(&p, &path, &[10, 20, 40, 80], 1.0, &initials, dt).unwrap();
    let gaps: Vec<f64> = table.iter().map(|g| g.gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let factor = gaps[0] / gaps[3];
    let secs = start.elapsed().as_secs_f64();
    (
        monotone && factor >= 2.0 && secs < 60.0,
        format!("gaps {}, k=10/k=80 ratio {factor:.2} (>= 2), {secs:.2} s (< 60 s)", sci(&gaps)),
    )
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let p = NetworkParams::reference_two_neuron();
    let dt = 1e-3;
    let path = BrownianPath::sample(2, dt, -12.0, 4.0, 1).unwrap();
    let run = pullback_endpoints(&p, &path, &[8.0], &[seg(&[0.1, 0.2], dt), seg(&[10.0, 20.0], dt)], dt).unwrap();
    let diameter = run.levels[0].diameter;
    let est = stationary_point(&p, &path, &[8.0, 12.0], dt).unwrap();
    let cauchy = est.cauchy_residuals[0];
    let rate = attraction_rate(&p, &path, &seg(&[0.1, 0.2], dt), &seg(&[10.0, 20.0], dt), 4.0, dt).unwrap();
    let (slope, r2) = match rate {
        AttractionRate::Fitted(f) => (f.slope, f.r_squared),
        AttractionRate::Coincident => (f64::NAN, f64::NAN),
    };
    let secs = start.elapsed().as_secs_f64();
    (
        diameter < 1e-6 && cauchy < 1e-6 && slope < 0.0 && r2 > 0.99 && secs < 60.0,
        format!(
            "diameter(8) {diameter:.3e} (< 1e-6), Cauchy(8,12) {cauchy:.3e} (< 1e-6), slope {slope:.3} (< 0), R2 {r2:.5} (> 0.99), {secs:.2} s"
        ),
    )
}

/// Classical RK4 on a 1e-4 grid; delayed half-step values linearly interpolated.
fn rk4_dde(p: &NetworkParams, head: &[f64], h: f64, horizon: f64) -> Vec<DVector<f64>> {
    let lag: Vec<usize> = p.delays.iter().map(|d| (d / h).round() as usize).collect();
    let max_lag = *lag.iter().max().unwrap();
    let mut u = vec![DVector::from_row_slice(head); max_lag + 1];
    let delayed = |u: &Vec<DVector<f64>>, idx: usize, half: bool| {
        DVector::from_fn(p.n(), |j, _| {
            let i = idx - lag[j];
            if half {
                0.5 * (u[i][j] + u[i + 1][j])
            } else {
                u[i][j]
            }
        })
    };
    let rhs = |x: &DVector<f64>, d: &DVector<f64>| -&p.c * x + &p.h * x.map(f64::tanh) + &p.b * d.map(f64::tanh);
    for s in 0..(horizon / h).round() as usize {
        let idx = max_lag + s;
        let x = u[idx].clone();
        let dh = delayed(&u, idx, true);
        let k1 = rhs(&x, &delayed(&u, idx, false));
        let k2 = rhs(&(&x + &k1 * (h / 2.0)), &dh);
        let k3 = rhs(&(&x + &k2 * (h / 2.0)), &dh);
        let k4 = rhs(&(&x + &k3 * h), &delayed(&u, idx + 1, false));
        u.push(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }
    u.split_off(max_lag)
}

fn criterion_8() -> Verdict {
    let mut p = NetworkParams::reference_two_neuron();
    p.sigma = DMatrix::zeros(2, 2);
    let mut linear = p.clone();
    linear.h = DMatrix::zeros(2, 2);
    linear.b = DMatrix::zeros(2, 2);
    let steps = [4e-3, 2e-3, 1e-3, 5e-4];
    let errors: Vec<f64> = steps
        .iter()
        .map(|&dt| {
            let path = BrownianPath::sample(2, dt, 0.0, 1.0, 1).unwrap();
            let traj = integrate_direct(&linear, &path, &seg(&[1.0, 1.0], dt), dt, 1.0).unwrap();
            traj.forward_states()
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let e = (-5.0 * i as f64 * dt).exp();
                    max_abs(&u.add_scalar(-e)) / e
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let order = errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min);

    let dt = 1e-3;
    let oracle = rk4_dde(&p, &[0.1, 0.2], 1e-4, 2.0);
    let path = BrownianPath::sample(2, dt, 0.0, 2.0, 1).unwrap();
    let traj = integrate_direct(&p, &path, &seg(&[0.1, 0.2], dt), dt, 2.0).unwrap();
    let rk4 = traj
        .forward_states()
        .iter()
        .enumerate()
        .map(|(i, u)| (u - &oracle[i * 10]).norm())
        .fold(0.0, f64::max);
    (
        order >= 0.95 && rk4 < 1e-4,
        format!("exact-decay order {order:.3} (>= 0.95), RK4 sup gap on [0,2] {rk4:.3e} (< 1e-4)"),
    )
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let output = Command::new(env!("CARGO_BIN_EXE_sdhnn"))
            .args(["reproduce", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        (output.status.code(), out)
    };
    let (code_a, a) = run("a");
    let (code_b, b) = run("b");
    let names = [
        "trajectory_a.csv",
        "trajectory_b.csv",
        "spectrum.json",
        "conditions.json",
        "pullback.csv",
    ];
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .collect();
    (
        code_a == Some(0) && code_b == Some(0) && differing.is_empty(),
        format!("exit codes {code_a:?}/{code_b:?}, differing files {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("trajectories settle", criterion_1),
        ("spectral correctness", criterion_2),
        ("condition checkers", criterion_3),
        ("conjugation identity", criterion_4),
        ("cocycle property", criterion_5),
        ("Wong-Zakai convergence", criterion_6),
        ("pullback attraction", criterion_7),
        ("integrator order", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!("criterion {} {name}: {} ({detail})", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
