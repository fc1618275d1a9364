//! Two-sided multi-component Wiener paths on a uniform grid.
//!
//! Increments are drawn from two independent ChaCha streams keyed by the seed:
//! stream 0 walks forward from `t = 0`, stream 1 walks backward. Sampling a
//! wider range therefore reproduces the narrower path bit-for-bit on the overlap.
//!
//! A `BrownianPath` is a view (`origin`) over shared storage, so the shift
//! `theta_t w(.) = w(. + t) - w(t)` is an index offset and never re-samples.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{grid_index, grid_steps};

/// Default backward extent of sampled paths.
pub const DEFAULT_T_MIN: f64 = -64.0;

#[derive(Debug)]
struct PathStorage {
    components: usize,
    step: f64,
    seed: u64,
    /// Absolute node index of the sampling origin (where W = 0).
    zero: usize,
    /// Cell-major increments: cell `a` spans absolute nodes `a` -> `a + 1`.
    increments: Vec<f64>,
    /// Node-major values relative to the sampling origin.
    nodes: Vec<f64>,
}

impl PathStorage {
    fn cells(&self) -> usize {
        self.increments.len() / self.components
    }
}

#[derive(Clone, Debug)]
pub struct BrownianPath {
    storage: Arc<PathStorage>,
    /// Absolute node index that this view treats as `t = 0`.
    origin: usize,
}

pub fn sample_path(m: usize, step: f64, t_min: f64, t_max: f64, seed: u64) -> Result<BrownianPath> {
    BrownianPath::sample(m, step, t_min, t_max, seed)
}

impl BrownianPath {
    pub fn sample(m: usize, step: f64, t_min: f64, t_max: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("path needs at least one component"));
        }
        if !(step > 0.0) {
            return Err(Error::config("path grid step must be positive"));
        }
        if !(t_min <= 0.0 && 0.0 <= t_max) {
            return Err(Error::config(format!("need t_min <= 0 <= t_max, got [{t_min}, {t_max}]")));
        }
        let back = grid_steps(-t_min, step)
            .ok_or_else(|| Error::config(format!("t_min = {t_min} is not a multiple of {step}")))?;
        let fwd = grid_steps(t_max, step)
            .ok_or_else(|| Error::config(format!("t_max = {t_max} is not a multiple of {step}")))?;

        let scale = step.sqrt();
        let mut increments = vec![0.0; (back + fwd) * m];

        let mut forward = ChaCha8Rng::seed_from_u64(seed);
        forward.set_stream(0);
        for cell in 0..fwd {
            let base = (back + cell) * m;
            for c in 0..m {
                let z: f64 = forward.sample(StandardNormal);
                increments[base + c] = z * scale;
            }
        }
        let mut backward = ChaCha8Rng::seed_from_u64(seed);
        backward.set_stream(1);
        for j in 0..back {
            let base = (back - 1 - j) * m;
            for c in 0..m {
                let z: f64 = backward.sample(StandardNormal);
                increments[base + c] = z * scale;
            }
        }

        let total = back + fwd + 1;
        let mut nodes = vec![0.0; total * m];
        for a in back..back + fwd {
            for c in 0..m {
                nodes[(a + 1) * m + c] = nodes[a * m + c] + increments[a * m + c];
            }
        }
        for a in (0..back).rev() {
            for c in 0..m {
                nodes[a * m + c] = nodes[(a + 1) * m + c] - increments[a * m + c];
            }
        }

        Ok(BrownianPath {
            storage: Arc::new(PathStorage {
                components: m,
                step,
                seed,
                zero: back,
                increments,
                nodes,
            }),
            origin: back,
        })
    }

    /// Re-samples over a wider range; identical to `self` on the old range.
    /// Only valid for unshifted, freshly sampled paths.
    pub fn extend(&self, t_min: f64, t_max: f64) -> Result<Self> {
        if self.origin != self.storage.zero {
            return Err(Error::config("only unshifted paths can be extended"));
        }
        Self::sample(
            self.components(),
            self.step(),
            t_min.min(self.t_min()),
            t_max.max(self.t_max()),
            self.seed(),
        )
    }

    pub fn components(&self) -> usize {
        self.storage.components
    }

    pub fn step(&self) -> f64 {
        self.storage.step
    }

    pub fn seed(&self) -> u64 {
        self.storage.seed
    }

    pub fn t_min(&self) -> f64 {
        -(self.origin as f64) * self.step()
    }

    pub fn t_max(&self) -> f64 {
        (self.storage.cells() - self.origin) as f64 * self.step()
    }

    /// Grid index of `t_min` (non-positive) and `t_max` relative to this view's origin.
    pub fn index_range(&self) -> (isize, isize) {
        (
            -(self.origin as isize),
            (self.storage.cells() - self.origin) as isize,
        )
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        let eps = 1e-9 * self.step();
        self.t_min() <= t0 + eps && t1 - eps <= self.t_max()
    }

    pub fn require_cover(&self, t0: f64, t1: f64) -> Result<()> {
        if self.covers(t0, t1) {
            Ok(())
        } else {
            Err(Error::PathTooShort {
                have_min: self.t_min(),
                have_max: self.t_max(),
                need_min: t0,
                need_max: t1,
            })
        }
    }

    fn absolute(&self, i: isize) -> usize {
        let a = self.origin as isize + i;
        debug_assert!(a >= 0 && a as usize <= self.storage.cells());
        a as usize
    }

    /// `W(i·step)` for a node index relative to this view's origin.
    pub fn node_value(&self, component: usize, i: isize) -> f64 {
        let m = self.storage.components;
        let a = self.absolute(i);
        self.storage.nodes[a * m + component] - self.storage.nodes[self.origin * m + component]
    }

    /// Raw increments `W((i+1)·step) - W(i·step)` of cell `i` for all components.
    pub fn increments(&self, i: isize) -> &[f64] {
        let m = self.storage.components;
        let a = self.absolute(i);
        &self.storage.increments[a * m..(a + 1) * m]
    }

    pub fn value(&self, component: usize, t: f64) -> Result<f64> {
        if component >= self.components() {
            return Err(Error::config(format!("component {component} out of range")));
        }
        if !self.covers(t, t) {
            return Err(Error::Domain {
                what: "path time",
                value: t,
                lo: self.t_min(),
                hi: self.t_max(),
            });
        }
        let pos = t / self.step();
        let nearest = pos.round();
        if (pos - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
            return Ok(self.node_value(component, nearest as isize));
        }
        let i = pos.floor() as isize;
        let w = pos - i as f64;
        Ok(self.node_value(component, i) * (1.0 - w) + self.node_value(component, i + 1) * w)
    }

    /// `theta_t`: the path `s -> W(t + s) - W(t)`.
    pub fn shift(&self, t: f64) -> Result<Self> {
        let k = grid_index(t, self.step())
            .ok_or_else(|| Error::config(format!("shift {t} is not aligned to the path grid")))?;
        let origin = self.origin as isize + k;
        if origin < 0 || origin as usize > self.storage.cells() {
            return Err(Error::Domain {
                what: "shift",
                value: t,
                lo: self.t_min(),
                hi: self.t_max(),
            });
        }
        Ok(BrownianPath {
            storage: Arc::clone(&self.storage),
            origin: origin as usize,
        })
    }

    /// The same path on a grid `factor` times coarser: node values are shared,
    /// increments are sums of the fine increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("coarsening factor must be positive"));
        }
        let (lo, hi) = self.index_range();
        let lo_c = -((-lo) / factor as isize);
        let hi_c = hi / factor as isize;
        let m = self.components();
        let cells = (hi_c - lo_c) as usize;
        let mut increments = vec![0.0; cells * m];
        let mut nodes = vec![0.0; (cells + 1) * m];
        for (ci, cell) in (lo_c..hi_c).enumerate() {
            for sub in 0..factor as isize {
                let fine = self.increments(cell * factor as isize + sub);
                for c in 0..m {
                    increments[ci * m + c] += fine[c];
                }
            }
        }
        for (ci, node) in (lo_c..=hi_c).enumerate() {
            for c in 0..m {
                nodes[ci * m + c] = self.node_value(c, node * factor as isize);
            }
        }
        let zero = (-lo_c) as usize;
        Ok(BrownianPath {
            storage: Arc::new(PathStorage {
                components: m,
                step: self.step() * factor as f64,
                seed: self.seed(),
                zero,
                increments,
                nodes,
            }),
            origin: zero,
        })
    }

    /// CSV with header `t,W_1,...,W_m` at every `stride`-th node.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1) as isize;
        let m = self.components();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|c| format!("W_{c}")));
        w.write_record(&header)?;
        let (lo, hi) = self.index_range();
        let mut i = lo;
        while i <= hi {
            let mut row = vec![(i as f64 * self.step()).to_string()];
            row.extend((0..m).map(|c| self.node_value(c, i).to_string()));
            w.write_record(&row)?;
            i += stride;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a path written by [`BrownianPath::write_csv`] with stride 1. The
    /// grid must be uniform and contain `t = 0` with `W(0) = 0`; `seed` is
    /// recorded as provenance only.
    pub fn read_csv<R: Read>(input: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let m = r.headers()?.len().saturating_sub(1);
        if m == 0 {
            return Err(Error::config("path CSV needs columns t,W_1,...,W_m"));
        }
        let mut times = Vec::new();
        let mut nodes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("bad number {s:?} in path CSV: {e}")))
            };
            times.push(parse(&rec[0])?);
            for c in 0..m {
                nodes.push(parse(&rec[c + 1])?);
            }
        }
        if times.len() < 2 {
            return Err(Error::config("path CSV needs at least two rows"));
        }
        let step = times[1] - times[0];
        if !(step > 0.0)
            || times
                .windows(2)
                .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0))
        {
            return Err(Error::config("path CSV time column is not a uniform grid"));
        }
        let zero = times
            .iter()
            .position(|t| t.abs() <= 1e-9 * step)
            .ok_or_else(|| Error::config("path CSV does not contain t = 0"))?;
        if nodes[zero * m..(zero + 1) * m].iter().any(|&w| w != 0.0) {
            return Err(Error::config("path CSV must have W(0) = 0"));
        }
        let cells = times.len() - 1;
        let mut increments = vec![0.0; cells * m];
        for a in 0..cells {
            for c in 0..m {
                increments[a * m + c] = nodes[(a + 1) * m + c] - nodes[a * m + c];
            }
        }
        Ok(BrownianPath {
            storage: Arc::new(PathStorage {
                components: m,
                step,
                seed,
                zero,
                increments,
                nodes,
            }),
            origin: zero,
        })
    }
}

pub fn path_value(path: &BrownianPath, component: usize, t: f64) -> Result<f64> {
    path.value(component, t)
}

pub fn shift(path: &BrownianPath, t: f64) -> Result<BrownianPath> {
    path.shift(t)
}

/// Piecewise-linear interpolant of a path on the mesh `j / k`.
#[derive(Clone, Debug)]
pub struct WongZakaiView<'a> {
    parent: &'a BrownianPath,
    k: u64,
    /// Path cells per mesh cell.
    ratio: usize,
}

pub fn wong_zakai(path: &BrownianPath, k: u64) -> Result<WongZakaiView<'_>> {
    WongZakaiView::new(path, k)
}

impl<'a> WongZakaiView<'a> {
    pub fn new(parent: &'a BrownianPath, k: u64) -> Result<Self> {
        let ratio = if k == 0 {
            None
        } else {
            grid_steps(1.0 / k as f64, parent.step()).filter(|&r| r > 0)
        };
        let ratio = ratio.ok_or_else(|| {
            Error::config(format!(
                "mesh 1/k = 1/{k} is not a positive multiple of the path step {}",
                parent.step()
            ))
        })?;
        Ok(WongZakaiView { parent, k, ratio })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn parent(&self) -> &BrownianPath {
        self.parent
    }

    /// Path cells per mesh cell, `(1/k) / step`.
    pub fn ratio(&self) -> usize {
        self.ratio
    }

    fn mesh_cell_of_node(&self, i: isize) -> isize {
        i.div_euclid(self.ratio as isize)
    }

    fn cell_slope(&self, component: usize, j: isize) -> f64 {
        let r = self.ratio as isize;
        let dw = self.parent.node_value(component, (j + 1) * r) - self.parent.node_value(component, j * r);
        dw / (self.ratio as f64 * self.parent.step())
    }

    /// Derivative on the mesh cell that contains path node `i`.
    pub fn derivative_at_node(&self, component: usize, i: isize) -> f64 {
        self.cell_slope(component, self.mesh_cell_of_node(i))
    }

    /// Value at path node `i`.
    pub fn value_at_node(&self, component: usize, i: isize) -> f64 {
        let r = self.ratio as isize;
        let j = self.mesh_cell_of_node(i);
        let offset = i - j * r;
        if offset == 0 {
            return self.parent.node_value(component, j * r);
        }
        let w0 = self.parent.node_value(component, j * r);
        let w1 = self.parent.node_value(component, (j + 1) * r);
        w0 + (w1 - w0) * (offset as f64 / self.ratio as f64)
    }

    fn mesh_cell(&self, t: f64) -> Result<isize> {
        let mesh = self.ratio as f64 * self.parent.step();
        let j = (t / mesh).floor() as isize;
        // Snap t that lies on a mesh node up to rounding.
        let j = if ((j + 1) as f64 * mesh - t).abs() <= 1e-9 * mesh { j + 1 } else { j };
        let r = self.ratio as isize;
        let (lo, hi) = self.parent.index_range();
        if j * r < lo || (j + 1) * r > hi {
            return Err(Error::Domain {
                what: "Wong-Zakai time",
                value: t,
                lo: self.parent.t_min(),
                hi: self.parent.t_max(),
            });
        }
        Ok(j)
    }

    pub fn value(&self, component: usize, t: f64) -> Result<f64> {
        let mesh = self.ratio as f64 * self.parent.step();
        let r = self.ratio as isize;
        // The final mesh node of the path is a valid evaluation point.
        if let Some(i) = grid_index(t, mesh) {
            let node = i * r;
            let (lo, hi) = self.parent.index_range();
            if node >= lo && node <= hi {
                return Ok(self.parent.node_value(component, node));
            }
        }
        let j = self.mesh_cell(t)?;
        let t0 = j as f64 * mesh;
        Ok(self.parent.node_value(component, j * r) + self.cell_slope(component, j) * (t - t0))
    }

    pub fn derivative(&self, component: usize, t: f64) -> Result<f64> {
        let j = self.mesh_cell(t)?;
        Ok(self.cell_slope(component, j))
    }
}
