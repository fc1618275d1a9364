//! JSON run configuration.
//!
//! Matrices are row-major nested arrays. Everything except `params`, `dt`,
//! `horizon` and `seed` has a default.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditions::{ConditionOptions, LgTildeSource};
use crate::error::{Error, Result};
use crate::integrator::Route;
use crate::model::{validate_params, ActivationSpec, HistorySegment, NetworkParams, Table};
use crate::spectral::{SearchBox, SpectralOptions, DEFAULT_GAMMA_FRACTION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ActivationConfig {
    Tanh,
    CustomTable {
        f: Table,
        g: Table,
        lipschitz_f: f64,
        lipschitz_g: f64,
        bound: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        linear_part: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub delays: Vec<f64>,
    #[serde(default = "default_activation")]
    pub activation: ActivationConfig,
}

fn default_activation() -> ActivationConfig {
    ActivationConfig::Tanh
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteName {
    #[default]
    Direct,
    Conjugated,
    WongZakai,
}

impl std::str::FromStr for RouteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(RouteName::Direct),
            "conjugated" => Ok(RouteName::Conjugated),
            "wong-zakai" => Ok(RouteName::WongZakai),
            other => Err(Error::config(format!(
                "unknown route {other:?}; expected direct, conjugated or wong-zakai"
            ))),
        }
    }
}

/// A constant head, or explicit samples from `-tau` to `0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum SegmentConfig {
    Constant(Vec<f64>),
    Table { step: f64, values: Vec<Vec<f64>> },
}

impl SegmentConfig {
    pub fn build(&self, tau: f64, dt: f64) -> Result<HistorySegment> {
        match self {
            SegmentConfig::Constant(head) => HistorySegment::constant(head, tau, dt),
            SegmentConfig::Table { step, values } => {
                if (step - dt).abs() > 1e-12 * dt.max(1.0) {
                    return Err(Error::config(format!(
                        "tabulated segment step {step} differs from dt {dt}"
                    )));
                }
                let values = values.iter().map(|v| DVector::from_vec(v.clone())).collect();
                let seg = HistorySegment::new(dt, values)?;
                if (seg.tau() - tau).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "tabulated segment spans {} but tau is {tau}",
                        seg.tau()
                    )));
                }
                Ok(seg)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default)]
    pub search_box: Option<SearchBox>,
    #[serde(default)]
    pub gamma_fraction: Option<f64>,
    /// Horizon of the fundamental solution.
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    #[serde(default)]
    pub lgtilde: LgTildeSource,
    /// Window `[a, b]` over which `L_v = sup ||v||` is estimated.
    #[serde(default = "default_lv_horizon")]
    pub lv_horizon: (f64, f64),
}

fn default_lv_horizon() -> (f64, f64) {
    (-20.0, 20.0)
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            lgtilde: LgTildeSource::Numerical,
            lv_horizon: default_lv_horizon(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default)]
    pub route: RouteName,
    #[serde(default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub pullback_times: Option<Vec<f64>>,
    #[serde(default = "default_segments")]
    pub initial_segments: Vec<SegmentConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// `(t1, t2)` pairs for the cocycle experiment.
    #[serde(default)]
    pub cocycle_times: Option<Vec<(f64, f64)>>,
    /// Mesh parameters for the Wong–Zakai gap table.
    #[serde(default)]
    pub ks: Option<Vec<u64>>,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub conditions: ConditionsConfig,
}

fn default_segments() -> Vec<SegmentConfig> {
    vec![SegmentConfig::Constant(vec![0.1, 0.2])]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("{name} has rows of unequal length")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ParamsConfig {
    pub fn from_params(p: &NetworkParams) -> Self {
        let activation = match &p.activation.kind {
            crate::model::ActivationKind::Tanh => ActivationConfig::Tanh,
            crate::model::ActivationKind::CustomTable { f, g } => ActivationConfig::CustomTable {
                f: f.clone(),
                g: g.clone(),
                lipschitz_f: p.activation.lipschitz_f,
                lipschitz_g: p.activation.lipschitz_g,
                bound: p.activation.bound,
                linear_part: Some(rows(&p.activation.linear_part)),
            },
        };
        ParamsConfig {
            c: rows(&p.c),
            h: rows(&p.h),
            b: rows(&p.b),
            sigma: rows(&p.sigma),
            delays: p.delays.clone(),
            activation,
        }
    }

    /// Builds and structurally validates the parameters; table warnings are
    /// returned alongside.
    pub fn build(&self) -> Result<(NetworkParams, Vec<String>)> {
        let c = matrix("C", &self.c)?;
        let n = c.nrows();
        let (activation, warnings) = match &self.activation {
            ActivationConfig::Tanh => (ActivationSpec::tanh(n), Vec::new()),
            ActivationConfig::CustomTable {
                f,
                g,
                lipschitz_f,
                lipschitz_g,
                bound,
                linear_part,
            } => {
                let lp = linear_part.as_deref().map(|r| matrix("linear_part", r)).transpose()?;
                ActivationSpec::custom_table(
                    n,
                    Table::new(f.xs.clone(), f.ys.clone())?,
                    Table::new(g.xs.clone(), g.ys.clone())?,
                    *lipschitz_f,
                    *lipschitz_g,
                    *bound,
                    lp,
                )?
            }
        };
        let params = NetworkParams::new(
            c,
            matrix("H", &self.h)?,
            matrix("B", &self.b)?,
            matrix("Sigma", &self.sigma)?,
            self.delays.clone(),
            activation,
        )?;
        Ok((params, warnings))
    }
}

impl RunConfig {
    /// The two-neuron reference network with `dt = 1e-3`, `T = 5`.
    pub fn reference(seed: u64) -> Self {
        RunConfig {
            params: ParamsConfig::from_params(&NetworkParams::reference_two_neuron()),
            dt: 1e-3,
            horizon: 5.0,
            seed,
            route: RouteName::Direct,
            k: None,
            pullback_times: None,
            initial_segments: default_segments(),
            output_dir: default_output_dir(),
            cocycle_times: None,
            ks: None,
            spectral: SpectralConfig::default(),
            conditions: ConditionsConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolved route; `k` is required for `wong-zakai` and must make
    /// `1 / (k dt)` an integer.
    pub fn resolved_route(&self) -> Result<Route> {
        match self.route {
            RouteName::Direct => Ok(Route::Direct),
            RouteName::Conjugated => Ok(Route::Conjugated),
            RouteName::WongZakai => {
                let k = self
                    .k
                    .ok_or_else(|| Error::config("route wong-zakai needs k"))?;
                check_mesh(k, self.dt)?;
                Ok(Route::WongZakai { k })
            }
        }
    }

    /// Parameters validated against `dt`, plus every other config invariant.
    pub fn build_params(&self) -> Result<(NetworkParams, Vec<String>)> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::config(format!("horizon = {} must be positive", self.horizon)));
        }
        let (params, warnings) = self.params.build()?;
        validate_params(&params, self.dt).into_result()?;
        self.resolved_route()?;
        if let Some(ks) = &self.ks {
            for &k in ks {
                check_mesh(k, self.dt)?;
            }
        }
        if let Some(times) = &self.pullback_times {
            if times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("pullback_times must be positive and strictly increasing"));
            }
        }
        if self.initial_segments.is_empty() {
            return Err(Error::config("initial_segments must not be empty"));
        }
        Ok((params, warnings))
    }

    pub fn initial_segments(&self, params: &NetworkParams) -> Result<Vec<HistorySegment>> {
        self.initial_segments
            .iter()
            .map(|s| {
                let seg = s.build(params.tau(), self.dt)?;
                if seg.dim() != params.n() {
                    return Err(Error::config(format!(
                        "initial segment has dimension {}, network has {}",
                        seg.dim(),
                        params.n()
                    )));
                }
                Ok(seg)
            })
            .collect()
    }

    pub fn spectral_options(&self) -> SpectralOptions {
        SpectralOptions {
            search_box: self.spectral.search_box,
            gamma_fraction: self.spectral.gamma_fraction.unwrap_or(DEFAULT_GAMMA_FRACTION),
            horizon: self.spectral.horizon,
            dt: self.dt,
            ..SpectralOptions::default()
        }
    }

    pub fn condition_options(&self) -> ConditionOptions {
        ConditionOptions {
            lgtilde: self.conditions.lgtilde,
        }
    }
}

fn check_mesh(k: u64, dt: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    let ratio = 1.0 / (k as f64 * dt);
    if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-6 {
        return Err(Error::config(format!(
            "mesh 1/k = {} is not a multiple of dt = {dt}",
            1.0 / k as f64
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trip() {
        let cfg = RunConfig::reference(3);
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let (p, warnings) = back.build_params().unwrap();
        assert!(warnings.is_empty());
        let r = NetworkParams::reference_two_neuron();
        assert_eq!(p.b, r.b);
        assert_eq!(p.c, r.c);
        assert_eq!(p.delays, r.delays);
    }

    #[test]
    fn minimal_document() {
        let text = r#"{
            "params": {"C": [[5,0],[0,5]], "H": [[0,0],[0,0]], "B": [[0,0],[0,0]],
                       "Sigma": [[0,0],[0,0]], "delays": [0.1, 0.1]},
            "dt": 0.001, "horizon": 1, "seed": 7,
            "initial_segments": [{"constant": [1, 2]}]
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.route, RouteName::Direct);
        assert_eq!(cfg.conditions.lv_horizon, (-20.0, 20.0));
        let (p, _) = cfg.build_params().unwrap();
        let segs = cfg.initial_segments(&p).unwrap();
        assert_eq!(segs[0].values().len(), 101);
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = RunConfig::from_json("{\n  \"dt\": 0.001,\n  oops\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("column"), "{msg}");
    }

    #[test]
    fn invariant_violations() {
        let mut cfg = RunConfig::reference(1);
        cfg.dt = 0.03;
        assert!(matches!(cfg.build_params(), Err(Error::Config(_))));

        let mut cfg = RunConfig::reference(1);
        cfg.route = RouteName::WongZakai;
        assert!(cfg.build_params().is_err());
        cfg.k = Some(80);
        assert!(cfg.build_params().is_err());
        cfg.dt = 1.0 / 800.0;
        assert_eq!(cfg.resolved_route().unwrap(), Route::WongZakai { k: 80 });

        let mut cfg = RunConfig::reference(1);
        cfg.params.c[0][1] = 1.0;
        assert!(cfg.build_params().is_err());
    }

    #[test]
    fn tabulated_segment() {
        let cfg = RunConfig::reference(1);
        let (p, _) = cfg.build_params().unwrap();
        let values: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64, 0.0]).collect();
        let seg = SegmentConfig::Table { step: 1e-3, values }.build(p.tau(), 1e-3).unwrap();
        assert_eq!(seg.head()[0], 100.0);
        let short = SegmentConfig::Table { step: 1e-3, values: vec![vec![0.0, 0.0]; 50] };
        assert!(short.build(p.tau(), 1e-3).is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::reference(1).to_json().unwrap()).unwrap();
        v["dtt"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }
}
