use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("state diverged at t = {t}: |u| = {norm:e}")]
    Divergence { t: f64, norm: f64 },

    #[error("linear flow is degenerate at t = {t}: condition number {condition:e}")]
    FlowDegenerate { t: f64, condition: f64 },

    #[error(
        "path covers [{have_min}, {have_max}] but [{need_min}, {need_max}] is required; \
         extend the path (e.g. BrownianPath::extend) and retry"
    )]
    PathTooShort {
        have_min: f64,
        have_max: f64,
        need_min: f64,
        need_max: f64,
    },

    #[error(
        "no convergent characteristic root in Re [{re_min}, {re_max}] x Im [{im_min}, {im_max}]; \
         widen the search box"
    )]
    EmptySpectrum {
        re_min: f64,
        re_max: f64,
        im_min: f64,
        im_max: f64,
    },

    #[error("unstable linearization: spectral abscissa {0} >= 0")]
    UnstableLinearization(f64),

    #[error("absorbing condition c1 + rho/2 < 0 < c1 + rho/2 + gamma does not hold (margins {0}, {1})")]
    AbsorbingConditionFailed(f64, f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
