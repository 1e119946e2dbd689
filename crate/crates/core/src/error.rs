use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// `s` fell outside the open interval on which `m` is defined.
    #[error("s = {s} lies outside the admissible interval ({lo}, {hi})")]
    Domain { s: f64, lo: f64, hi: f64 },

    /// A (custom) coefficient evaluated to a non-positive value.
    #[error("m({s}) = {m} is not positive")]
    Positivity { s: f64, m: f64 },

    /// Argument outside the range of a function being inverted, or a
    /// time outside the span of a dense-output step.
    #[error("{what}: {value} is outside the admissible range [{lo}, {hi})")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("step size underflow at t = {t} (h = {h:e}) without meeting the tolerance")]
    StepFailure { t: f64, h: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
