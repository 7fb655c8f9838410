use std::path::PathBuf;

/// Errors raised by the simulator, the DSP chain and the analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("at least one gate must be simulated")]
    NoGates,

    #[error("event {index} at t = {time_s:e} s lies outside the trace [0, {duration_s:e}) s")]
    EventOutsideTrace {
        index: usize,
        time_s: f64,
        duration_s: f64,
    },

    #[error("waveform shape mismatch: {left} samples vs {right} samples")]
    ShapeMismatch { left: usize, right: usize },

    #[error("waveform sample rate mismatch: {left:e} Hz vs {right:e} Hz")]
    SampleRateMismatch { left: f64, right: f64 },

    #[error("trace of {duration_s:e} s is shorter than the differencer delay {delay_s:e} s")]
    TraceTooShort { duration_s: f64, delay_s: f64 },

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("histogram is empty (all bins zero)")]
    EmptyHistogram,

    #[error("no usable photon signal: i_ph = {i_ph:e} does not exceed i_ni = {i_ni:e}")]
    NoPhotonSignal { i_ph: f64, i_ni: f64 },

    #[error("net click probability {0} is outside [0, 1)")]
    ClickProbabilityOutOfRange(f64),

    #[error("linearity analysis needs at least 5 points, got {0}")]
    TooFewPoints(usize),

    #[error("linearity analysis needs at least 10 dB of flux span, got {0:.2} dB")]
    FluxSpanTooNarrow(f64),

    #[error("dark count probability must be positive for a figure of merit")]
    ZeroDarkProbability,

    #[error("gate count for `{0}` must be positive")]
    ZeroGateCount(&'static str),

    #[error("scenario line {line}: {message}")]
    ScenarioSyntax { line: usize, message: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("unknown scenario kind `{0}`")]
    UnknownKind(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: reason.into(),
        })
    }
}
