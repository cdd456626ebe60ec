//! Switching-loss separation toolkit for power-FET characterization.
//!
//! The turn-off loss of a FET splits into the charge energy stored in its
//! output capacitance plus the overlap loss of the voltage-current
//! crossing; the turn-on loss equals the discharge energy. Measuring the
//! event energies in a half-bridge single-pulse test and the
//! charge-voltage behaviour in a Sawyer-Tower circuit therefore lets the
//! individual components, including the capacitance hysteresis loss, be
//! separated by arithmetic.
//!
//! The crate provides:
//!
//! * [`waveform`] — uniformly sampled time series, resampling, affine
//!   transforms, windowed trapezoidal integration, and transient window
//!   detection;
//! * [`sawyer_tower`] — charge extraction, Q-V loops, branch energies,
//!   loop-area hysteresis, and large-signal C(V) curves;
//! * [`loss`] — event energies, the overlap integral, scalar separation,
//!   and the capture-pair pipeline with cross-validation;
//! * [`coss_model`] and [`simulator`] — a two-branch hysteretic Q(V)
//!   device model and fixed-step simulators for both test circuits that
//!   emit captures with tallied ground-truth energies;
//! * [`capture_io`], [`config`], [`report`] — the file formats and report
//!   emission behind the command-line tool.

pub mod capture_io;
pub mod config;
pub mod coss_model;
pub mod loss;
pub mod report;
pub mod sawyer_tower;
pub mod simulator;
pub mod waveform;

pub use capture_io::{parse_capture_csv, write_capture, CaptureIoError, ColumnSpec};
pub use config::{load_config, parse_si_value, AnalysisConfig, AnalysisMode, ConfigError};
pub use coss_model::{Branch, HysteresisCossModel, ModelError};
pub use loss::{
    cross_validate, event_energy, overlap_energy, separate_from_captures, separate_from_scalars,
    CaptureSeparation, CrossValidation, LossBreakdown, LossError,
};
pub use report::{read_report, write_report, Report, ReportError, ReportFormat};
pub use sawyer_tower::{
    branch_energy, build_qv_loop, charge_from_reference, coss_large_signal, hysteresis_energy,
    split_branches, BranchPair, CossCurve, LoopError, QvLoop, QvPoint,
};
pub use simulator::{
    energy_balance, simulate_sawyer_tower, simulate_single_pulse, ExcitationShape, GroundTruth,
    PulseParams, SimError, StParams,
};
pub use waveform::{
    detect_turnoff_window, detect_turnon_window, Capture, TimeWindow, Unit, Waveform, WaveformError,
};

/// Any error produced by this crate, for callers that funnel everything
/// into one exit path. `name()` yields the stable short name of the
/// underlying condition.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    CaptureIo(#[from] CaptureIoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::Waveform(e) => waveform_error_name(e),
            Error::Loop(e) => loop_error_name(e),
            Error::Loss(e) => match e {
                LossError::NegativeComponent { .. } => "NegativeComponent",
                LossError::MissingChannel { .. } => "MissingChannel",
                LossError::DuplicateChannelMapping { .. } => "DuplicateChannelMapping",
                LossError::Waveform(inner) => waveform_error_name(inner),
                LossError::Loop(inner) => loop_error_name(inner),
                LossError::Config(inner) => config_error_name(inner),
            },
            Error::Model(e) => model_error_name(e),
            Error::Sim(e) => match e {
                SimError::StepTooCoarse { .. } => "StepTooCoarse",
                SimError::ModelNotInvertible { .. } => "ModelNotInvertible",
                SimError::NonMonotoneCharge { .. } => "NonMonotoneCharge",
                SimError::InvalidParams { .. } => "InvalidParams",
                SimError::Model(inner) => model_error_name(inner),
                SimError::MissingChannel { .. } => "MissingChannel",
                SimError::Waveform(inner) => waveform_error_name(inner),
            },
            Error::CaptureIo(e) => match e {
                CaptureIoError::Io { .. } => "IoFailure",
                CaptureIoError::MalformedRow { .. } => "MalformedRow",
                CaptureIoError::NonUniformTimebase { .. } => "NonUniformTimebase",
                CaptureIoError::MissingColumn { .. } => "MissingColumn",
                CaptureIoError::NoData { .. } => "NoData",
                CaptureIoError::Waveform(inner) => waveform_error_name(inner),
            },
            Error::Config(e) => config_error_name(e),
            Error::Report(e) => match e {
                ReportError::IoFailure { .. } => "IoFailure",
                ReportError::ParseFailure { .. } => "ParseFailure",
            },
        }
    }
}

fn waveform_error_name(e: &WaveformError) -> &'static str {
    match e {
        WaveformError::NonPositiveStep { .. } => "NonPositiveStep",
        WaveformError::TooShort { .. } => "TooShort",
        WaveformError::NonFinite { .. } => "NonFinite",
        WaveformError::ZeroGain => "ZeroGain",
        WaveformError::WindowOutOfRange { .. } => "WindowOutOfRange",
        WaveformError::InvalidWindow { .. } => "InvalidWindow",
        WaveformError::InvalidThresholds { .. } => "InvalidThresholds",
        WaveformError::NoTransient => "NoTransient",
        WaveformError::MultipleAmbiguous { .. } => "MultipleAmbiguous",
        WaveformError::Misaligned { .. } => "Misaligned",
        WaveformError::UnitMismatch { .. } => "UnitMismatch",
    }
}

fn loop_error_name(e: &LoopError) -> &'static str {
    match e {
        LoopError::NotClosed { .. } => "NotClosed",
        LoopError::Misaligned(_) => "Misaligned",
        LoopError::DegenerateLoop { .. } => "DegenerateLoop",
        LoopError::NonMonotoneBranch => "NonMonotoneBranch",
        LoopError::TooFewPoints { .. } => "TooFewPoints",
        LoopError::NonPositiveCapacitance(_) => "NonPositiveCapacitance",
        LoopError::InvalidSmoothing(_) => "InvalidSmoothing",
        LoopError::NegativeCapacitance { .. } => "NegativeCapacitance",
    }
}

fn model_error_name(e: &ModelError) -> &'static str {
    match e {
        ModelError::TooFewPoints(_) => "TooFewPoints",
        ModelError::NotMonotone { .. } => "NotMonotone",
        ModelError::EndpointMismatch(..) => "EndpointMismatch",
        ModelError::BranchesCross => "BranchesCross",
        ModelError::NonFinite => "NonFinite",
        ModelError::AreaTooLarge { .. } => "AreaTooLarge",
    }
}

fn config_error_name(e: &ConfigError) -> &'static str {
    match e {
        ConfigError::Io { .. } => "IoFailure",
        ConfigError::UnknownKey { .. } => "UnknownKey",
        ConfigError::MissingRequired { .. } => "MissingRequired",
        ConfigError::UnparseableValue { .. } => "UnparseableValue",
    }
}
