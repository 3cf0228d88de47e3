use std::path::PathBuf;

use microreg::calibration::CalibrationError;
use microreg::distortion::DistortionError;
use microreg::evaluation::EvaluationError;
use microreg::imaging::ImagingError;
use microreg::io::IoError;
use microreg::labeling::LabelingError;
use microreg::projection::ProjectionError;
use microreg::registration::RegistrationError;
use microreg::synthgen::SynthError;
use thiserror::Error;

/// Process exit codes, one per error class. Usage errors exit with 2 from
/// argument parsing.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const VALIDATION: i32 = 5;
    pub const STAGE: i32 = 6;
    pub const REPLAY_MISMATCH: i32 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Parse(_) => exit::PARSE,
            CliError::Invalid(_) => exit::VALIDATION,
            CliError::Stage { .. } => exit::STAGE,
            CliError::Mismatch(_) => exit::REPLAY_MISMATCH,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<LabelingError> for CliError {
    fn from(e: LabelingError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::InvalidParams(m) => CliError::Invalid(m),
            RegistrationError::Stage { stage, source } => CliError::Stage {
                stage,
                message: source.to_string(),
            },
            other => CliError::stage("registration", other),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Csv(c) => CliError::Parse(format!("step log: {c}")),
            other => CliError::stage("calibrate", other),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::InvalidParams(_) | ImagingError::RangeExceedsWidth { .. } => {
                CliError::Invalid(e.to_string())
            }
            other => CliError::stage("disparity", other),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        match e {
            ProjectionError::InvalidCalibration(_) => CliError::Invalid(e.to_string()),
            other => CliError::stage("reconstruct", other),
        }
    }
}

impl From<DistortionError> for CliError {
    fn from(e: DistortionError) -> Self {
        CliError::stage("distortion", e)
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        CliError::stage("evaluate", e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}
