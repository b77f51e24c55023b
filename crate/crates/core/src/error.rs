use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Calibration stage tag carried by pipeline errors and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Step1,
    Step2,
    Step3A,
    Step3B,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Step1 => "step1",
            Stage::Step2 => "step2",
            Stage::Step3A => "step3a",
            Stage::Step3B => "step3b",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        match s {
            "step1" => Some(Stage::Step1),
            "step2" => Some(Stage::Step2),
            "step3a" => Some(Stage::Step3A),
            "step3b" => Some(Stage::Step3B),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point projects with non-positive depth")]
    NonPositiveDepth,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {required} correspondences, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no sign of the homography puts the target in front of the camera")]
    BehindCamera,

    #[error("objective is not finite at {0:?}")]
    NonFiniteObjective(Vec<f64>),
    #[error("scale bracket [{lo}, {hi}] contains no feasible point")]
    InfeasibleBracket { lo: f64, hi: f64 },
    #[error("median constraint does not change sign over [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("distortion too small to locate its center (median disparity {median_disparity:.3e} px)")]
    DistortionTooSmall { median_disparity: f64 },
    #[error("point grid too sparse for center-of-distortion search: {got} points, need {required}")]
    InsufficientDensity { required: usize, got: usize },
    #[error("ill-posed pose: |h31*h32| = {0:.3e}, target is (nearly) parallel to the sensor")]
    IllPosedPose(f64),
    #[error("optimization diverged: {0}")]
    OptimizationDiverged(String),
    #[error("radial curve not monotone after refinement: {fraction:.2}% decreasing pairs")]
    MonotonicityFailed { fraction: f64 },
    #[error("radial curve is not monotone at sample {index}")]
    NonMonotoneCurve { index: usize },

    #[error("generated grid is empty")]
    EmptyGrid,
    #[error("pose {pose}: point {point} falls outside the sensor")]
    PointOutsideSensor { pose: usize, point: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Stage tag, if the error came out of the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The underlying error with any stage wrapper removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
