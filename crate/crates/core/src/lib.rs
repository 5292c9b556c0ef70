//! Attention-model saliency for 3D seismic volumes.
//!
//! Stages, in pipeline order:
//!
//! 1. [`segy`] / [`volume`]: load a survey into a [`Volume3D`] (t fastest).
//! 2. [`spectral`]: overlapped local 3D FFTs, per-axis spectral projection,
//!    reduced to three energy volumes `E_t, E_x, E_y`.
//! 3. [`dcs`]: directional center-surround comparison of each energy volume,
//!    giving `S_t, S_x, S_y`.
//! 4. [`fusion`]: weighted combination, optionally with weights adapted by
//!    LMS, NLMS or RLS.
//!
//! [`pipeline`] chains them from a flat config file; [`synth`] builds
//! faulted/domed test volumes with ground-truth masks.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dcs;
pub mod fusion;
pub mod pipeline;
pub mod segy;
pub mod spectral;
pub mod synth;
pub mod volume;

use thiserror::Error;

pub use pipeline::{run_saliency, PipelineConfig, RunReport};
pub use volume::{Axis, Dims, Volume3D};

/// Pipeline stage a failure happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Energy,
    Dcs,
    Fusion,
    Export,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Energy => "energy",
            Stage::Dcs => "dcs",
            Stage::Fusion => "fusion",
            Stage::Export => "export",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Volume(#[from] volume::VolumeError),
    #[error(transparent)]
    Segy(#[from] segy::SegyError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Dcs(#[from] dcs::DcsError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            // config problems stay config problems wherever they surface
            e @ (Error::Config(_) | Error::Stage { .. }) => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Process exit code: 2 config, 3 input parse, 4 numeric or stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Stage { stage: Stage::Load, .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Segy(_) | Error::Dcs(dcs::DcsError::Template { .. } | dcs::DcsError::EmptyTemplate) => 3,
            Error::Volume(volume::VolumeError::Format(_)) => 3,
            _ => 4,
        }
    }
}
