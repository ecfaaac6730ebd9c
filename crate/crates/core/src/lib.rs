//! Level-set optimization of support structures for heat dissipation in laser powder bed fusion.
//!
//! A 2D build chamber is meshed once with linear triangles. Each build stage activates one more
//! meta-layer, flash-heats it and lets it cool against the build plate. The optimizer places
//! support material so that heat leaves the freshly built layers quickly.
//!
//! ```
//! use supportopt::{adjoint, config, levelset::LevelSetField};
//!
//! let cfg = config::preset("overhang2d").unwrap();
//! let model = cfg.build_model().unwrap();
//! assert_eq!(model.layer_count(), 50);
//! let part_only = LevelSetField::initial(&model, -1.0);
//! # let _ = (adjoint::GradientMode::default(), part_only);
//! ```

use thiserror::Error;

pub mod adjoint;
pub mod config;
pub mod fem;
pub mod geometry;
pub mod levelset;
pub mod materials;
pub mod optimizer;
pub mod process;
pub mod runner;
pub mod vtk;

use adjoint::AdjointError;
use fem::{FemError, SolveError};
use optimizer::OptimizeError;
use process::ProcessError;

/// Top-level failure of a run, grouped by the exit code the command line reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("output: {0}")]
    Io(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

fn fem_non_finite(e: &FemError) -> bool {
    matches!(e, FemError::Solve(SolveError::NonFinite))
}

fn adjoint_non_finite(e: &AdjointError) -> bool {
    match e {
        AdjointError::NonFinite(_) => true,
        AdjointError::Solve { source, .. } | AdjointError::Stage { source, .. } => fem_non_finite(source),
        AdjointError::ShortHistory { .. } => false,
    }
}

impl Error {
    /// 1 configuration or output problem, 2 solver failure, 3 non-finite numerics.
    pub fn exit_code(&self) -> i32 {
        let non_finite = match self {
            Error::Config(_) | Error::Io(_) => return 1,
            Error::Optimize(OptimizeError::Config(_)) => return 1,
            Error::Process(ProcessError::Stage { source, .. }) => fem_non_finite(source),
            Error::Adjoint(e) => adjoint_non_finite(e),
            Error::Optimize(OptimizeError::NonFinite { .. }) => true,
            Error::Optimize(OptimizeError::Analysis { source, .. }) => adjoint_non_finite(source),
            Error::Optimize(OptimizeError::Update { .. }) => false,
        };
        if non_finite {
            3
        } else {
            2
        }
    }
}

// the guide's snippets run as doctests so the book follows the API
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/process.md")]
    mod process {}
    #[doc = include_str!("../../../book/src/levelset.md")]
    mod levelset {}
    #[doc = include_str!("../../../book/src/adjoint.md")]
    mod adjoint {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
