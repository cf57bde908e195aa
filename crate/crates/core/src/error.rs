use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::benchgen::BenchError;
use crate::field::FieldError;
use crate::geometry::GeometryError;
use crate::io::IoError;
use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::optim::OptimError;
use crate::pipelines::PipelineError;
use crate::render::RenderError;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

pub type Result<T> = std::result::Result<T, Error>;
