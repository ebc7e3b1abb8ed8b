use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements, got {got}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    RangeOutOfBounds {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("embedding id {id} at position {position} out of range for table with {rows} rows")]
    IdOutOfRange {
        id: u32,
        position: usize,
        rows: usize,
    },
    #[error("target id {id} at position {position} out of range for {classes} classes")]
    TargetOutOfRange {
        id: u32,
        position: usize,
        classes: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("probability {p} outside [0, 1)")]
    InvalidProbability { p: f64 },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;
