use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("region centre lies outside the raster by more than the radius")]
    EmptyRegion,
    #[error("raster has no road pixels")]
    NoRoadPixels,
    #[error("raster dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("region has no usable descriptors")]
    NoUsableDescriptors,
    #[error("training pairs must contain both positive and negative labels")]
    DegenerateObjective,
    #[error("degenerate synthetic city: {0}")]
    DegenerateSpec(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
