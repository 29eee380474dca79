use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("affine transform is singular")]
    SingularTransform,
    #[error("volume has no nonzero voxel")]
    AllZeroVolume,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invalid architecture spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("class {class} has {count} samples, fewer than {k} folds")]
    TooFewSamples { class: &'static str, count: usize, k: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("only one class present")]
    SingleClass,
    #[error("no positive samples")]
    NoPositives,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}
