use thiserror::Error;

/// Violations of the anchor-cache capture/inject protocol.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("no anchor cached for timestep {timestep}, layer {layer}")]
    MissingAnchor { timestep: usize, layer: usize },
    #[error("anchor for timestep {timestep}, layer {layer} already captured")]
    DoubleWrite { timestep: usize, layer: usize },
    #[error("capture requested from segment {segment}, but this cache belongs to segment {owner}")]
    CaptureFromWrongSegment { segment: usize, owner: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("sink protocol error: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error("timestep {timestep}, segment {segment}: {source}")]
    Step {
        timestep: usize,
        segment: usize,
        #[source]
        source: Box<MlvError>,
    },
}

impl MlvError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MlvError::InvalidShape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        MlvError::InvalidConfig(msg.into())
    }

    pub(crate) fn at_step(self, timestep: usize, segment: usize) -> Self {
        match self {
            e @ MlvError::Step { .. } => e,
            e => MlvError::Step {
                timestep,
                segment,
                source: Box::new(e),
            },
        }
    }

    /// The underlying error with any timestep/segment context stripped.
    pub fn root(&self) -> &MlvError {
        match self {
            MlvError::Step { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self.root(), MlvError::Protocol(_))
    }
}

pub type Result<T, E = MlvError> = std::result::Result<T, E>;
