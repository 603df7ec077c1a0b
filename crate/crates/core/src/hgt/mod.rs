//! Heterogeneous graph transformer with a two-headed classifier.
//!
//! Each layer updates every node that has incoming typed edges:
//!
//! ```text
//! k_i(s) = K_{kind(s)}(h[s])_i        q_i(t) = Q_{kind(t)}(h[t])_i
//! a_i(e) = (k_i(s)^T W^att_{type(e),i} q_i(t)) * mu_{type(e)} / sqrt(d_k)
//! alpha_i(e) = softmax over the incoming edges of t of a_i(e)
//! m_i(e) = W^msg_{type(e),i} V_{kind(s)}(h[s])_i
//! h~[t] = concat_i sum_e alpha_i(e) m_i(e)
//! h'[t] = A_{kind(t)}(dropout(act(h~[t]))) + h[t]
//! ```
//!
//! Nodes without incoming edges pass through unchanged. After the last
//! layer, each `(user, media)` pair is classified from the concatenation of
//! the two node vectors by a shared hidden layer feeding 3 polarity and 4
//! intensity logits.
//!
//! Gradients are computed by hand in [`backward`]; [`check_gradients`]
//! compares them against central finite differences.

mod checkpoint;
mod gradcheck;
mod params;
mod propagate;
mod topology;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, read_checkpoint, write_checkpoint};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, Objective, REL_ERR_FLOOR};
pub use params::{init_params, HgtParams, Layout, TensorSpec};
pub use propagate::{
    backward, hgt_layer_forward, model_forward, ForwardOutput, ForwardTrace, LayerTrace, PairLogits,
};
pub use topology::{compile, features_from_table, GraphIndex, Topology};

use crate::graph::NodeKind;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum HgtError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("edge {src} -> {dst} of type {etype} joins nodes of the wrong kinds")]
    EdgeKind {
        src: usize,
        dst: usize,
        etype: &'static str,
    },
    #[error("node index {0} out of range")]
    NodeIndex(usize),
    #[error("pair references missing node {0}")]
    MissingNode(String),
    #[error("feature matrix has {actual} columns, model expects {expected}")]
    FeatureDim { expected: usize, actual: usize },
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
    #[error("gradient check requires eps > 0 (got {0})")]
    BadEps(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HgtConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for HgtConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 4,
            dim: 128,
            dropout: 0.2,
            activation: Activation::Relu,
        }
    }
}

pub const POLARITY_CLASSES: usize = 3;
pub const INTENSITY_CLASSES: usize = 4;
pub const OUTPUT_LOGITS: usize = POLARITY_CLASSES + INTENSITY_CLASSES;

impl HgtConfig {
    pub fn validate(&self) -> Result<(), HgtError> {
        if self.dim == 0 || self.heads == 0 {
            return Err(HgtError::Config("dim and heads must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(HgtError::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HgtError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Typed edge direction used for propagation. Every stored relation appears
/// in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Follows = 0,
    FollowedBy = 1,
    Interacts = 2,
    InteractedBy = 3,
    Believes = 4,
    BelievedBy = 5,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::Follows,
        EdgeType::FollowedBy,
        EdgeType::Interacts,
        EdgeType::InteractedBy,
        EdgeType::Believes,
        EdgeType::BelievedBy,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Follows => "follows",
            EdgeType::FollowedBy => "followed_by",
            EdgeType::Interacts => "interacts",
            EdgeType::InteractedBy => "interacted_by",
            EdgeType::Believes => "believes",
            EdgeType::BelievedBy => "believed_by",
        }
    }

    /// The `(source kind, target kind)` of this edge type's meta-relation.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            EdgeType::Follows | EdgeType::FollowedBy => (User, User),
            EdgeType::Interacts => (User, Media),
            EdgeType::InteractedBy => (Media, User),
            EdgeType::Believes => (User, Belief),
            EdgeType::BelievedBy => (Belief, User),
        }
    }

    pub fn reverse(self) -> EdgeType {
        match self {
            EdgeType::Follows => EdgeType::FollowedBy,
            EdgeType::FollowedBy => EdgeType::Follows,
            EdgeType::Interacts => EdgeType::InteractedBy,
            EdgeType::InteractedBy => EdgeType::Interacts,
            EdgeType::Believes => EdgeType::BelievedBy,
            EdgeType::BelievedBy => EdgeType::Believes,
        }
    }
}

/// Forward-pass mode. Dropout is active only in training, with masks drawn
/// from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: HgtConfig,
    pub params: HgtParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: HgtConfig, seed: u64) -> Result<Self, HgtError> {
        Ok(Self {
            params: init_params(&config, seed)?,
            config,
        })
    }

    pub fn forward(
        &self,
        topology: &Topology,
        features: &[T],
        pairs: &[(usize, usize)],
        mode: Mode,
    ) -> Result<ForwardOutput<T>, HgtError> {
        model_forward(topology, features, &self.params, &self.config, pairs, mode)
    }

    /// Converts the parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }
}
