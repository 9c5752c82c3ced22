//! Tri-modal contrastive transfer at desk scale.
//!
//! Synthetic chest CT volumes and template reports are generated with
//! [`phantom`], projected to radiographs with [`drr`], and embedded by the
//! small encoders in [`encoders`]. [`contrastive`] aligns the volume and
//! report encoders and then distils them into the radiograph encoder;
//! [`eval`] holds the retrieval, classification and significance protocols.
//! Everything differentiable runs on the reverse-mode tape in [`tensor`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contrastive;
pub mod diagnostics;
pub mod drr;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod io;
pub mod phantom;
pub mod rng;
pub mod tensor;

pub use contrastive::{LossWeights, Teachers, TrainConfig, TrainLog};
pub use drr::{DrrConfig, Radiograph};
pub use encoders::{Checkpoint, Embedding, EmbeddingSet, Modality, RadiographEncoder, StudentConfig};
pub use error::{Error, Result};
pub use phantom::{GenConfig, LabelSpace, Split, Triplet, Volume};
pub use rng::SplitMix64;
pub use tensor::{NodeId, Reduction, Tape, Tensor};
