//! The two-stage procedure end to end: backbone, proposals (learned or
//! oracle), head wiring, the training loop, and the inference path.

mod checkpoint;
mod infer;
mod model;
mod proposals;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointState};
pub use infer::infer;
pub use model::{anchor_index, anchor_position, Model, RpnOutputs};
pub use proposals::{oracle_proposals, rpn_proposals};
pub use train::{resume_train, run_tag, train, TrainArtifacts, TrainLogRow};
