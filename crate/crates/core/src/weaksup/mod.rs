//! Labeling functions over transaction groups: declaration, execution into a
//! vote matrix, and coverage/overlap/conflict diagnostics.

mod lf;
mod matrix;
mod report;

pub use lf::{apply_lfs, expand_anchor, CompositeOp, LfConfig, LfSet, LfSpec, Polarity};
pub use matrix::{LabelMatrix, Vote};
pub use report::{lf_report, LfReport, LfStats};
