//! Evaluation: Hungarian matching of unlabeled segments to ground-truth
//! classes, confusion accumulation and mIoU, and the patch-coherence ROC.

mod hungarian;
mod matching;
mod roc;

pub use hungarian::{hungarian, Assignment};
pub use matching::{match_segments, EvalReport, Evaluator, ImageMatching, SegmentMatch};
pub use roc::{coherence_auc, patch_labels, roc_curve, RocCurve};
