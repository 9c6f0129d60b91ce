//! Zero-shot segmentation of encoder patch features.
//!
//! Patch embeddings are turned into a soft-thresholded cosine affinity graph
//! and split recursively by normalized cut until every further cut costs more
//! than `tau`. Patch-level segments are lifted to pixel resolution by concept
//! assignment and optionally refined against the source image. The crate also
//! carries the evaluation side: Hungarian-matched mIoU, patch-coherence ROC, an
//! eigen-gap spectral clustering baseline and k-means.

pub mod affinity;
pub mod autosc;
pub mod error;
pub mod evalkit;
pub mod highres;
pub mod ncut;
pub mod pipeline;
pub mod spectral;
pub mod tensorio;

pub use affinity::{build_affinity, build_affinity_with, AffinityGraph, AffinityOptions};
pub use autosc::{autosc_segment, kmeans, kmeans_cluster, select_alpha, EigenGapReport, KMeansFit};
pub use error::{Error, Result};
pub use evalkit::{
    coherence_auc, hungarian, match_segments, roc_curve, EvalReport, Evaluator, RocCurve,
};
pub use highres::{
    masked_smm, nearest_upsample, pamr_refine, upsample_and_assign, ConceptBank, HiResSegmentation,
    PamrParams,
};
pub use ncut::{
    best_split, ncut_value, partition_graph, recursive_ncut, NcutParams, PartitionTree,
    SegmentationMap, StopReason, TreeNode,
};
pub use pipeline::{lift_to_pixels, segment_pixels, PipelineOutput, PipelineParams, Upsample};
pub use spectral::{fiedler, smallest_eigenpairs, EigenPair, SolverOptions};
pub use tensorio::{ColorImage, FeatureMap, LabelMap, RunMetadata};
