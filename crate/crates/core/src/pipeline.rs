//! End-to-end composition: patch segmentation, lift to pixels, refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highres::{masked_smm, nearest_upsample, pamr_refine, upsample_and_assign};
use crate::highres::{HiResSegmentation, PamrParams};
use crate::ncut::{recursive_ncut, NcutParams, PartitionTree, SegmentationMap};
use crate::tensorio::{ColorImage, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    /// Bilinear features, cosine arg-max over segment concepts.
    #[default]
    Concept,
    /// Nearest patch label.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PipelineParams {
    pub ncut: NcutParams,
    pub upsample: Upsample,
    /// Refinement against the source image; `None` disables it.
    pub pamr: Option<PamrParams>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub patches: SegmentationMap,
    pub tree: PartitionTree,
    pub pixels: HiResSegmentation,
}

/// Lifts a patch segmentation to `out_h × out_w` pixels.
pub fn lift_to_pixels(
    fm: &FeatureMap,
    seg: &SegmentationMap,
    upsample: Upsample,
    out_h: usize,
    out_w: usize,
    refine: Option<(&ColorImage, &PamrParams)>,
) -> Result<HiResSegmentation> {
    let lifted = match upsample {
        Upsample::Concept => {
            let bank = masked_smm(fm, seg)?;
            upsample_and_assign(fm, seg, &bank, out_h, out_w)?
        }
        Upsample::Nearest => nearest_upsample(seg, out_h, out_w),
    };
    match refine {
        Some((image, params)) => pamr_refine(image, &lifted, params),
        None => Ok(lifted),
    }
}

/// Full segmentation of one feature map. `image` is required when refinement
/// is enabled and must match the output size.
pub fn segment_pixels(
    fm: &FeatureMap,
    params: &PipelineParams,
    out_h: usize,
    out_w: usize,
    image: Option<&ColorImage>,
) -> Result<PipelineOutput> {
    let refine = match (&params.pamr, image) {
        (Some(p), Some(img)) => Some((img, p)),
        (Some(_), None) => {
            return Err(Error::InvalidParameter(
                "refinement needs the source image".into(),
            ))
        }
        (None, _) => None,
    };
    let (patches, tree) = recursive_ncut(fm, &params.ncut)?;
    log::debug!(
        "{}x{} grid split into {} segments",
        fm.height(),
        fm.width(),
        patches.num_segments
    );
    let pixels = lift_to_pixels(fm, &patches, params.upsample, out_h, out_w, refine)?;
    Ok(PipelineOutput {
        patches,
        tree,
        pixels,
    })
}
