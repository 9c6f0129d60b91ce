use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::error::{Error, Result};
use crate::highres::HiResSegmentation;
use crate::tensorio::LabelMap;

/// Where one predicted segment ended up after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub segment: u32,
    /// `None` means void: the segment's pixels count as false negatives.
    pub class: Option<u16>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatching {
    pub name: String,
    pub matches: Vec<SegmentMatch>,
}

impl ImageMatching {
    pub fn class_of(&self, segment: u32) -> Option<u16> {
        self.matches
            .iter()
            .find(|m| m.segment == segment)
            .and_then(|m| m.class)
    }
}

struct Overlap {
    segments: Vec<u32>,
    classes: Vec<u16>,
    inter: Vec<Vec<u64>>,
    seg_area: Vec<u64>,
    class_area: Vec<u64>,
}

fn check_dims(pred: &HiResSegmentation, gt: &LabelMap) -> Result<()> {
    if pred.height != gt.height || pred.width != gt.width || pred.labels.len() != gt.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

fn overlap(pred: &HiResSegmentation, gt: &LabelMap) -> Overlap {
    // segments ordered by first appearance so ties never depend on label ids
    let mut segments = Vec::new();
    let mut seg_index = BTreeMap::new();
    let mut classes: Vec<u16> = Vec::new();
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == gt.ignore_index {
            continue;
        }
        seg_index.entry(p).or_insert_with(|| {
            segments.push(p);
            segments.len() - 1
        });
        if let Err(pos) = classes.binary_search(&g) {
            classes.insert(pos, g);
        }
    }
    let mut inter = vec![vec![0u64; classes.len()]; segments.len()];
    let mut seg_area = vec![0u64; segments.len()];
    let mut class_area = vec![0u64; classes.len()];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == gt.ignore_index {
            continue;
        }
        let s = seg_index[&p];
        let c = classes.binary_search(&g).unwrap();
        inter[s][c] += 1;
        seg_area[s] += 1;
        class_area[c] += 1;
    }
    Overlap {
        segments,
        classes,
        inter,
        seg_area,
        class_area,
    }
}

/// Matches predicted segments one-to-one to the foreground classes present
/// in `gt` by maximum total IoU. Segments left over (or matched to a class
/// they do not touch) go to `background` if given, otherwise to void.
/// Pixels equal to the ignore index play no part.
pub fn match_segments(
    pred: &HiResSegmentation,
    gt: &LabelMap,
    background: Option<u16>,
) -> Result<Vec<SegmentMatch>> {
    check_dims(pred, gt)?;
    let ov = overlap(pred, gt);
    let fg: Vec<usize> = (0..ov.classes.len())
        .filter(|&c| Some(ov.classes[c]) != background)
        .collect();
    let iou = |s: usize, c: usize| {
        let i = ov.inter[s][c];
        if i == 0 {
            0.0
        } else {
            i as f64 / (ov.seg_area[s] + ov.class_area[c] - i) as f64
        }
    };
    let cost: Vec<Vec<f64>> = (0..ov.segments.len())
        .map(|s| fg.iter().map(|&c| 1.0 - iou(s, c)).collect())
        .collect();
    let assignment = if fg.is_empty() {
        Vec::new()
    } else {
        hungarian(&cost)?.pairs
    };

    let mut matches: Vec<SegmentMatch> = ov
        .segments
        .iter()
        .map(|&segment| SegmentMatch {
            segment,
            class: background,
            iou: 0.0,
        })
        .collect();
    for (s, j) in assignment {
        let c = fg[j];
        if ov.inter[s][c] > 0 {
            matches[s].class = Some(ov.classes[c]);
            matches[s].iou = iou(s, c);
        }
    }
    if let Some(bg) = background {
        if let Ok(c) = ov.classes.binary_search(&bg) {
            for (s, m) in matches.iter_mut().enumerate() {
                if m.class == Some(bg) {
                    m.iou = iou(s, c);
                }
            }
        }
    }
    matches.sort_by_key(|m| m.segment);
    Ok(matches)
}

/// Confusion counts accumulated over a dataset.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    background: Option<u16>,
    /// `confusion[gt][pred]`
    confusion: Vec<Vec<u64>>,
    /// Ground-truth pixels whose segment matched nothing.
    void: Vec<u64>,
    images: Vec<ImageMatching>,
}

impl Evaluator {
    pub fn new(background: Option<u16>) -> Self {
        let mut ev = Self {
            background,
            ..Self::default()
        };
        if let Some(bg) = background {
            ev.grow(bg as usize + 1);
        }
        ev
    }

    fn grow(&mut self, classes: usize) {
        if classes <= self.void.len() {
            return;
        }
        for row in &mut self.confusion {
            row.resize(classes, 0);
        }
        self.confusion.resize(classes, vec![0; classes]);
        self.void.resize(classes, 0);
    }

    /// Matches one image and folds its pixels into the counts.
    pub fn add(
        &mut self,
        name: &str,
        pred: &HiResSegmentation,
        gt: &LabelMap,
    ) -> Result<&ImageMatching> {
        let matches = match_segments(pred, gt, self.background)?;
        let lookup: BTreeMap<u32, Option<u16>> =
            matches.iter().map(|m| (m.segment, m.class)).collect();
        let top = gt
            .labels
            .iter()
            .filter(|&&g| g != gt.ignore_index)
            .chain(matches.iter().filter_map(|m| m.class.as_ref()))
            .max();
        if let Some(&top) = top {
            self.grow(top as usize + 1);
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == gt.ignore_index {
                continue;
            }
            match lookup[&p] {
                Some(c) => self.confusion[g as usize][c as usize] += 1,
                None => self.void[g as usize] += 1,
            }
        }
        self.images.push(ImageMatching {
            name: name.to_string(),
            matches,
        });
        Ok(self.images.last().unwrap())
    }

    /// Combines counts from another evaluator, e.g. one run on another thread.
    pub fn merge(&mut self, other: Evaluator) -> Result<()> {
        if other.background != self.background {
            return Err(Error::InvalidParameter(
                "cannot merge evaluators with different background classes".into(),
            ));
        }
        self.grow(other.void.len());
        for (g, row) in other.confusion.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                self.confusion[g][p] += v;
            }
            self.void[g] += other.void[g];
        }
        self.images.extend(other.images);
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let n = self.void.len();
        let mut per_class_iou = vec![None; n];
        for c in 0..n {
            let gt_total: u64 = self.confusion[c].iter().sum::<u64>() + self.void[c];
            if gt_total == 0 {
                continue;
            }
            let tp = self.confusion[c][c];
            let pred_total: u64 = self.confusion.iter().map(|row| row[c]).sum();
            per_class_iou[c] = Some(tp as f64 / (gt_total + pred_total - tp) as f64);
        }
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let mut images = self.images.clone();
        images.sort_by(|a, b| a.name.cmp(&b.name));
        EvalReport {
            miou,
            per_class_iou,
            confusion: self.confusion.clone(),
            void: self.void.clone(),
            per_image_matchings: images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    /// `None` for classes that never occur in the ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
    pub void: Vec<u64>,
    pub per_image_matchings: Vec<ImageMatching>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(w: usize, labels: Vec<u32>) -> HiResSegmentation {
        let k = labels.iter().max().map_or(0, |m| *m as usize + 1);
        HiResSegmentation {
            height: labels.len() / w,
            width: w,
            labels,
            num_segments: k,
        }
    }

    fn gt(w: usize, labels: Vec<u16>) -> LabelMap {
        LabelMap::new(labels.len() / w, w, labels, 255).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let mut ev = Evaluator::new(None);
        ev.add(
            "a",
            &pred(4, vec![2, 2, 0, 0, 1, 1, 1, 1]),
            &gt(4, vec![0, 0, 1, 1, 3, 3, 3, 3]),
        )
        .unwrap();
        let r = ev.report();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(1.0), None, Some(1.0)]);
    }

    #[test]
    fn single_segment_two_classes() {
        let mut ev = Evaluator::new(None);
        ev.add("a", &pred(4, vec![0; 4]), &gt(4, vec![0, 0, 1, 1]))
            .unwrap();
        let r = ev.report();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.miou, 0.25);
    }

    #[test]
    fn unmatched_segments_go_void_or_background() {
        let p = pred(4, vec![0, 1, 2, 3]);
        let g = gt(4, vec![1, 1, 0, 0]);
        let m = match_segments(&p, &g, None).unwrap();
        assert_eq!(m.iter().filter(|m| m.class.is_none()).count(), 2);
        let m = match_segments(&p, &g, Some(0)).unwrap();
        // only class 1 is foreground; one segment takes it, the rest become background
        assert_eq!(m.iter().filter(|m| m.class == Some(1)).count(), 1);
        assert_eq!(m.iter().filter(|m| m.class == Some(0)).count(), 3);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let mut ev = Evaluator::new(None);
        ev.add("a", &pred(3, vec![0, 0, 1]), &gt(3, vec![4, 4, 255]))
            .unwrap();
        let r = ev.report();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.confusion[4][4], 2);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            match_segments(&pred(2, vec![0, 0]), &gt(1, vec![0, 0]), None),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn merge_matches_sequential() {
        let cases = [
            (pred(2, vec![0, 1, 1, 1]), gt(2, vec![0, 0, 1, 1])),
            (pred(2, vec![0, 0, 0, 1]), gt(2, vec![2, 2, 1, 1])),
        ];
        let mut seq = Evaluator::new(None);
        for (i, (p, g)) in cases.iter().enumerate() {
            seq.add(&i.to_string(), p, g).unwrap();
        }
        let mut a = Evaluator::new(None);
        a.add("1", &cases[1].0, &cases[1].1).unwrap();
        let mut b = Evaluator::new(None);
        b.add("0", &cases[0].0, &cases[0].1).unwrap();
        a.merge(b).unwrap();
        assert_eq!(a.report(), seq.report());
    }
}
