//! Overlap metrics between label masks. Both return 1.0 when the class is
//! absent from prediction and ground truth alike.

use crate::error::Result;
use crate::render::LabelMask;

/// (|P ∩ G|, |P|, |G|) for one class.
pub fn class_counts(
    pred: &LabelMask,
    gt: &LabelMask,
    class_id: u8,
) -> Result<(usize, usize, usize)> {
    pred.same_size(gt)?;
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (ia, ib) = (a == class_id, b == class_id);
        p += ia as usize;
        g += ib as usize;
        inter += (ia && ib) as usize;
    }
    Ok((inter, p, g))
}

pub fn dice(pred: &LabelMask, gt: &LabelMask, class_id: u8) -> Result<f64> {
    let (i, p, g) = class_counts(pred, gt, class_id)?;
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (p + g) as f64)
}

pub fn iou(pred: &LabelMask, gt: &LabelMask, class_id: u8) -> Result<f64> {
    let (i, p, g) = class_counts(pred, gt, class_id)?;
    let union = p + g - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

/// Per-part IoU for base, wrist and tip.
pub fn part_ious(pred: &LabelMask, gt: &LabelMask) -> Result<[f64; 3]> {
    Ok([iou(pred, gt, 1)?, iou(pred, gt, 2)?, iou(pred, gt, 3)?])
}

/// Area under the ROC curve of `scores` against binary `labels`, computed by
/// rank statistics with ties counted as half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, l: &[u8]) -> LabelMask {
        LabelMask::from_labels(w, h, l.to_vec()).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = mask(2, 2, &[3, 3, 0, 0]);
        let b = mask(2, 2, &[0, 0, 3, 3]);
        assert_eq!(dice(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(iou(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(dice(&a, &b, 3).unwrap(), 0.0);
        assert_eq!(iou(&a, &b, 3).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_overlap() {
        // |P| = 2, |G| = 2, |P ∩ G| = 1, |P ∪ G| = 3
        let p = mask(2, 2, &[3, 3, 0, 0]);
        let g = mask(2, 2, &[3, 0, 3, 0]);
        assert_eq!(dice(&p, &g, 3).unwrap(), 0.5);
        assert!((iou(&p, &g, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_vs_empty_is_one() {
        let a = mask(2, 1, &[0, 1]);
        assert_eq!(dice(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(iou(&a, &a, 3).unwrap(), 1.0);
    }

    #[test]
    fn size_mismatch() {
        assert!(dice(&mask(1, 1, &[0]), &mask(2, 1, &[0, 0]), 1).is_err());
        assert!(iou(&mask(1, 1, &[0]), &mask(1, 2, &[0, 0]), 1).is_err());
    }

    #[test]
    fn auc_basics() {
        assert_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]),
            Some(1.0)
        );
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.1], &[true]), None);
    }
}
