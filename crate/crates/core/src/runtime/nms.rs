use super::decode::{iou, Detection};

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited by descending score (ties keep input order); a
/// detection is dropped when it overlaps an already kept detection of the
/// same class with IoU strictly above `iou_threshold`. The result is sorted
/// by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &dets[i];
        let clash = kept
            .iter()
            .any(|&k| dets[k].class == d.class && iou(&dets[k].bbox, &d.bbox) > iou_threshold);
        if !clash {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
