use hyperace::runtime::{iou, nms, Detection};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = [f64; 4]> {
    (0.0..100.0f64, 0.0..100.0f64, 1.0..60.0f64, 1.0..60.0f64).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec(
        (bbox(), 0..3usize, 0.0..1.0f64).prop_map(|(bbox, class, score)| Detection { bbox, class, score }),
        0..40,
    )
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn nms_keeps_a_sorted_non_overlapping_subset(dets in detections(), thr in 0.1..0.9f64) {
        let kept = nms(&dets, thr);
        prop_assert!(kept.iter().all(|k| dets.contains(k)));
        prop_assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) <= thr);
            }
        }
        // Every dropped detection is covered by a kept one scoring at least as high.
        for d in dets.iter().filter(|d| !kept.contains(d)) {
            prop_assert!(kept.iter().any(|k| k.class == d.class && k.score >= d.score && iou(&k.bbox, &d.bbox) > thr));
        }
        prop_assert_eq!(nms(&kept, thr), kept);
    }
}
