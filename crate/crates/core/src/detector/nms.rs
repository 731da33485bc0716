use std::cmp::Ordering;

use crate::datamodel::CharCandidate;
use crate::geometry::iou;

/// Overlap above which a lower-scored candidate is suppressed at inference.
pub const NMS_OVERLAP: f64 = 0.45;

/// Descending score; ties go to the smaller `x_min`, then smaller `y_min`.
pub fn rank_order(a: &CharCandidate, b: &CharCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
        .then(a.bbox.y_min().total_cmp(&b.bbox.y_min()))
}

/// Greedy non-maximum suppression.
///
/// Walks candidates in [`rank_order`], keeping each one that does not overlap
/// an already kept candidate by more than `overlap_threshold`.
pub fn nms(candidates: &[CharCandidate], overlap_threshold: f64) -> Vec<CharCandidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<CharCandidate> = Vec::new();
    for c in sorted {
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &c.bbox) <= overlap_threshold)
        {
            kept.push(c);
        }
    }
    kept
}


#[cfg(test)]
mod tests {
    use super::reference::nms_quadratic;
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn cand(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> CharCandidate {
        CharCandidate::new(BBox::new(x0, y0, x1, y1).unwrap(), s).unwrap()
    }

    #[test]
    fn single_candidate() {
        let c = cand(0., 0., 5., 5., 0.3);
        assert_eq!(nms(&[c], NMS_OVERLAP), vec![c]);
    }

    #[test]
    fn identical_boxes() {
        let a = cand(0., 0., 5., 5., 0.8);
        let b = cand(0., 0., 5., 5., 0.9);
        assert_eq!(nms(&[a, b], NMS_OVERLAP), vec![b]);
    }

    #[test]
    fn score_tie_prefers_left_then_top() {
        let a = cand(10., 0., 15., 5., 0.5);
        let b = cand(0., 3., 5., 8., 0.5);
        let c = cand(0., 0., 5., 2., 0.5);
        assert_eq!(nms(&[a, b, c], NMS_OVERLAP), vec![c, b, a]);
    }

    fn arb_cands() -> impl Strategy<Value = Vec<CharCandidate>> {
        prop::collection::vec(
            (0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64, 0u32..20),
            0..60,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| cand(x, y, x + w, y + h, s as f64 / 20.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_reference(cs in arb_cands(), t in 0.05..0.95f64) {
            prop_assert_eq!(nms(&cs, t), nms_quadratic(&cs, t));
        }

        #[test]
        fn output_is_suppression_free_and_idempotent(cs in arb_cands()) {
            let out = nms(&cs, NMS_OVERLAP);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(iou(&out[i].bbox, &out[j].bbox) <= NMS_OVERLAP);
                }
            }
            prop_assert_eq!(nms(&out, NMS_OVERLAP), out);
        }
    }
}
