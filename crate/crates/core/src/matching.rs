//! Box geometry and optimal slot-to-ground-truth assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Normalized box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

fn intersection(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

/// Corner-form IoU; 0 when the union is empty.
pub fn iou_corners(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let inter = intersection(a, b);
    let area = |c: &[f64; 4]| (c[2] - c[0]).max(0.0) * (c[3] - c[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_corners(&a.corners(), &b.corners())
}

/// Generalized IoU: `IoU − (hull − union) / hull`, in `[-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let inter = intersection(&ca, &cb);
    let union = a.area() + b.area() - inter;
    let hull = (ca[2].max(cb[2]) - ca[0].min(cb[0])) * (ca[3].max(cb[3]) - ca[1].min(cb[1]));
    if hull <= 0.0 {
        // both boxes degenerate to the same point or line
        return if union <= 0.0 { 1.0 } else { inter / union };
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_box: f64,
    pub w_giou: f64,
    pub w_class: f64,
    pub w_verb: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_box: 2.5,
            w_giou: 1.0,
            w_class: 1.0,
            w_verb: 1.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            w_box: 0.0,
            w_giou: 0.0,
            w_class: 0.0,
            w_verb: 0.0,
        }
    }
}

/// One pair slot's current-frame prediction, in probability space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub subject: BBox,
    pub object: BBox,
    /// Softmax over `C_o + 1` classes, last is no-object.
    pub object_probs: Vec<f64>,
    /// Independent sigmoid per verb.
    pub verb_probs: Vec<f64>,
}

/// Ground-truth HOI instance on the detection frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiTarget {
    pub subject: BBox,
    pub object: BBox,
    pub object_class: usize,
    pub verbs: Vec<usize>,
}

pub fn pair_cost(pred: &SlotPrediction, gt: &HoiTarget, w: &CostWeights) -> f64 {
    let box_term = pred.subject.l1(&gt.subject) + pred.object.l1(&gt.object);
    let giou_term = (1.0 - giou(&pred.subject, &gt.subject)) + (1.0 - giou(&pred.object, &gt.object));
    let class_term = 1.0 - pred.object_probs.get(gt.object_class).copied().unwrap_or(0.0);
    let verb_term = if gt.verbs.is_empty() {
        0.0
    } else {
        gt.verbs
            .iter()
            .map(|&v| 1.0 - pred.verb_probs.get(v).copied().unwrap_or(0.0))
            .sum::<f64>()
            / gt.verbs.len() as f64
    };
    w.w_box * box_term + w.w_giou * giou_term + w.w_class * class_term + w.w_verb * verb_term
}

/// `P × M` matrix of [`pair_cost`] values.
pub fn cost_matrix(preds: &[SlotPrediction], gts: &[HoiTarget], w: &CostWeights) -> Mat {
    let mut m = Mat::zeros(preds.len(), gts.len());
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            m.set(i, j, pair_cost(p, g, w));
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(slot, ground truth)` sorted by slot.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_slots: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &Mat) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
    }

    pub fn slot_for_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }
}

/// Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials).
///
/// Rectangular inputs are padded to square with `max + 1`. Rows are inserted
/// in index order and column scans keep the first minimum, so equal-cost
/// alternatives resolve towards lower indices.
pub fn hungarian(cost: &Mat) -> Result<Assignment> {
    if !cost.is_finite() {
        return Err(Error::NonFinite("hungarian cost"));
    }
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_slots: (0..rows).collect(),
        });
    }
    let n = rows.max(cols);
    let sentinel = cost.values().iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let a = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost.get(i, j)
        } else {
            sentinel
        }
    };

    // 1-based arrays; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; rows];
    for (j, &i) in row_of_col.iter().enumerate().take(n + 1).skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            col_of_row[i - 1] = j - 1;
        }
    }
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (i, &j) in col_of_row.iter().enumerate() {
        if j == usize::MAX {
            unmatched.push(i);
        } else {
            pairs.push((i, j));
        }
    }
    Ok(Assignment {
        pairs,
        unmatched_slots: unmatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Exhaustive minimum over injective maps from the smaller side.
    fn brute_force_min(cost: &Mat) -> f64 {
        let (r, c) = cost.shape();
        type Lookup<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;
        let (small, large, get): (usize, usize, Lookup<'_>) = if r <= c {
            (r, c, Box::new(|s, l| cost.get(s, l)))
        } else {
            (c, r, Box::new(|s, l| cost.get(l, s)))
        };
        fn rec(k: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, get: &dyn Fn(usize, usize) -> f64) {
            if k == small {
                *best = best.min(acc);
                return;
            }
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    rec(k + 1, small, large, used, acc + get(k, l), best, get);
                    used[l] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, small, large, &mut vec![false; large], 0.0, &mut best, &*get);
        best
    }

    #[test]
    fn iou_examples() {
        let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BBox::from_corners(1.0, 0.0, 3.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        let far = BBox::from_corners(5.0, 5.0, 6.0, 6.0);
        assert_eq!(iou(&a, &far), 0.0);
        let empty = BBox::new(0.5, 0.5, 0.0, 0.0);
        assert_eq!(iou(&empty, &empty), 0.0);
    }

    #[test]
    fn giou_examples() {
        let a = BBox::from_corners(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_corners(2.0, 0.0, 3.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        assert!((giou(&a, &b) + 1.0 / 3.0).abs() < 1e-15);
        let outer = BBox::from_corners(0.0, 0.0, 4.0, 4.0);
        let inner = BBox::from_corners(1.0, 1.0, 2.0, 3.0);
        assert!((giou(&outer, &inner) - iou(&outer, &inner)).abs() < 1e-15);
    }

    fn perfect_pred(gt: &HoiTarget, classes: usize, verbs: usize) -> SlotPrediction {
        let mut object_probs = vec![0.0; classes + 1];
        object_probs[gt.object_class] = 1.0;
        let mut verb_probs = vec![0.0; verbs];
        for &v in &gt.verbs {
            verb_probs[v] = 1.0;
        }
        SlotPrediction { subject: gt.subject, object: gt.object, object_probs, verb_probs }
    }

    fn sample_target() -> HoiTarget {
        HoiTarget {
            subject: BBox::from_corners(0.0, 0.0, 1.0, 1.0),
            object: BBox::from_corners(0.0, 0.0, 1.0, 1.0),
            object_class: 2,
            verbs: vec![0, 3],
        }
    }

    #[test]
    fn pair_cost_examples() {
        let gt = sample_target();
        let p = perfect_pred(&gt, 4, 5);
        assert_eq!(pair_cost(&p, &gt, &CostWeights::default()), 0.0);

        let mut bad = p.clone();
        bad.subject = BBox::from_corners(2.0, 0.0, 3.0, 1.0);
        bad.object_probs = vec![0.2; 5];
        assert_eq!(pair_cost(&bad, &gt, &CostWeights::zero()), 0.0);

        let giou_only = CostWeights { w_giou: 1.0, ..CostWeights::zero() };
        assert_eq!(pair_cost(&p, &gt, &giou_only), 0.0);
        // one disjoint stream: 1 - (-1/3)
        assert!((pair_cost(&bad, &gt, &giou_only) - 4.0 / 3.0).abs() < 1e-15);
        // both streams disjoint
        bad.object = bad.subject;
        assert!((pair_cost(&bad, &gt, &giou_only) - 8.0 / 3.0).abs() < 1e-15);

        let verb_only = CostWeights { w_verb: 1.0, ..CostWeights::zero() };
        let mut half = p.clone();
        half.verb_probs[3] = 0.5;
        assert!((pair_cost(&half, &gt, &verb_only) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hungarian_examples() {
        let c = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 2.0);

        let d = Mat::from_rows(&[vec![0.0, 5.0, 3.0], vec![2.0, 0.0, 7.0], vec![1.0, 4.0, 0.0]]).unwrap();
        let a = hungarian(&d).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost(&d), 0.0);

        let one = Mat::from_rows(&[vec![4.2]]).unwrap();
        assert_eq!(hungarian(&one).unwrap().pairs, vec![(0, 0)]);
    }

    #[test]
    fn hungarian_rectangular_and_empty() {
        let tall = Mat::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        let a = hungarian(&tall).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_slots, vec![0, 2]);

        let wide = Mat::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(hungarian(&wide).unwrap().pairs, vec![(0, 1)]);

        let none = Mat::zeros(3, 0);
        let a = hungarian(&none).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_slots, vec![0, 1, 2]);
    }

    #[test]
    fn hungarian_ties_prefer_low_slots() {
        let flat = Mat::new(4, 2, vec![1.0; 8]).unwrap();
        let a = hungarian(&flat).unwrap();
        assert_eq!(a.pairs.len(), 2);
        assert_eq!(a.total_cost(&flat), 2.0);
        assert_eq!(a.unmatched_slots.len(), 2);
        // deterministic across calls
        assert_eq!(hungarian(&flat).unwrap(), a);
    }

    #[test]
    fn hungarian_rejects_non_finite() {
        let mut m = Mat::zeros(2, 2);
        m.set(0, 1, 1.0);
        let bad: std::result::Result<Mat, _> = Mat::new(1, 1, vec![f64::INFINITY]);
        assert!(bad.is_err());
        let wrapped = m.map(|v| if v == 1.0 { f64::NAN } else { v });
        assert!(hungarian(&wrapped).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = SeededRng::new(21);
        for case in 0..200 {
            let r = 1 + rng.below(7);
            let c = 1 + rng.below(7);
            let m = Mat::new(r, c, (0..r * c).map(|_| rng.uniform_range(-5.0, 10.0)).collect()).unwrap();
            let a = hungarian(&m).unwrap();
            assert_eq!(a.pairs.len(), r.min(c), "case {case}");
            let best = brute_force_min(&m);
            assert!((a.total_cost(&m) - best).abs() < 1e-9, "case {case}: {} vs {best}", a.total_cost(&m));
        }
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.8, 0.0f64..0.8).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn giou_bounds_and_symmetry(a in arb_box(), b in arb_box()) {
            let g = giou(&a, &b);
            let i = iou(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&g));
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g <= i + 1e-12);
            prop_assert!((iou(&a, &b) - iou(&b, &a)).abs() < 1e-15);
            prop_assert!((giou(&a, &b) - giou(&b, &a)).abs() < 1e-15);
            if a.area() > 0.0 {
                prop_assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn row_shift_keeps_assignment(seed in 0u64..10_000, shift in -3.0f64..3.0) {
            let mut rng = SeededRng::new(seed);
            let (r, c) = (1 + rng.below(5), 1 + rng.below(5));
            prop_assume!(r <= c);
            let m = Mat::new(r, c, (0..r * c).map(|_| rng.uniform()).collect()).unwrap();
            let row = rng.below(r);
            let mut shifted = m.clone();
            for j in 0..c {
                shifted.set(row, j, m.get(row, j) + shift);
            }
            let a = hungarian(&m).unwrap();
            let b = hungarian(&shifted).unwrap();
            prop_assert!((b.total_cost(&shifted) - a.total_cost(&m) - shift).abs() < 1e-9);
            prop_assert!((a.total_cost(&shifted) - b.total_cost(&shifted)).abs() < 1e-9);
        }
    }
}
