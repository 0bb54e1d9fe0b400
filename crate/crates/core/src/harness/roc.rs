//! ROC curves, rank-based AUC and standardized partial AUC.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default maximum FPR for the partial AUC.
pub const DEFAULT_PAUC_FPR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Partial AUC over `FPR ≤ q`, standardized (McClish) so that a random
    /// classifier scores 0.5 and a perfect one 1.
    pub fn pauc_at(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q <= 1.0, "partial AUC bound must lie in (0, 1]");
        let area = self.partial_area(q);
        let min = 0.5 * q * q;
        0.5 * (1.0 + (area - min) / (q - min))
    }

    /// Raw trapezoid area under the curve for `FPR ≤ q`.
    pub fn partial_area(&self, q: f64) -> f64 {
        let mut area = 0.0;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x0 >= q {
                break;
            }
            if x1 <= q {
                area += (x1 - x0) * (y0 + y1) / 2.0;
            } else {
                let yq = y0 + (y1 - y0) * (q - x0) / (x1 - x0);
                area += (q - x0) * (y0 + yq) / 2.0;
            }
        }
        area
    }

    /// Largest TPR reachable at `FPR ≤ q` (interpolated).
    pub fn tpr_at(&self, q: f64) -> f64 {
        let mut best: f64 = 0.0;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x1 <= q {
                best = best.max(y1);
            } else if x0 <= q {
                best = best.max(y0 + (y1 - y0) * (q - x0) / (x1 - x0));
            }
        }
        best
    }
}

/// ROC of a detector whose larger scores indicate the positive class.
///
/// The AUC is the Mann–Whitney statistic with mid-ranks for ties, which equals
/// the trapezoid area under `points`.
pub fn roc(neg: &[f64], pos: &[f64]) -> Result<RocCurve> {
    if neg.is_empty() || pos.is_empty() {
        return Err(invalid("ROC needs at least one negative and one positive score"));
    }
    if neg.iter().chain(pos).any(|s| s.is_nan()) {
        return Err(invalid("ROC scores contain NaN"));
    }
    let mut all: Vec<(f64, bool)> = neg.iter().map(|&s| (s, false)).chain(pos.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Rank sum of positives in ascending order, with mid-ranks for ties.
    let total = all.len();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && all[j].0 == all[i].0 {
            j += 1;
        }
        let group_pos = all[i..j].iter().filter(|e| e.1).count();
        // Descending positions i..j map to ascending ranks total-j+1 ..= total-i.
        let mid = ((total - j + 1) + (total - i)) as f64 / 2.0;
        rank_sum += mid * group_pos as f64;
        tp += group_pos;
        fp += (j - i) - group_pos;
        points.push((fp as f64 / nn, tp as f64 / np));
        i = j;
    }
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(RocCurve { points, auc: u / (np * nn) })
}
