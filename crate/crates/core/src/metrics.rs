//! Open-set evaluation: openness, open/closed overall accuracy, micro F1 over
//! known classes, and the area-based mapping error.
//!
//! Class codes are 1-based; code `C+1` is the unknown class and code 0
//! (unlabeled ground truth) is excluded everywhere.

use serde::Serialize;

use crate::error::{Error, Result};

/// `1 − sqrt(2·n_train / (n_test + n_train))`.
pub fn openness(n_train: usize, n_test: usize) -> Result<f64> {
    if n_train == 0 {
        return Err(Error::invalid("openness needs at least one training class"));
    }
    if n_test < n_train {
        return Err(Error::invalid(format!(
            "test classes ({n_test}) fewer than training classes ({n_train})"
        )));
    }
    Ok(1.0 - (2.0 * n_train as f64 / (n_test + n_train) as f64).sqrt())
}

/// `(C+1)×(C+1)` counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    /// Builds from dense counts; `rows` must be square with side `C+1`.
    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self> {
        let side = rows.len();
        if side < 2 || rows.iter().any(|r| r.len() != side) {
            return Err(Error::shape(
                "confusion matrix must be square with side ≥ 2",
            ));
        }
        Ok(ConfusionMatrix {
            num_classes: side - 1,
            counts: rows,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Count for 1-based ground truth and prediction codes.
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth - 1][pred - 1]
    }

    pub fn add(&mut self, truth: u16, pred: u16) -> Result<()> {
        let limit = self.num_classes as u16 + 1;
        for (what, code) in [("ground truth", truth), ("prediction", pred)] {
            if code == 0 || code > limit {
                return Err(Error::invalid(format!(
                    "{what} code {code} outside 1..={limit}"
                )));
            }
        }
        self.counts[truth as usize - 1][pred as usize - 1] += 1;
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Ground-truth areas over classes 1..=C+1.
    pub fn gt_areas(&self) -> AreaVector {
        AreaVector((0..=self.num_classes).map(|i| self.row_sum(i)).collect())
    }

    /// Predicted areas over classes 1..=C+1.
    pub fn pred_areas(&self) -> AreaVector {
        AreaVector((0..=self.num_classes).map(|j| self.col_sum(j)).collect())
    }

    /// Predicted areas of classes 1..=C among pixels whose ground truth is known.
    pub fn pred_areas_known_truth(&self) -> AreaVector {
        let c = self.num_classes;
        let mut areas: Vec<u64> = (0..c)
            .map(|j| (0..c).map(|i| self.counts[i][j]).sum())
            .collect();
        areas.push(0);
        AreaVector(areas)
    }

    /// Ground-truth areas with the unknown class zeroed.
    pub fn gt_areas_known(&self) -> AreaVector {
        let mut a = self.gt_areas();
        let last = a.0.len() - 1;
        a.0[last] = 0;
        a
    }
}

/// Tallies predictions against ground truth; pixels with truth 0 are skipped.
pub fn confusion(pred: &[u16], truth: &[u16], num_classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &t) in pred.iter().zip(truth) {
        if t != 0 {
            cm.add(t, p)?;
        }
    }
    Ok(cm)
}

/// Correct / total over all `C+1` classes.
pub fn open_oa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let correct: u64 = (0..=cm.num_classes).map(|i| cm.counts[i][i]).sum();
    Ok(correct as f64 / total as f64)
}

/// Correct / total over pixels of known ground truth; predictions of unknown count as misses.
pub fn closed_oa(cm: &ConfusionMatrix) -> Result<f64> {
    let c = cm.num_classes;
    let total: u64 = (0..c).map(|i| cm.row_sum(i)).sum();
    if total == 0 {
        return Err(Error::invalid("no known-class pixels in confusion matrix"));
    }
    let correct: u64 = (0..c).map(|i| cm.counts[i][i]).sum();
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MicroF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged precision, recall and F1 over known classes only.
///
/// Unknown pixels assigned a known class are false positives; known pixels
/// rejected as unknown are false negatives.
pub fn micro_f1(cm: &ConfusionMatrix) -> MicroF1 {
    let c = cm.num_classes;
    let tp: u64 = (0..c).map(|i| cm.counts[i][i]).sum();
    let predicted_known: u64 = (0..c).map(|j| cm.col_sum(j)).sum();
    let actual_known: u64 = (0..c).map(|i| cm.row_sum(i)).sum();
    let precision = ratio(tp, predicted_known);
    let recall = ratio(tp, actual_known);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MicroF1 {
        precision,
        recall,
        f1,
    }
}

/// Per-class F1 for classes 1..=C; `None` where the class has no ground-truth pixels.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes)
        .map(|i| {
            let support = cm.row_sum(i);
            if support == 0 {
                return None;
            }
            let tp = cm.counts[i][i];
            let fp = cm.col_sum(i) - tp;
            let fn_ = support - tp;
            Some(ratio(2 * tp, 2 * tp + fp + fn_))
        })
        .collect()
}

/// Pixel counts per class; the last entry is the unknown class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AreaVector(pub Vec<u64>);

impl AreaVector {
    /// Known classes plus an explicit unknown entry.
    pub fn with_unknown(known: &[u64], unknown: u64) -> Self {
        let mut v = known.to_vec();
        v.push(unknown);
        AreaVector(v)
    }

    pub fn known(&self) -> &[u64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn unknown(&self) -> u64 {
        *self.0.last().unwrap_or(&0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingMode {
    Open,
    Closed,
}

/// `Σ_{i≤C} |A_p,i − A_gt,i| / Σ_{i≤C} A_gt,i`.
///
/// Only known classes enter the sum in both modes; the mode selects the
/// upper bound the value is measured against (see [`error_max`]).
pub fn mapping_error(pred: &AreaVector, gt: &AreaVector, mode: MappingMode) -> Result<f64> {
    if pred.0.len() != gt.0.len() || gt.0.len() < 2 {
        return Err(Error::shape(format!(
            "area vectors of length {} and {}",
            pred.0.len(),
            gt.0.len()
        )));
    }
    let known_gt: u64 = gt.known().iter().sum();
    if known_gt == 0 {
        return Err(Error::invalid("zero known ground-truth area"));
    }
    let diff: u64 = pred
        .known()
        .iter()
        .zip(gt.known())
        .map(|(&p, &g)| p.abs_diff(g))
        .sum();
    let value = diff as f64 / known_gt as f64;
    debug_assert!(value <= mode_max(gt, mode)? + 1e-12);
    Ok(value)
}

fn mode_max(gt: &AreaVector, mode: MappingMode) -> Result<f64> {
    match mode {
        MappingMode::Open => error_max(gt),
        MappingMode::Closed => Ok(2.0),
    }
}

/// Largest open-world mapping error: `2·(1 + A_gt,C+1 / Σ_{i≤C} A_gt,i)`.
pub fn error_max(gt: &AreaVector) -> Result<f64> {
    let known_gt: u64 = gt.known().iter().sum();
    if known_gt == 0 {
        return Err(Error::invalid("zero known ground-truth area"));
    }
    Ok(2.0 * (1.0 + gt.unknown() as f64 / known_gt as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub openness: f64,
    pub oa_open: f64,
    pub oa_closed: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_micro: f64,
    pub mapping_error: f64,
    pub mapping_error_closed: f64,
    pub error_max: f64,
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aggregates every metric for one confusion matrix.
///
/// The open mapping error uses all evaluated pixels; the closed one restricts
/// to pixels with known ground truth.
pub fn report(cm: &ConfusionMatrix, n_train: usize, n_test: usize) -> Result<MetricsReport> {
    let f1 = micro_f1(cm);
    let gt = cm.gt_areas();
    Ok(MetricsReport {
        openness: openness(n_train, n_test)?,
        oa_open: open_oa(cm)?,
        oa_closed: closed_oa(cm)?,
        precision: f1.precision,
        recall: f1.recall,
        f1_micro: f1.f1,
        mapping_error: mapping_error(&cm.pred_areas(), &gt, MappingMode::Open)?,
        mapping_error_closed: mapping_error(
            &cm.pred_areas_known_truth(),
            &cm.gt_areas_known(),
            MappingMode::Closed,
        )?,
        error_max: error_max(&gt)?,
        per_class_f1: per_class_f1(cm),
        confusion: cm.counts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn openness_values() {
        assert!((openness(9, 15).unwrap() - 0.134).abs() < 5e-4);
        assert!((openness(3, 15).unwrap() - 0.423).abs() < 5e-4);
        assert_eq!(openness(7, 7).unwrap(), 0.0);
        assert!(openness(5, 4).is_err());
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[1, 2, 3], &[1, 2, 3], 2).unwrap();
        assert_eq!(cm.rows(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let cm = confusion(&[3, 3, 3], &[1, 2, 1], 2).unwrap();
        assert_eq!(cm.rows(), &[vec![0, 0, 2], vec![0, 0, 1], vec![0, 0, 0]]);
        // hand tally; truth 0 is skipped
        let pred = [1, 2, 2, 3, 1, 1];
        let truth = [1, 2, 1, 3, 0, 3];
        let cm = confusion(&pred, &truth, 2).unwrap();
        assert_eq!(cm.rows(), &[vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 1]]);
        assert_eq!(cm.total(), 5);
        assert!(confusion(&[4], &[1], 2).is_err());
        assert!(confusion(&[1], &[1, 2], 2).is_err());
    }

    #[test]
    fn oa_examples() {
        // 8 known correct + 2 unknown rejected
        let mut cm = ConfusionMatrix::new(2);
        for _ in 0..4 {
            cm.add(1, 1).unwrap();
            cm.add(2, 2).unwrap();
        }
        cm.add(3, 3).unwrap();
        cm.add(3, 3).unwrap();
        assert_eq!(open_oa(&cm).unwrap(), 1.0);
        assert_eq!(closed_oa(&cm).unwrap(), 1.0);

        // 10 knowns, one rejected; 5 unknowns all caught
        let mut cm = ConfusionMatrix::new(3);
        for i in 0..10u16 {
            let t = 1 + i % 3;
            cm.add(t, if i == 0 { 4 } else { t }).unwrap();
        }
        for _ in 0..5 {
            cm.add(4, 4).unwrap();
        }
        assert!((open_oa(&cm).unwrap() - 14.0 / 15.0).abs() < 1e-15);
        assert!((closed_oa(&cm).unwrap() - 0.9).abs() < 1e-15);
        let f = micro_f1(&cm);
        assert_eq!(f.precision, 1.0);
        assert!((f.recall - 0.9).abs() < 1e-15);

        assert!(open_oa(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn micro_f1_examples() {
        let cm = confusion(&[1, 2, 3], &[1, 2, 3], 2).unwrap();
        let f = micro_f1(&cm);
        assert_eq!((f.precision, f.recall, f.f1), (1.0, 1.0, 1.0));

        // 10 knowns right, 5 unknowns forced into known classes
        let mut pred = vec![1u16; 10];
        let mut truth = vec![1u16; 10];
        pred.extend([1, 2, 1, 2, 1]);
        truth.extend([3; 5]);
        let f = micro_f1(&confusion(&pred, &truth, 2).unwrap());
        assert!((f.precision - 10.0 / 15.0).abs() < 1e-15);
        assert_eq!(f.recall, 1.0);
        assert!((f.f1 - 0.8).abs() < 1e-12);

        let f = micro_f1(&confusion(&[3, 3], &[1, 2], 2).unwrap());
        assert_eq!((f.recall, f.f1), (0.0, 0.0));
    }

    fn areas(v: &[u64]) -> AreaVector {
        AreaVector::with_unknown(v, 0)
    }

    #[test]
    fn mapping_error_table() {
        let gt = areas(&[80, 10, 10]);
        let m = |p: &[u64]| mapping_error(&areas(p), &gt, MappingMode::Open).unwrap();
        assert_eq!(m(&[80, 10, 10]), 0.0);
        assert_eq!(m(&[88, 6, 6]), 0.16);
        assert_eq!(m(&[100, 0, 0]), 0.40);
        assert!(mapping_error(&areas(&[1, 0]), &areas(&[0, 0]), MappingMode::Open).is_err());
    }

    #[test]
    fn error_max_examples() {
        assert_eq!(error_max(&areas(&[5, 5])).unwrap(), 2.0);
        assert_eq!(
            error_max(&AreaVector::with_unknown(&[3, 7], 10)).unwrap(),
            4.0
        );
        let pavia = error_max(&AreaVector::with_unknown(&[14724], 33215)).unwrap();
        assert!((pavia - 6.512).abs() < 1e-3);
        assert!(error_max(&AreaVector::with_unknown(&[0, 0], 4)).is_err());
    }

    #[test]
    fn report_perfect_and_consistent() {
        let truth = [1u16, 2, 2, 3, 1];
        let cm = confusion(&truth, &truth, 2).unwrap();
        let r = report(&cm, 2, 3).unwrap();
        assert_eq!((r.oa_open, r.oa_closed, r.f1_micro), (1.0, 1.0, 1.0));
        assert_eq!((r.mapping_error, r.mapping_error_closed), (0.0, 0.0));
        assert_eq!(r.per_class_f1, vec![Some(1.0), Some(1.0)]);

        let cm = confusion(&[1, 3, 2, 1, 1], &[1, 2, 2, 3, 3], 2).unwrap();
        let r = report(&cm, 2, 3).unwrap();
        assert_eq!(r.oa_open.to_bits(), open_oa(&cm).unwrap().to_bits());
        assert_eq!(r.f1_micro.to_bits(), micro_f1(&cm).f1.to_bits());
        assert_eq!(
            r.error_max.to_bits(),
            error_max(&cm.gt_areas()).unwrap().to_bits()
        );
        let json = r.to_json();
        for key in [
            "openness",
            "oa_open",
            "oa_closed",
            "precision",
            "recall",
            "f1_micro",
            "mapping_error",
            "mapping_error_closed",
            "error_max",
            "per_class_f1",
            "confusion",
        ] {
            assert!(json.contains(&format!("\"{key}\"")), "{key}");
        }
    }

    #[test]
    fn absent_class_f1_not_applicable() {
        let cm = confusion(&[1, 1], &[1, 1], 2).unwrap();
        assert_eq!(per_class_f1(&cm), vec![Some(1.0), None]);
    }

    fn random_cm(c: usize) -> impl Strategy<Value = ConfusionMatrix> {
        prop::collection::vec(prop::collection::vec(0u64..50, c + 1), c + 1)
            .prop_map(|rows| ConfusionMatrix::from_counts(rows).unwrap())
    }

    proptest! {
        #[test]
        fn open_oa_decomposes(cm in (1usize..5).prop_flat_map(random_cm)) {
            prop_assume!(cm.total() > 0);
            let c = cm.num_classes();
            let known: u64 = (1..=c).map(|i| cm.rows()[i - 1].iter().sum::<u64>()).sum();
            let unknown: u64 = cm.rows()[c].iter().sum();
            let known_correct: u64 = (1..=c).map(|i| cm.get(i, i)).sum();
            let unknown_correct = cm.get(c + 1, c + 1);
            let known_acc = ratio(known_correct, known);
            let unknown_acc = ratio(unknown_correct, unknown);
            let weighted = (known as f64 * known_acc + unknown as f64 * unknown_acc)
                / (known + unknown) as f64;
            prop_assert!((open_oa(&cm).unwrap() - weighted).abs() < 1e-12);
        }

        #[test]
        fn rejected_unknowns_leave_f1(cm in (1usize..5).prop_flat_map(random_cm), extra in 1u64..100) {
            let mut rows = cm.rows().to_vec();
            let c = cm.num_classes();
            rows[c][c] += extra;
            let bumped = ConfusionMatrix::from_counts(rows).unwrap();
            prop_assert_eq!(micro_f1(&cm), micro_f1(&bumped));
        }

        #[test]
        fn mapping_error_bounded_and_invariant(
            gt in prop::collection::vec(0u64..1000, 2..7),
            pred_seed in prop::collection::vec(0u64..1000, 7),
            scale in 1u64..5,
            rot in 0usize..6,
        ) {
            let c = gt.len() - 1;
            prop_assume!(gt[..c].iter().sum::<u64>() > 0);
            // redistribute the same total over C+1 classes
            let total: u64 = gt.iter().sum();
            let weights = &pred_seed[..c + 1];
            let wsum: u64 = weights.iter().sum::<u64>().max(1);
            let mut pred: Vec<u64> = weights.iter().map(|w| w * total / wsum).collect();
            let assigned: u64 = pred.iter().sum();
            pred[c] += total - assigned;
            let g = AreaVector(gt.clone());
            let p = AreaVector(pred.clone());
            let e = mapping_error(&p, &g, MappingMode::Open).unwrap();
            prop_assert!(e >= 0.0 && e <= error_max(&g).unwrap());

            let scaled = |v: &[u64]| AreaVector(v.iter().map(|x| x * scale).collect());
            let es = mapping_error(&scaled(&pred), &scaled(&gt), MappingMode::Open).unwrap();
            prop_assert!((e - es).abs() < 1e-12);

            // permute the known classes
            let r = rot % c;
            let perm = |v: &[u64]| {
                let mut k = v[..c].to_vec();
                k.rotate_left(r);
                k.push(v[c]);
                AreaVector(k)
            };
            let ep = mapping_error(&perm(&pred), &perm(&gt), MappingMode::Open).unwrap();
            prop_assert!((e - ep).abs() < 1e-12);

            let same = mapping_error(&g, &g, MappingMode::Open).unwrap();
            prop_assert_eq!(same, 0.0);
        }
    }
}
