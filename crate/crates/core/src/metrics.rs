//! Aggregated Dice: intersection and size tallies are pooled over cases
//! before taking the ratio.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Foreground classes scored: 1 (primary tumor) and 2 (nodes).
pub const CLASSES: [u8; 2] = [1, 2];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassTally {
    pub intersection: u64,
    pub pred: u64,
    pub gt: u64,
}

impl ClassTally {
    pub fn dice(&self) -> f64 {
        if self.pred + self.gt == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.pred + self.gt) as f64
        }
    }

    fn add(&mut self, other: &ClassTally) {
        self.intersection += other.intersection;
        self.pred += other.pred;
        self.gt += other.gt;
    }
}

/// Tallies for classes 1 and 2 over raw label slices.
pub fn tally_labels(pred: &[u8], gt: &[u8]) -> [ClassTally; 2] {
    let mut t = [ClassTally::default(); 2];
    for (&p, &g) in pred.iter().zip(gt) {
        for (k, &c) in CLASSES.iter().enumerate() {
            let (pc, gc) = (p == c, g == c);
            t[k].pred += pc as u64;
            t[k].gt += gc as u64;
            t[k].intersection += (pc && gc) as u64;
        }
    }
    t
}

pub fn case_tallies(case: &str, pred: &LabelVolume, gt: &LabelVolume) -> Result<[ClassTally; 2]> {
    if !pred.geometry().approx_eq(gt.geometry(), 1e-4) {
        return Err(Error::Case {
            case: case.to_string(),
            reason: format!(
                "prediction geometry {:?} differs from ground truth {:?}",
                pred.geometry(),
                gt.geometry()
            ),
        });
    }
    Ok(tally_labels(pred.data(), gt.data()))
}

/// `2|P∩G| / (|P|+|G|)` for one class; 1.0 when both masks are empty.
pub fn per_case_dice(pred: &LabelVolume, gt: &LabelVolume, class: u8) -> Result<f64> {
    let k = CLASSES
        .iter()
        .position(|&c| c == class)
        .ok_or_else(|| Error::Argument(format!("class {class} is not scored")))?;
    Ok(case_tallies("case", pred, gt)?[k].dice())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedDice {
    pub per_class: [f64; 2],
    pub mean: f64,
    /// Classes absent from every prediction and ground truth; scored 1.0.
    pub vacuous: Vec<u8>,
}

pub fn aggregate(tallies: &[[ClassTally; 2]]) -> AggregatedDice {
    let mut pooled = [ClassTally::default(); 2];
    for t in tallies {
        pooled[0].add(&t[0]);
        pooled[1].add(&t[1]);
    }
    let mut vacuous = Vec::new();
    for (k, p) in pooled.iter().enumerate() {
        if p.pred + p.gt == 0 {
            log::warn!("class {} absent from every case; aggregated Dice set to 1.0", CLASSES[k]);
            vacuous.push(CLASSES[k]);
        }
    }
    let per_class = [pooled[0].dice(), pooled[1].dice()];
    AggregatedDice {
        per_class,
        mean: (per_class[0] + per_class[1]) / 2.0,
        vacuous,
    }
}

/// Pooled Dice over `(pred, gt)` pairs.
pub fn aggregated_dice(cases: &[(&LabelVolume, &LabelVolume)]) -> Result<AggregatedDice> {
    let tallies = cases
        .iter()
        .enumerate()
        .map(|(i, (p, g))| case_tallies(&format!("#{i}"), p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&tallies))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub tallies: [ClassTally; 2],
    pub dice: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cases: Vec<CaseResult>,
    pub aggregate: AggregatedDice,
}

impl EvalReport {
    /// Cases are sorted by id so the report does not depend on input order.
    pub fn from_tallies(mut cases: Vec<(String, [ClassTally; 2])>) -> Self {
        cases.sort_by(|a, b| a.0.cmp(&b.0));
        let aggregate = aggregate(&cases.iter().map(|c| c.1).collect::<Vec<_>>());
        let cases = cases
            .into_iter()
            .map(|(case, tallies)| CaseResult {
                dice: [tallies[0].dice(), tallies[1].dice()],
                case,
                tallies,
            })
            .collect();
        Self { cases, aggregate }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,dice_gtvp,dice_gtvn\n");
        for c in &self.cases {
            let _ = writeln!(s, "{},{:.6},{:.6}", c.case, c.dice[0], c.dice[1]);
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "aggregated,{:.6},{:.6}", a.per_class[0], a.per_class[1]);
        let _ = writeln!(s, "aggregated_mean,{:.6},", a.mean);
        if !a.vacuous.is_empty() {
            let _ = writeln!(s, "# classes absent everywhere (scored 1.0): {:?}", a.vacuous);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGeometry;

    fn vol(labels: Vec<u8>) -> LabelVolume {
        let g = ImageGeometry::new([labels.len(), 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        LabelVolume::new(g, labels).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let a = vol(vec![0, 1, 2, 2, 1]);
        let r = aggregated_dice(&[(&a, &a)]).unwrap();
        assert_eq!(r.per_class, [1.0, 1.0]);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let p = vol(vec![1, 2, 0, 0]);
        let g = vol(vec![0, 0, 1, 2]);
        assert_eq!(aggregated_dice(&[(&p, &g)]).unwrap().mean, 0.0);
    }

    #[test]
    fn pooled_differs_from_mean_of_cases() {
        let t = |i, p, g| {
            [
                ClassTally {
                    intersection: i,
                    pred: p,
                    gt: g,
                },
                ClassTally::default(),
            ]
        };
        let cases = [t(10, 20, 20), t(0, 10, 10)];
        let agg = aggregate(&cases);
        assert!((agg.per_class[0] - 1.0 / 3.0).abs() < 1e-15);
        let mean_per_case = (cases[0][0].dice() + cases[1][0].dice()) / 2.0;
        assert!((mean_per_case - 0.25).abs() < 1e-15);
    }

    #[test]
    fn per_case_conventions() {
        let a = vol(vec![1, 1, 0, 0]);
        assert_eq!(per_case_dice(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(per_case_dice(&a, &a, 2).unwrap(), 1.0);
        let b = vol(vec![0, 1, 1, 0]);
        assert_eq!(per_case_dice(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn geometry_mismatch_is_case_error() {
        let a = vol(vec![0, 1]);
        let b = vol(vec![0, 1, 0]);
        assert!(matches!(aggregated_dice(&[(&a, &b)]), Err(Error::Case { .. })));
    }

    #[test]
    fn absent_class_is_vacuous_one() {
        let a = vol(vec![0, 1, 0]);
        let r = aggregated_dice(&[(&a, &a)]).unwrap();
        assert_eq!(r.per_class[1], 1.0);
        assert_eq!(r.vacuous, vec![2]);
        assert!(EvalReport::from_tallies(vec![("a".into(), tally_labels(a.data(), a.data()))])
            .to_csv()
            .contains("absent"));
    }
}
