use serde::Serialize;

use crate::metrics::overlap::{ratio, OverlapCounts};
use crate::metrics::surface::{hd, hd95, msd, surface_distances, EmptySide};
use crate::metrics::MetricsError;
use crate::volume::LabelMask;

/// Evaluated labels with their report names.
pub const LABELS: [(u8, &str); 2] = [(1, "GTVp"), (2, "GTVn")];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    /// Distances are `None` when either side is empty.
    pub hd: Option<f64>,
    pub hd95: Option<f64>,
    pub msd: Option<f64>,
    pub empty: Option<EmptySide>,
    #[serde(skip)]
    counts: OverlapCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub label: u8,
    pub name: &'static str,
    pub dsc_agg: f64,
    pub mean_dice: f64,
    /// Means over cases with defined distances; `None` if there are none.
    pub mean_hd95: Option<f64>,
    pub mean_msd: Option<f64>,
    pub undefined_cases: usize,
    pub cases: Vec<CaseMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortMetrics {
    pub labels: Vec<LabelMetrics>,
}

impl CohortMetrics {
    pub fn label(&self, label: u8) -> Option<&LabelMetrics> {
        self.labels.iter().find(|l| l.label == label)
    }
}

fn case_metrics(case_id: &str, pred: &LabelMask, gt: &LabelMask, label: u8) -> CaseMetrics {
    let counts = OverlapCounts {
        intersection: pred.labels.iter().zip(&gt.labels).filter(|(&p, &g)| p == label && g == label).count(),
        pred: pred.count(label),
        gt: gt.count(label),
    };
    let (hd_, hd95_, msd_, empty) = match surface_distances(pred, gt, label, gt.spacing) {
        Ok(d) => (Some(hd(&d)), Some(hd95(&d)), Some(msd(&d)), None),
        Err(side) => (None, None, None, Some(side)),
    };
    CaseMetrics { case_id: case_id.to_string(), dice: counts.dice(), hd: hd_, hd95: hd95_, msd: msd_, empty, counts }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(label: u8, name: &'static str, cases: Vec<CaseMetrics>) -> LabelMetrics {
    let inter: usize = cases.iter().map(|c| c.counts.intersection).sum();
    let denom: usize = cases.iter().map(|c| c.counts.pred + c.counts.gt).sum();
    let dsc_agg = ratio(inter, denom);
    LabelMetrics {
        label,
        name,
        dsc_agg,
        mean_dice: mean(cases.iter().map(|c| c.dice)).unwrap_or(1.0),
        mean_hd95: mean(cases.iter().filter_map(|c| c.hd95)),
        mean_msd: mean(cases.iter().filter_map(|c| c.msd)),
        undefined_cases: cases.iter().filter(|c| c.empty.is_some()).count(),
        cases,
    }
}

/// Per-case and aggregate metrics for both foreground labels. Cases are
/// reported sorted by id, so the result does not depend on input order.
/// Work is spread over the available cores; aggregation order is fixed.
pub fn evaluate_cohort(case_ids: &[String], preds: &[LabelMask], gts: &[LabelMask]) -> Result<CohortMetrics, MetricsError> {
    if preds.len() != gts.len() || case_ids.len() != gts.len() {
        return Err(MetricsError::CaseCount { pred: preds.len(), gt: gts.len() });
    }
    for ((id, p), g) in case_ids.iter().zip(preds).zip(gts) {
        if p.dims != g.dims {
            return Err(MetricsError::Dims { case: id.clone(), pred: p.dims, gt: g.dims });
        }
    }
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by(|&a, &b| case_ids[a].cmp(&case_ids[b]));

    let jobs: Vec<(usize, u8)> = order.iter().flat_map(|&i| LABELS.iter().map(move |&(l, _)| (i, l))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let results: Vec<CaseMetrics> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|&(i, l)| case_metrics(&case_ids[i], &preds[i], &gts[i], l)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("metrics worker panicked")).collect()
    });

    let labels = LABELS
        .iter()
        .enumerate()
        .map(|(k, &(label, name))| {
            let cases = results.iter().skip(k).step_by(LABELS.len()).cloned().collect();
            summarize(label, name, cases)
        })
        .collect();
    Ok(CohortMetrics { labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::flat_index;

    fn blob(at: [usize; 3], label: u8) -> LabelMask {
        let mut m = LabelMask::empty([6, 6, 6], [1.0; 3]);
        for dz in 0..2 {
            for dy in 0..2 {
                m.labels[flat_index([6; 3], at[0] + dz, at[1] + dy, at[2])] = label;
            }
        }
        m
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn identical_cohort() {
        let g = vec![blob([0, 0, 0], 1), blob([2, 2, 2], 2)];
        let m = evaluate_cohort(&ids(2), &g, &g).unwrap();
        let p = m.label(1).unwrap();
        assert_eq!(p.dsc_agg, 1.0);
        assert_eq!(p.mean_hd95, Some(0.0));
        assert_eq!(p.mean_msd, Some(0.0));
        // case c1 has no GTVp at all and case c0 has no GTVn
        assert_eq!(p.undefined_cases, 1);
        assert_eq!(m.label(2).unwrap().cases[0].empty, Some(EmptySide::Both));
    }

    #[test]
    fn empty_prediction_flagged_and_excluded() {
        let g = vec![blob([0, 0, 0], 1), blob([3, 3, 3], 1)];
        let p = vec![LabelMask::empty([6; 3], [1.0; 3]), blob([3, 3, 2], 1)];
        let m = evaluate_cohort(&ids(2), &p, &g).unwrap();
        let l = m.label(1).unwrap();
        assert_eq!(l.cases[0].empty, Some(EmptySide::Pred));
        assert_eq!(l.undefined_cases, 1);
        assert_eq!(l.mean_hd95, l.cases[1].hd95);
        assert_eq!(l.cases[1].hd, Some(1.0));
    }

    #[test]
    fn order_invariant() {
        let g = vec![blob([0, 0, 0], 1), blob([3, 3, 3], 2), blob([1, 2, 3], 1)];
        let p = vec![blob([0, 1, 0], 1), blob([3, 2, 3], 2), blob([1, 2, 4], 2)];
        let a = evaluate_cohort(&ids(3), &p, &g).unwrap();
        let perm = [2, 0, 1];
        let ids2: Vec<String> = perm.iter().map(|&i| ids(3)[i].clone()).collect();
        let p2: Vec<_> = perm.iter().map(|&i| p[i].clone()).collect();
        let g2: Vec<_> = perm.iter().map(|&i| g[i].clone()).collect();
        assert_eq!(evaluate_cohort(&ids2, &p2, &g2).unwrap(), a);
    }

    #[test]
    fn mismatches_rejected() {
        let g = vec![blob([0, 0, 0], 1)];
        assert!(evaluate_cohort(&ids(1), &[], &g).is_err());
        let small = vec![LabelMask::empty([2, 2, 2], [1.0; 3])];
        assert!(matches!(evaluate_cohort(&ids(1), &small, &g), Err(MetricsError::Dims { .. })));
    }
}
