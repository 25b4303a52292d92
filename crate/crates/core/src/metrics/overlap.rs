use crate::volume::LabelMask;

/// Voxel counts behind a Dice score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: usize,
    pub pred: usize,
    pub gt: usize,
}

impl OverlapCounts {
    fn of(pred: &[u8], gt: &[u8], sel: impl Fn(u8) -> bool) -> Self {
        assert_eq!(pred.len(), gt.len(), "masks differ in size");
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (sel(p), sel(g));
            c.intersection += (p && g) as usize;
            c.pred += p as usize;
            c.gt += g as usize;
        }
        c
    }

    /// Counts for one label of a prediction/ground-truth pair.
    pub fn for_label(pred: &LabelMask, gt: &LabelMask, label: u8) -> Self {
        Self::of(&pred.labels, &gt.labels, |v| v == label)
    }

    /// 2|P∩G| / (|P|+|G|), 1 when both sides are empty.
    pub fn dice(&self) -> f64 {
        ratio(self.intersection, self.pred + self.gt)
    }
}

pub(crate) fn ratio(inter: usize, denom: usize) -> f64 {
    if denom == 0 {
        1.0
    } else {
        2.0 * inter as f64 / denom as f64
    }
}

pub fn dice(pred: &LabelMask, gt: &LabelMask, label: u8) -> f64 {
    OverlapCounts::for_label(pred, gt, label).dice()
}

/// Dice of the union of all foreground labels.
pub fn foreground_dice(pred: &LabelMask, gt: &LabelMask) -> f64 {
    OverlapCounts::of(&pred.labels, &gt.labels, |v| v > 0).dice()
}

pub fn dice_binary(pred: &[bool], gt: &[bool]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "masks differ in size");
    let inter = pred.iter().zip(gt).filter(|(&p, &g)| p && g).count();
    let denom = pred.iter().filter(|&&p| p).count() + gt.iter().filter(|&&g| g).count();
    ratio(inter, denom)
}

/// Aggregated Dice: intersections and sizes are summed over the cohort
/// before dividing, so large lesions weigh more than in a per-case mean.
pub fn dsc_agg(cases: &[(&LabelMask, &LabelMask)], label: u8) -> f64 {
    let (inter, denom) = cases.iter().fold((0, 0), |(i, d), (p, g)| {
        let c = OverlapCounts::of(&p.labels, &g.labels, |v| v == label);
        (i + c.intersection, d + c.pred + c.gt)
    });
    ratio(inter, denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(labels: &[u8]) -> LabelMask {
        LabelMask::new([1, 1, labels.len()], [1.0; 3], labels.to_vec())
    }

    #[test]
    fn dice_examples() {
        let a = line(&[1, 1, 0]);
        assert_eq!(dice(&a, &a, 1), 1.0);
        assert_eq!(dice(&a, &line(&[0, 1, 1]), 1), 0.5);
        assert_eq!(dice(&line(&[1, 0, 0]), &line(&[0, 0, 1]), 1), 0.0);
        assert_eq!(dice(&line(&[0, 0, 0]), &line(&[0, 0, 0]), 1), 1.0);
    }

    #[test]
    fn aggregate_and_mean_differ() {
        let (p1, g1) = (line(&[1, 1, 0, 0]), line(&[1, 1, 0, 0]));
        let (p2, g2) = (line(&[1, 0, 0, 0]), line(&[0, 0, 0, 1]));
        let cases = [(&p1, &g1), (&p2, &g2)];
        assert_eq!(dsc_agg(&cases, 1), 4.0 / 6.0);
        let mean = (dice(&p1, &g1, 1) + dice(&p2, &g2, 1)) / 2.0;
        assert_eq!(mean, 0.5);
    }

    #[test]
    fn aggregate_edge_cases() {
        let empty = line(&[0, 0]);
        let full = line(&[2, 2]);
        assert_eq!(dsc_agg(&[(&empty, &full), (&empty, &full)], 2), 0.0);
        assert_eq!(dsc_agg(&[(&empty, &empty)], 2), 1.0);
        assert_eq!(dsc_agg(&[(&full, &full)], 2), 1.0);
    }

    #[test]
    fn foreground_merges_labels() {
        assert_eq!(foreground_dice(&line(&[1, 2, 0]), &line(&[2, 1, 0])), 1.0);
        assert_eq!(dice_binary(&[true, false], &[true, true]), 2.0 / 3.0);
    }
}
