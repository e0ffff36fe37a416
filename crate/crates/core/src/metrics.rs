//! CLEAR-MOT evaluation: MOTA, MOTP, FP, FN, identity switches, fragments,
//! mostly tracked and mostly lost.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::assignment::{solve_assignment, ScoreMatrix};
use crate::geometry::ground_distance;
use crate::ingest::GroundTruthRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("3D evaluation needs world coordinates; {which} frame {frame} id {id} has none")]
    ModeMismatch { which: &'static str, frame: u32, id: u64 },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalMode {
    /// Ground-plane distance in meters; a match needs distance <= threshold.
    ThreeD,
    /// Box overlap; a match needs IoU >= threshold.
    TwoD,
}

impl EvalMode {
    pub fn default_threshold(self) -> f64 {
        match self {
            EvalMode::ThreeD => 1.0,
            EvalMode::TwoD => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mota: f64,
    /// Mean matched distance in meters (3D) or mean matched IoU (2D).
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub fragments: usize,
    /// Fraction of ground-truth trajectories matched in at least 80% of
    /// their frames.
    pub mt: f64,
    /// Fraction matched in at most 20% of their frames.
    pub ml: f64,
    pub gt_count: usize,
    pub gt_tracks: usize,
    pub matches: usize,
    pub mode: EvalMode,
}

pub const COLUMNS: [&str; 9] = ["MOTA", "MOTP", "MT", "ML", "FP", "FN", "IDSw", "Frag", "GT"];

impl MetricsReport {
    fn values(&self) -> [String; 9] {
        let motp = match self.mode {
            EvalMode::ThreeD => format!("{:.3}m", self.motp),
            EvalMode::TwoD => format!("{:.1}%", 100.0 * self.motp),
        };
        [
            format!("{:.1}%", 100.0 * self.mota),
            motp,
            format!("{:.1}%", 100.0 * self.mt),
            format!("{:.1}%", 100.0 * self.ml),
            self.fp.to_string(),
            self.fn_.to_string(),
            self.id_switches.to_string(),
            self.fragments.to_string(),
            self.gt_count.to_string(),
        ]
    }

    /// Header and one row, comma separated, raw numbers.
    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{},{},{}\n",
            COLUMNS.join(","),
            self.mota,
            self.motp,
            self.mt,
            self.ml,
            self.fp,
            self.fn_,
            self.id_switches,
            self.fragments,
            self.gt_count
        )
    }
}

impl fmt::Display for MetricsReport {
    /// Aligned two-line table.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values = self.values();
        let widths: Vec<usize> = COLUMNS.iter().zip(&values).map(|(c, v)| c.len().max(v.len())).collect();
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        writeln!(f, "{}", line(&COLUMNS.map(String::from)))?;
        writeln!(f, "{}", line(&values))
    }
}

struct Frame<'a> {
    gt: Vec<&'a GroundTruthRecord>,
    hyp: Vec<&'a GroundTruthRecord>,
}

fn group<'a>(gt: &'a [GroundTruthRecord], hyp: &'a [GroundTruthRecord]) -> BTreeMap<u32, Frame<'a>> {
    let mut frames: BTreeMap<u32, Frame<'a>> = BTreeMap::new();
    for g in gt {
        frames.entry(g.frame).or_insert_with(|| Frame { gt: Vec::new(), hyp: Vec::new() }).gt.push(g);
    }
    for h in hyp {
        frames.entry(h.frame).or_insert_with(|| Frame { gt: Vec::new(), hyp: Vec::new() }).hyp.push(h);
    }
    frames
}

/// Evaluates `hyp` against `gt`. Correspondences from the previous frame are
/// kept while still valid; the rest are matched to maximize the number of
/// matches and then their total quality.
pub fn evaluate(
    gt: &[GroundTruthRecord],
    hyp: &[GroundTruthRecord],
    mode: EvalMode,
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    if mode == EvalMode::ThreeD {
        for (which, set) in [("ground truth", gt), ("hypothesis", hyp)] {
            if let Some(r) = set.iter().find(|r| r.world.is_none()) {
                return Err(MetricsError::ModeMismatch { which, frame: r.frame, id: r.identity });
            }
        }
    }
    // Distance-like quality in 3D, overlap in 2D; `None` when not matchable.
    let quality = |g: &GroundTruthRecord, h: &GroundTruthRecord| -> Option<f64> {
        match mode {
            EvalMode::ThreeD => {
                let d = ground_distance(g.world.unwrap(), h.world.unwrap());
                (d <= threshold).then_some(d)
            }
            EvalMode::TwoD => {
                let iou = g.bbox.iou(&h.bbox);
                (iou >= threshold).then_some(iou)
            }
        }
    };
    let goodness = |q: f64| match mode {
        EvalMode::ThreeD => (threshold - q) / threshold.max(f64::MIN_POSITIVE),
        EvalMode::TwoD => q,
    };

    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    // Per GT identity: (frames present, frames matched, fragments, was
    // matched in its previous frame, ever matched).
    let mut per_gt: BTreeMap<u64, (usize, usize, usize, bool, bool)> = BTreeMap::new();
    let (mut fp, mut fn_, mut idsw, mut matches) = (0usize, 0usize, 0usize, 0usize);
    let mut quality_sum = 0.0;

    for frame in group(gt, hyp).values() {
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        let mut gt_used = vec![false; frame.gt.len()];
        let mut hyp_used = vec![false; frame.hyp.len()];
        for (gi, g) in frame.gt.iter().enumerate() {
            let Some(&hid) = previous.get(&g.identity) else { continue };
            if let Some(hi) = frame.hyp.iter().position(|h| h.identity == hid) {
                if hyp_used[hi] {
                    continue;
                }
                if let Some(q) = quality(g, frame.hyp[hi]) {
                    pairs.push((gi, hi, q));
                    gt_used[gi] = true;
                    hyp_used[hi] = true;
                }
            }
        }
        let rows: Vec<usize> = (0..frame.gt.len()).filter(|&i| !gt_used[i]).collect();
        let cols: Vec<usize> = (0..frame.hyp.len()).filter(|&i| !hyp_used[i]).collect();
        if !rows.is_empty() && !cols.is_empty() {
            // The constant term makes any extra match outweigh any gain in
            // quality.
            let big = rows.len().min(cols.len()) as f64 + 1.0;
            let scores = ScoreMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                quality(frame.gt[rows[r]], frame.hyp[cols[c]]).map_or(0.0, |q| big + goodness(q))
            });
            for (r, c) in solve_assignment(&scores, big).pairs {
                let q = quality(frame.gt[rows[r]], frame.hyp[cols[c]]).expect("valid pair");
                pairs.push((rows[r], cols[c], q));
            }
        }

        let mut current: HashMap<u64, u64> = HashMap::new();
        let mut matched_gt = vec![false; frame.gt.len()];
        for &(gi, hi, q) in &pairs {
            let gid = frame.gt[gi].identity;
            let hid = frame.hyp[hi].identity;
            if last_match.get(&gid).is_some_and(|&prev| prev != hid) {
                idsw += 1;
            }
            last_match.insert(gid, hid);
            current.insert(gid, hid);
            matched_gt[gi] = true;
            quality_sum += q;
        }
        matches += pairs.len();
        fp += frame.hyp.len() - pairs.len();
        fn_ += frame.gt.len() - pairs.len();
        for (gi, g) in frame.gt.iter().enumerate() {
            let e = per_gt.entry(g.identity).or_insert((0, 0, 0, false, false));
            e.0 += 1;
            if matched_gt[gi] {
                e.1 += 1;
                if !e.3 && e.4 {
                    e.2 += 1;
                }
                e.4 = true;
            }
            e.3 = matched_gt[gi];
        }
        previous = current;
    }

    let gt_count = gt.len();
    let gt_tracks = per_gt.len();
    let ratio = |(present, matched, ..): &(usize, usize, usize, bool, bool)| *matched as f64 / *present as f64;
    let mt = per_gt.values().filter(|e| ratio(e) >= 0.8).count() as f64 / gt_tracks as f64;
    let ml = per_gt.values().filter(|e| ratio(e) <= 0.2).count() as f64 / gt_tracks as f64;
    let fragments = per_gt.values().map(|e| e.2).sum();
    Ok(MetricsReport {
        mota: 1.0 - (fp + fn_ + idsw) as f64 / gt_count as f64,
        motp: if matches > 0 { quality_sum / matches as f64 } else { 0.0 },
        fp,
        fn_,
        id_switches: idsw,
        fragments,
        mt,
        ml,
        gt_count,
        gt_tracks,
        matches,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use proptest::prelude::*;

    fn rec(frame: u32, identity: u64, x: f64, y: f64) -> GroundTruthRecord {
        GroundTruthRecord { frame, identity, bbox: BBox::from_ltwh(100.0 * x, 100.0 * y, 40.0, 90.0), world: Some([x, y]) }
    }

    /// Two targets walking apart along y = 0 and y = 3.
    fn two_tracks() -> Vec<GroundTruthRecord> {
        (1..=5).flat_map(|f| [rec(f, 1, f as f64, 0.0), rec(f, 2, f as f64, 3.0)]).collect()
    }

    #[test]
    fn perfect_tracker() {
        let gt = two_tracks();
        let r = evaluate(&gt, &gt, EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!((r.mota, r.fp, r.fn_, r.id_switches, r.fragments), (1.0, 0, 0, 0, 0));
        assert_eq!((r.mt, r.ml, r.motp), (1.0, 0.0, 0.0));
        let r2 = evaluate(&gt, &gt, EvalMode::TwoD, 0.5).unwrap();
        assert_eq!((r2.mota, r2.motp), (1.0, 1.0));
    }

    #[test]
    fn empty_hypotheses() {
        let gt = two_tracks();
        let r = evaluate(&gt, &[], EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!(r.fn_, 10);
        assert_eq!(r.mota, 0.0);
        assert_eq!((r.mt, r.ml), (0.0, 1.0));
    }

    /// Worked by hand, frame by frame (threshold 1 m):
    /// f1: a@(1,0)->g1, b@(1,3)->g2.                   matches 2
    /// f2: a@(2,0.5)->g1 (d 0.5), b missing.           FN 1
    /// f3: labels swap: a@(3,3), b@(3,0). Carry-over of g1->a fails
    ///     (d 3), fresh matching gives g1->b, g2->a.   IDSW 2
    /// f4: a@(4,3), b@(4,0), c@(9,9) spurious.         FP 1
    /// f5: a and b swap back.                          IDSW 2
    /// Totals: FP 1, FN 1, IDSW 4, GT 10, MOTA 1 - 6/10 = 0.4.
    /// g2 misses f2 and resumes at f3: one fragment.
    fn fixture_hyp() -> Vec<GroundTruthRecord> {
        vec![
            rec(1, 11, 1.0, 0.0),
            rec(1, 12, 1.0, 3.0),
            rec(2, 11, 2.0, 0.5),
            rec(3, 11, 3.0, 3.0),
            rec(3, 12, 3.0, 0.0),
            rec(4, 11, 4.0, 3.0),
            rec(4, 12, 4.0, 0.0),
            rec(4, 13, 9.0, 9.0),
            rec(5, 11, 5.0, 0.0),
            rec(5, 12, 5.0, 3.0),
        ]
    }

    #[test]
    fn hand_worked_fixture() {
        let r = evaluate(&two_tracks(), &fixture_hyp(), EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!(r.fp, 1);
        assert_eq!(r.fn_, 1);
        assert_eq!(r.id_switches, 4);
        assert_eq!(r.fragments, 1);
        assert_eq!(r.matches, 9);
        assert!((r.mota - 0.4).abs() < 1e-12);
        assert!((r.motp - 0.5 / 9.0).abs() < 1e-12);
        assert_eq!((r.mt, r.ml), (1.0, 0.0));
    }

    #[test]
    fn single_swap_counts_once_per_identity() {
        // One hypothesis per target with the labels exchanged from frame 3
        // on: both GT identities switch once.
        let hyp: Vec<GroundTruthRecord> = (1..=5)
            .flat_map(|f| {
                let (a, b) = if f < 3 { (21, 22) } else { (22, 21) };
                [rec(f, a, f as f64, 0.0), rec(f, b, f as f64, 3.0)]
            })
            .collect();
        let r = evaluate(&two_tracks(), &hyp, EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!(r.id_switches, 2);
        assert!((r.mota - 0.8).abs() < 1e-12);
    }

    #[test]
    fn carry_over_beats_closer_fresh_match() {
        // g1 was matched to h1; at frame 2 h2 is closer but h1 is still valid.
        let gt = vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
        let hyp = vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.9), rec(2, 2, 0.0, 0.1)];
        let r = evaluate(&gt, &hyp, EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!((r.id_switches, r.fp), (0, 1));
    }

    #[test]
    fn mode_mismatch() {
        let mut gt = two_tracks();
        gt[3].world = None;
        assert!(matches!(evaluate(&gt, &gt, EvalMode::ThreeD, 1.0), Err(MetricsError::ModeMismatch { .. })));
        assert!(evaluate(&gt, &gt, EvalMode::TwoD, 0.5).is_ok());
    }

    #[test]
    fn spurious_box_adds_one_fp_per_frame() {
        let gt = two_tracks();
        let mut hyp = gt.clone();
        hyp.extend((1..=3).map(|f| rec(f, 99, 50.0, 50.0)));
        let r = evaluate(&gt, &hyp, EvalMode::ThreeD, 1.0).unwrap();
        assert_eq!(r.fp, 3);
        assert!((r.mota - 0.7).abs() < 1e-12);
    }

    #[test]
    fn table_and_csv() {
        let r = evaluate(&two_tracks(), &fixture_hyp(), EvalMode::ThreeD, 1.0).unwrap();
        let table = r.to_string();
        assert!(table.lines().next().unwrap().trim_start().starts_with("MOTA"));
        assert!(table.contains("40.0%"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "MOTA,MOTP,MT,ML,FP,FN,IDSw,Frag,GT");
    }

    proptest! {
        #[test]
        fn relabeling_changes_nothing(seed in 0u64..1000, shift in 1u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<GroundTruthRecord> = (1..=8).flat_map(|f| (1..=3).map(move |id| rec(f, id, f as f64 * 0.3, id as f64 * 1.5))).collect();
            let mut hyp = Vec::new();
            for g in &gt {
                if rng.random::<f64>() < 0.2 {
                    continue;
                }
                let mut h = g.clone();
                if rng.random::<f64>() < 0.2 {
                    h.identity = 7;
                }
                let w = h.world.unwrap();
                h.world = Some([w[0] + rng.random_range(-0.8..0.8), w[1] + rng.random_range(-0.8..0.8)]);
                hyp.push(h);
            }
            let relabeled: Vec<GroundTruthRecord> = hyp.iter().map(|h| GroundTruthRecord { identity: (h.identity * 7 + shift) % 101 + 1, ..h.clone() }).collect();
            let a = evaluate(&gt, &hyp, EvalMode::ThreeD, 1.0).unwrap();
            let b = evaluate(&gt, &relabeled, EvalMode::ThreeD, 1.0).unwrap();
            prop_assert_eq!(a.clone(), b);
            prop_assert!(a.mota <= 1.0);
            prop_assert!((a.mota - (1.0 - (a.fp + a.fn_ + a.id_switches) as f64 / a.gt_count as f64)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.mt) && (0.0..=1.0).contains(&a.ml));
        }
    }
}
