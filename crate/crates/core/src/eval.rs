//! Word-anchored proposal generation and the AP@IoU / AR@N protocol.
//! Proposals inherit token intervals; ranking uses only the fused score.
//! A brute-force oracle for small instances lives in [`oracle`].

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, VideoRecord};
use crate::error::{Error, Result};

/// One scored candidate interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_s: f64,
    pub t_e: f64,
    pub score: f64,
}

/// One video's proposals and ground-truth intervals, the unit the metrics
/// consume.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoProposals {
    pub video_id: String,
    pub proposals: Vec<Proposal>,
    pub gt: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ap_thresholds: Vec<f64>,
    pub ar_caps: Vec<usize>,
    pub ar_iou_grid: Vec<f64>,
    pub merge_adjacent: bool,
    pub merge_score_threshold: f64,
}

/// IoU grid 0.50, 0.55, …, 0.95 built from integer multiples so the 0.80
/// point compares exactly against an IoU of 0.8.
pub fn default_iou_grid() -> Vec<f64> {
    (10..=19).map(|i| i as f64 * 0.05).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ap_thresholds: vec![0.5, 0.75, 0.95],
            ar_caps: vec![100, 50, 20, 10, 5, 2],
            ar_iou_grid: default_iou_grid(),
            merge_adjacent: false,
            merge_score_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ap_thresholds.is_empty() || self.ar_caps.is_empty() || self.ar_iou_grid.is_empty()
        {
            return Err(Error::InvalidConfig(
                "ap_thresholds, ar_caps, and ar_iou_grid must be non-empty".into(),
            ));
        }
        for &tau in self.ap_thresholds.iter().chain(&self.ar_iou_grid) {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidConfig(format!("IoU threshold {tau} outside (0, 1]")));
            }
        }
        if self.ar_caps.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("ar_caps entries must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "merge_score_threshold {} outside [0, 1]",
                self.merge_score_threshold
            )));
        }
        Ok(())
    }
}

/// |a∩b| / |a∪b| for closed intervals; 0 when disjoint or degenerate.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// One proposal per token, or (with `merge_adjacent`) maximal runs of
/// consecutive tokens scoring at least the threshold collapsed into one
/// proposal spanning their union with the run's minimum score. Output is
/// sorted by score descending, ties by earlier start.
pub fn generate_proposals(
    video: &VideoRecord,
    scores: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<Proposal>> {
    if scores.len() != video.tokens.len() {
        return Err(Error::ScoreCountMismatch {
            video: video.id.clone(),
            tokens: video.tokens.len(),
            scores: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {bad} in video {}", video.id)));
    }
    let clamped: Vec<f64> = scores.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    let mut proposals = Vec::with_capacity(video.tokens.len());
    if cfg.merge_adjacent {
        let thr = cfg.merge_score_threshold;
        let mut i = 0;
        while i < video.tokens.len() {
            if clamped[i] >= thr {
                let mut j = i;
                let mut min_score = clamped[i];
                while j + 1 < video.tokens.len() && clamped[j + 1] >= thr {
                    j += 1;
                    min_score = min_score.min(clamped[j]);
                }
                proposals.push(Proposal {
                    t_s: video.tokens[i].t_s,
                    t_e: video.tokens[j].t_e,
                    score: min_score,
                });
                i = j + 1;
            } else {
                proposals.push(Proposal {
                    t_s: video.tokens[i].t_s,
                    t_e: video.tokens[i].t_e,
                    score: clamped[i],
                });
                i += 1;
            }
        }
    } else {
        for (token, &score) in video.tokens.iter().zip(&clamped) {
            proposals.push(Proposal { t_s: token.t_s, t_e: token.t_e, score });
        }
    }
    proposals.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t_s.total_cmp(&b.t_s)));
    Ok(proposals)
}

/// Best still-unmatched gt for a proposal: maximum IoU at least `tau`, ties
/// to the lowest gt index.
fn best_match(
    interval: (f64, f64),
    gts: &[(f64, f64)],
    matched: &[bool],
    tau: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (gi, &g) in gts.iter().enumerate() {
        if matched[gi] {
            continue;
        }
        let iou = temporal_iou(interval, g);
        if iou < tau {
            continue;
        }
        match best {
            Some((_, best_iou)) if iou <= best_iou => {}
            _ => best = Some((gi, iou)),
        }
    }
    best.map(|(gi, _)| gi)
}

/// Pooled all-point-interpolated average precision at IoU threshold `tau`.
/// Proposals from every video are ranked together (score descending, ties by
/// earlier start then video id), greedily matched within their own video,
/// and the area under the monotone precision envelope is accumulated over
/// recall increments. Zero total gt yields 0.
pub fn average_precision(videos: &[VideoProposals], tau: f64) -> f64 {
    let total_gt: usize = videos.iter().map(|v| v.gt.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<(usize, usize)> = videos
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| (0..v.proposals.len()).map(move |pi| (vi, pi)))
        .collect();
    order.sort_by(|&(vi_a, pi_a), &(vi_b, pi_b)| {
        let a = &videos[vi_a].proposals[pi_a];
        let b = &videos[vi_b].proposals[pi_b];
        b.score
            .total_cmp(&a.score)
            .then(a.t_s.total_cmp(&b.t_s))
            .then(videos[vi_a].video_id.cmp(&videos[vi_b].video_id))
    });
    let mut matched: Vec<Vec<bool>> = videos.iter().map(|v| vec![false; v.gt.len()]).collect();
    let mut is_tp = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &(vi, pi)) in order.iter().enumerate() {
        let p = &videos[vi].proposals[pi];
        let hit = best_match((p.t_s, p.t_e), &videos[vi].gt, &matched[vi], tau);
        if let Some(gi) = hit {
            matched[vi][gi] = true;
            tp += 1;
        }
        is_tp.push(hit.is_some());
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    let mut envelope = 0.0f64;
    let mut envelope_sum = 0.0f64;
    for rank in (0..order.len()).rev() {
        envelope = envelope.max(precision[rank]);
        if is_tp[rank] {
            envelope_sum += envelope;
        }
    }
    envelope_sum / total_gt as f64
}

/// Recall of gt segments by each video's top-`cap` proposals, pooled over
/// videos and averaged over the IoU grid. Videos without gt do not affect
/// the denominator; zero total gt yields 0.
pub fn average_recall_at_n(videos: &[VideoProposals], cap: usize, iou_grid: &[f64]) -> f64 {
    let total_gt: usize = videos.iter().map(|v| v.gt.len()).sum();
    if total_gt == 0 || iou_grid.is_empty() {
        return 0.0;
    }
    let mut recall_sum = 0.0f64;
    for &tau in iou_grid {
        let mut matched_total = 0usize;
        for v in videos {
            if v.gt.is_empty() {
                continue;
            }
            let mut idx: Vec<usize> = (0..v.proposals.len()).collect();
            idx.sort_by(|&a, &b| {
                v.proposals[b]
                    .score
                    .total_cmp(&v.proposals[a].score)
                    .then(v.proposals[a].t_s.total_cmp(&v.proposals[b].t_s))
            });
            idx.truncate(cap);
            let mut matched = vec![false; v.gt.len()];
            for &pi in &idx {
                let p = &v.proposals[pi];
                if let Some(gi) = best_match((p.t_s, p.t_e), &v.gt, &matched, tau) {
                    matched[gi] = true;
                    matched_total += 1;
                }
            }
        }
        recall_sum += matched_total as f64 / total_gt as f64;
    }
    recall_sum / iou_grid.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub videos: usize,
    pub proposals: usize,
    pub gt_segments: usize,
}

/// Metric summary; `ap` keys are thresholds with two decimals, `ar` keys are
/// caps, both in config order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: IndexMap<String, f64>,
    pub ar: IndexMap<String, f64>,
    pub counts: EvalCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn ap_at(&self, tau: f64) -> Option<f64> {
        self.ap.get(&format!("{tau:.2}")).copied()
    }

    pub fn ar_at(&self, cap: usize) -> Option<f64> {
        self.ar.get(&cap.to_string()).copied()
    }
}

/// Scores aligned with the manifest (one entry per token per video) turned
/// into proposals and scored against each video's gt segments.
pub fn evaluate(dataset: &Dataset, scores: &[Vec<f64>], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if scores.len() != dataset.videos.len() {
        return Err(Error::DimensionMismatch(format!(
            "score groups {} != videos {}",
            scores.len(),
            dataset.videos.len()
        )));
    }
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for (video, per_video) in dataset.videos.iter().zip(scores) {
        videos.push(VideoProposals {
            video_id: video.id.clone(),
            proposals: generate_proposals(video, per_video, cfg)?,
            gt: video.gt_segments.iter().map(|s| (s.t_s, s.t_e)).collect(),
        });
    }
    let mut ap = IndexMap::new();
    for &tau in &cfg.ap_thresholds {
        ap.insert(format!("{tau:.2}"), average_precision(&videos, tau));
    }
    let mut ar = IndexMap::new();
    for &cap in &cfg.ar_caps {
        ar.insert(cap.to_string(), average_recall_at_n(&videos, cap, &cfg.ar_iou_grid));
    }
    let counts = EvalCounts {
        videos: videos.len(),
        proposals: videos.iter().map(|v| v.proposals.len()).sum(),
        gt_segments: videos.iter().map(|v| v.gt.len()).sum(),
    };
    let mut warnings = Vec::new();
    if counts.gt_segments == 0 {
        warnings.push("no ground-truth segments; AP and AR are defined as 0".to_string());
    }
    Ok(EvalReport { ap, ar, counts, warnings })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Naive re-implementations used as test oracles: quadratic matching and a
/// from-scratch PR table per rank. Not for production paths.
pub mod oracle {
    use super::VideoProposals;

    fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
        let lo = if a.0 > b.0 { a.0 } else { b.0 };
        let hi = if a.1 < b.1 { a.1 } else { b.1 };
        if hi <= lo {
            return 0.0;
        }
        let inter = hi - lo;
        inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
    }

    pub fn oracle_ap(videos: &[VideoProposals], tau: f64) -> f64 {
        let total_gt: usize = videos.iter().map(|v| v.gt.len()).sum();
        if total_gt == 0 {
            return 0.0;
        }
        struct Row {
            video: usize,
            t_s: f64,
            t_e: f64,
            score: f64,
        }
        let mut rows: Vec<Row> = Vec::new();
        for (vi, v) in videos.iter().enumerate() {
            for p in &v.proposals {
                rows.push(Row { video: vi, t_s: p.t_s, t_e: p.t_e, score: p.score });
            }
        }
        // insertion sort by (score desc, t_s asc, video id asc)
        let before = |a: &Row, b: &Row| {
            if a.score != b.score {
                return a.score > b.score;
            }
            if a.t_s != b.t_s {
                return a.t_s < b.t_s;
            }
            videos[a.video].video_id < videos[b.video].video_id
        };
        let mut i = 1;
        while i < rows.len() {
            let mut j = i;
            while j > 0 && before(&rows[j], &rows[j - 1]) {
                rows.swap(j, j - 1);
                j -= 1;
            }
            i += 1;
        }

        let mut matched: Vec<Vec<bool>> = videos.iter().map(|v| vec![false; v.gt.len()]).collect();
        let mut tp_flags = vec![false; rows.len()];
        for (r, row) in rows.iter().enumerate() {
            let gts = &videos[row.video].gt;
            let mut best_gi = usize::MAX;
            let mut best_iou = -1.0;
            for (gi, &g) in gts.iter().enumerate() {
                if matched[row.video][gi] {
                    continue;
                }
                let o = iou((row.t_s, row.t_e), g);
                if o >= tau && o > best_iou {
                    best_iou = o;
                    best_gi = gi;
                }
            }
            if best_gi != usize::MAX {
                matched[row.video][best_gi] = true;
                tp_flags[r] = true;
            }
        }

        let precision_at = |rank: usize| {
            let tp = tp_flags[..=rank].iter().filter(|f| **f).count();
            tp as f64 / (rank + 1) as f64
        };
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for r in 0..rows.len() {
            if !tp_flags[r] {
                continue;
            }
            let tp = tp_flags[..=r].iter().filter(|f| **f).count();
            let recall = tp as f64 / total_gt as f64;
            let mut best_p = 0.0f64;
            for j in r..rows.len() {
                best_p = best_p.max(precision_at(j));
            }
            ap += (recall - prev_recall) * best_p;
            prev_recall = recall;
        }
        ap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Label, WordToken};
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn video(id: &str, tokens: &[(f64, f64)]) -> VideoRecord {
        VideoRecord {
            id: id.to_string(),
            duration: tokens.last().map(|t| t.1).unwrap_or(1.0).max(1.0),
            tokens: tokens
                .iter()
                .enumerate()
                .map(|(i, &(t_s, t_e))| WordToken {
                    word: format!("w{i}"),
                    t_s,
                    t_e,
                    label_v: Label::Real,
                    label_a: Label::Real,
                })
                .collect(),
            gt_segments: vec![],
        }
    }

    fn vp(id: &str, proposals: &[(f64, f64, f64)], gt: &[(f64, f64)]) -> VideoProposals {
        VideoProposals {
            video_id: id.to_string(),
            proposals: proposals
                .iter()
                .map(|&(t_s, t_e, score)| Proposal { t_s, t_e, score })
                .collect(),
            gt: gt.to_vec(),
        }
    }

    #[test]
    fn iou_basics() {
        assert_eq!(temporal_iou((1.0, 2.0), (1.0, 2.0)), 1.0);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(temporal_iou((0.0, 1.0), (0.5, 1.5)), 1.0 / 3.0);
        assert_eq!(temporal_iou((0.0, 1.0), (1.0, 2.0)), 0.0);
    }

    #[test]
    fn proposals_sorted_by_score() {
        let v = video("a", &[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        let props = generate_proposals(&v, &[0.2, 0.9, 0.5], &EvalConfig::default()).unwrap();
        let scores: Vec<f64> = props.iter().map(|p| p.score).collect();
        assert_eq!(scores, vec![0.9, 0.5, 0.2]);
        assert_eq!(props[0].t_s, 1.0);
        assert_eq!(props.len(), v.tokens.len());
    }

    #[test]
    fn empty_video_yields_no_proposals() {
        let v = video("a", &[]);
        let props = generate_proposals(&v, &[], &EvalConfig::default()).unwrap();
        assert!(props.is_empty());
    }

    #[test]
    fn merge_collapses_consecutive_high_scores() {
        let cfg = EvalConfig { merge_adjacent: true, ..EvalConfig::default() };
        let v = video("a", &[(0.0, 1.0), (1.0, 2.0)]);
        let props = generate_proposals(&v, &[0.9, 0.8], &cfg).unwrap();
        assert_eq!(props, vec![Proposal { t_s: 0.0, t_e: 2.0, score: 0.8 }]);

        let v3 = video("b", &[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        let props = generate_proposals(&v3, &[0.9, 0.3, 0.8], &cfg).unwrap();
        assert_eq!(props.len(), 3);
        assert_eq!(props[0].score, 0.9);
        assert_eq!(props[1].score, 0.8);
        assert_eq!(props[2].score, 0.3);
        assert_eq!(props[1].t_s, 2.0);
    }

    #[test]
    fn score_count_mismatch_is_reported() {
        let v = video("a", &[(0.0, 1.0)]);
        match generate_proposals(&v, &[0.5, 0.5], &EvalConfig::default()) {
            Err(Error::ScoreCountMismatch { video, tokens, scores }) => {
                assert_eq!(video, "a");
                assert_eq!((tokens, scores), (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            generate_proposals(&v, &[f64::NAN], &EvalConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn ap_perfect_match_is_one() {
        let videos = vec![vp("a", &[(1.0, 2.0, 0.9)], &[(1.0, 2.0)])];
        assert_eq!(average_precision(&videos, 0.95), 1.0);
    }

    #[test]
    fn ap_false_positive_at_top_halves_envelope() {
        let videos = vec![vp("a", &[(3.0, 4.0, 0.95), (1.0, 2.0, 0.9)], &[(1.0, 2.0)])];
        assert_eq!(average_precision(&videos, 0.5), 0.5);
        assert_eq!(oracle::oracle_ap(&videos, 0.5), 0.5);
    }

    #[test]
    fn ap_respects_iou_threshold() {
        let videos = vec![vp("a", &[(1.0, 1.8, 0.9)], &[(1.0, 2.0)])];
        assert_eq!(average_precision(&videos, 0.75), 1.0);
        assert_eq!(average_precision(&videos, 0.85), 0.0);
    }

    #[test]
    fn ap_zero_gt_is_zero() {
        let videos = vec![vp("a", &[(1.0, 2.0, 0.9)], &[])];
        assert_eq!(average_precision(&videos, 0.5), 0.0);
        assert_eq!(oracle::oracle_ap(&videos, 0.5), 0.0);
    }

    #[test]
    fn ar_counts_grid_points_below_iou() {
        let grid = default_iou_grid();
        let exact = vec![vp("a", &[(1.0, 2.0, 0.9)], &[(1.0, 2.0)])];
        assert_eq!(average_recall_at_n(&exact, 1, &grid), 1.0);
        let partial = vec![vp("a", &[(1.0, 1.8, 0.9)], &[(1.0, 2.0)])];
        assert_eq!(average_recall_at_n(&partial, 1, &grid), 0.7);
        let none = vec![vp("a", &[], &[(1.0, 2.0)])];
        assert_eq!(average_recall_at_n(&none, 1, &grid), 0.0);
    }

    #[test]
    fn ar_cap_limits_per_video_budget() {
        // weak distractors outrank the true hit, so it only counts once the
        // cap admits three proposals
        let videos = vec![vp(
            "a",
            &[(5.0, 6.0, 0.9), (7.0, 8.0, 0.8), (1.0, 2.0, 0.3)],
            &[(1.0, 2.0)],
        )];
        let grid = default_iou_grid();
        assert_eq!(average_recall_at_n(&videos, 1, &grid), 0.0);
        assert_eq!(average_recall_at_n(&videos, 3, &grid), 1.0);
    }

    #[test]
    fn ar_ignores_videos_without_gt() {
        let grid = default_iou_grid();
        let videos = vec![
            vp("a", &[(1.0, 2.0, 0.9)], &[(1.0, 2.0)]),
            vp("b", &[(0.0, 1.0, 0.99)], &[]),
        ];
        assert_eq!(average_recall_at_n(&videos, 1, &grid), 1.0);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Vec<VideoProposals> {
        let n_videos = rng.gen_range(1..=4);
        (0..n_videos)
            .map(|vi| {
                let n_props = rng.gen_range(0..=6);
                let proposals: Vec<(f64, f64, f64)> = (0..n_props)
                    .map(|_| {
                        let t_s = rng.gen_range(0..10) as f64;
                        let len = rng.gen_range(1..=4) as f64;
                        let score = rng.gen_range(1..=9) as f64 / 10.0;
                        (t_s, t_s + len, score)
                    })
                    .collect();
                let n_gt = rng.gen_range(0..=3);
                let gt: Vec<(f64, f64)> = (0..n_gt)
                    .map(|_| {
                        let t_s = rng.gen_range(0..10) as f64;
                        let len = rng.gen_range(1..=4) as f64;
                        (t_s, t_s + len)
                    })
                    .collect();
                let mut v = vp(&format!("v{vi}"), &proposals, &gt);
                v.proposals
                    .sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t_s.total_cmp(&b.t_s)));
                v
            })
            .collect()
    }

    #[test]
    fn ap_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let videos = random_instance(&mut rng);
            for tau in [0.5, 0.75, 0.95] {
                let fast = average_precision(&videos, tau);
                let slow = oracle::oracle_ap(&videos, tau);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "tau {tau}: {fast} vs oracle {slow} on {videos:?}"
                );
            }
        }
    }

    #[test]
    fn tied_scores_match_oracle() {
        let videos = vec![
            vp("a", &[(0.0, 1.0, 0.5), (2.0, 3.0, 0.5), (4.0, 5.0, 0.5)], &[(2.0, 3.0)]),
            vp("b", &[(0.0, 1.0, 0.5), (1.0, 2.0, 0.5)], &[(0.0, 1.0), (6.0, 7.0)]),
            vp("c", &[(5.0, 6.0, 0.5)], &[(5.0, 6.0)]),
        ];
        for tau in [0.5, 0.75, 0.95] {
            let fast = average_precision(&videos, tau);
            let slow = oracle::oracle_ap(&videos, tau);
            assert!((fast - slow).abs() < 1e-9, "tau {tau}: {fast} vs {slow}");
        }
    }

    #[test]
    fn metrics_ignore_video_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let videos = random_instance(&mut rng);
            let mut reversed = videos.clone();
            reversed.reverse();
            for tau in [0.5, 0.75] {
                assert_eq!(average_precision(&videos, tau), average_precision(&reversed, tau));
            }
            let grid = default_iou_grid();
            for cap in [1, 3] {
                assert_eq!(
                    average_recall_at_n(&videos, cap, &grid),
                    average_recall_at_n(&reversed, cap, &grid)
                );
            }
        }
    }

    #[test]
    fn evaluate_perfect_scores_on_synthetic_data() {
        let cfg = SynthConfig {
            n_videos: 12,
            run_length: [1, 1],
            seed: 11,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let scores: Vec<Vec<f64>> = ds
            .videos
            .iter()
            .map(|v| v.tokens.iter().map(|t| if t.fused_fake() { 1.0 } else { 0.0 }).collect())
            .collect();
        let report = evaluate(&ds, &scores, &EvalConfig::default()).unwrap();
        for (_, &v) in &report.ap {
            assert_eq!(v, 1.0);
        }
        for (_, &v) in &report.ar {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(report.counts.videos, 12);
        assert_eq!(report.counts.proposals, ds.token_count());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn evaluate_flags_missing_gt() {
        let v = video("a", &[(0.0, 1.0)]);
        let mut store = crate::datamodel::FeatureStore::default();
        store.insert(
            "a".into(),
            vec![crate::datamodel::TokenFeatures {
                visual: crate::datamodel::FeatureMatrix::zeros(1, 2),
                audio: crate::datamodel::FeatureMatrix::zeros(1, 2),
            }],
        );
        let ds = Dataset::new(vec![v], store).unwrap();
        let report = evaluate(&ds, &[vec![0.9]], &EvalConfig::default()).unwrap();
        assert_eq!(report.ap_at(0.5), Some(0.0));
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn report_json_uses_two_decimal_keys() {
        let videos = vec![vp("a", &[(1.0, 2.0, 0.9)], &[(1.0, 2.0)])];
        let mut ap = IndexMap::new();
        for &tau in &EvalConfig::default().ap_thresholds {
            ap.insert(format!("{tau:.2}"), average_precision(&videos, tau));
        }
        let mut ar = IndexMap::new();
        for &cap in &EvalConfig::default().ar_caps {
            ar.insert(cap.to_string(), average_recall_at_n(&videos, cap, &default_iou_grid()));
        }
        let report = EvalReport {
            ap,
            ar,
            counts: EvalCounts { videos: 1, proposals: 1, gt_segments: 1 },
            warnings: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        let ap_pos = text.find("\"0.50\"").unwrap();
        assert!(ap_pos < text.find("\"0.75\"").unwrap());
        assert!(text.find("\"100\"").unwrap() < text.find("\"50\"").unwrap());
        assert!(!text.contains("warnings"));
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn invalid_eval_configs_are_rejected() {
        let bad = EvalConfig { ap_thresholds: vec![], ..EvalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EvalConfig { ap_thresholds: vec![0.0], ..EvalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EvalConfig { ar_caps: vec![0], ..EvalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EvalConfig { merge_score_threshold: 1.5, ..EvalConfig::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            a_s in 0.0f64..10.0, a_len in 0.1f64..5.0,
            b_s in 0.0f64..10.0, b_len in 0.1f64..5.0,
        ) {
            let a = (a_s, a_s + a_len);
            let b = (b_s, b_s + b_len);
            let ab = temporal_iou(a, b);
            prop_assert_eq!(ab, temporal_iou(b, a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(temporal_iou(a, a), 1.0);
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn rank_invariance_under_monotone_transform(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let videos = random_instance(&mut rng);
            // squaring is strictly increasing on [0,1] and preserves ties
            let transformed: Vec<VideoProposals> = videos
                .iter()
                .map(|v| VideoProposals {
                    video_id: v.video_id.clone(),
                    proposals: v
                        .proposals
                        .iter()
                        .map(|p| Proposal { t_s: p.t_s, t_e: p.t_e, score: p.score * p.score })
                        .collect(),
                    gt: v.gt.clone(),
                })
                .collect();
            for tau in [0.5, 0.75, 0.95] {
                prop_assert_eq!(
                    average_precision(&videos, tau),
                    average_precision(&transformed, tau)
                );
            }
            let grid = default_iou_grid();
            for cap in [1, 2, 5] {
                prop_assert_eq!(
                    average_recall_at_n(&videos, cap, &grid),
                    average_recall_at_n(&transformed, cap, &grid)
                );
            }
        }

        #[test]
        fn ar_nondecreasing_in_cap(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let videos = random_instance(&mut rng);
            let grid = default_iou_grid();
            let mut prev = 0.0;
            for cap in 1..=8 {
                let ar = average_recall_at_n(&videos, cap, &grid);
                prop_assert!(ar + 1e-12 >= prev, "AR@{} = {} < AR@{} = {}", cap, ar, cap - 1, prev);
                prev = ar;
            }
        }
    }
}
