//! Produces and vets the guidance video: provider interfaces for video
//! generation and verification, the rubric score type, and rejection
//! sampling over scored candidates.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::render::{ColorImage, FrameObservation};
use crate::sim::SceneConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImaginationError {
    #[error("invalid input: {0}")]
    Validation(&'static str),
    #[error("score component out of range: {0}")]
    ScoreOutOfRange(&'static str),
    #[error("could not parse verifier reply: {raw:?}")]
    Protocol { raw: String },
    #[error("provider transport failure after {retries} attempts: {message}")]
    Transport { message: String, retries: u32 },
    #[error("provider configuration error: {0}")]
    Configuration(String),
    #[error(
        "all {count} candidates rejected (best total {best_total} <= threshold {threshold}); \
         generate more samples"
    )]
    AllRejected {
        count: usize,
        best_total: u8,
        threshold: u8,
    },
}

/// One generated candidate video from a fixed camera.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub frames: Vec<ColorImage>,
    pub prompt: String,
    pub provider: String,
    pub seed: u64,
}

impl VideoSample {
    pub fn new(
        frames: Vec<ColorImage>,
        prompt: String,
        provider: String,
        seed: u64,
    ) -> Result<Self, ImaginationError> {
        if frames.len() < 2 {
            return Err(ImaginationError::Validation("video needs at least 2 frames"));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(ImaginationError::Validation(
                "video frames must share one resolution",
            ));
        }
        Ok(VideoSample {
            frames,
            prompt,
            provider,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Accept a video only when its total rubric score strictly exceeds this.
pub const ACCEPT_THRESHOLD: u8 = 12;

/// Rubric score: description match (2-6), hand motion (1-3), goal reached
/// (2-6). A detected out-of-scene object forces the minimum total of 5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoScore {
    pub match_description: u8,
    pub hand_motion: u8,
    pub goal_reached: u8,
    pub new_object_detected: bool,
    pub total: u8,
}

impl VideoScore {
    pub fn new(
        match_description: u8,
        hand_motion: u8,
        goal_reached: u8,
        new_object_detected: bool,
    ) -> Result<Self, ImaginationError> {
        if new_object_detected {
            return Ok(VideoScore {
                match_description: 2,
                hand_motion: 1,
                goal_reached: 2,
                new_object_detected: true,
                total: 5,
            });
        }
        if !(2..=6).contains(&match_description) {
            return Err(ImaginationError::ScoreOutOfRange("match_description"));
        }
        if !(1..=3).contains(&hand_motion) {
            return Err(ImaginationError::ScoreOutOfRange("hand_motion"));
        }
        if !(2..=6).contains(&goal_reached) {
            return Err(ImaginationError::ScoreOutOfRange("goal_reached"));
        }
        Ok(VideoScore {
            match_description,
            hand_motion,
            goal_reached,
            new_object_detected: false,
            total: match_description + hand_motion + goal_reached,
        })
    }

    /// Reconstruct a component decomposition from a bare total (remote
    /// verifiers report only "x/15"). Deterministic: the surplus over the
    /// minimum (2, 1, 2) fills description, then hand, then goal.
    pub fn from_total(total: u8) -> Result<Self, ImaginationError> {
        if !(5..=15).contains(&total) {
            return Err(ImaginationError::ScoreOutOfRange("total"));
        }
        let mut surplus = total - 5;
        let md = 2 + surplus.min(4);
        surplus -= surplus.min(4);
        let hm = 1 + surplus.min(2);
        surplus -= surplus.min(2);
        let gr = 2 + surplus;
        VideoScore::new(md, hm, gr, false)
    }

    pub fn accepted(&self) -> bool {
        self.total > ACCEPT_THRESHOLD
    }
}

/// Extract the final "x/15" token from a free-text verifier reply.
pub fn parse_score_reply(text: &str) -> Result<u8, ImaginationError> {
    let mut found: Option<u8> = None;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let rest = &text[i..];
            if rest.starts_with("/15") {
                if let Ok(v) = text[start..i].parse::<u8>() {
                    if (5..=15).contains(&v) {
                        found = Some(v);
                    }
                }
            }
        } else {
            i += 1;
        }
    }
    found.ok_or_else(|| ImaginationError::Protocol { raw: text.into() })
}

/// Rubric sent to verifier providers: the three criteria with their score
/// bands, the out-of-scene-object rule, and the x/15 reply contract.
pub fn rubric_prompt(description: &str) -> String {
    alloc::format!(
        "You will see key frames of a generated video together with the task text: \
         \"{description}\".\n\
         Rate the video on three criteria and sum them:\n\
         (1) Description match, 2-6 points: 6 = every step of the task text happens, \
         4 = only part of it happens, 2 = it does not happen.\n\
         (2) Hand motion, 1-3 points: 3 = a human hand appears with natural structure and \
         physically sensible grips, 2 = a hand appears but looks or interacts wrongly, \
         1 = no hand appears.\n\
         (3) Goal state, 2-6 points: 6 = the final frames show the goal reached, \
         4 = the goal is reached but then undone, 2 = it is never reached.\n\
         If any object that was not part of the initial scene appears mid-video, the video \
         gets the minimum score.\n\
         Base your judgment only on the provided frames. After your analysis, end the reply \
         with the total in the exact form: score: x/15"
    )
}

/// Offline prompt-rewrite used when no language model is reachable: a
/// deterministic template naming the actuator and target objects.
pub fn template_prompt(description: &str, scene: &SceneConfig) -> Result<String, ImaginationError> {
    if description.trim().is_empty() {
        return Err(ImaginationError::Validation("empty task description"));
    }
    let actuator = &scene.actuator().name;
    let target = &scene.target().name;
    Ok(alloc::format!(
        "A fixed camera over a desk. A human hand grasps the {actuator} and uses it to \
         {description}, acting on the {target}. The camera does not move; no new objects \
         enter the scene; the motion is smooth and ends with the task completed."
    ))
}

/// Generates candidate demonstration videos.
pub trait VideoGenerator {
    fn rewrite_prompt(
        &self,
        description: &str,
        scene: &SceneConfig,
    ) -> Result<String, ImaginationError>;

    /// Produce `n` candidates with distinct seeds derived from `seed`.
    fn generate(
        &self,
        prompt: &str,
        initial: &FrameObservation,
        n: usize,
        seed: u64,
    ) -> Result<Vec<VideoSample>, ImaginationError>;
}

/// Scores candidate videos against the rubric.
pub trait VideoVerifier {
    fn verify(&self, sample: &VideoSample, description: &str)
        -> Result<VideoScore, ImaginationError>;
}

/// Index of the winning sample: highest total, ties broken by earliest
/// generation order. Errors when nothing clears the threshold.
pub fn select(scored: &[(VideoSample, VideoScore)]) -> Result<usize, ImaginationError> {
    if scored.is_empty() {
        return Err(ImaginationError::Validation("no samples to select from"));
    }
    let mut best = 0usize;
    for (i, (_, score)) in scored.iter().enumerate() {
        if score.total > scored[best].1.total {
            best = i;
        }
    }
    if scored[best].1.accepted() {
        Ok(best)
    } else {
        Err(ImaginationError::AllRejected {
            count: scored.len(),
            best_total: scored[best].1.total,
            threshold: ACCEPT_THRESHOLD,
        })
    }
}

/// Audit trail of one rejection-sampling pass: (sample seed, score) per
/// candidate, in generation order.
pub type CandidateAudit = Vec<(u64, VideoScore)>;

/// Generate `n` candidates, verify each, and keep the best accepted one.
pub fn rejection_sample<G: VideoGenerator + ?Sized, V: VideoVerifier + ?Sized>(
    generator: &G,
    verifier: &V,
    description: &str,
    scene: &SceneConfig,
    initial: &FrameObservation,
    n: usize,
    seed: u64,
) -> Result<(VideoSample, VideoScore, CandidateAudit), ImaginationError> {
    if n == 0 {
        return Err(ImaginationError::Validation("need at least one candidate"));
    }
    let prompt = generator.rewrite_prompt(description, scene)?;
    let samples = generator.generate(&prompt, initial, n, seed)?;
    let mut scored = Vec::with_capacity(samples.len());
    for s in samples {
        let score = verifier.verify(&s, description)?;
        scored.push((s, score));
    }
    let audit: CandidateAudit = scored.iter().map(|(s, sc)| (s.seed, *sc)).collect();
    let winner = select(&scored)?;
    let (sample, score) = scored.swap_remove(winner);
    Ok((sample, score, audit))
}

/// Precision / recall / F1 of accept decisions against usability labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

/// `labeled`: (accepted-by-verifier, actually-usable) per video.
pub fn verifier_metrics(labeled: &[(bool, bool)]) -> Result<VerifierMetrics, ImaginationError> {
    if labeled.is_empty() {
        return Err(ImaginationError::Validation("empty labeled set"));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for (accepted, usable) in labeled {
        match (accepted, usable) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(VerifierMetrics {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}

/// The selected guidance video with its keyframe structure.
#[derive(Clone, Debug)]
pub struct GuidanceVideo {
    pub sample: VideoSample,
    pub score: VideoScore,
    /// Retained keyframe frame indices (sorted, unique, within bounds).
    pub keyframes: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

impl GuidanceVideo {
    pub fn new(
        sample: VideoSample,
        score: VideoScore,
        keyframes: Vec<usize>,
        start: usize,
        end: usize,
    ) -> Result<Self, ImaginationError> {
        if !score.accepted() {
            return Err(ImaginationError::Validation(
                "guidance video must carry an accepted score",
            ));
        }
        if start > end {
            return Err(ImaginationError::Protocol {
                raw: alloc::format!("start keyframe {start} after end {end}"),
            });
        }
        if !keyframes.contains(&start) || !keyframes.contains(&end) {
            return Err(ImaginationError::Validation(
                "start/end must be members of the keyframe set",
            ));
        }
        if keyframes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ImaginationError::Validation("keyframes must be sorted unique"));
        }
        if keyframes.iter().any(|k| *k >= sample.len()) {
            return Err(ImaginationError::Validation("keyframe outside video"));
        }
        Ok(GuidanceVideo {
            sample,
            score,
            keyframes,
            start,
            end,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> ColorImage {
        ColorImage::filled(8, 8, [0, 0, 0])
    }

    fn sample(seed: u64) -> VideoSample {
        VideoSample::new(alloc::vec![frame(), frame(), frame()], "p".into(), "t".into(), seed)
            .unwrap()
    }

    #[test]
    fn video_needs_two_frames_and_constant_resolution() {
        assert!(VideoSample::new(alloc::vec![frame()], "p".into(), "t".into(), 0).is_err());
        let odd = ColorImage::filled(4, 8, [0, 0, 0]);
        assert!(
            VideoSample::new(alloc::vec![frame(), odd], "p".into(), "t".into(), 0).is_err()
        );
    }

    #[test]
    fn score_ranges_and_total_invariant() {
        let s = VideoScore::new(6, 3, 6, false).unwrap();
        assert_eq!(s.total, 15);
        assert!(s.accepted());
        assert!(VideoScore::new(1, 3, 6, false).is_err());
        assert!(VideoScore::new(6, 4, 6, false).is_err());
        assert!(VideoScore::new(6, 3, 7, false).is_err());
        let s = VideoScore::new(6, 3, 2, false).unwrap();
        assert_eq!(s.total, 11);
        assert!(!s.accepted());
    }

    #[test]
    fn new_object_forces_minimum() {
        let s = VideoScore::new(6, 3, 6, true).unwrap();
        assert_eq!(s.total, 5);
        assert!(!s.accepted());
    }

    #[test]
    fn from_total_respects_component_ranges() {
        for t in 5..=15u8 {
            let s = VideoScore::from_total(t).unwrap();
            assert_eq!(s.total, t);
            assert!((2..=6).contains(&s.match_description));
            assert!((1..=3).contains(&s.hand_motion));
            assert!((2..=6).contains(&s.goal_reached));
        }
        assert!(VideoScore::from_total(4).is_err());
        assert!(VideoScore::from_total(16).is_err());
    }

    #[test]
    fn parse_extracts_final_token() {
        assert_eq!(parse_score_reply("analysis...\nscore: 13/15").unwrap(), 13);
        assert_eq!(
            parse_score_reply("first guess 7/15, final score: 11/15").unwrap(),
            11
        );
        assert!(parse_score_reply("no score here").is_err());
        assert!(parse_score_reply("score: 99/15 nonsense").is_err());
    }

    #[test]
    fn select_picks_highest_with_earliest_tie() {
        let scored = alloc::vec![
            (sample(0), VideoScore::from_total(13).unwrap()),
            (sample(1), VideoScore::from_total(9).unwrap()),
            (sample(2), VideoScore::from_total(15).unwrap()),
        ];
        assert_eq!(select(&scored).unwrap(), 2);
        let tie = alloc::vec![
            (sample(0), VideoScore::from_total(14).unwrap()),
            (sample(1), VideoScore::from_total(14).unwrap()),
        ];
        assert_eq!(select(&tie).unwrap(), 0);
    }

    #[test]
    fn threshold_is_strictly_greater_than_12() {
        let rejected = alloc::vec![
            (sample(0), VideoScore::from_total(10).unwrap()),
            (sample(1), VideoScore::from_total(11).unwrap()),
        ];
        assert!(matches!(
            select(&rejected),
            Err(ImaginationError::AllRejected { best_total: 11, .. })
        ));
        let border = alloc::vec![(sample(0), VideoScore::from_total(12).unwrap())];
        assert!(select(&border).is_err());
        let passing = alloc::vec![(sample(0), VideoScore::from_total(13).unwrap())];
        assert_eq!(select(&passing).unwrap(), 0);
    }

    #[test]
    fn metrics_formula_check() {
        // all correct
        let m = verifier_metrics(&[(true, true), (false, false)]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        // 4 TP, 1 FP, 1 FN -> 0.8 / 0.8 / 0.8
        let mut labeled = alloc::vec![(true, true); 4];
        labeled.push((true, false));
        labeled.push((false, true));
        let m = verifier_metrics(&labeled).unwrap();
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 0.8).abs() < 1e-12);
        assert!((m.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn guidance_video_validates_keyframes() {
        let ok = GuidanceVideo::new(
            sample(0),
            VideoScore::from_total(13).unwrap(),
            alloc::vec![0, 1, 2],
            1,
            2,
        );
        assert!(ok.is_ok());
        let bad = GuidanceVideo::new(
            sample(0),
            VideoScore::from_total(13).unwrap(),
            alloc::vec![0, 1, 2],
            2,
            1,
        );
        assert!(matches!(bad, Err(ImaginationError::Protocol { .. })));
    }
}
