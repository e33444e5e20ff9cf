//! Deterministic fixtures shared by the pipeline benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wafl_core::eval::{Proposal, VideoProposals};
use wafl_core::linalg::Mat;
use wafl_core::model::RealignLayer;
use wafl_core::synth::SynthConfig;

/// A realign layer at the production shape (32 -> 32, rank 8).
pub fn layer(dropout_rate: f64) -> RealignLayer {
    RealignLayer::init(32, 32, 8, 16.0, dropout_rate, 17).expect("layer")
}

/// A T×k sequence of standard-normal-ish values.
pub fn sequence(t: usize, k: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(t, k);
    for v in &mut m.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    m
}

/// A balanced batch of (probability, label) pairs.
pub fn loss_batch(n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| (rng.gen_range(0.01..0.99), i % 2 == 0)).collect()
}

/// Scored proposal lists with ground truth, sized like a real evaluation.
pub fn proposal_set(n_videos: usize, seed: u64) -> Vec<VideoProposals> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_videos)
        .map(|vi| {
            let mut proposals: Vec<Proposal> = (0..20)
                .map(|_| {
                    let t_s = rng.gen_range(0.0..60.0);
                    let t_e = t_s + rng.gen_range(0.2..0.8);
                    Proposal { t_s, t_e, score: rng.gen_range(0.0..1.0) }
                })
                .collect();
            proposals.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t_s.total_cmp(&b.t_s)));
            let gt = (0..3)
                .map(|_| {
                    let t_s = rng.gen_range(0.0..60.0);
                    (t_s, t_s + rng.gen_range(0.2..0.8))
                })
                .collect();
            VideoProposals { video_id: format!("v{vi:04}"), proposals, gt }
        })
        .collect()
}

/// Generator settings for a mid-sized synthetic dataset.
pub fn synth_config() -> SynthConfig {
    SynthConfig { n_videos: 50, seed: 13, ..SynthConfig::default() }
}
