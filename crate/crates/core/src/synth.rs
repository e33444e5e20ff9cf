//! Seeded generator of desk-scale datasets. Fake tokens carry a hidden
//! artifact direction with high-frequency temporal modulation on top of
//! token-level semantic centroids, so the full pipeline has something
//! learnable that plain semantic features wash out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    label_tokens, pad_sequence, segment_words, Dataset, FeatureMatrix, FeatureStore,
    ForgerySegment, Modality, PadConfig, TokenFeatures, VideoRecord,
};
use crate::error::{Error, Result};
use crate::model::pool;

pub const SEPARATION_EPS: f64 = 1e-12;
/// Std of the per-row noise around each token's semantic centroid.
pub const ROW_NOISE_STD: f64 = 0.5;
/// Cycles of the artifact modulation across a token's rows.
pub const ARTIFACT_CYCLES: f64 = 3.0;

/// Sampling weights for the forgery modality of each run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalityMix {
    pub visual: f64,
    pub audio: f64,
    pub both: f64,
}

impl Default for ModalityMix {
    fn default() -> Self {
        ModalityMix { visual: 0.25, audio: 0.25, both: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// Inclusive [min, max] token count per video.
    pub tokens_per_video: [usize; 2],
    /// Target fraction of tokens that end up fake.
    pub fake_token_rate: f64,
    /// Inclusive [min, max] consecutive fake tokens per forgery run.
    pub run_length: [usize; 2],
    pub modality_mix: ModalityMix,
    pub k_v: usize,
    pub k_a: usize,
    /// Inclusive [min, max] raw visual rows per token, before padding.
    pub t_v_raw: [usize; 2],
    /// Inclusive [min, max] raw audio rows per token, before padding.
    pub t_a_raw: [usize; 2],
    pub artifact_amplitude: f64,
    pub semantic_scale: f64,
    /// Upper bound on forgery runs per video, None for unlimited.
    pub max_runs_per_video: Option<usize>,
    /// Starting video index. Video i draws from RNG stream
    /// video_offset + i + 1, so a generation at offset 500 continues a
    /// 500-video generation of the same seed exactly — handy for carving
    /// train/test splits that share the dataset-level artifact directions.
    pub video_offset: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 100,
            tokens_per_video: [5, 30],
            fake_token_rate: 0.1,
            run_length: [1, 3],
            modality_mix: ModalityMix::default(),
            k_v: 32,
            k_a: 32,
            t_v_raw: [8, 16],
            t_a_raw: [24, 32],
            artifact_amplitude: 1.0,
            semantic_scale: 0.1,
            max_runs_per_video: Some(5),
            video_offset: 0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [usize; 2]) -> Result<()> {
    if r[0] < 1 || r[0] > r[1] {
        return Err(Error::InvalidConfig(format!(
            "{name} range [{}, {}] must satisfy 1 <= min <= max",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 {
            return Err(Error::InvalidConfig("n_videos must be at least 1".into()));
        }
        check_range("tokens_per_video", self.tokens_per_video)?;
        check_range("run_length", self.run_length)?;
        check_range("t_v_raw", self.t_v_raw)?;
        check_range("t_a_raw", self.t_a_raw)?;
        if !(0.0..=1.0).contains(&self.fake_token_rate) {
            return Err(Error::InvalidConfig(format!(
                "fake_token_rate {} outside [0, 1]",
                self.fake_token_rate
            )));
        }
        let m = self.modality_mix;
        for (name, w) in [("visual", m.visual), ("audio", m.audio), ("both", m.both)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidConfig(format!(
                    "modality_mix.{name} {w} outside [0, 1]"
                )));
            }
        }
        if ((m.visual + m.audio + m.both) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "modality_mix must sum to 1, got {}",
                m.visual + m.audio + m.both
            )));
        }
        if self.k_v < 2 || self.k_a < 2 {
            return Err(Error::InvalidConfig(format!(
                "feature dims (k_v={}, k_a={}) must be at least 2",
                self.k_v, self.k_a
            )));
        }
        if !(self.artifact_amplitude.is_finite() && self.artifact_amplitude >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "artifact_amplitude {} must be a nonnegative real",
                self.artifact_amplitude
            )));
        }
        if !(self.semantic_scale.is_finite() && self.semantic_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "semantic_scale {} must be a positive real",
                self.semantic_scale
            )));
        }
        if self.max_runs_per_video == Some(0) {
            return Err(Error::InvalidConfig(
                "max_runs_per_video must be at least 1 when set".into(),
            ));
        }
        Ok(())
    }
}

/// Unit vector sampled from the dataset-level stream.
fn unit_direction(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    loop {
        let v: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct ForgeryRun {
    start: usize,
    len: usize,
    modality: Modality,
}

/// Fills a T×k matrix with centroid + row noise, then adds the modulated
/// artifact direction when `fake`.
#[allow(clippy::too_many_arguments)]
fn token_matrix(
    t: usize,
    k: usize,
    centroid: &[f64],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    fake: bool,
    direction: &[f64],
    amplitude: f64,
) -> FeatureMatrix {
    let mut data = vec![0.0f32; t * k];
    for row in 0..t {
        let modulation = if fake {
            amplitude
                * (1.0
                    + 0.5
                        * (2.0 * std::f64::consts::PI * ARTIFACT_CYCLES * row as f64 / t as f64)
                            .sin())
        } else {
            0.0
        };
        for col in 0..k {
            let mut v = centroid[col] + noise.sample(rng);
            if fake {
                v += modulation * direction[col];
            }
            data[row * k + col] = v as f32;
        }
    }
    FeatureMatrix::from_vec(t, k, data)
}

/// Deterministic dataset from a config. Video `i` draws from RNG stream
/// `i + 1` of the seed; stream 0 holds dataset-level state (the artifact
/// directions), so per-video content is independent of generation order.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut dataset_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dataset_rng.set_stream(0);
    let u_v = unit_direction(cfg.k_v, &mut dataset_rng);
    let u_a = unit_direction(cfg.k_a, &mut dataset_rng);

    let mean_run_len = (cfg.run_length[0] + cfg.run_length[1]) as f64 / 2.0;
    let start_prob = (cfg.fake_token_rate / mean_run_len).min(1.0);
    let noise = Normal::new(0.0, ROW_NOISE_STD).expect("valid std");
    let semantic = Normal::new(0.0, cfg.semantic_scale).expect("valid std");

    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut store = FeatureStore::default();
    for i in 0..cfg.n_videos {
        let index = cfg.video_offset + i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index + 1);
        let id = format!("v{index:05}");

        let n_tokens = rng.gen_range(cfg.tokens_per_video[0]..=cfg.tokens_per_video[1]);
        let mut transcript = Vec::with_capacity(n_tokens);
        let mut t = 0.0f64;
        for j in 0..n_tokens {
            let t_s = t;
            t += rng.gen_range(0.2..0.8);
            transcript.push((format!("w{j}"), t_s, t));
        }
        let duration = t;

        // Runs are separated by at least one real token so each gt segment
        // is exactly one maximal fake stretch.
        let mut runs: Vec<ForgeryRun> = Vec::new();
        let cap = cfg.max_runs_per_video.unwrap_or(usize::MAX);
        let mut j = 0;
        while j < n_tokens && runs.len() < cap {
            if rng.gen::<f64>() < start_prob {
                let len = rng.gen_range(cfg.run_length[0]..=cfg.run_length[1]).min(n_tokens - j);
                let draw = rng.gen::<f64>();
                let modality = if draw < cfg.modality_mix.visual {
                    Modality::Visual
                } else if draw < cfg.modality_mix.visual + cfg.modality_mix.audio {
                    Modality::Audio
                } else {
                    Modality::Both
                };
                runs.push(ForgeryRun { start: j, len, modality });
                j += len + 1;
            } else {
                j += 1;
            }
        }

        let unlabeled = segment_words(&transcript, duration)?;
        let gt_segments: Vec<ForgerySegment> = runs
            .iter()
            .map(|r| ForgerySegment {
                t_s: unlabeled[r.start].t_s,
                t_e: unlabeled[r.start + r.len - 1].t_e,
                modality: r.modality,
            })
            .collect();
        let tokens = label_tokens(&unlabeled, &gt_segments);

        let mut feats = Vec::with_capacity(n_tokens);
        for token in &tokens {
            let t_v = rng.gen_range(cfg.t_v_raw[0]..=cfg.t_v_raw[1]);
            let t_a = rng.gen_range(cfg.t_a_raw[0]..=cfg.t_a_raw[1]);
            let c_v: Vec<f64> = (0..cfg.k_v).map(|_| semantic.sample(&mut rng)).collect();
            let c_a: Vec<f64> = (0..cfg.k_a).map(|_| semantic.sample(&mut rng)).collect();
            let visual = token_matrix(
                t_v,
                cfg.k_v,
                &c_v,
                &noise,
                &mut rng,
                token.label_v.is_fake(),
                &u_v,
                cfg.artifact_amplitude,
            );
            let audio = token_matrix(
                t_a,
                cfg.k_a,
                &c_a,
                &noise,
                &mut rng,
                token.label_a.is_fake(),
                &u_a,
                cfg.artifact_amplitude,
            );
            feats.push(TokenFeatures { visual, audio });
        }

        videos.push(VideoRecord { id: id.clone(), duration, tokens, gt_segments });
        store.insert(id, feats);
    }
    Dataset::new(videos, store)
}

/// Mean-pools each token's padded raw features into one concatenated
/// [visual ++ audio] vector per token, aligned with the manifest.
pub fn pooled_raw_features(dataset: &Dataset, pad: &PadConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = Vec::with_capacity(dataset.videos.len());
    for (vi, video) in dataset.videos.iter().enumerate() {
        let mut per_video = Vec::with_capacity(video.tokens.len());
        for ti in 0..video.tokens.len() {
            let f = dataset.feature(vi, ti);
            let v = pad_sequence(&f.visual, pad.target_t_v, pad.visual)?.to_f64();
            let a = pad_sequence(&f.audio, pad.target_t_a, pad.audio)?.to_f64();
            let mut vec = pool(&v);
            vec.extend(pool(&a));
            per_video.push(vec);
        }
        out.push(per_video);
    }
    Ok(out)
}

/// Fisher-style separation of fake vs real token vectors:
/// ‖mean_fake − mean_real‖² / (trace(cov_fake) + trace(cov_real) + ε).
/// `vectors` is aligned with the manifest (one vector per token).
pub fn separation_statistic(dataset: &Dataset, vectors: &[Vec<Vec<f64>>]) -> Result<f64> {
    if vectors.len() != dataset.videos.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector groups {} != videos {}",
            vectors.len(),
            dataset.videos.len()
        )));
    }
    let mut real: Vec<&Vec<f64>> = Vec::new();
    let mut fake: Vec<&Vec<f64>> = Vec::new();
    for (video, per_video) in dataset.videos.iter().zip(vectors) {
        if per_video.len() != video.tokens.len() {
            return Err(Error::MissingFeatures(format!(
                "video {}: {} vectors for {} tokens",
                video.id,
                per_video.len(),
                video.tokens.len()
            )));
        }
        for (token, vec) in video.tokens.iter().zip(per_video) {
            if token.fused_fake() {
                fake.push(vec);
            } else {
                real.push(vec);
            }
        }
    }
    if real.is_empty() {
        return Err(Error::DegenerateClass("no real tokens".into()));
    }
    if fake.is_empty() {
        return Err(Error::DegenerateClass("no fake tokens".into()));
    }
    let dim = real[0].len();
    for v in real.iter().chain(fake.iter()) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "token vector length {} != {}",
                v.len(),
                dim
            )));
        }
    }

    let class_stats = |class: &[&Vec<f64>]| {
        let n = class.len() as f64;
        let mut mean = vec![0.0f64; dim];
        for v in class {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut trace = 0.0f64;
        for v in class {
            for (m, x) in mean.iter().zip(v.iter()) {
                trace += (x - m) * (x - m);
            }
        }
        (mean, trace / n)
    };
    let (mean_r, tr_r) = class_stats(&real);
    let (mean_f, tr_f) = class_stats(&fake);
    let dist2: f64 = mean_f.iter().zip(&mean_r).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(dist2 / (tr_f + tr_r + SEPARATION_EPS))
}
