//! Balanced 1:1 sampling over word tokens, decoupled-weight-decay optimizer
//! with linear warmup, and the sequential training loop.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{pad_sequence, Dataset, PadConfig};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::model::ModelBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub warmup: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 25_000,
            warmup: 2_500,
            batch_size: 64,
            lr_max: 8e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss_kind: LossKind::Aca,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup > self.iterations {
            return Err(Error::InvalidConfig(format!(
                "warmup {} exceeds iterations {}",
                self.warmup, self.iterations
            )));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} must be even and at least 2",
                self.batch_size
            )));
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(Error::InvalidConfig(format!("lr_max {} must be positive", self.lr_max)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam_eps {} must be positive",
                self.adam_eps
            )));
        }
        Ok(())
    }
}

/// Linear warmup to lr_max, then constant. Warmup 0 means the schedule is
/// constant from the first step.
pub fn lr_at(it: u64, cfg: &TrainConfig) -> f64 {
    if it < cfg.warmup {
        cfg.lr_max * (it + 1) as f64 / cfg.warmup as f64
    } else {
        cfg.lr_max
    }
}

/// Position of one token in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenRef {
    pub video: usize,
    pub token: usize,
}

const REAL: usize = 0;
const FAKE: usize = 1;

/// Batches with exactly half real and half fake tokens (fused label). The
/// majority class is consumed without replacement and reshuffled per epoch
/// (a leftover too small to fill a batch is dropped); the minority class is
/// consumed without replacement until exhausted within the epoch, then drawn
/// with replacement.
pub struct BalancedSampler {
    classes: [Vec<TokenRef>; 2],
    cursors: [usize; 2],
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(dataset: &Dataset, seed: u64) -> Result<Self> {
        let mut classes: [Vec<TokenRef>; 2] = [Vec::new(), Vec::new()];
        for (vi, video) in dataset.videos.iter().enumerate() {
            for (ti, token) in video.tokens.iter().enumerate() {
                let class = if token.fused_fake() { FAKE } else { REAL };
                classes[class].push(TokenRef { video: vi, token: ti });
            }
        }
        if classes[REAL].is_empty() {
            return Err(Error::DegenerateDataset("no real tokens to sample".into()));
        }
        if classes[FAKE].is_empty() {
            return Err(Error::DegenerateDataset("no fake tokens to sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for class in &mut classes {
            class.shuffle(&mut rng);
        }
        Ok(BalancedSampler { classes, cursors: [0, 0], rng })
    }

    fn new_epoch(&mut self) {
        for class in &mut self.classes {
            class.shuffle(&mut self.rng);
        }
        self.cursors = [0, 0];
    }

    /// Real tokens occupy the first half of the returned batch.
    pub fn next_batch(&mut self, batch_size: usize) -> Vec<TokenRef> {
        let half = batch_size / 2;
        let maj = if self.classes[FAKE].len() > self.classes[REAL].len() { FAKE } else { REAL };
        let min = 1 - maj;
        let maj_len = self.classes[maj].len();
        if maj_len - self.cursors[maj] < half.min(maj_len) {
            self.new_epoch();
        }
        let mut halves: [Vec<TokenRef>; 2] = [Vec::with_capacity(half), Vec::with_capacity(half)];
        for _ in 0..half {
            // only reachable when the majority pool is smaller than half a
            // batch; the pre-check above handles everything else
            if self.cursors[maj] == self.classes[maj].len() {
                self.new_epoch();
            }
            halves[maj].push(self.classes[maj][self.cursors[maj]]);
            self.cursors[maj] += 1;
        }
        for _ in 0..half {
            if self.cursors[min] < self.classes[min].len() {
                halves[min].push(self.classes[min][self.cursors[min]]);
                self.cursors[min] += 1;
            } else {
                let idx = self.rng.gen_range(0..self.classes[min].len());
                halves[min].push(self.classes[min][idx]);
            }
        }
        let [real_half, fake_half] = halves;
        let mut out = real_half;
        out.extend(fake_half);
        out
    }
}

/// First/second moment accumulators for one parameter block.
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Decoupled-weight-decay update with bias correction:
/// p ← p − lr·(m̂/(√v̂ + adam_eps) + weight_decay·p). `step` is 1-based.
/// `decay` is false for biases.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    step: u64,
    lr: f64,
    cfg: &TrainConfig,
    decay: bool,
) {
    debug_assert_eq!(param.len(), grad.len());
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + wd * param[i]);
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub it: u64,
    pub l_v: f64,
    pub l_a: f64,
    pub l_va: f64,
    pub total: f64,
    pub lr: f64,
}

struct GradAccum {
    rv_up: Vec<f64>,
    rv_down: Vec<f64>,
    ra_up: Vec<f64>,
    ra_down: Vec<f64>,
    hv_w: Vec<f64>,
    hv_b: f64,
    ha_w: Vec<f64>,
    ha_b: f64,
    hva_w: Vec<f64>,
    hva_b: f64,
}

impl GradAccum {
    fn zeros(bundle: &ModelBundle) -> Self {
        GradAccum {
            rv_up: vec![0.0; bundle.realign_v.phi_up.data.len()],
            rv_down: vec![0.0; bundle.realign_v.phi_down.data.len()],
            ra_up: vec![0.0; bundle.realign_a.phi_up.data.len()],
            ra_down: vec![0.0; bundle.realign_a.phi_down.data.len()],
            hv_w: vec![0.0; bundle.head_v.w.len()],
            hv_b: 0.0,
            ha_w: vec![0.0; bundle.head_a.w.len()],
            ha_b: 0.0,
            hva_w: vec![0.0; bundle.head_va.w.len()],
            hva_b: 0.0,
        }
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

/// Runs the training loop in place and returns the per-iteration loss log.
/// Deterministic given the config seed; single-threaded; the frozen
/// projections are never updated. Aborts with NonFinite if any head's batch
/// loss stops being finite.
pub fn train(
    dataset: &Dataset,
    bundle: &mut ModelBundle,
    pad: &PadConfig,
    cfg: &TrainConfig,
) -> Result<Vec<TrainLogEntry>> {
    cfg.validate()?;
    match dataset.feature_dims() {
        None => return Err(Error::DegenerateDataset("dataset has no tokens".into())),
        Some((k_v, k_a)) => {
            if k_v != bundle.cfg.k_v || k_a != bundle.cfg.k_a {
                return Err(Error::DimensionMismatch(format!(
                    "dataset features ({k_v}, {k_a}) vs model ({}, {})",
                    bundle.cfg.k_v, bundle.cfg.k_a
                )));
            }
        }
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler_seed = seeder.gen::<u64>();
    let dropout_seed = seeder.gen::<u64>();
    let mut sampler = BalancedSampler::new(dataset, sampler_seed)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let spec = LossSpec::from_kind(cfg.loss_kind);

    let mut st_rv_up = AdamState::zeros(bundle.realign_v.phi_up.data.len());
    let mut st_rv_down = AdamState::zeros(bundle.realign_v.phi_down.data.len());
    let mut st_ra_up = AdamState::zeros(bundle.realign_a.phi_up.data.len());
    let mut st_ra_down = AdamState::zeros(bundle.realign_a.phi_down.data.len());
    let mut st_hv_w = AdamState::zeros(bundle.head_v.w.len());
    let mut st_hv_b = AdamState::zeros(1);
    let mut st_ha_w = AdamState::zeros(bundle.head_a.w.len());
    let mut st_ha_b = AdamState::zeros(1);
    let mut st_hva_w = AdamState::zeros(bundle.head_va.w.len());
    let mut st_hva_b = AdamState::zeros(1);

    let mut log = Vec::with_capacity(cfg.iterations as usize);
    let inv_batch = 1.0 / cfg.batch_size as f64;
    for it in 0..cfg.iterations {
        let batch = sampler.next_batch(cfg.batch_size);
        let mut acc = GradAccum::zeros(bundle);
        let (mut sum_v, mut sum_a, mut sum_va) = (0.0f64, 0.0f64, 0.0f64);
        for token_ref in &batch {
            let feats = dataset.feature(token_ref.video, token_ref.token);
            let visual = pad_sequence(&feats.visual, pad.target_t_v, pad.visual)?.to_f64();
            let audio = pad_sequence(&feats.audio, pad.target_t_a, pad.audio)?.to_f64();
            let fwd = bundle.forward_train(&visual, &audio, &mut dropout_rng)?;
            let token = &dataset.videos[token_ref.video].tokens[token_ref.token];
            let y_v = token.label_v.is_fake();
            let y_a = token.label_a.is_fake();
            let y_va = token.fused_fake();
            sum_v += spec.loss(fwd.scores.y_v, y_v)?;
            sum_a += spec.loss(fwd.scores.y_a, y_a)?;
            sum_va += spec.loss(fwd.scores.y_av, y_va)?;
            let d_v = spec.grad(fwd.scores.y_v, y_v)? * inv_batch;
            let d_a = spec.grad(fwd.scores.y_a, y_a)? * inv_batch;
            let d_av = spec.grad(fwd.scores.y_av, y_va)? * inv_batch;
            let grads = bundle.backward(&fwd, d_v, d_a, d_av)?;
            add_into(&mut acc.rv_up, &grads.realign_v.phi_up.data);
            add_into(&mut acc.rv_down, &grads.realign_v.phi_down.data);
            add_into(&mut acc.ra_up, &grads.realign_a.phi_up.data);
            add_into(&mut acc.ra_down, &grads.realign_a.phi_down.data);
            add_into(&mut acc.hv_w, &grads.head_v.0);
            acc.hv_b += grads.head_v.1;
            add_into(&mut acc.ha_w, &grads.head_a.0);
            acc.ha_b += grads.head_a.1;
            add_into(&mut acc.hva_w, &grads.head_va.0);
            acc.hva_b += grads.head_va.1;
        }
        let l_v = sum_v * inv_batch;
        let l_a = sum_a * inv_batch;
        let l_va = sum_va * inv_batch;
        let total = l_v + l_a + l_va;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {it}")));
        }
        let lr = lr_at(it, cfg);
        let step = it + 1;
        adamw_update(&mut bundle.realign_v.phi_up.data, &acc.rv_up, &mut st_rv_up, step, lr, cfg, true);
        adamw_update(&mut bundle.realign_v.phi_down.data, &acc.rv_down, &mut st_rv_down, step, lr, cfg, true);
        adamw_update(&mut bundle.realign_a.phi_up.data, &acc.ra_up, &mut st_ra_up, step, lr, cfg, true);
        adamw_update(&mut bundle.realign_a.phi_down.data, &acc.ra_down, &mut st_ra_down, step, lr, cfg, true);
        adamw_update(&mut bundle.head_v.w, &acc.hv_w, &mut st_hv_w, step, lr, cfg, true);
        let mut b = [bundle.head_v.b];
        adamw_update(&mut b, &[acc.hv_b], &mut st_hv_b, step, lr, cfg, false);
        bundle.head_v.b = b[0];
        adamw_update(&mut bundle.head_a.w, &acc.ha_w, &mut st_ha_w, step, lr, cfg, true);
        let mut b = [bundle.head_a.b];
        adamw_update(&mut b, &[acc.ha_b], &mut st_ha_b, step, lr, cfg, false);
        bundle.head_a.b = b[0];
        adamw_update(&mut bundle.head_va.w, &acc.hva_w, &mut st_hva_w, step, lr, cfg, true);
        let mut b = [bundle.head_va.b];
        adamw_update(&mut b, &[acc.hva_b], &mut st_hva_b, step, lr, cfg, false);
        bundle.head_va.b = b[0];

        log.push(TrainLogEntry { it, l_v, l_a, l_va, total, lr });
    }
    Ok(log)
}

/// Scores every token of every video in manifest order (inference mode),
/// returning the fused score per token.
pub fn score_dataset(dataset: &Dataset, bundle: &ModelBundle, pad: &PadConfig) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(dataset.videos.len());
    for (vi, video) in dataset.videos.iter().enumerate() {
        let mut per_video = Vec::with_capacity(video.tokens.len());
        for ti in 0..video.tokens.len() {
            let feats = dataset.feature(vi, ti);
            let visual = pad_sequence(&feats.visual, pad.target_t_v, pad.visual)?.to_f64();
            let audio = pad_sequence(&feats.audio, pad.target_t_a, pad.audio)?.to_f64();
            per_video.push(bundle.score(&visual, &audio)?.y_av);
        }
        out.push(per_video);
    }
    Ok(out)
}

/// JSON-lines loss log, one entry per iteration.
pub fn write_loss_log(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for entry in log {
        serde_json::to_writer(&mut file, entry)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
