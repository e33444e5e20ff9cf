//! Per-modality realignment layers, sigmoid heads, and the bundle that ties
//! them together. The realign layer keeps its dense projection frozen and
//! trains only a scaled low-rank correction, so backward produces gradients
//! for the two low-rank factors (and the input) but never for the frozen
//! weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mul_nn, mul_nt, mul_tn, Mat};
use crate::loss::HeadScores;

/// Dimensions and low-rank settings for both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub k_v: usize,
    pub k_a: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub rank: usize,
    pub alpha: f64,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { k_v: 32, k_a: 32, d_v: 32, d_a: 32, rank: 8, alpha: 16.0, dropout_rate: 0.1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, dim) in
            [("k_v", self.k_v), ("k_a", self.k_a), ("d_v", self.d_v), ("d_a", self.d_a)]
        {
            if dim == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let max_v = self.d_v.min(self.k_v);
        let max_a = self.d_a.min(self.k_a);
        if self.rank == 0 || self.rank > max_v || self.rank > max_a {
            return Err(Error::InvalidRank { rank: self.rank, max: max_v.min(max_a) });
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha {} must be positive", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

struct ForwardCache {
    delta_x: Mat,
    z: Mat,
    mask: Option<Mat>,
}

/// h = W0 x + (alpha/r) * phi_up (phi_down delta(x)), applied per row of a
/// T×k sequence. delta is inverted dropout on the low-rank branch only.
pub struct RealignLayer {
    pub w0: Mat,
    pub phi_up: Mat,
    pub phi_down: Mat,
    pub alpha: f64,
    pub dropout_rate: f64,
    cache: Option<ForwardCache>,
}

/// Gradients produced by one backward pass. The frozen projection gets none.
pub struct RealignGrads {
    pub phi_up: Mat,
    pub phi_down: Mat,
    pub input: Mat,
}

impl RealignLayer {
    /// Frozen projection drawn N(0, 1/k); up-factor zeros so the layer starts
    /// as exactly the frozen projection; down-factor uniform in
    /// (-sqrt(6/k), sqrt(6/k)).
    pub fn init(
        k: usize,
        d: usize,
        rank: usize,
        alpha: f64,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if rank == 0 || rank > d.min(k) {
            return Err(Error::InvalidRank { rank, max: d.min(k) });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} must be positive")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("valid std");
        let mut w0 = Mat::zeros(d, k);
        for v in &mut w0.data {
            *v = normal.sample(&mut rng);
        }
        let bound = (6.0 / k as f64).sqrt();
        let uniform = Uniform::new(-bound, bound);
        let mut phi_down = Mat::zeros(rank, k);
        for v in &mut phi_down.data {
            *v = uniform.sample(&mut rng);
        }
        Ok(RealignLayer {
            w0,
            phi_up: Mat::zeros(d, rank),
            phi_down,
            alpha,
            dropout_rate,
            cache: None,
        })
    }

    #[inline]
    pub fn scaling(&self) -> f64 {
        self.alpha / self.phi_up.cols as f64
    }

    pub fn in_dim(&self) -> usize {
        self.w0.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols != self.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: (x.rows, self.in_dim()),
                got: (x.rows, x.cols),
            });
        }
        Ok(())
    }

    fn project(&self, x: &Mat, delta_x: &Mat) -> (Mat, Mat) {
        let mut h = mul_nt(x, &self.w0);
        let z = mul_nt(delta_x, &self.phi_down);
        let mut low_rank = mul_nt(&z, &self.phi_up);
        low_rank.scale(self.scaling());
        h.add_assign(&low_rank);
        (h, z)
    }

    /// Training-mode forward. Captures the dropout mask and intermediates
    /// for the next `backward` call.
    pub fn forward(&mut self, x: &Mat, rng: &mut ChaCha8Rng) -> Result<Mat> {
        self.check_input(x)?;
        let (delta_x, mask) = if self.dropout_rate > 0.0 {
            let keep_scale = 1.0 / (1.0 - self.dropout_rate);
            let mut mask = Mat::zeros(x.rows, x.cols);
            for v in &mut mask.data {
                if rng.gen::<f64>() >= self.dropout_rate {
                    *v = keep_scale;
                }
            }
            let mut dx = x.clone();
            for (d, m) in dx.data.iter_mut().zip(&mask.data) {
                *d *= m;
            }
            (dx, Some(mask))
        } else {
            (x.clone(), None)
        };
        let (h, z) = self.project(x, &delta_x);
        self.cache = Some(ForwardCache { delta_x, z, mask });
        Ok(h)
    }

    /// Inference-mode forward: no dropout, no captured state.
    pub fn forward_eval(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let (h, _) = self.project(x, x);
        Ok(h)
    }

    /// Consumes the state captured by the last training-mode forward.
    pub fn backward(&mut self, upstream: &Mat) -> Result<RealignGrads> {
        let cache = self.cache.take().ok_or(Error::StaleMask)?;
        let t = cache.delta_x.rows;
        if (upstream.rows, upstream.cols) != (t, self.out_dim()) {
            return Err(Error::ShapeMismatch {
                expected: (t, self.out_dim()),
                got: (upstream.rows, upstream.cols),
            });
        }
        let s = self.scaling();
        let mut d_phi_up = mul_tn(upstream, &cache.z);
        d_phi_up.scale(s);
        let mut d_z = mul_nn(upstream, &self.phi_up);
        d_z.scale(s);
        let d_phi_down = mul_tn(&d_z, &cache.delta_x);
        let mut d_delta = mul_nn(&d_z, &self.phi_down);
        if let Some(mask) = &cache.mask {
            for (g, m) in d_delta.data.iter_mut().zip(&mask.data) {
                *g *= m;
            }
        }
        let mut d_input = mul_nn(upstream, &self.w0);
        d_input.add_assign(&d_delta);
        Ok(RealignGrads { phi_up: d_phi_up, phi_down: d_phi_down, input: d_input })
    }
}

/// Column means over time.
pub fn pool(h: &Mat) -> Vec<f64> {
    assert!(h.rows > 0, "pool needs at least one row");
    let mut out = vec![0.0; h.cols];
    for i in 0..h.rows {
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / h.rows as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

/// Distributes a pooled gradient evenly back over the rows.
pub fn pool_backward(upstream: &[f64], rows: usize) -> Mat {
    let mut out = Mat::zeros(rows, upstream.len());
    let inv = 1.0 / rows as f64;
    for i in 0..rows {
        for (o, g) in out.row_mut(i).iter_mut().zip(upstream) {
            *o = g * inv;
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Single sigmoid unit over a pooled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearHead {
    pub fn zeros(dim: usize) -> Self {
        LinearHead { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn forward(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.w.len());
        let z: f64 = self.w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.b;
        sigmoid(z)
    }

    /// Given d(loss)/d(p) at output p for input f, returns
    /// (d_w, d_b, d_f).
    pub fn backward(&self, f: &[f64], p: f64, d_p: f64) -> (Vec<f64>, f64, Vec<f64>) {
        let d_z = d_p * p * (1.0 - p);
        let d_w: Vec<f64> = f.iter().map(|x| d_z * x).collect();
        let d_f: Vec<f64> = self.w.iter().map(|w| d_z * w).collect();
        (d_w, d_z, d_f)
    }
}

/// Pooled features and scores captured by a training forward, consumed by
/// the matching backward.
pub struct TokenForward {
    pub scores: HeadScores,
    pub f_v: Vec<f64>,
    pub f_a: Vec<f64>,
    pub t_v: usize,
    pub t_a: usize,
}

/// Gradients for everything trainable, for one token.
pub struct TokenGrads {
    pub realign_v: RealignGrads,
    pub realign_a: RealignGrads,
    pub head_v: (Vec<f64>, f64),
    pub head_a: (Vec<f64>, f64),
    pub head_va: (Vec<f64>, f64),
}

/// The full model: one realign layer and one head per modality plus the
/// fused head over the concatenated pooled features.
pub struct ModelBundle {
    pub cfg: ModelConfig,
    pub realign_v: RealignLayer,
    pub realign_a: RealignLayer,
    pub head_v: LinearHead,
    pub head_a: LinearHead,
    pub head_va: LinearHead,
}

impl ModelBundle {
    /// Heads start at zero, so every score is exactly 0.5 until training
    /// moves them.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seed_v = rng.gen::<u64>();
        let seed_a = rng.gen::<u64>();
        Ok(ModelBundle {
            realign_v: RealignLayer::init(cfg.k_v, cfg.d_v, cfg.rank, cfg.alpha, cfg.dropout_rate, seed_v)?,
            realign_a: RealignLayer::init(cfg.k_a, cfg.d_a, cfg.rank, cfg.alpha, cfg.dropout_rate, seed_a)?,
            head_v: LinearHead::zeros(cfg.d_v),
            head_a: LinearHead::zeros(cfg.d_a),
            head_va: LinearHead::zeros(cfg.d_v + cfg.d_a),
            cfg,
        })
    }

    /// Training forward over one token's padded sequences.
    pub fn forward_train(
        &mut self,
        visual: &Mat,
        audio: &Mat,
        rng: &mut ChaCha8Rng,
    ) -> Result<TokenForward> {
        let h_v = self.realign_v.forward(visual, rng)?;
        let h_a = self.realign_a.forward(audio, rng)?;
        let f_v = pool(&h_v);
        let f_a = pool(&h_a);
        let f_va: Vec<f64> = f_v.iter().chain(&f_a).copied().collect();
        let scores = HeadScores {
            y_v: self.head_v.forward(&f_v),
            y_a: self.head_a.forward(&f_a),
            y_av: self.head_va.forward(&f_va),
        };
        Ok(TokenForward { scores, f_v, f_a, t_v: visual.rows, t_a: audio.rows })
    }

    /// Backward for the forward that produced `fwd`, given d(loss)/d(score)
    /// for the three heads.
    pub fn backward(
        &mut self,
        fwd: &TokenForward,
        d_v: f64,
        d_a: f64,
        d_av: f64,
    ) -> Result<TokenGrads> {
        let f_va: Vec<f64> = fwd.f_v.iter().chain(&fwd.f_a).copied().collect();
        let (g_wv, g_bv, mut d_f_v) = self.head_v.backward(&fwd.f_v, fwd.scores.y_v, d_v);
        let (g_wa, g_ba, mut d_f_a) = self.head_a.backward(&fwd.f_a, fwd.scores.y_a, d_a);
        let (g_wva, g_bva, d_f_va) = self.head_va.backward(&f_va, fwd.scores.y_av, d_av);
        let dv_len = fwd.f_v.len();
        for (acc, g) in d_f_v.iter_mut().zip(&d_f_va[..dv_len]) {
            *acc += g;
        }
        for (acc, g) in d_f_a.iter_mut().zip(&d_f_va[dv_len..]) {
            *acc += g;
        }
        let up_v = pool_backward(&d_f_v, fwd.t_v);
        let up_a = pool_backward(&d_f_a, fwd.t_a);
        let realign_v = self.realign_v.backward(&up_v)?;
        let realign_a = self.realign_a.backward(&up_a)?;
        Ok(TokenGrads {
            realign_v,
            realign_a,
            head_v: (g_wv, g_bv),
            head_a: (g_wa, g_ba),
            head_va: (g_wva, g_bva),
        })
    }

    /// Inference scores for one token's padded sequences.
    pub fn score(&self, visual: &Mat, audio: &Mat) -> Result<HeadScores> {
        let f_va = self.fused_input(visual, audio)?;
        let d_v = self.cfg.d_v;
        Ok(HeadScores {
            y_v: self.head_v.forward(&f_va[..d_v]),
            y_a: self.head_a.forward(&f_va[d_v..]),
            y_av: self.head_va.forward(&f_va),
        })
    }

    /// Pooled realigned features of both modalities, concatenated
    /// (inference mode).
    pub fn fused_input(&self, visual: &Mat, audio: &Mat) -> Result<Vec<f64>> {
        let h_v = self.realign_v.forward_eval(visual)?;
        let h_a = self.realign_a.forward_eval(audio)?;
        let mut f = pool(&h_v);
        f.extend(pool(&h_a));
        Ok(f)
    }
}
