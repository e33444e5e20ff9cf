//! Per-head classification losses. The asymmetric loss treats the two
//! classes differently: positives get a plain (optionally focal-weighted)
//! log loss, negatives are margin-shifted so that predictions at or below
//! the margin contribute exactly zero loss and gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// Asymmetric loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcaConfig {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub mu: f64,
    pub eps: f64,
}

impl Default for AcaConfig {
    fn default() -> Self {
        AcaConfig { gamma_plus: 0.0, gamma_minus: 4.0, mu: 0.05, eps: DEFAULT_CLAMP_EPS }
    }
}

impl AcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_plus < 0.0 || self.gamma_minus < 0.0 {
            return Err(Error::InvalidConfig("focusing exponents must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!("margin {} outside [0, 1)", self.mu)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::InvalidConfig(format!("clamp eps {} outside (0, 0.5)", self.eps)));
        }
        Ok(())
    }
}

/// Which loss a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Aca,
    Focal,
    Bce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aca" => Ok(LossKind::Aca),
            "focal" => Ok(LossKind::Focal),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss kind {other:?} (expected aca, focal, or bce)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Aca => "aca",
            LossKind::Focal => "focal",
            LossKind::Bce => "bce",
        })
    }
}

/// A loss kind together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Aca(AcaConfig),
    Focal { gamma: f64, eps: f64 },
    Bce { eps: f64 },
}

impl LossSpec {
    pub fn from_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::Aca => LossSpec::Aca(AcaConfig::default()),
            LossKind::Focal => {
                LossSpec::Focal { gamma: DEFAULT_FOCAL_GAMMA, eps: DEFAULT_CLAMP_EPS }
            }
            LossKind::Bce => LossSpec::Bce { eps: DEFAULT_CLAMP_EPS },
        }
    }

    pub fn loss(&self, p: f64, y: bool) -> Result<f64> {
        match *self {
            LossSpec::Aca(cfg) => aca_loss(p, y, &cfg),
            LossSpec::Focal { gamma, eps } => focal_loss(p, y, gamma, eps),
            LossSpec::Bce { eps } => bce_loss(p, y, eps),
        }
    }

    pub fn grad(&self, p: f64, y: bool) -> Result<f64> {
        match *self {
            LossSpec::Aca(cfg) => aca_grad(p, y, &cfg),
            LossSpec::Focal { gamma, eps } => focal_grad(p, y, gamma, eps),
            LossSpec::Bce { eps } => bce_grad(p, y, eps),
        }
    }
}

/// Shifts a negative-class prediction down by the margin, flooring at zero.
#[inline]
pub fn margin_shift(p: f64, mu: f64) -> f64 {
    (p - mu).max(0.0)
}

fn check_prob(p: f64) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::NonFinite(format!("prediction {p}")));
    }
    Ok(())
}

#[inline]
fn in_clamp_range(p: f64, eps: f64) -> bool {
    (eps..=1.0 - eps).contains(&p)
}

/// Asymmetric loss. Positives: -(1-p)^g+ * ln p. Negatives: the prediction
/// is margin-shifted to p_m = max(p - mu, 0) and charged -p_m^g- * ln(1-p_m),
/// which is exactly zero for p <= mu.
pub fn aca_loss(p: f64, y: bool, cfg: &AcaConfig) -> Result<f64> {
    check_prob(p)?;
    let q = p.clamp(cfg.eps, 1.0 - cfg.eps);
    if y {
        let w = if cfg.gamma_plus == 0.0 { 1.0 } else { (1.0 - q).powf(cfg.gamma_plus) };
        Ok(-w * q.ln())
    } else {
        let pm = margin_shift(q, cfg.mu);
        if pm <= 0.0 {
            return Ok(0.0);
        }
        let w = if cfg.gamma_minus == 0.0 { 1.0 } else { pm.powf(cfg.gamma_minus) };
        Ok(-w * (1.0 - pm).ln())
    }
}

/// d(aca_loss)/dp. Outside the clamp's active range the loss is constant in
/// p, so the gradient there is exactly zero; likewise in the negative-class
/// dead zone p <= mu.
pub fn aca_grad(p: f64, y: bool, cfg: &AcaConfig) -> Result<f64> {
    check_prob(p)?;
    if !in_clamp_range(p, cfg.eps) {
        return Ok(0.0);
    }
    if y {
        let g = cfg.gamma_plus;
        if g == 0.0 {
            return Ok(-1.0 / p);
        }
        Ok(g * (1.0 - p).powf(g - 1.0) * p.ln() - (1.0 - p).powf(g) / p)
    } else {
        let pm = margin_shift(p, cfg.mu);
        if pm <= 0.0 {
            return Ok(0.0);
        }
        let g = cfg.gamma_minus;
        if g == 0.0 {
            return Ok(1.0 / (1.0 - pm));
        }
        Ok(-g * pm.powf(g - 1.0) * (1.0 - pm).ln() + pm.powf(g) / (1.0 - pm))
    }
}

/// Plain binary cross-entropy with clamped predictions.
pub fn bce_loss(p: f64, y: bool, eps: f64) -> Result<f64> {
    check_prob(p)?;
    let q = p.clamp(eps, 1.0 - eps);
    Ok(if y { -q.ln() } else { -(1.0 - q).ln() })
}

pub fn bce_grad(p: f64, y: bool, eps: f64) -> Result<f64> {
    check_prob(p)?;
    if !in_clamp_range(p, eps) {
        return Ok(0.0);
    }
    Ok(if y { -1.0 / p } else { 1.0 / (1.0 - p) })
}

/// Symmetric focal loss; gamma = 0 reduces to binary cross-entropy.
pub fn focal_loss(p: f64, y: bool, gamma: f64, eps: f64) -> Result<f64> {
    check_prob(p)?;
    let q = p.clamp(eps, 1.0 - eps);
    if y {
        let w = if gamma == 0.0 { 1.0 } else { (1.0 - q).powf(gamma) };
        Ok(-w * q.ln())
    } else {
        let w = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        Ok(-w * (1.0 - q).ln())
    }
}

pub fn focal_grad(p: f64, y: bool, gamma: f64, eps: f64) -> Result<f64> {
    check_prob(p)?;
    if !in_clamp_range(p, eps) {
        return Ok(0.0);
    }
    if y {
        if gamma == 0.0 {
            return Ok(-1.0 / p);
        }
        Ok(gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - (1.0 - p).powf(gamma) / p)
    } else {
        if gamma == 0.0 {
            return Ok(1.0 / (1.0 - p));
        }
        Ok(-gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() + p.powf(gamma) / (1.0 - p))
    }
}

/// Sigmoid outputs of the three heads for one token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadScores {
    pub y_v: f64,
    pub y_a: f64,
    pub y_av: f64,
}

/// Per-modality labels for one token; the fused label is their OR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLabels {
    pub v: bool,
    pub a: bool,
}

impl HeadLabels {
    #[inline]
    pub fn fused(self) -> bool {
        self.v || self.a
    }
}

/// Batch-mean loss per head; total is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub l_v: f64,
    pub l_a: f64,
    pub l_va: f64,
    pub total: f64,
}

/// Means the per-sample losses of each head over the batch and sums the
/// three heads.
pub fn batch_loss(scores: &[HeadScores], labels: &[HeadLabels], spec: &LossSpec) -> Result<LossReport> {
    if scores.is_empty() {
        return Err(Error::EmptySequence);
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n = scores.len() as f64;
    let (mut l_v, mut l_a, mut l_va) = (0.0, 0.0, 0.0);
    for (s, lab) in scores.iter().zip(labels) {
        l_v += spec.loss(s.y_v, lab.v)?;
        l_a += spec.loss(s.y_a, lab.a)?;
        l_va += spec.loss(s.y_av, lab.fused())?;
    }
    l_v /= n;
    l_a /= n;
    l_va /= n;
    Ok(LossReport { l_v, l_a, l_va, total: l_v + l_a + l_va })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = 0.6931471805599453;

    #[test]
    fn margin_shift_floors_at_zero() {
        assert_eq!(margin_shift(0.04, 0.05), 0.0);
        assert!((margin_shift(0.3, 0.05) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn aca_positive_at_half_is_ln_two() {
        let cfg = AcaConfig::default();
        let l = aca_loss(0.5, true, &cfg).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert_eq!(aca_grad(0.5, true, &cfg).unwrap(), -2.0);
    }

    #[test]
    fn aca_negative_hand_value() {
        // p = 0.55, mu = 0.05 -> p_m = 0.5, loss = -0.5^4 ln 0.5
        let cfg = AcaConfig::default();
        let l = aca_loss(0.55, false, &cfg).unwrap();
        assert!((l - 0.04332169878499658).abs() < 1e-15);
        // grad = -4 * 0.125 * ln(0.5) + 0.0625 / 0.5
        let g = aca_grad(0.55, false, &cfg).unwrap();
        assert!((g - 0.47157359027997264).abs() < 1e-12);
    }

    #[test]
    fn aca_dead_zone_is_exactly_zero() {
        let cfg = AcaConfig::default();
        for &p in &[0.0, 0.01, 0.049, 0.04999999, 0.05] {
            assert_eq!(aca_loss(p, false, &cfg).unwrap(), 0.0, "loss at p={p}");
            assert_eq!(aca_grad(p, false, &cfg).unwrap(), 0.0, "grad at p={p}");
        }
    }

    #[test]
    fn aca_is_continuous_at_the_margin() {
        let cfg = AcaConfig::default();
        let l = aca_loss(0.05 + 1e-9, false, &cfg).unwrap();
        let g = aca_grad(0.05 + 1e-9, false, &cfg).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn aca_clamps_the_endpoints() {
        let cfg = AcaConfig::default();
        let l0 = aca_loss(0.0, true, &cfg).unwrap();
        assert!((l0 - -(1e-7f64.ln())).abs() < 1e-9);
        let l1 = aca_loss(1.0, true, &cfg).unwrap();
        assert!(l1 > 0.0 && l1 < 1e-6);
        // outside the active clamp range the gradient is exactly zero
        assert_eq!(aca_grad(1e-9, true, &cfg).unwrap(), 0.0);
        assert_eq!(aca_grad(1.0, true, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn aca_rejects_non_finite() {
        let cfg = AcaConfig::default();
        assert!(matches!(aca_loss(f64::NAN, true, &cfg), Err(Error::NonFinite(_))));
        assert!(matches!(aca_grad(f64::INFINITY, false, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn aca_monotone_over_grid() {
        let cfg = AcaConfig::default();
        let mut prev_pos = f64::INFINITY;
        let mut prev_neg = -1.0;
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let lp = aca_loss(p, true, &cfg).unwrap();
            let ln = aca_loss(p, false, &cfg).unwrap();
            assert!(lp <= prev_pos + 1e-12, "positive loss rose at p={p}");
            assert!(ln >= prev_neg - 1e-12, "negative loss fell at p={p}");
            assert!(lp >= 0.0 && ln >= 0.0);
            prev_pos = lp;
            prev_neg = ln;
        }
    }

    #[test]
    fn aca_is_asymmetric_with_defaults() {
        let cfg = AcaConfig::default();
        let hard_pos = aca_loss(0.1, true, &cfg).unwrap();
        let hard_neg = aca_loss(0.9, false, &cfg).unwrap();
        assert!(hard_pos > hard_neg);
    }

    #[test]
    fn bce_hand_values() {
        assert!((bce_loss(0.5, true, DEFAULT_CLAMP_EPS).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(bce_grad(0.5, true, DEFAULT_CLAMP_EPS).unwrap(), -2.0);
        assert_eq!(bce_grad(0.5, false, DEFAULT_CLAMP_EPS).unwrap(), 2.0);
    }

    #[test]
    fn focal_hand_values() {
        let l = focal_loss(0.5, true, 2.0, DEFAULT_CLAMP_EPS).unwrap();
        assert!((l - 0.25 * LN_2).abs() < 1e-15);
        let l = focal_loss(0.9, false, 2.0, DEFAULT_CLAMP_EPS).unwrap();
        assert!((l - 1.8650939253251773).abs() < 1e-9);
    }

    #[test]
    fn focal_gamma_zero_reduces_to_bce() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            for y in [false, true] {
                let f = focal_loss(p, y, 0.0, DEFAULT_CLAMP_EPS).unwrap();
                let b = bce_loss(p, y, DEFAULT_CLAMP_EPS).unwrap();
                assert!((f - b).abs() < 1e-15);
                let fg = focal_grad(p, y, 0.0, DEFAULT_CLAMP_EPS).unwrap();
                let bg = bce_grad(p, y, DEFAULT_CLAMP_EPS).unwrap();
                assert!((fg - bg).abs() < 1e-15);
            }
        }
    }

    /// Central finite differences on the loss value, kept independent of the
    /// gradcheck module so this file carries its own oracle.
    fn numeric_grad(f: impl Fn(f64) -> f64, p: f64) -> f64 {
        let h = 1e-6;
        (f(p + h) - f(p - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = AcaConfig::default();
        for i in 1..99 {
            let p = i as f64 / 100.0;
            for y in [false, true] {
                // skip the kink at the margin
                if !y && (p - cfg.mu).abs() < 1e-3 {
                    continue;
                }
                let cases: Vec<(f64, f64)> = vec![
                    (
                        aca_grad(p, y, &cfg).unwrap(),
                        numeric_grad(|x| aca_loss(x, y, &cfg).unwrap(), p),
                    ),
                    (
                        bce_grad(p, y, DEFAULT_CLAMP_EPS).unwrap(),
                        numeric_grad(|x| bce_loss(x, y, DEFAULT_CLAMP_EPS).unwrap(), p),
                    ),
                    (
                        focal_grad(p, y, 2.0, DEFAULT_CLAMP_EPS).unwrap(),
                        numeric_grad(|x| focal_loss(x, y, 2.0, DEFAULT_CLAMP_EPS).unwrap(), p),
                    ),
                ];
                for (analytic, numeric) in cases {
                    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        ((analytic - numeric) / denom).abs() < 1e-4,
                        "p={p} y={y}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_loss_means_heads_and_sums_total() {
        let spec = LossSpec::Bce { eps: DEFAULT_CLAMP_EPS };
        let scores = vec![
            HeadScores { y_v: 0.5, y_a: 0.5, y_av: 0.5 },
            HeadScores { y_v: 0.5, y_a: 0.5, y_av: 0.5 },
        ];
        let labels = vec![HeadLabels { v: true, a: false }, HeadLabels { v: false, a: false }];
        let rep = batch_loss(&scores, &labels, &spec).unwrap();
        assert!((rep.l_v - LN_2).abs() < 1e-15);
        assert!((rep.l_a - LN_2).abs() < 1e-15);
        assert!((rep.l_va - LN_2).abs() < 1e-15);
        assert_eq!(rep.total, rep.l_v + rep.l_a + rep.l_va);
    }

    #[test]
    fn batch_loss_fuses_labels_with_or() {
        let spec = LossSpec::Bce { eps: DEFAULT_CLAMP_EPS };
        // fused head predicts fake confidently; only correct when v OR a is fake
        let scores = vec![HeadScores { y_v: 0.5, y_a: 0.5, y_av: 0.999 }];
        let or_true = batch_loss(&scores, &[HeadLabels { v: false, a: true }], &spec).unwrap();
        let or_false = batch_loss(&scores, &[HeadLabels { v: false, a: false }], &spec).unwrap();
        assert!(or_true.l_va < or_false.l_va);
    }

    #[test]
    fn batch_loss_rejects_empty() {
        let spec = LossSpec::from_kind(LossKind::Aca);
        assert!(matches!(batch_loss(&[], &[], &spec), Err(Error::EmptySequence)));
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("aca".parse::<LossKind>().unwrap(), LossKind::Aca);
        assert_eq!("focal".parse::<LossKind>().unwrap(), LossKind::Focal);
        assert_eq!("bce".parse::<LossKind>().unwrap(), LossKind::Bce);
        assert!("dice".parse::<LossKind>().is_err());
    }
}
