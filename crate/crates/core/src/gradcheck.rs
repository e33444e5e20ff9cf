//! Central-difference gradient checks for the losses and the realign layer,
//! shared by the command-line `gradcheck` verb and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::{mul_nt, Mat};
use crate::loss::{
    aca_grad, aca_loss, bce_grad, bce_loss, focal_grad, focal_loss, AcaConfig,
    DEFAULT_CLAMP_EPS, DEFAULT_FOCAL_GAMMA,
};
use crate::model::RealignLayer;

pub const LOSS_GRID_STEP: f64 = 0.01;
pub const LOSS_FD_STEP: f64 = 1e-6;
pub const REALIGN_FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Grid points this close to the margin kink are excluded from the check.
pub const KINK_EXCLUSION: f64 = 1e-3;

/// One row of the gradcheck report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative disagreement, floored so that a pair of near-zero values counts
/// as agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn central_diff(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn check_loss(
    name: &str,
    loss: impl Fn(f64, bool) -> Result<f64>,
    grad: impl Fn(f64, bool) -> Result<f64>,
    skip: impl Fn(f64, bool) -> bool,
) -> Result<CheckRow> {
    let mut max_err = 0.0f64;
    let mut i = 1;
    while (i as f64) * LOSS_GRID_STEP < 1.0 {
        let p = i as f64 * LOSS_GRID_STEP;
        for y in [false, true] {
            if skip(p, y) {
                continue;
            }
            let analytic = grad(p, y)?;
            let numeric = central_diff(|x| loss(x, y), p, LOSS_FD_STEP)?;
            max_err = max_err.max(relative_error(analytic, numeric));
        }
        i += 1;
    }
    Ok(CheckRow { name: name.to_string(), max_rel_err: max_err, passed: max_err < REL_TOL })
}

/// Checks the analytic gradient of each loss kind over a probability grid.
pub fn check_loss_gradients() -> Result<Vec<CheckRow>> {
    let aca = AcaConfig::default();
    let near_kink = move |p: f64, y: bool| !y && (p - aca.mu).abs() < KINK_EXCLUSION;
    Ok(vec![
        check_loss(
            "loss.aca",
            |p, y| aca_loss(p, y, &aca),
            |p, y| aca_grad(p, y, &aca),
            near_kink,
        )?,
        check_loss(
            "loss.focal",
            |p, y| focal_loss(p, y, DEFAULT_FOCAL_GAMMA, DEFAULT_CLAMP_EPS),
            |p, y| focal_grad(p, y, DEFAULT_FOCAL_GAMMA, DEFAULT_CLAMP_EPS),
            |_, _| false,
        )?,
        check_loss(
            "loss.bce",
            |p, y| bce_loss(p, y, DEFAULT_CLAMP_EPS),
            |p, y| bce_grad(p, y, DEFAULT_CLAMP_EPS),
            |_, _| false,
        )?,
    ])
}

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    m
}

fn loss_of(layer: &RealignLayer, x: &Mat, weights: &Mat) -> Result<f64> {
    let h = layer.forward_eval(x)?;
    Ok(h.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum())
}

/// Checks the realign backward pass against central differences on a small
/// random layer (k=6, d=5, r=2, dropout off) with a random linear
/// read-out as the scalar loss.
pub fn check_realign_gradients(seed: u64) -> Result<Vec<CheckRow>> {
    let (k, d, r, t) = (6, 5, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = RealignLayer::init(k, d, r, 16.0, 0.0, seed)?;
    for v in &mut layer.phi_up.data {
        *v = rng.gen_range(-0.5..0.5);
    }
    let x = random_mat(t, k, &mut rng);
    let weights = random_mat(t, d, &mut rng);

    layer.forward(&x, &mut rng)?;
    let grads = layer.backward(&weights)?;

    let h = REALIGN_FD_STEP;
    let mut err_up = 0.0f64;
    for i in 0..layer.phi_up.data.len() {
        let orig = layer.phi_up.data[i];
        layer.phi_up.data[i] = orig + h;
        let plus = loss_of(&layer, &x, &weights)?;
        layer.phi_up.data[i] = orig - h;
        let minus = loss_of(&layer, &x, &weights)?;
        layer.phi_up.data[i] = orig;
        err_up = err_up.max(relative_error(grads.phi_up.data[i], (plus - minus) / (2.0 * h)));
    }
    let mut err_down = 0.0f64;
    for i in 0..layer.phi_down.data.len() {
        let orig = layer.phi_down.data[i];
        layer.phi_down.data[i] = orig + h;
        let plus = loss_of(&layer, &x, &weights)?;
        layer.phi_down.data[i] = orig - h;
        let minus = loss_of(&layer, &x, &weights)?;
        layer.phi_down.data[i] = orig;
        err_down = err_down.max(relative_error(grads.phi_down.data[i], (plus - minus) / (2.0 * h)));
    }
    let mut err_x = 0.0f64;
    let mut x_pert = x.clone();
    for i in 0..x_pert.data.len() {
        let orig = x_pert.data[i];
        x_pert.data[i] = orig + h;
        let plus = loss_of(&layer, &x_pert, &weights)?;
        x_pert.data[i] = orig - h;
        let minus = loss_of(&layer, &x_pert, &weights)?;
        x_pert.data[i] = orig;
        err_x = err_x.max(relative_error(grads.input.data[i], (plus - minus) / (2.0 * h)));
    }
    let row = |name: &str, err: f64| CheckRow {
        name: name.to_string(),
        max_rel_err: err,
        passed: err < REL_TOL,
    };
    Ok(vec![
        row("realign.phi_up", err_up),
        row("realign.phi_down", err_down),
        row("realign.input", err_x),
    ])
}

/// Freshly initialized layers must reproduce the frozen projection exactly.
pub fn check_zero_init(seed: u64, trials: usize) -> Result<CheckRow> {
    let (k, d, r) = (6, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = RealignLayer::init(k, d, r, 16.0, 0.0, seed)?;
    let mut max_abs = 0.0f64;
    for _ in 0..trials {
        let x = random_mat(3, k, &mut rng);
        let h = layer.forward_eval(&x)?;
        let base = mul_nt(&x, &layer.w0);
        for (a, b) in h.data.iter().zip(&base.data) {
            max_abs = max_abs.max((a - b).abs());
        }
    }
    Ok(CheckRow { name: "realign.zero_init".to_string(), max_rel_err: max_abs, passed: max_abs == 0.0 })
}

/// Full table: loss kinds, realign factors, zero-init equivalence.
pub fn run_all(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = check_loss_gradients()?;
    rows.extend(check_realign_gradients(seed)?);
    rows.push(check_zero_init(seed, 100)?);
    Ok(rows)
}
