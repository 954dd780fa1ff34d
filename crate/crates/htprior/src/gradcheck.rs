//! Finite-difference verification of the analytic gradients.
//!
//! The analytic side runs the normal f32 recording path; the reference side
//! evaluates the loss at 64-bit precision on a cloned parameter set and
//! takes central differences. The two derivative routes stay independent:
//! one is hand-derived adjoint code, the other numeric differentiation.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hough::{build_grid, build_vote_mask, VoteMask};
use crate::model::{Model, ModelKind};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_DELTA: f64 = 1e-3;

/// Worst relative error per parameter, plus the overall worst.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub worst: f64,
}

/// Guarded relative error: floors the denominator so that agreement on
/// near-zero gradients does not divide to noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares analytic parameter gradients against central differences of the
/// 64-bit loss for one (input, target) sample.
pub fn finite_diff_check(
    model: &Model,
    input: &Tensor,
    target: &Tensor,
    mask: &Arc<VoteMask>,
    delta: f64,
) -> Result<GradCheckReport> {
    // Analytic gradients through the f32 recording path.
    let mut probe = model.clone();
    for p in probe.params.iter_mut() {
        p.value.grad = None;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let t = tape.constant(target.clone());
    let loss = probe.loss_tape(&mut tape, x, t, mask)?;
    let _ = tape.value(loss).item();
    let mut params = std::mem::take(&mut probe.params);
    tape.backward(loss, &mut params)?;

    // Central differences on a 64-bit clone of the parameters.
    let mut values = model.param_values_f64();
    let mut per_param = Vec::with_capacity(params.len());
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let grad = p
            .value
            .grad
            .as_ref()
            .expect("backward populated every parameter");
        let mut param_worst = 0.0f64;
        for ei in 0..values[pi].len() {
            let original = values[pi][ei];
            values[pi][ei] = original + delta;
            let up = model.loss_f64(&values, input, target, mask);
            values[pi][ei] = original - delta;
            let down = model.loss_f64(&values, input, target, mask);
            values[pi][ei] = original;
            let numeric = (up - down) / (2.0 * delta);
            let err = relative_error(grad[ei] as f64, numeric);
            param_worst = param_worst.max(err);
        }
        worst = worst.max(param_worst);
        per_param.push((p.name.clone(), param_worst));
    }
    Ok(GradCheckReport { per_param, worst })
}

/// Step size used by the model-level harness. Central differences run at
/// 64-bit precision, so a small step keeps truncation error negligible and
/// shrinks the ReLU kink-crossing zone to a few times 1e-6 per perturbed
/// element.
pub const HARNESS_DELTA: f64 = 3e-6;

/// Any ReLU pre-activation closer to zero than this would risk a kink
/// crossing while differencing; such samples are resampled.
const KINK_MARGIN: f64 = 1e-4;

/// Builds a deterministic smooth sample and runs the check for one model
/// kind on a `side`×`side` input. Inputs whose forward pass leaves some
/// ReLU pre-activation inside the kink margin are resampled (derived
/// deterministically from the seed).
pub fn check_model_kind(kind: ModelKind, seed: u64, side: usize) -> Result<GradCheckReport> {
    let grid = build_grid(side, side, 13, 8)?;
    let mask = Arc::new(build_vote_mask(&grid));
    let mut model = Model::new(kind, None, seed)?;
    // Check at a generic parameter point: freshly zero-initialized biases
    // put every empty Hough bin exactly on the ReLU kink, where the loss is
    // genuinely non-differentiable in the bias.
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1357_9bdf);
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            let mag: f32 = jitter_rng.gen_range(0.01..0.05);
            *v += if jitter_rng.gen_bool(0.5) { mag } else { -mag };
        }
    }
    let values = model.param_values_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut chosen = None;
    for _attempt in 0..200 {
        let input = Tensor::from_vec(
            &[side, side, 1],
            (0..side * side).map(|_| rng.gen_range(0.1..0.9)).collect(),
        )?;
        let target = Tensor::from_vec(
            &[side, side, 1],
            (0..side * side)
                .map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 })
                .collect(),
        )?;
        let (_, margin) = model.loss_f64_with_margin(&values, &input, &target, &mask);
        if margin > KINK_MARGIN {
            chosen = Some((input, target));
            break;
        }
    }
    let (input, target) = chosen.ok_or_else(|| {
        crate::Error::Usage(format!(
            "no kink-free sample found for {kind:?} with seed {seed}"
        ))
    })?;
    finite_diff_check(&model, &input, &target, &mask, HARNESS_DELTA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::BlockVariant;
    use crate::kernels::{self, Conv1dMode};
    use crate::tensor::Parameter;

    fn rng_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// FD check for a single op: builds loss = l2(op(params...), target) on
    /// the tape, then differences the same composition computed at f64.
    fn check_op<FTape, F64>(
        name: &str,
        params: Vec<Parameter>,
        tape_fn: FTape,
        f64_fn: F64,
        seedless_target: &Tensor,
    ) where
        FTape: Fn(&mut Tape, &[Parameter]) -> crate::Result<crate::tape::Vid>,
        F64: Fn(&[Vec<f64>]) -> Vec<f64>,
    {
        let mut params = params;
        let mut tape = Tape::new();
        let out = tape_fn(&mut tape, &params).unwrap();
        let tgt = tape.constant(seedless_target.clone());
        let loss = tape.l2_loss(out, tgt).unwrap();
        tape.backward(loss, &mut params).unwrap();

        let t64: Vec<f64> = seedless_target.data().iter().map(|&v| v as f64).collect();
        let mut values: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.value.data().iter().map(|&v| v as f64).collect())
            .collect();
        let delta = 1e-3;
        for pi in 0..params.len() {
            let grad = params[pi].value.grad.clone().unwrap();
            for ei in 0..values[pi].len() {
                let orig = values[pi][ei];
                values[pi][ei] = orig + delta;
                let up = kernels::l2_loss(&f64_fn(&values), &t64);
                values[pi][ei] = orig - delta;
                let down = kernels::l2_loss(&f64_fn(&values), &t64);
                values[pi][ei] = orig;
                let numeric = (up - down) / (2.0 * delta);
                let err = relative_error(grad[ei] as f64, numeric);
                assert!(
                    err <= 1e-3,
                    "{name} param {pi} elem {ei}: analytic {} vs numeric {numeric} (err {err})",
                    grad[ei]
                );
            }
        }
    }

    #[test]
    fn every_op_passes_fd_check_on_20_seeds() {
        let grid = build_grid(6, 6, 9, 5).unwrap();
        let mask = Arc::new(build_vote_mask(&grid));
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Inputs kept away from ReLU kinks and sigmoid saturation.
            let img = rng_tensor(&mut rng, &[6, 6, 2], 0.2, 1.0);
            let hmap = rng_tensor(&mut rng, &[9, 5, 2], 0.2, 1.0);
            let k2 = rng_tensor(&mut rng, &[3, 3, 2, 2], -0.6, 0.6);
            let bias = rng_tensor(&mut rng, &[2], -0.3, 0.3);
            let k1c = rng_tensor(&mut rng, &[3, 2], -0.6, 0.6);
            let k1d = rng_tensor(&mut rng, &[3, 2, 3], -0.6, 0.6);
            let tgt_img2 = rng_tensor(&mut rng, &[6, 6, 2], 0.0, 1.0);
            let tgt_img3 = rng_tensor(&mut rng, &[6, 6, 3], 0.0, 1.0);
            let tgt_img4 = rng_tensor(&mut rng, &[6, 6, 4], 0.0, 1.0);
            let tgt_h2 = rng_tensor(&mut rng, &[9, 5, 2], 0.0, 1.0);
            let tgt_h3 = rng_tensor(&mut rng, &[9, 5, 3], 0.0, 1.0);

            // conv2d with bias
            check_op(
                "conv2d",
                vec![
                    Parameter::new("x", img.clone()),
                    Parameter::new("w", k2.clone()),
                    Parameter::new("b", bias.clone()),
                ],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    let w = tape.param(1, &p[1]);
                    let b = tape.param(2, &p[2]);
                    tape.conv2d(x, w, Some(b))
                },
                |v| {
                    let mut out = vec![0.0f64; 6 * 6 * 2];
                    kernels::conv2d(&v[0], 6, 6, 2, &v[1], 3, 3, 2, Some(&v[2]), &mut out);
                    out
                },
                &tgt_img2,
            );

            // channelwise conv1d over ρ, with bias
            let bias1 = rng_tensor(&mut rng, &[2], -0.3, 0.3);
            check_op(
                "conv1d_channelwise",
                vec![
                    Parameter::new("x", hmap.clone()),
                    Parameter::new("w", k1c.clone()),
                    Parameter::new("b", bias1.clone()),
                ],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    let w = tape.param(1, &p[1]);
                    let b = tape.param(2, &p[2]);
                    tape.conv1d_rho(x, w, Some(b), Conv1dMode::Channelwise)
                },
                |v| {
                    let mut out = vec![0.0f64; 9 * 5 * 2];
                    kernels::conv1d_rho(
                        &v[0],
                        9,
                        5,
                        2,
                        &v[1],
                        3,
                        2,
                        Conv1dMode::Channelwise,
                        Some(&v[2]),
                        &mut out,
                    );
                    out
                },
                &tgt_h2,
            );

            // dense conv1d over ρ, no bias
            check_op(
                "conv1d_dense",
                vec![
                    Parameter::new("x", hmap.clone()),
                    Parameter::new("w", k1d.clone()),
                ],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    let w = tape.param(1, &p[1]);
                    tape.conv1d_rho(x, w, None, Conv1dMode::Dense)
                },
                |v| {
                    let mut out = vec![0.0f64; 9 * 5 * 3];
                    kernels::conv1d_rho(
                        &v[0],
                        9,
                        5,
                        2,
                        &v[1],
                        3,
                        3,
                        Conv1dMode::Dense,
                        None,
                        &mut out,
                    );
                    out
                },
                &tgt_h3,
            );

            // relu (inputs pushed into ±(0.2, 1.0) bands, clear of the kink)
            let shifted = {
                let mut t = img.clone();
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *v = -*v;
                    }
                }
                t
            };
            check_op(
                "relu",
                vec![Parameter::new("x", shifted.clone())],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    tape.relu(x)
                },
                |v| {
                    let mut out = vec![0.0f64; v[0].len()];
                    kernels::relu(&v[0], &mut out);
                    out
                },
                &tgt_img2,
            );

            // sigmoid
            check_op(
                "sigmoid",
                vec![Parameter::new("x", shifted)],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    tape.sigmoid(x)
                },
                |v| {
                    let mut out = vec![0.0f64; v[0].len()];
                    kernels::sigmoid(&v[0], &mut out);
                    out
                },
                &tgt_img2,
            );

            // elementwise mul of two parameters
            let other = rng_tensor(&mut rng, &[6, 6, 2], 0.2, 1.0);
            check_op(
                "mul",
                vec![
                    Parameter::new("a", img.clone()),
                    Parameter::new("b", other),
                ],
                |tape, p| {
                    let a = tape.param(0, &p[0]);
                    let b = tape.param(1, &p[1]);
                    tape.mul(a, b)
                },
                |v| {
                    let mut out = vec![0.0f64; v[0].len()];
                    kernels::mul(&v[0], &v[1], &mut out);
                    out
                },
                &tgt_img2,
            );

            // concat_channels
            let second = rng_tensor(&mut rng, &[6, 6, 1], 0.2, 1.0);
            check_op(
                "concat_channels",
                vec![
                    Parameter::new("a", img.clone()),
                    Parameter::new("b", second),
                ],
                |tape, p| {
                    let a = tape.param(0, &p[0]);
                    let b = tape.param(1, &p[1]);
                    tape.concat_channels(a, b)
                },
                |v| {
                    let pixels = v[0].len() / 2;
                    let mut out = vec![0.0f64; pixels * 3];
                    kernels::concat_channels(&v[0], 2, &v[1], 1, &mut out);
                    out
                },
                &tgt_img3,
            );

            // ht
            let mask_c = Arc::clone(&mask);
            check_op(
                "ht",
                vec![Parameter::new("x", img.clone())],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    tape.ht(x, &mask_c)
                },
                |v| {
                    let mut out = vec![0.0f64; 9 * 5 * 2];
                    mask.project(&v[0], 2, 1.0 / 6.0, &mut out);
                    out
                },
                &tgt_h2,
            );

            // iht
            let mask_c = Arc::clone(&mask);
            check_op(
                "iht",
                vec![Parameter::new("x", hmap.clone())],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    tape.iht(x, &mask_c)
                },
                |v| {
                    let mut out = vec![0.0f64; 6 * 6 * 2];
                    mask.backproject(&v[0], 2, 1.0 / 5.0, &mut out);
                    out
                },
                &tgt_img2,
            );

            // sum (via a concat so the l2 target shape matches)
            check_op(
                "sum_of_squares",
                vec![Parameter::new("x", img.clone())],
                |tape, p| {
                    let x = tape.param(0, &p[0]);
                    let sq = tape.mul(x, x)?;
                    tape.concat_channels(sq, sq)
                },
                |v| {
                    let mut sq = vec![0.0f64; v[0].len()];
                    kernels::mul(&v[0], &v[0], &mut sq);
                    let pixels = sq.len() / 2;
                    let mut out = vec![0.0f64; pixels * 4];
                    kernels::concat_channels(&sq, 2, &sq, 2, &mut out);
                    out
                },
                &tgt_img4,
            );

            // losses: check d(loss)/d(pred) directly against FD of the
            // f64 loss.
            for bce in [false, true] {
                let pred = rng_tensor(&mut rng, &[6, 6, 1], 0.2, 0.8);
                let tgt = rng_tensor(&mut rng, &[6, 6, 1], 0.0, 1.0);
                let mut params = vec![Parameter::new("p", pred.clone())];
                let mut tape = Tape::new();
                let p = tape.param(0, &params[0]);
                let t = tape.constant(tgt.clone());
                let loss = if bce {
                    tape.bce_loss(p, t).unwrap()
                } else {
                    tape.l2_loss(p, t).unwrap()
                };
                tape.backward(loss, &mut params).unwrap();
                let grad = params[0].value.grad.clone().unwrap();
                let mut v: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
                let t64: Vec<f64> = tgt.data().iter().map(|&x| x as f64).collect();
                let delta = 1e-3;
                for ei in 0..v.len() {
                    let orig = v[ei];
                    v[ei] = orig + delta;
                    let up = if bce {
                        kernels::bce_loss(&v, &t64)
                    } else {
                        kernels::l2_loss(&v, &t64)
                    };
                    v[ei] = orig - delta;
                    let down = if bce {
                        kernels::bce_loss(&v, &t64)
                    } else {
                        kernels::l2_loss(&v, &t64)
                    };
                    v[ei] = orig;
                    let numeric = (up - down) / (2.0 * delta);
                    let err = relative_error(grad[ei] as f64, numeric);
                    assert!(err <= 1e-3, "loss bce={bce} elem {ei}: err {err}");
                }
            }
        }
    }

    #[test]
    fn linear_model_error_below_1e6() {
        // loss = sum(w ⊙ x) is linear in w: the analytic gradient is x
        // exactly, and central differences recover it to within f64 noise.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rng_tensor(&mut rng, &[4, 4, 1], 0.5, 1.5);
        let w = rng_tensor(&mut rng, &[4, 4, 1], -1.0, 1.0);
        let mut params = vec![Parameter::new("w", w.clone())];
        let mut tape = Tape::new();
        let wv = tape.param(0, &params[0]);
        let xv = tape.constant(x.clone());
        let wx = tape.mul(wv, xv).unwrap();
        let loss = tape.sum(wx).unwrap();
        tape.backward(loss, &mut params).unwrap();
        let grad = params[0].value.grad.clone().unwrap();

        let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let mut w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
        let delta = 1e-3;
        let loss64 = |w: &[f64]| {
            let mut prod = vec![0.0f64; w.len()];
            kernels::mul(w, &x64, &mut prod);
            kernels::sum(&prod)
        };
        for ei in 0..w64.len() {
            let orig = w64[ei];
            w64[ei] = orig + delta;
            let up = loss64(&w64);
            w64[ei] = orig - delta;
            let down = loss64(&w64);
            w64[ei] = orig;
            let numeric = (up - down) / (2.0 * delta);
            let err = relative_error(grad[ei] as f64, numeric);
            assert!(err < 1e-6, "elem {ei}: err {err}");
        }
    }

    #[test]
    fn exp1_models_pass_fd_check() {
        for kind in [ModelKind::Local, ModelKind::Global, ModelKind::LocalGlobal] {
            let report = check_model_kind(kind, 17, 8).unwrap();
            assert!(
                report.worst <= 1e-3,
                "{kind:?} worst error {}",
                report.worst
            );
        }
    }

    #[test]
    fn block_variants_pass_fd_check() {
        for v in BlockVariant::ALL {
            let report = check_model_kind(ModelKind::Block(v), 23, 8).unwrap();
            assert!(report.worst <= 1e-3, "{v:?} worst error {}", report.worst);
        }
    }
}
