//! Central finite-difference verification of the hand-written backward
//! passes. Each differentiable op gets a seeded harness: parameters are
//! flattened into one vector, a fixed random cotangent turns the op
//! output into a scalar, and the analytic gradient is compared against
//! central differences at the configured step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anchor::{LanePrediction, LaneTargets, NUM_CLASSES};
use crate::geometry::{build_ipm_grid, BevGridSpec, CameraParams, ImageSize};
use crate::loss::{loss_3d, loss_3d_backward, loss_seg, total_loss, total_loss_backward, BevSegMap, LossWeights};
use crate::tensor::Tensor;
use crate::transformer::{
    bilinear_sample, bilinear_sample_backward, deform_attn_backward, deformable_cross_attention,
    self_attention, self_attention_backward, DeformAttnParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    /// A bilinear sample sits exactly on a cell boundary; the gradient is
    /// undefined there. Re-sample the inputs.
    #[error("non-differentiable point: {0}")]
    NonDifferentiablePoint(String),
}

/// The differentiable cores under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    LinearMap,
    SelfAttention,
    BilinearSample,
    DeformableAttention,
    Loss3d,
    LossSeg,
    TotalLoss,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::LinearMap,
        GradOp::SelfAttention,
        GradOp::BilinearSample,
        GradOp::DeformableAttention,
        GradOp::Loss3d,
        GradOp::LossSeg,
        GradOp::TotalLoss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GradOp::LinearMap => "linear_map",
            GradOp::SelfAttention => "self_attention",
            GradOp::BilinearSample => "bilinear_sample",
            GradOp::DeformableAttention => "deformable_attention",
            GradOp::Loss3d => "loss_3d",
            GradOp::LossSeg => "loss_seg",
            GradOp::TotalLoss => "total_loss",
        }
    }

    /// Acceptance tolerance on the max relative error.
    pub fn tolerance(&self) -> f64 {
        match self {
            GradOp::LinearMap => 1e-9,
            GradOp::SelfAttention => 1e-6,
            GradOp::BilinearSample => 1e-6,
            GradOp::DeformableAttention => 1e-5,
            GradOp::Loss3d => 1e-6,
            GradOp::LossSeg => 1e-6,
            GradOp::TotalLoss => 1e-7,
        }
    }

    /// Step size paired with [`Self::tolerance`]. The exactly-linear op
    /// has no truncation term, so a larger step there only reduces
    /// rounding noise in the difference quotient.
    pub fn default_step(&self) -> f64 {
        match self {
            GradOp::LinearMap => 1e-3,
            _ => 1e-5,
        }
    }
}

/// Central finite differences of a scalar function at `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = f(&probe);
        probe[i] = orig - step;
        let fm = f(&probe);
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * step));
    }
    out
}

/// Max relative error between analytic and numeric gradients. Entries
/// that are both negligible count as exact.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs() < 1e-6 && n.abs() < 1e-6 {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}

fn cotangent(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Compare the analytic gradient of `op` against central finite
/// differences at `step`, on a deterministic instance derived from
/// `seed`. Returns the max relative error over all parameters and
/// inputs.
pub fn grad_check(op: GradOp, seed: u64, step: f64) -> Result<f64, GradCheckError> {
    match op {
        GradOp::LinearMap => check_linear(seed, step),
        GradOp::SelfAttention => check_self_attention(seed, step),
        GradOp::BilinearSample => check_bilinear(seed, step),
        GradOp::DeformableAttention => check_deform(seed, step),
        GradOp::Loss3d => check_loss_3d(seed, step),
        GradOp::LossSeg => check_loss_seg(seed, step),
        GradOp::TotalLoss => check_total_loss(seed, step),
    }
}

/// [`grad_check`] with deterministic re-sampling: instances rejected for
/// sitting on a bilinear cell boundary are retried with the next seed.
pub fn grad_check_resampling(
    op: GradOp,
    seed: u64,
    step: f64,
    max_tries: u32,
) -> Result<f64, GradCheckError> {
    let mut last = GradCheckError::NonDifferentiablePoint("no tries".into());
    for k in 0..max_tries as u64 {
        match grad_check(op, seed.wrapping_add(k), step) {
            Ok(err) => return Ok(err),
            Err(e) => last = e,
        }
    }
    Err(last)
}

// ── Per-op harnesses ─────────────────────────────────────────────────────

fn check_linear(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_out) = (6, 4);
    let mut params: Vec<f64> =
        (0..n_in * n_out + n_in + n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = cotangent(&mut rng, n_out);

    let f = |p: &[f64]| -> f64 {
        let (w, rest) = p.split_at(n_in * n_out);
        let (x, b) = rest.split_at(n_in);
        let mut acc = 0.0;
        for o in 0..n_out {
            let mut y = b[o];
            for i in 0..n_in {
                y += x[i] * w[i * n_out + o];
            }
            acc += g[o] * y;
        }
        acc
    };

    // Analytic: dL/dw[i][o] = x[i] g[o]; dL/dx[i] = sum_o w[i][o] g[o];
    // dL/db[o] = g[o].
    let mut analytic = vec![0.0; params.len()];
    {
        let (w, rest) = params.split_at(n_in * n_out);
        let (x, _) = rest.split_at(n_in);
        for i in 0..n_in {
            for o in 0..n_out {
                analytic[i * n_out + o] = x[i] * g[o];
                analytic[n_in * n_out + i] += w[i * n_out + o] * g[o];
            }
        }
        for o in 0..n_out {
            analytic[n_in * n_out + n_in + o] = g[o];
        }
    }
    let numeric = central_diff(&f, &mut params, step);
    Ok(max_rel_error(&analytic, &numeric))
}

fn check_self_attention(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (4, 8);
    let params: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.5..1.5)).collect();
    let g = cotangent(&mut rng, n * c);

    let f = |p: &[f64]| -> f64 {
        let q = Tensor::from_vec(&[n, c], p.to_vec()).unwrap();
        let y = self_attention(&q).unwrap();
        y.data.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    let q = Tensor::from_vec(&[n, c], params.clone()).unwrap();
    let grad_out = Tensor::from_vec(&[n, c], g.clone()).unwrap();
    let analytic = self_attention_backward(&q, &grad_out).unwrap().data;
    let numeric = central_diff(&f, &params, step);
    Ok(max_rel_error(&analytic, &numeric))
}

fn ensure_off_boundary(u: f64, v: f64, guard: f64) -> Result<(), GradCheckError> {
    for (name, x) in [("u", u), ("v", v)] {
        let frac = x - x.floor();
        if frac < guard || frac > 1.0 - guard {
            return Err(GradCheckError::NonDifferentiablePoint(format!(
                "sample {name} = {x} sits within {guard} of a cell boundary"
            )));
        }
    }
    Ok(())
}

fn check_bilinear(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (5, 6, 3);
    let mut params: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Keep the sample interior and clear of integer boundaries.
    let u = rng.random_range(1.0..(w as f64 - 2.0)).floor() + rng.random_range(0.2..0.8);
    let v = rng.random_range(1.0..(h as f64 - 2.0)).floor() + rng.random_range(0.2..0.8);
    ensure_off_boundary(u, v, 32.0 * step)?;
    params.push(u);
    params.push(v);
    let g = cotangent(&mut rng, c);

    let f = |p: &[f64]| -> f64 {
        let f_map = Tensor::from_vec(&[h, w, c], p[..h * w * c].to_vec()).unwrap();
        let out = bilinear_sample(&f_map, p[h * w * c], p[h * w * c + 1]);
        out.iter().zip(&g).map(|(a, b)| a * b).sum()
    };

    let f_map = Tensor::from_vec(&[h, w, c], params[..h * w * c].to_vec()).unwrap();
    let mut grad_f = Tensor::zeros(&[h, w, c]);
    let (gu, gv) = bilinear_sample_backward(&f_map, u, v, &g, &mut grad_f);
    let mut analytic = grad_f.data;
    analytic.push(gu);
    analytic.push(gv);
    let numeric = central_diff(&f, &params, step);
    Ok(max_rel_error(&analytic, &numeric))
}

struct DeformSetup {
    img: ImageSize,
    grid: crate::geometry::IpmGrid,
    shape_q: [usize; 2],
    shape_f: [usize; 3],
    params: DeformAttnParams,
}

fn deform_setup(seed: u64) -> (DeformSetup, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageSize { width: 16, height: 12 };
    let cam = CameraParams::new(14.0, 14.0, 8.0, 6.0, 0.08, 1.5).unwrap();
    let bev = BevGridSpec::new((-6.0, 6.0), (2.0, 50.0), 6, 6).unwrap();
    let grid = build_ipm_grid(&cam, &bev).unwrap();
    let c = 8;
    let attn = DeformAttnParams::seeded(seed ^ 0xdead, c, 2, 4);
    let q: Vec<f64> = (0..36 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f: Vec<f64> = (0..12 * 16 * c).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut flat = Vec::new();
    flat.extend_from_slice(&q);
    flat.extend_from_slice(&f);
    flat.extend_from_slice(&attn.w_offset.data);
    flat.extend_from_slice(&attn.b_offset);
    flat.extend_from_slice(&attn.w_attn.data);
    flat.extend_from_slice(&attn.b_attn);
    flat.extend_from_slice(&attn.w_value.data);
    flat.extend_from_slice(&attn.b_value);
    flat.extend_from_slice(&attn.w_out.data);
    flat.extend_from_slice(&attn.b_out);
    (
        DeformSetup { img, grid, shape_q: [36, c], shape_f: [12, 16, c], params: attn },
        flat,
    )
}

fn deform_unpack(setup: &DeformSetup, flat: &[f64]) -> (Tensor, Tensor, DeformAttnParams) {
    let nq: usize = setup.shape_q.iter().product();
    let nf: usize = setup.shape_f.iter().product();
    let mut pos = 0;
    let mut take = |n: usize| -> Vec<f64> {
        let s = flat[pos..pos + n].to_vec();
        pos += n;
        s
    };
    let q = Tensor::from_vec(&setup.shape_q, take(nq)).unwrap();
    let f = Tensor::from_vec(&setup.shape_f, take(nf)).unwrap();
    let mut p = setup.params.clone();
    p.w_offset = Tensor::from_vec(&p.w_offset.shape.clone(), take(p.w_offset.len())).unwrap();
    p.b_offset = take(p.b_offset.len());
    p.w_attn = Tensor::from_vec(&p.w_attn.shape.clone(), take(p.w_attn.len())).unwrap();
    p.b_attn = take(p.b_attn.len());
    p.w_value = Tensor::from_vec(&p.w_value.shape.clone(), take(p.w_value.len())).unwrap();
    p.b_value = take(p.b_value.len());
    p.w_out = Tensor::from_vec(&p.w_out.shape.clone(), take(p.w_out.len())).unwrap();
    p.b_out = take(p.b_out.len());
    debug_assert_eq!(pos, flat.len());
    (q, f, p)
}

fn check_deform(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let (setup, flat) = deform_setup(seed);
    let (q, f, p) = deform_unpack(&setup, &flat);

    // Reject instances whose sampling points sit close enough to a cell
    // boundary that a finite-difference probe would cross the kink. A
    // parameter wiggle of `step` moves a location by at most roughly
    // step * |q| * level size, so guard with a generous multiple.
    let guard = 32.0 * step;
    for (i, cell) in setup.grid.cells.iter().enumerate() {
        if !cell.valid {
            continue;
        }
        let qi = q.row(i);
        let np = p.heads * p.points_per_query;
        for k in 0..np {
            let mut du = p.b_offset[2 * k];
            let mut dv = p.b_offset[2 * k + 1];
            for ci in 0..p.channels {
                du += qi[ci] * p.w_offset.at2(ci, 2 * k);
                dv += qi[ci] * p.w_offset.at2(ci, 2 * k + 1);
            }
            let su = crate::transformer::pixel_to_feature(cell.u, setup.shape_f[1], setup.img.width)
                + du * setup.shape_f[1] as f64;
            let sv = crate::transformer::pixel_to_feature(cell.v, setup.shape_f[0], setup.img.height)
                + dv * setup.shape_f[0] as f64;
            ensure_off_boundary(su, sv, guard)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let g = cotangent(&mut rng, q.rows() * p.channels);
    let grad_out = Tensor::from_vec(&[q.rows(), p.channels], g.clone()).unwrap();

    let obj = |flat_params: &[f64]| -> f64 {
        let (q, f, p) = deform_unpack(&setup, flat_params);
        let y = deformable_cross_attention(&q, &f, &setup.grid, setup.img, &p).unwrap();
        y.data.iter().zip(&g).map(|(a, b)| a * b).sum()
    };

    let grads = deform_attn_backward(&q, &f, &setup.grid, setup.img, &p, &grad_out).unwrap();
    let mut analytic = Vec::with_capacity(flat.len());
    analytic.extend_from_slice(&grads.q.data);
    analytic.extend_from_slice(&grads.f_fv.data);
    analytic.extend_from_slice(&grads.w_offset.data);
    analytic.extend_from_slice(&grads.b_offset);
    analytic.extend_from_slice(&grads.w_attn.data);
    analytic.extend_from_slice(&grads.b_attn);
    analytic.extend_from_slice(&grads.w_value.data);
    analytic.extend_from_slice(&grads.b_value);
    analytic.extend_from_slice(&grads.w_out.data);
    analytic.extend_from_slice(&grads.b_out);

    let numeric = central_diff(&obj, &flat, step);
    Ok(max_rel_error(&analytic, &numeric))
}

fn pack_prediction(p: &LanePrediction, out: &mut Vec<f64>) {
    out.extend_from_slice(&p.class_logits_3d);
    out.extend_from_slice(&p.class_logits_2d);
    out.extend_from_slice(&p.x_offsets);
    out.extend_from_slice(&p.z_values);
    out.extend_from_slice(&p.vis_bev_logits);
    out.extend_from_slice(&p.u_offsets);
    out.extend_from_slice(&p.vis_fv_logits);
}

fn unpack_prediction(flat: &[f64], pos: &mut usize) -> LanePrediction {
    let take = |n: usize, pos: &mut usize| -> Vec<f64> {
        let s = flat[*pos..*pos + n].to_vec();
        *pos += n;
        s
    };
    LanePrediction {
        class_logits_3d: take(NUM_CLASSES, pos),
        class_logits_2d: take(NUM_CLASSES, pos),
        x_offsets: take(10, pos),
        z_values: take(10, pos),
        vis_bev_logits: take(10, pos),
        u_offsets: take(72, pos),
        vis_fv_logits: take(72, pos),
    }
}

fn check_loss_3d(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tgts = vec![
        LaneTargets {
            class: 3,
            x_offsets: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
            z_values: (0..10).map(|_| rng.random_range(-0.3..0.3)).collect(),
            vis_bev: (0..10).map(|i| i < 7).collect(),
            u_offsets: (0..72).map(|_| rng.random_range(-5.0..5.0)).collect(),
            vis_fv: (0..72).map(|i| i % 3 != 0).collect(),
        },
        LaneTargets::background(),
    ];
    let mut preds = Vec::new();
    for _ in 0..tgts.len() {
        let mut p = LanePrediction::zeros();
        for v in p
            .class_logits_3d
            .iter_mut()
            .chain(p.class_logits_2d.iter_mut())
            .chain(p.vis_bev_logits.iter_mut())
            .chain(p.vis_fv_logits.iter_mut())
        {
            *v = rng.random_range(-2.0..2.0);
        }
        // Keep regressions away from the targets so |.| stays smooth.
        for v in p.x_offsets.iter_mut().chain(p.z_values.iter_mut()).chain(p.u_offsets.iter_mut()) {
            *v = rng.random_range(2.0..4.0);
        }
        preds.push(p);
    }

    let mut flat = Vec::new();
    for p in &preds {
        pack_prediction(p, &mut flat);
    }
    let tgts_c = tgts.clone();
    let n_preds = preds.len();
    let obj = move |f: &[f64]| -> f64 {
        let mut pos = 0;
        let ps: Vec<LanePrediction> =
            (0..n_preds).map(|_| unpack_prediction(f, &mut pos)).collect();
        loss_3d(&ps, &tgts_c).unwrap()
    };

    let grads = loss_3d_backward(&preds, &tgts).unwrap();
    let mut analytic = Vec::new();
    for gp in &grads {
        pack_prediction(gp, &mut analytic);
    }
    let numeric = central_diff(&obj, &flat, step);
    Ok(max_rel_error(&analytic, &numeric))
}

fn check_loss_seg(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (8, 6);
    let tgt = BevSegMap {
        width: w,
        height: h,
        data: (0..w * h).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect(),
    };
    // Parameterize predictions through logits so the probabilities stay
    // in (0, 1) under perturbation.
    let logits: Vec<f64> = (0..w * h).map(|_| rng.random_range(-2.0..2.0)).collect();
    let tgt_c = tgt.clone();
    let obj = move |l: &[f64]| -> f64 {
        let pred = BevSegMap {
            width: w,
            height: h,
            data: l.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        };
        loss_seg(&pred, &tgt_c).unwrap()
    };
    // d(BCE(sigmoid(l), t))/dl = (sigmoid(l) - t) / N.
    let analytic: Vec<f64> = logits
        .iter()
        .zip(&tgt.data)
        .map(|(&l, &t)| (1.0 / (1.0 + (-l).exp()) - t) / (w * h) as f64)
        .collect();
    let numeric = central_diff(&obj, &logits, step);
    Ok(max_rel_error(&analytic, &numeric))
}

fn check_total_loss(seed: u64, step: f64) -> Result<f64, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l2d, l3d, lseg) =
        (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
    let logs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let obj = move |p: &[f64]| -> f64 {
        let w = LossWeights { log_alpha: p[0], log_beta: p[1], log_gamma: p[2] };
        total_loss(l2d, l3d, lseg, &w)
    };
    let w = LossWeights { log_alpha: logs[0], log_beta: logs[1], log_gamma: logs[2] };
    let analytic = total_loss_backward(l2d, l3d, lseg, &w).to_vec();
    let numeric = central_diff(&obj, &logs, step);
    Ok(max_rel_error(&analytic, &numeric))
}
