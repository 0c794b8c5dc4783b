//! Front-view to BEV feature transformation.
//!
//! Per pyramid level: a learned BEV query runs through plain softmax
//! self-attention, a small residual feed-forward, and IPM-seeded
//! deformable cross-attention against the front-view features. Every
//! differentiable op here has a hand-written backward pass, verified by
//! central finite differences in [`crate::gradcheck`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{build_ipm_grid, BevGridSpec, CameraParams, ImageSize, IpmGrid};
use crate::tensor::{softmax, softmax_rows, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum TransformerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing or incompatible IPM grid: {0}")]
    MissingGrid(String),
}

impl From<crate::tensor::TensorError> for TransformerError {
    fn from(e: crate::tensor::TensorError) -> Self {
        match e {
            crate::tensor::TensorError::ShapeMismatch(m) => TransformerError::ShapeMismatch(m),
        }
    }
}

// ── Self-attention (query attends itself) ───────────────────────────────

/// softmax(Q K^T / sqrt(d_k)) V with K = Q = V, the BEV query itself.
pub fn self_attention(q: &Tensor) -> Result<Tensor, TransformerError> {
    if q.rank() != 2 {
        return Err(TransformerError::ShapeMismatch(format!(
            "self_attention wants [N, C], got {:?}",
            q.shape
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul(&q.transpose())?.scale(scale);
    let attn = softmax_rows(&scores);
    Ok(attn.matmul(q)?)
}

/// Gradient of a scalar objective through [`self_attention`] with
/// respect to the query, given the objective's gradient at the output.
pub fn self_attention_backward(q: &Tensor, grad_out: &Tensor) -> Result<Tensor, TransformerError> {
    if q.shape != grad_out.shape {
        return Err(TransformerError::ShapeMismatch(format!(
            "grad shape {:?} vs query {:?}",
            grad_out.shape, q.shape
        )));
    }
    let n = q.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul(&q.transpose())?.scale(scale);
    let attn = softmax_rows(&scores);

    // Y = A * Q, A = softmax(S), S = Q Q^T * scale.
    let grad_attn = grad_out.matmul(&q.transpose())?;
    let mut grad_q = attn.transpose().matmul(grad_out)?;

    // Softmax rows: dS_ij = A_ij * (dA_ij - sum_k dA_ik A_ik).
    let mut grad_scores = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let mut dot = 0.0;
        for k in 0..n {
            dot += grad_attn.at2(i, k) * attn.at2(i, k);
        }
        for j in 0..n {
            *grad_scores.at2_mut(i, j) = attn.at2(i, j) * (grad_attn.at2(i, j) - dot);
        }
    }
    // S = scale * Q Q^T: dQ += scale * (dS + dS^T) Q.
    let sym = grad_scores.add(&grad_scores.transpose())?;
    grad_q = grad_q.add(&sym.matmul(q)?.scale(scale))?;
    Ok(grad_q)
}

// ── Bilinear sampling ────────────────────────────────────────────────────

/// Bilinear interpolation of a [H, W, C] feature map at fractional
/// coordinates (u = column, v = row, integer coordinates at cell
/// centers). Out-of-bounds contributions are zero.
pub fn bilinear_sample(f: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let (h, w, c) = (f.shape[0] as i64, f.shape[1] as i64, f.shape[2]);
    let u0 = u.floor();
    let v0 = v.floor();
    let du = u - u0;
    let dv = v - v0;
    let mut out = vec![0.0; c];
    let corners = [
        (v0 as i64, u0 as i64, (1.0 - du) * (1.0 - dv)),
        (v0 as i64, u0 as i64 + 1, du * (1.0 - dv)),
        (v0 as i64 + 1, u0 as i64, (1.0 - du) * dv),
        (v0 as i64 + 1, u0 as i64 + 1, du * dv),
    ];
    for (row, col, weight) in corners {
        if row >= 0 && row < h && col >= 0 && col < w && weight != 0.0 {
            let base = ((row * w + col) as usize) * c;
            for ch in 0..c {
                out[ch] += weight * f.data[base + ch];
            }
        }
    }
    out
}

/// Backward of [`bilinear_sample`]: scatters the feature gradient into
/// `grad_f` and returns the gradient with respect to (u, v).
pub fn bilinear_sample_backward(
    f: &Tensor,
    u: f64,
    v: f64,
    grad_out: &[f64],
    grad_f: &mut Tensor,
) -> (f64, f64) {
    let (h, w, c) = (f.shape[0] as i64, f.shape[1] as i64, f.shape[2]);
    let u0 = u.floor();
    let v0 = v.floor();
    let du = u - u0;
    let dv = v - v0;
    // Corner weights and their derivatives with respect to (du, dv).
    let corners = [
        (v0 as i64, u0 as i64, (1.0 - du) * (1.0 - dv), -(1.0 - dv), -(1.0 - du)),
        (v0 as i64, u0 as i64 + 1, du * (1.0 - dv), 1.0 - dv, -du),
        (v0 as i64 + 1, u0 as i64, (1.0 - du) * dv, -dv, 1.0 - du),
        (v0 as i64 + 1, u0 as i64 + 1, du * dv, dv, du),
    ];
    let mut grad_u = 0.0;
    let mut grad_v = 0.0;
    for (row, col, weight, dw_du, dw_dv) in corners {
        if row >= 0 && row < h && col >= 0 && col < w {
            let base = ((row * w + col) as usize) * c;
            let mut dot = 0.0;
            for ch in 0..c {
                dot += grad_out[ch] * f.data[base + ch];
                grad_f.data[base + ch] += weight * grad_out[ch];
            }
            grad_u += dw_du * dot;
            grad_v += dw_dv * dot;
        }
    }
    (grad_u, grad_v)
}

// ── Deformable cross-attention ──────────────────────────────────────────

/// Weights of one deformable cross-attention unit.
///
/// Linear maps are stored `[in, out]`; predicted offsets are in
/// level-normalized units (a raw offset of 1 spans the whole feature
/// map) and are scaled by the level size before sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformAttnParams {
    pub heads: usize,
    pub points_per_query: usize,
    pub channels: usize,
    /// Whether this level participates in the forward pass.
    pub active: bool,
    pub w_offset: Tensor,
    pub b_offset: Vec<f64>,
    pub w_attn: Tensor,
    pub b_attn: Vec<f64>,
    pub w_value: Tensor,
    pub b_value: Vec<f64>,
    pub w_out: Tensor,
    pub b_out: Vec<f64>,
}

impl DeformAttnParams {
    /// Pure IPM baseline: one point, zero offsets, identity value and
    /// output maps. Output equals the bilinear sample at the reference.
    pub fn ipm_identity(channels: usize) -> Self {
        let mut w_value = Tensor::zeros(&[channels, channels]);
        let mut w_out = Tensor::zeros(&[channels, channels]);
        for i in 0..channels {
            *w_value.at2_mut(i, i) = 1.0;
            *w_out.at2_mut(i, i) = 1.0;
        }
        Self {
            heads: 1,
            points_per_query: 1,
            channels,
            active: true,
            w_offset: Tensor::zeros(&[channels, 2]),
            b_offset: vec![0.0; 2],
            w_attn: Tensor::zeros(&[channels, 1]),
            b_attn: vec![0.0; 1],
            w_value,
            b_value: vec![0.0; channels],
            w_out,
            b_out: vec![0.0; channels],
        }
    }

    /// Deterministic small random weights, zero biases.
    pub fn seeded(seed: u64, channels: usize, heads: usize, points_per_query: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let np = heads * points_per_query;
        let mut rand_tensor = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        Self {
            heads,
            points_per_query,
            channels,
            active: true,
            w_offset: rand_tensor(&[channels, np * 2]).scale(0.1),
            b_offset: vec![0.0; np * 2],
            w_attn: rand_tensor(&[channels, np]),
            b_attn: vec![0.0; np],
            w_value: rand_tensor(&[channels, channels]),
            b_value: vec![0.0; channels],
            w_out: rand_tensor(&[channels, channels]),
            b_out: vec![0.0; channels],
        }
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        let c = self.channels;
        let np = self.heads * self.points_per_query;
        if self.heads == 0 || c % self.heads != 0 {
            return Err(TransformerError::ShapeMismatch(format!(
                "channels {c} not divisible by heads {}",
                self.heads
            )));
        }
        if self.points_per_query == 0 {
            return Err(TransformerError::ShapeMismatch("need at least 1 point per query".into()));
        }
        let checks = [
            (self.w_offset.shape.as_slice(), [c, np * 2], self.b_offset.len(), np * 2),
            (self.w_attn.shape.as_slice(), [c, np], self.b_attn.len(), np),
            (self.w_value.shape.as_slice(), [c, c], self.b_value.len(), c),
            (self.w_out.shape.as_slice(), [c, c], self.b_out.len(), c),
        ];
        for (shape, want, blen, bwant) in checks {
            if shape != want || blen != bwant {
                return Err(TransformerError::ShapeMismatch(format!(
                    "weight shape {shape:?} (bias {blen}) vs expected {want:?} (bias {bwant})"
                )));
            }
        }
        Ok(())
    }
}

// y[out] = sum_in x[in] * w[in][out] + b[out]
fn linear(x: &[f64], w: &Tensor, b: &[f64]) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), n_in);
    let mut y = b.to_vec();
    for i in 0..n_in {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        let row = w.row(i);
        for o in 0..n_out {
            y[o] += xi * row[o];
        }
    }
    y
}

// Backward of `linear`: accumulates into grad_w/grad_b, returns grad_x.
fn linear_backward(
    x: &[f64],
    w: &Tensor,
    grad_y: &[f64],
    grad_w: &mut Tensor,
    grad_b: &mut [f64],
) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    let mut grad_x = vec![0.0; n_in];
    for o in 0..n_out {
        grad_b[o] += grad_y[o];
    }
    for i in 0..n_in {
        let row = w.row(i);
        let mut acc = 0.0;
        for o in 0..n_out {
            acc += row[o] * grad_y[o];
            grad_w.data[i * n_out + o] += x[i] * grad_y[o];
        }
        grad_x[i] = acc;
    }
    grad_x
}

/// Fractional feature-map coordinate of an image pixel coordinate, for a
/// feature map covering the full image.
pub fn pixel_to_feature(px: f64, feat_cells: usize, img_px: u32) -> f64 {
    (px + 0.5) * feat_cells as f64 / img_px as f64 - 0.5
}

/// Geometry-only baseline: bilinearly warp front-view features to the
/// BEV grid through the IPM table. Invalid cells stay zero.
pub fn ipm_warp(f_fv: &Tensor, grid: &IpmGrid, img: ImageSize) -> Result<Tensor, TransformerError> {
    if f_fv.rank() != 3 {
        return Err(TransformerError::ShapeMismatch(format!(
            "features want [H, W, C], got {:?}",
            f_fv.shape
        )));
    }
    let c = f_fv.shape[2];
    let n = grid.cells.len();
    let mut out = Tensor::zeros(&[n, c]);
    for (i, cell) in grid.cells.iter().enumerate() {
        if !cell.valid {
            continue;
        }
        let uf = pixel_to_feature(cell.u, f_fv.shape[1], img.width);
        let vf = pixel_to_feature(cell.v, f_fv.shape[0], img.height);
        let sample = bilinear_sample(f_fv, uf, vf);
        out.data[i * c..(i + 1) * c].copy_from_slice(&sample);
    }
    Ok(out)
}

/// Deformable cross-attention: per BEV query, predict sampling offsets
/// and weights around the IPM reference point, gather value features and
/// project. Invalid-flagged cells output zeros.
pub fn deformable_cross_attention(
    q: &Tensor,
    f_fv: &Tensor,
    grid: &IpmGrid,
    img: ImageSize,
    params: &DeformAttnParams,
) -> Result<Tensor, TransformerError> {
    params.validate()?;
    if q.rank() != 2 || q.cols() != params.channels {
        return Err(TransformerError::ShapeMismatch(format!(
            "query shape {:?} vs channels {}",
            q.shape, params.channels
        )));
    }
    if f_fv.rank() != 3 || f_fv.shape[2] != params.channels {
        return Err(TransformerError::ShapeMismatch(format!(
            "feature shape {:?} vs channels {}",
            f_fv.shape, params.channels
        )));
    }
    if grid.cells.len() != q.rows() {
        return Err(TransformerError::MissingGrid(format!(
            "grid has {} cells but query has {} rows",
            grid.cells.len(),
            q.rows()
        )));
    }
    let c = params.channels;
    let ch = c / params.heads;
    let (hf, wf) = (f_fv.shape[0], f_fv.shape[1]);

    // Shared value map over the feature plane.
    let mut value = Tensor::zeros(&[hf, wf, c]);
    for pix in 0..hf * wf {
        let v = linear(&f_fv.data[pix * c..(pix + 1) * c], &params.w_value, &params.b_value);
        value.data[pix * c..(pix + 1) * c].copy_from_slice(&v);
    }

    let mut out = Tensor::zeros(&[q.rows(), c]);
    for (i, cell) in grid.cells.iter().enumerate() {
        if !cell.valid {
            continue;
        }
        let qi = q.row(i);
        let offsets = linear(qi, &params.w_offset, &params.b_offset);
        let logits = linear(qi, &params.w_attn, &params.b_attn);
        let ref_u = pixel_to_feature(cell.u, wf, img.width);
        let ref_v = pixel_to_feature(cell.v, hf, img.height);

        let mut concat = vec![0.0; c];
        for head in 0..params.heads {
            let weights =
                softmax(&logits[head * params.points_per_query..(head + 1) * params.points_per_query]);
            for p in 0..params.points_per_query {
                let oi = (head * params.points_per_query + p) * 2;
                let su = ref_u + offsets[oi] * wf as f64;
                let sv = ref_v + offsets[oi + 1] * hf as f64;
                let sample = bilinear_sample(&value, su, sv);
                let w = weights[p];
                for k in 0..ch {
                    concat[head * ch + k] += w * sample[head * ch + k];
                }
            }
        }
        let y = linear(&concat, &params.w_out, &params.b_out);
        out.data[i * c..(i + 1) * c].copy_from_slice(&y);
    }
    Ok(out)
}

/// Gradients of every deformable-attention input and weight.
#[derive(Debug, Clone)]
pub struct DeformAttnGrads {
    pub q: Tensor,
    pub f_fv: Tensor,
    pub w_offset: Tensor,
    pub b_offset: Vec<f64>,
    pub w_attn: Tensor,
    pub b_attn: Vec<f64>,
    pub w_value: Tensor,
    pub b_value: Vec<f64>,
    pub w_out: Tensor,
    pub b_out: Vec<f64>,
}

/// Hand-written backward pass of [`deformable_cross_attention`].
pub fn deform_attn_backward(
    q: &Tensor,
    f_fv: &Tensor,
    grid: &IpmGrid,
    img: ImageSize,
    params: &DeformAttnParams,
    grad_out: &Tensor,
) -> Result<DeformAttnGrads, TransformerError> {
    params.validate()?;
    if grad_out.shape != [q.rows(), params.channels] {
        return Err(TransformerError::ShapeMismatch(format!(
            "grad_out shape {:?}",
            grad_out.shape
        )));
    }
    let c = params.channels;
    let ch = c / params.heads;
    let np = params.points_per_query;
    let (hf, wf) = (f_fv.shape[0], f_fv.shape[1]);

    let mut value = Tensor::zeros(&[hf, wf, c]);
    for pix in 0..hf * wf {
        let v = linear(&f_fv.data[pix * c..(pix + 1) * c], &params.w_value, &params.b_value);
        value.data[pix * c..(pix + 1) * c].copy_from_slice(&v);
    }

    let mut g = DeformAttnGrads {
        q: Tensor::zeros(&q.shape),
        f_fv: Tensor::zeros(&f_fv.shape),
        w_offset: Tensor::zeros(&params.w_offset.shape),
        b_offset: vec![0.0; params.b_offset.len()],
        w_attn: Tensor::zeros(&params.w_attn.shape),
        b_attn: vec![0.0; params.b_attn.len()],
        w_value: Tensor::zeros(&params.w_value.shape),
        b_value: vec![0.0; params.b_value.len()],
        w_out: Tensor::zeros(&params.w_out.shape),
        b_out: vec![0.0; params.b_out.len()],
    };
    let mut grad_value = Tensor::zeros(&[hf, wf, c]);

    for (i, cell) in grid.cells.iter().enumerate() {
        if !cell.valid {
            continue;
        }
        let qi = q.row(i);
        let gy = grad_out.row(i);
        let offsets = linear(qi, &params.w_offset, &params.b_offset);
        let logits = linear(qi, &params.w_attn, &params.b_attn);
        let ref_u = pixel_to_feature(cell.u, wf, img.width);
        let ref_v = pixel_to_feature(cell.v, hf, img.height);

        // Recompute forward intermediates for this query.
        let mut samples = vec![vec![0.0; c]; params.heads * np];
        let mut weights = vec![0.0; params.heads * np];
        let mut concat = vec![0.0; c];
        for head in 0..params.heads {
            let w = softmax(&logits[head * np..(head + 1) * np]);
            for p in 0..np {
                let oi = (head * np + p) * 2;
                let su = ref_u + offsets[oi] * wf as f64;
                let sv = ref_v + offsets[oi + 1] * hf as f64;
                samples[head * np + p] = bilinear_sample(&value, su, sv);
                weights[head * np + p] = w[p];
                for k in 0..ch {
                    concat[head * ch + k] += w[p] * samples[head * np + p][head * ch + k];
                }
            }
        }

        // Output projection.
        let grad_concat = linear_backward(&concat, &params.w_out, gy, &mut g.w_out, &mut g.b_out);

        // Per head: attention weights and sampled values.
        let mut grad_logits = vec![0.0; params.heads * np];
        let mut grad_offsets = vec![0.0; params.heads * np * 2];
        for head in 0..params.heads {
            let mut grad_w = vec![0.0; np];
            for p in 0..np {
                let sample = &samples[head * np + p];
                let mut gsample = vec![0.0; c];
                let w = weights[head * np + p];
                for k in 0..ch {
                    let gc = grad_concat[head * ch + k];
                    grad_w[p] += gc * sample[head * ch + k];
                    gsample[head * ch + k] = w * gc;
                }
                let oi = (head * np + p) * 2;
                let su = ref_u + offsets[oi] * wf as f64;
                let sv = ref_v + offsets[oi + 1] * hf as f64;
                let (gu, gv) = bilinear_sample_backward(&value, su, sv, &gsample, &mut grad_value);
                grad_offsets[oi] = gu * wf as f64;
                grad_offsets[oi + 1] = gv * hf as f64;
            }
            // Softmax over the head's points.
            let w: Vec<f64> = (0..np).map(|p| weights[head * np + p]).collect();
            let dot: f64 = (0..np).map(|p| grad_w[p] * w[p]).sum();
            for p in 0..np {
                grad_logits[head * np + p] = w[p] * (grad_w[p] - dot);
            }
        }

        let gq1 = linear_backward(qi, &params.w_attn, &grad_logits, &mut g.w_attn, &mut g.b_attn);
        let gq2 =
            linear_backward(qi, &params.w_offset, &grad_offsets, &mut g.w_offset, &mut g.b_offset);
        for k in 0..c {
            g.q.data[i * c + k] += gq1[k] + gq2[k];
        }
    }

    // Value map backward over the whole plane.
    for pix in 0..hf * wf {
        let gv: Vec<f64> = grad_value.data[pix * c..(pix + 1) * c].to_vec();
        let gx = linear_backward(
            &f_fv.data[pix * c..(pix + 1) * c],
            &params.w_value,
            &gv,
            &mut g.w_value,
            &mut g.b_value,
        );
        for k in 0..c {
            g.f_fv.data[pix * c + k] += gx[k];
        }
    }
    Ok(g)
}

// ── Pyramid forward ─────────────────────────────────────────────────────

/// Multi-scale front-view features, one [H, W, C] tensor per level.
/// The reference full-scale shapes are 180x240, 90x120, 45x60, 22x30;
/// desk-scale shapes are whatever the tensors carry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self, TransformerError> {
        if levels.is_empty() {
            return Err(TransformerError::ShapeMismatch("pyramid needs at least one level".into()));
        }
        let c = levels[0].shape[2];
        for (i, level) in levels.iter().enumerate() {
            if level.rank() != 3 {
                return Err(TransformerError::ShapeMismatch(format!(
                    "level {i} wants [H, W, C], got {:?}",
                    level.shape
                )));
            }
            if level.shape[2] != c {
                return Err(TransformerError::ShapeMismatch(format!(
                    "level {i} has {} channels, expected {c}",
                    level.shape[2]
                )));
            }
            if i > 0 {
                let prev = &levels[i - 1].shape;
                for d in 0..2 {
                    let want = prev[d] / 2;
                    if level.shape[d] + 1 < want || level.shape[d] > want + 1 {
                        return Err(TransformerError::ShapeMismatch(format!(
                            "level {i} dim {d} = {} does not halve {} from the previous level",
                            level.shape[d], prev[d]
                        )));
                    }
                }
            }
        }
        Ok(Self { levels })
    }

    /// Deterministic random pyramid for demos and tests.
    pub fn seeded(seed: u64, shapes: &[(usize, usize)], channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = shapes
            .iter()
            .map(|&(h, w)| {
                let data: Vec<f64> =
                    (0..h * w * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::from_vec(&[h, w, channels], data).unwrap()
            })
            .collect();
        Self { levels }
    }
}

/// Halve the BEV grid per level, mirroring the feature pyramid.
pub fn bev_pyramid_specs(base: &BevGridSpec, levels: usize) -> Vec<BevGridSpec> {
    (0..levels)
        .map(|l| BevGridSpec {
            width_cells: (base.width_cells >> l).max(2),
            height_cells: (base.height_cells >> l).max(2),
            ..*base
        })
        .collect()
}

/// Per-level weights: the learned BEV query, the residual feed-forward
/// producing the cross-attention query, and the deformable unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub bev: BevGridSpec,
    pub query: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Vec<f64>,
    pub ffn_w2: Tensor,
    pub ffn_b2: Vec<f64>,
    pub attn: DeformAttnParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub img: ImageSize,
    pub levels: Vec<LevelParams>,
}

impl TransformerParams {
    pub fn seeded(
        seed: u64,
        img: ImageSize,
        base_bev: &BevGridSpec,
        n_levels: usize,
        channels: usize,
        heads: usize,
        points_per_query: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = bev_pyramid_specs(base_bev, n_levels);
        let levels = specs
            .into_iter()
            .enumerate()
            .map(|(l, bev)| {
                let n = bev.width_cells * bev.height_cells;
                let qdata: Vec<f64> =
                    (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
                let hidden = channels * 2;
                let w1: Vec<f64> =
                    (0..channels * hidden).map(|_| rng.random_range(-0.3..0.3)).collect();
                let w2: Vec<f64> =
                    (0..hidden * channels).map(|_| rng.random_range(-0.3..0.3)).collect();
                LevelParams {
                    bev,
                    query: Tensor::from_vec(&[n, channels], qdata).unwrap(),
                    ffn_w1: Tensor::from_vec(&[channels, hidden], w1).unwrap(),
                    ffn_b1: vec![0.0; hidden],
                    ffn_w2: Tensor::from_vec(&[hidden, channels], w2).unwrap(),
                    ffn_b2: vec![0.0; channels],
                    attn: DeformAttnParams::seeded(
                        seed ^ (l as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15),
                        channels,
                        heads,
                        points_per_query,
                    ),
                }
            })
            .collect();
        Self { img, levels }
    }
}

fn ffn_residual(q: &Tensor, level: &LevelParams) -> Tensor {
    let n = q.rows();
    let c = q.cols();
    let mut out = q.clone();
    for i in 0..n {
        let h1: Vec<f64> = linear(q.row(i), &level.ffn_w1, &level.ffn_b1)
            .into_iter()
            .map(|x| x.max(0.0))
            .collect();
        let h2 = linear(&h1, &level.ffn_w2, &level.ffn_b2);
        for k in 0..c {
            out.data[i * c + k] += h2[k];
        }
    }
    out
}

/// One BEV feature map per pyramid level, shaped [H_bev, W_bev, C].
pub fn forward_pyramid(
    pyr: &FeaturePyramid,
    cam: &CameraParams,
    params: &TransformerParams,
) -> Result<Vec<Tensor>, TransformerError> {
    if pyr.levels.len() != params.levels.len() {
        return Err(TransformerError::ShapeMismatch(format!(
            "pyramid has {} levels, params {}",
            pyr.levels.len(),
            params.levels.len()
        )));
    }
    let mut out = Vec::with_capacity(pyr.levels.len());
    for (feat, level) in pyr.levels.iter().zip(&params.levels) {
        let grid = build_ipm_grid(cam, &level.bev)
            .map_err(|e| TransformerError::MissingGrid(e.to_string()))?;
        let (hb, wb, c) = (level.bev.height_cells, level.bev.width_cells, level.attn.channels);
        if !level.attn.active {
            out.push(Tensor::zeros(&[hb, wb, c]));
            continue;
        }
        let q_bev = self_attention(&level.query)?;
        let q_cross = ffn_residual(&q_bev, level);
        let flat = deformable_cross_attention(&q_cross, feat, &grid, params.img, &level.attn)?;
        out.push(Tensor::from_vec(&[hb, wb, c], flat.data)?);
    }
    Ok(out)
}

/// Batch wrapper; items are independent.
pub fn forward_batch(
    batch: &[FeaturePyramid],
    cam: &CameraParams,
    params: &TransformerParams,
) -> Result<Vec<Vec<Tensor>>, TransformerError> {
    batch.iter().map(|pyr| forward_pyramid(pyr, cam, params)).collect()
}

// ── Weight files ─────────────────────────────────────────────────────────

// Scalar structure saved beside the per-weight tensor files.
#[derive(serde::Serialize, serde::Deserialize)]
struct ParamsMeta {
    img: ImageSize,
    levels: Vec<LevelMeta>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LevelMeta {
    bev: BevGridSpec,
    heads: usize,
    points_per_query: usize,
    channels: usize,
    active: bool,
}

fn level_tensors(level: &LevelParams) -> Vec<(&'static str, Tensor)> {
    let vec_t = |v: &[f64]| Tensor { shape: vec![v.len()], data: v.to_vec() };
    vec![
        ("query", level.query.clone()),
        ("ffn_w1", level.ffn_w1.clone()),
        ("ffn_b1", vec_t(&level.ffn_b1)),
        ("ffn_w2", level.ffn_w2.clone()),
        ("ffn_b2", vec_t(&level.ffn_b2)),
        ("w_offset", level.attn.w_offset.clone()),
        ("b_offset", vec_t(&level.attn.b_offset)),
        ("w_attn", level.attn.w_attn.clone()),
        ("b_attn", vec_t(&level.attn.b_attn)),
        ("w_value", level.attn.w_value.clone()),
        ("b_value", vec_t(&level.attn.b_value)),
        ("w_out", level.attn.w_out.clone()),
        ("b_out", vec_t(&level.attn.b_out)),
    ]
}

/// Save every weight as a tensor file (f32 payloads) plus a meta.json
/// carrying the scalar structure.
pub fn save_params(params: &TransformerParams, dir: &std::path::Path) -> Result<(), crate::io::IoError> {
    std::fs::create_dir_all(dir)?;
    let meta = ParamsMeta {
        img: params.img,
        levels: params
            .levels
            .iter()
            .map(|l| LevelMeta {
                bev: l.bev,
                heads: l.attn.heads,
                points_per_query: l.attn.points_per_query,
                channels: l.attn.channels,
                active: l.attn.active,
            })
            .collect(),
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| crate::io::IoError::Validation(e.to_string()))?;
    meta_json.push('\n');
    std::fs::write(dir.join("meta.json"), meta_json)?;
    for (li, level) in params.levels.iter().enumerate() {
        for (name, tensor) in level_tensors(level) {
            let role = format!("level{li}.{name}");
            crate::io::write_tensor(&tensor, &role, &dir.join(format!("{role}.tensor")))?;
        }
    }
    Ok(())
}

/// Load weights written by [`save_params`]. Values pass through the f32
/// file payload, so a save/load pair after any prior load is lossless.
pub fn load_params(dir: &std::path::Path) -> Result<TransformerParams, crate::io::IoError> {
    let meta: ParamsMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)
        .map_err(|e| crate::io::IoError::Validation(e.to_string()))?;
    let mut levels = Vec::with_capacity(meta.levels.len());
    for (li, lm) in meta.levels.iter().enumerate() {
        let load = |name: &str| -> Result<Tensor, crate::io::IoError> {
            let role = format!("level{li}.{name}");
            let (tensor, stored_role) = crate::io::read_tensor(&dir.join(format!("{role}.tensor")))?;
            if stored_role != role {
                return Err(crate::io::IoError::Validation(format!(
                    "tensor role {stored_role:?} does not match file {role:?}"
                )));
            }
            Ok(tensor)
        };
        let attn = DeformAttnParams {
            heads: lm.heads,
            points_per_query: lm.points_per_query,
            channels: lm.channels,
            active: lm.active,
            w_offset: load("w_offset")?,
            b_offset: load("b_offset")?.data,
            w_attn: load("w_attn")?,
            b_attn: load("b_attn")?.data,
            w_value: load("w_value")?,
            b_value: load("b_value")?.data,
            w_out: load("w_out")?,
            b_out: load("b_out")?.data,
        };
        attn.validate().map_err(|e| crate::io::IoError::Validation(e.to_string()))?;
        levels.push(LevelParams {
            bev: lm.bev,
            query: load("query")?,
            ffn_w1: load("ffn_w1")?,
            ffn_b1: load("ffn_b1")?.data,
            ffn_w2: load("ffn_w2")?,
            ffn_b2: load("ffn_b2")?.data,
            attn,
        });
    }
    Ok(TransformerParams { img: meta.img, levels })
}
