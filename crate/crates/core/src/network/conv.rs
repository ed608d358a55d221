//! Low-level batched primitives for the backbone: same-padding convolution
//! via im2col + GEMM, 2x2 max pooling, global average pooling.
//!
//! Feature maps are stored channel-last as flat `(batch * height * width) x
//! channels` buffers with rows in (sample, y, x) lexicographic order; all
//! kernels write into caller-owned buffers so the training loop can reuse
//! its allocations across steps.

use crate::num::Scalar;
use std::any::Any;
use std::cell::RefCell;

/// A channel-last feature-map batch over a reusable flat buffer.
#[derive(Debug, Clone, Default)]
pub struct Feature<F> {
    pub data: Vec<F>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl<F: Scalar> Feature<F> {
    pub fn rows(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Resize for the given shape; contents are unspecified afterwards.
    pub fn ensure(&mut self, batch: usize, height: usize, width: usize, channels: usize) {
        self.batch = batch;
        self.height = height;
        self.width = width;
        self.channels = channels;
        let len = batch * height * width * channels;
        if self.data.len() != len {
            self.data.resize(len, F::zero());
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(F::zero());
    }
}

/// Per-thread scratch for im2col / col2im buffers.
#[derive(Default)]
pub struct ConvScratch<F> {
    pub cols: Vec<F>,
    pub grad_cols: Vec<F>,
}

thread_local! {
    static SCRATCH: RefCell<Option<Box<dyn Any>>> = const { RefCell::new(None) };
}

/// Run with this thread's reusable scratch for element type `F`.
pub fn with_scratch<F: Scalar, R>(f: impl FnOnce(&mut ConvScratch<F>) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut slot = cell.borrow_mut();
        let needs_new = slot
            .as_ref()
            .is_none_or(|b| !b.is::<ConvScratch<F>>());
        if needs_new {
            *slot = Some(Box::new(ConvScratch::<F>::default()));
        }
        f(slot
            .as_mut()
            .expect("scratch installed")
            .downcast_mut::<ConvScratch<F>>()
            .expect("scratch type"))
    })
}

/// Unfold k x k same-padded neighborhoods into rows of `cols`.
///
/// Column `(dy*k + dx)*c + ch` of row `(b, y, x)` holds
/// `x[(b, y+dy-pad, x+dx-pad), ch]`, zero outside the frame.
pub fn im2col_into<F: Scalar>(x: &Feature<F>, k: usize, pad: usize, cols: &mut Vec<F>) {
    let (b, h, w, c) = (x.batch, x.height, x.width, x.channels);
    let kkc = k * k * c;
    let rows = b * h * w;
    if cols.len() != rows * kkc {
        cols.resize(rows * kkc, F::zero());
    }
    let src = &x.data;
    for dy in 0..k {
        let oy = dy as isize - pad as isize;
        for dx in 0..k {
            let ox = dx as isize - pad as isize;
            let col0 = (dy * k + dx) * c;
            let x_lo = (-ox).max(0) as usize;
            let x_hi = ((w as isize - ox).max(0) as usize).min(w);
            for bi in 0..b {
                for y in 0..h {
                    let sy = y as isize + oy;
                    let dst_row0 = ((bi * h + y) * w) * kkc + col0;
                    if sy < 0 || sy >= h as isize {
                        for xo in 0..w {
                            cols[dst_row0 + xo * kkc..dst_row0 + xo * kkc + c].fill(F::zero());
                        }
                        continue;
                    }
                    let src_row0 = ((bi * h + sy as usize) * w) * c;
                    for xo in 0..x_lo {
                        cols[dst_row0 + xo * kkc..dst_row0 + xo * kkc + c].fill(F::zero());
                    }
                    if c == 1 {
                        for xo in x_lo..x_hi {
                            cols[dst_row0 + xo * kkc] =
                                src[src_row0 + (xo as isize + ox) as usize];
                        }
                    } else {
                        for xo in x_lo..x_hi {
                            let s0 = src_row0 + (xo as isize + ox) as usize * c;
                            cols[dst_row0 + xo * kkc..dst_row0 + xo * kkc + c]
                                .copy_from_slice(&src[s0..s0 + c]);
                        }
                    }
                    for xo in x_hi..w {
                        cols[dst_row0 + xo * kkc..dst_row0 + xo * kkc + c].fill(F::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-add the adjoint of `im2col` back onto an input-shaped gradient.
/// `grad_x` must be pre-zeroed.
pub fn col2im_add<F: Scalar>(grad_cols: &[F], grad_x: &mut Feature<F>, k: usize, pad: usize) {
    let (b, h, w, c) = (grad_x.batch, grad_x.height, grad_x.width, grad_x.channels);
    let kkc = k * k * c;
    let dst = &mut grad_x.data;
    for dy in 0..k {
        let oy = dy as isize - pad as isize;
        for dx in 0..k {
            let ox = dx as isize - pad as isize;
            let col0 = (dy * k + dx) * c;
            let x_lo = (-ox).max(0) as usize;
            let x_hi = ((w as isize - ox).max(0) as usize).min(w);
            for bi in 0..b {
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row0 = ((bi * h + y) * w) * kkc + col0;
                    let dst_row0 = ((bi * h + sy as usize) * w) * c;
                    for xo in x_lo..x_hi {
                        let d0 = dst_row0 + (xo as isize + ox) as usize * c;
                        let s0 = src_row0 + xo * kkc;
                        let d = &mut dst[d0..d0 + c];
                        let g = &grad_cols[s0..s0 + c];
                        for (a, &b) in d.iter_mut().zip(g.iter()) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padding convolution into `out`; weight is `(c_out, k*k*c_in)`
/// row-major. Bias and activation are applied by the caller.
pub fn conv_forward_into<F: Scalar>(
    x: &Feature<F>,
    weight: &[F],
    c_out: usize,
    k: usize,
    cols: &mut Vec<F>,
    out: &mut Feature<F>,
) {
    let pad = k / 2;
    im2col_into(x, k, pad, cols);
    let rows = x.rows();
    let kkc = k * k * x.channels;
    out.ensure(x.batch, x.height, x.width, c_out);
    unsafe {
        // out = cols . weight^T
        F::gemm(
            rows,
            kkc,
            c_out,
            F::one(),
            cols.as_ptr(),
            kkc as isize,
            1,
            weight.as_ptr(),
            1,
            kkc as isize,
            F::zero(),
            out.data.as_mut_ptr(),
            c_out as isize,
            1,
        );
    }
}

/// Fused bias add + ReLU over a channel-last map.
pub fn bias_relu_inplace<F: Scalar>(x: &mut Feature<F>, bias: &[F]) {
    let c = x.channels;
    for row in x.data.chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.iter()) {
            *v = (*v + b).max(F::zero());
        }
    }
}

/// Mask a gradient by the stored post-ReLU activation.
pub fn relu_backward_inplace<F: Scalar>(grad: &mut [F], post_act: &[F]) {
    for (g, &a) in grad.iter_mut().zip(post_act.iter()) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Convolution gradients. `grad_w`/`grad_bias` are fully overwritten; the
/// input gradient (skipped for the first layer) is zeroed then scattered.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_into<F: Scalar>(
    x: &Feature<F>,
    weight: &[F],
    grad_out: &Feature<F>,
    k: usize,
    scratch: &mut ConvScratch<F>,
    grad_w: &mut [F],
    grad_bias: &mut [F],
    grad_x: Option<&mut Feature<F>>,
) {
    let pad = k / 2;
    let rows = x.rows();
    let kkc = k * k * x.channels;
    let c_out = grad_out.channels;
    im2col_into(x, k, pad, &mut scratch.cols);

    unsafe {
        // grad_w = grad_out^T . cols
        F::gemm(
            c_out,
            rows,
            kkc,
            F::one(),
            grad_out.data.as_ptr(),
            1,
            c_out as isize,
            scratch.cols.as_ptr(),
            kkc as isize,
            1,
            F::zero(),
            grad_w.as_mut_ptr(),
            kkc as isize,
            1,
        );
    }

    grad_bias.fill(F::zero());
    for row in grad_out.data.chunks_exact(c_out) {
        for (acc, &g) in grad_bias.iter_mut().zip(row.iter()) {
            *acc += g;
        }
    }

    if let Some(gx) = grad_x {
        if scratch.grad_cols.len() != rows * kkc {
            scratch.grad_cols.resize(rows * kkc, F::zero());
        }
        unsafe {
            // grad_cols = grad_out . weight
            F::gemm(
                rows,
                c_out,
                kkc,
                F::one(),
                grad_out.data.as_ptr(),
                c_out as isize,
                1,
                weight.as_ptr(),
                kkc as isize,
                1,
                F::zero(),
                scratch.grad_cols.as_mut_ptr(),
                kkc as isize,
                1,
            );
        }
        gx.ensure(x.batch, x.height, x.width, x.channels);
        gx.fill_zero();
        col2im_add(&scratch.grad_cols, gx, k, pad);
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// `idx` records the winning in-window position (0..4) per cell.
pub fn maxpool2_into<F: Scalar>(x: &Feature<F>, out: &mut Feature<F>, idx: &mut Vec<u8>) {
    let (b, h, w, c) = (x.batch, x.height, x.width, x.channels);
    let (oh, ow) = (h / 2, w / 2);
    out.ensure(b, oh, ow, c);
    let n_out = out.rows() * c;
    if idx.len() != n_out {
        idx.resize(n_out, 0);
    }
    let src = &x.data;
    for bi in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                let dst = ((bi * oh + y) * ow + xo) * c;
                let r00 = ((bi * h + 2 * y) * w + 2 * xo) * c;
                let row0 = &src[r00..r00 + c];
                let row1 = &src[r00 + c..r00 + 2 * c];
                let row2 = &src[r00 + w * c..r00 + w * c + c];
                let row3 = &src[r00 + w * c + c..r00 + w * c + 2 * c];
                let out_row = &mut out.data[dst..dst + c];
                let idx_row = &mut idx[dst..dst + c];
                for ch in 0..c {
                    let mut best_v = row0[ch];
                    let mut best = 0u8;
                    if row1[ch] > best_v {
                        best_v = row1[ch];
                        best = 1;
                    }
                    if row2[ch] > best_v {
                        best_v = row2[ch];
                        best = 2;
                    }
                    if row3[ch] > best_v {
                        best_v = row3[ch];
                        best = 3;
                    }
                    out_row[ch] = best_v;
                    idx_row[ch] = best;
                }
            }
        }
    }
}

/// Route pooled gradients back to the winning positions. `gx` is zeroed.
pub fn maxpool2_backward_into<F: Scalar>(
    grad_out: &Feature<F>,
    idx: &[u8],
    in_h: usize,
    in_w: usize,
    gx: &mut Feature<F>,
) {
    let (b, oh, ow, c) = (
        grad_out.batch,
        grad_out.height,
        grad_out.width,
        grad_out.channels,
    );
    gx.ensure(b, in_h, in_w, c);
    gx.fill_zero();
    for bi in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                let src = ((bi * oh + y) * ow + xo) * c;
                let r00 = ((bi * in_h + 2 * y) * in_w + 2 * xo) * c;
                for ch in 0..c {
                    let offset = match idx[src + ch] {
                        0 => 0,
                        1 => c,
                        2 => in_w * c,
                        _ => in_w * c + c,
                    };
                    gx.data[r00 + offset + ch] += grad_out.data[src + ch];
                }
            }
        }
    }
}

/// Mean over the spatial extent per sample into `out` (`b * c` flat).
pub fn gap_into<F: Scalar>(x: &Feature<F>, out: &mut [F]) {
    let (b, hw, c) = (x.batch, x.height * x.width, x.channels);
    debug_assert_eq!(out.len(), b * c);
    let inv = F::one() / F::from_f64(hw as f64);
    for bi in 0..b {
        let acc = &mut out[bi * c..(bi + 1) * c];
        acc.fill(F::zero());
        for r in 0..hw {
            let row = &x.data[(bi * hw + r) * c..(bi * hw + r + 1) * c];
            for (a, &v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
}

/// Adjoint of the global average pool.
pub fn gap_backward_into<F: Scalar>(
    grad: &[F],
    batch: usize,
    h: usize,
    w: usize,
    gx: &mut Feature<F>,
) {
    let hw = h * w;
    let c = grad.len() / batch;
    gx.ensure(batch, h, w, c);
    let inv = F::one() / F::from_f64(hw as f64);
    for bi in 0..batch {
        let g = &grad[bi * c..(bi + 1) * c];
        for r in 0..hw {
            let row = &mut gx.data[(bi * hw + r) * c..(bi * hw + r + 1) * c];
            for (o, &v) in row.iter_mut().zip(g.iter()) {
                *o = v * inv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_feature(b: usize, h: usize, w: usize, c: usize, seed: u64) -> Feature<f64> {
        let mut rng = crate::seeding::stream(&[seed]);
        let mut f = Feature::default();
        f.ensure(b, h, w, c);
        for v in f.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    fn conv_simple(x: &Feature<f64>, weight: &[f64], c_out: usize, k: usize) -> Feature<f64> {
        let mut cols = Vec::new();
        let mut out = Feature::default();
        conv_forward_into(x, weight, c_out, k, &mut cols, &mut out);
        out
    }

    /// Direct nested-loop convolution as the reference.
    fn conv_reference(x: &Feature<f64>, weight: &[f64], c_out: usize, k: usize) -> Vec<f64> {
        let (b, h, w, c) = (x.batch, x.height, x.width, x.channels);
        let pad = k / 2;
        let kkc = k * k * c;
        let mut out = vec![0.0; b * h * w * c_out];
        for bi in 0..b {
            for y in 0..h {
                for xo in 0..w {
                    for co in 0..c_out {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                let sy = y as isize + dy as isize - pad as isize;
                                let sx = xo as isize + dx as isize - pad as isize;
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    acc += x.data
                                        [((bi * h + sy as usize) * w + sx as usize) * c + ci]
                                        * weight[co * kkc + (dy * k + dx) * c + ci];
                                }
                            }
                        }
                        out[((bi * h + y) * w + xo) * c_out + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_direct_loops() {
        let x = random_feature(2, 6, 5, 3, 1);
        let mut rng = crate::seeding::stream(&[2]);
        let weight: Vec<f64> = (0..4 * 75).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let fast = conv_simple(&x, &weight, 4, 5);
        let slow = conv_reference(&x, &weight, 4, 5);
        for (a, b) in fast.data.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // Single-channel fast path.
        let x1 = random_feature(1, 7, 7, 1, 3);
        let weight1: Vec<f64> = (0..2 * 25).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let fast = conv_simple(&x1, &weight1, 2, 5);
        let slow = conv_reference(&x1, &weight1, 2, 5);
        for (a, b) in fast.data.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random_feature(1, 5, 4, 2, 3);
        let mut rng = crate::seeding::stream(&[4]);
        let c_out = 3;
        let kkc = 25 * 2;
        let weight: Vec<f64> = (0..c_out * kkc).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // Loss = sum(conv(x) * probe) for a fixed random probe.
        let probe: Vec<f64> = (0..x.rows() * c_out)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let loss = |w: &[f64], xf: &Feature<f64>| -> f64 {
            conv_simple(xf, w, c_out, 5)
                .data
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let mut scratch = ConvScratch::default();
        let mut grad_w = vec![0.0; c_out * kkc];
        let mut grad_b = vec![0.0; c_out];
        let mut gx = Feature::default();
        let grad_out = Feature {
            data: probe.clone(),
            batch: 1,
            height: 5,
            width: 4,
            channels: c_out,
        };
        conv_backward_into(
            &x,
            &weight,
            &grad_out,
            5,
            &mut scratch,
            &mut grad_w,
            &mut grad_b,
            Some(&mut gx),
        );

        let eps = 1e-6;
        for &j in &[0usize, 7, 49, 23, 99] {
            let mut wp = weight.clone();
            wp[j] += eps;
            let mut wm = weight.clone();
            wm[j] -= eps;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * eps);
            assert!((grad_w[j] - fd).abs() < 1e-6, "grad_w[{j}[ {} vs {fd}", grad_w[j]);
        }
        // Bias gradient equals per-channel sums of the probe.
        for (co, &gb) in grad_b.iter().enumerate() {
            let direct: f64 = probe.iter().skip(co).step_by(c_out).sum();
            assert!((gb - direct).abs() < 1e-9);
        }
        for &(r, ch) in &[(0usize, 0usize), (7, 1), (19, 0)] {
            let mut xp = x.clone();
            xp.data[r * 2 + ch] += eps;
            let mut xm = x.clone();
            xm.data[r * 2 + ch] -= eps;
            let fd = (loss(&weight, &xp) - loss(&weight, &xm)) / (2.0 * eps);
            assert!((gx.data[r * 2 + ch] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn maxpool_selects_maxima_and_routes_gradient() {
        let mut x = Feature::<f64>::default();
        x.ensure(1, 4, 4, 1);
        for (r, v) in x.data.iter_mut().enumerate() {
            *v = r as f64;
        }
        let mut out = Feature::default();
        let mut idx = Vec::new();
        maxpool2_into(&x, &mut out, &mut idx);
        assert_eq!(out.data, vec![5.0, 7.0, 13.0, 15.0]);
        assert!(idx.iter().all(|&i| i == 3));

        let grad = Feature {
            data: vec![1.0, 2.0, 3.0, 4.0],
            batch: 1,
            height: 2,
            width: 2,
            channels: 1,
        };
        let mut gx = Feature::default();
        maxpool2_backward_into(&grad, &idx, 4, 4, &mut gx);
        assert_eq!(gx.data[5], 1.0);
        assert_eq!(gx.data[7], 2.0);
        assert_eq!(gx.data[13], 3.0);
        assert_eq!(gx.data[15], 4.0);
        assert_eq!(gx.data.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn maxpool_drops_odd_edges() {
        let x = random_feature(2, 5, 7, 3, 9);
        let mut out = Feature::default();
        let mut idx = Vec::new();
        maxpool2_into(&x, &mut out, &mut idx);
        assert_eq!((out.height, out.width), (2, 3));
    }

    #[test]
    fn gap_is_mean_and_backward_spreads() {
        let x = random_feature(3, 2, 2, 4, 5);
        let mut rep = vec![0.0; 3 * 4];
        gap_into(&x, &mut rep);
        for bi in 0..3 {
            for ch in 0..4 {
                let mean = (0..4).map(|r| x.data[(bi * 4 + r) * 4 + ch]).sum::<f64>() / 4.0;
                assert!((rep[bi * 4 + ch] - mean).abs() < 1e-12);
            }
        }
        let grad = vec![1.0; 12];
        let mut gx = Feature::default();
        gap_backward_into(&grad, 3, 2, 2, &mut gx);
        assert!(gx.data.iter().all(|&v: &f64| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn bias_relu_applies_both() {
        let mut x = Feature {
            data: vec![-1.0, 0.5, 2.0, -3.0],
            batch: 1,
            height: 2,
            width: 1,
            channels: 2,
        };
        bias_relu_inplace(&mut x, &[0.25, -0.25]);
        assert_eq!(x.data, vec![0.0, 0.25, 2.25, 0.0]);
    }
}
