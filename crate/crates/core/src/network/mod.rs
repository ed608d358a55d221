//! The backbone network: five 5x5 same-padding convolutions (channels
//! 1 -> 32 -> 64 -> 128 -> 256 -> 512), each followed by ReLU and 2x2 max
//! pooling, global average pooling to a 512-d representation, a shared
//! 512 -> 256 dense layer, and two output heads: a 128-d L2-normalized
//! projection for the contrastive objectives and a 2-way classifier.
//!
//! Forward and backward are hand-rolled. Batches are processed in fixed
//! chunks whose gradients merge in chunk order, so results are independent
//! of thread scheduling; a `StepContext` keeps every chunk buffer alive
//! across steps to avoid reallocation in the training loop.

pub mod checkpoint;
mod conv;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::Feature;

use crate::num::Scalar;
use crate::seeding::{self, domain};
use conv::{
    bias_relu_inplace, conv_backward_into, conv_forward_into, gap_backward_into, gap_into,
    maxpool2_backward_into, maxpool2_into, relu_backward_inplace, with_scratch,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const KERNEL: usize = 5;
pub const CONV_CHANNELS: [usize; 6] = [1, 32, 64, 128, 256, 512];
pub const REPR_DIM: usize = 512;
pub const HIDDEN_DIM: usize = 256;
pub const PROJECTION_DIM: usize = 128;
pub const N_CLASSES: usize = 2;
/// Five pooling halvings need at least this much spatial extent.
pub const MIN_INPUT_SIDE: usize = 32;
/// Samples per gradient chunk; fixed so the reduction order (and thus the
/// result bits) cannot depend on thread scheduling.
pub const GRAD_CHUNK: usize = 12;

/// Total trainable parameters of the fixed architecture.
pub const PARAM_COUNT: usize = 4_518_530;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("input {height}x{width} below the minimum side of {MIN_INPUT_SIDE}")]
    UndersizedInput { height: usize, width: usize },
    #[error("batch images must share one shape: saw {0}x{1} and {2}x{3}")]
    NonUniformBatch(usize, usize, usize, usize),
    #[error("representation batch has {got} columns, expected {REPR_DIM}")]
    BadRepresentation { got: usize },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint architecture hash {found:#018x} does not match expected {expected:#018x}")]
    ArchHashMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    /// `(c_out, KERNEL*KERNEL*c_in)`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct DenseLayer<F> {
    /// `(out, in)`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> DenseLayer<F> {
    fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }
}

/// All trainable state plus identification metadata.
#[derive(Debug, Clone)]
pub struct ModelState<F> {
    pub convs: Vec<ConvLayer<F>>,
    pub shared: DenseLayer<F>,
    pub ssl: DenseLayer<F>,
    pub cls: DenseLayer<F>,
    pub seed: u64,
    /// Free-form training history, e.g. "init" or "pretrain:weak_simclr".
    pub provenance: String,
}

/// Stable descriptor of the architecture; hashed into checkpoints.
pub fn architecture_descriptor() -> String {
    format!(
        "conv{}x{}:{:?};shared:{}-{};ssl:{}-{};cls:{}-{};v1",
        KERNEL, KERNEL, CONV_CHANNELS, REPR_DIM, HIDDEN_DIM, HIDDEN_DIM, PROJECTION_DIM,
        HIDDEN_DIM, N_CLASSES
    )
}

pub fn architecture_hash() -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(architecture_descriptor().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Fan-in-scaled uniform init, deterministic per seed.
pub fn init_model<F: Scalar>(seed: u64) -> ModelState<F> {
    let mut rng = seeding::stream(&[seed, domain::MODEL_INIT, 0]);
    let mut convs = Vec::with_capacity(5);
    for l in 0..5 {
        let (cin, cout) = (CONV_CHANNELS[l], CONV_CHANNELS[l + 1]);
        let fan_in = cin * KERNEL * KERNEL;
        convs.push(ConvLayer {
            weight: uniform_init(&mut rng, (cout, fan_in), fan_in),
            bias: uniform_init_1d(&mut rng, cout, fan_in),
        });
    }
    let shared = DenseLayer {
        weight: uniform_init(&mut rng, (HIDDEN_DIM, REPR_DIM), REPR_DIM),
        bias: uniform_init_1d(&mut rng, HIDDEN_DIM, REPR_DIM),
    };
    let ssl = DenseLayer {
        weight: uniform_init(&mut rng, (PROJECTION_DIM, HIDDEN_DIM), HIDDEN_DIM),
        bias: uniform_init_1d(&mut rng, PROJECTION_DIM, HIDDEN_DIM),
    };
    let cls = DenseLayer {
        weight: uniform_init(&mut rng, (N_CLASSES, HIDDEN_DIM), HIDDEN_DIM),
        bias: uniform_init_1d(&mut rng, N_CLASSES, HIDDEN_DIM),
    };
    ModelState {
        convs,
        shared,
        ssl,
        cls,
        seed,
        provenance: "init".to_string(),
    }
}

fn uniform_init<F: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: (usize, usize),
    fan_in: usize,
) -> Array2<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| F::from_f64(rng.gen_range(-bound..=bound)))
}

fn uniform_init_1d<F: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    len: usize,
    fan_in: usize,
) -> Array1<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_fn(len, |_| F::from_f64(rng.gen_range(-bound..=bound)))
}

/// Gradient accumulator mirroring the parameter layout.
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub convs: Vec<(Array2<F>, Array1<F>)>,
    pub shared: (Array2<F>, Array1<F>),
    pub ssl: (Array2<F>, Array1<F>),
    pub cls: (Array2<F>, Array1<F>),
}

impl<F: Scalar> ModelGrads<F> {
    pub fn zeros_like(model: &ModelState<F>) -> Self {
        ModelGrads {
            convs: model
                .convs
                .iter()
                .map(|c| {
                    (
                        Array2::zeros(c.weight.raw_dim()),
                        Array1::zeros(c.bias.raw_dim()),
                    )
                })
                .collect(),
            shared: (
                Array2::zeros(model.shared.weight.raw_dim()),
                Array1::zeros(model.shared.bias.raw_dim()),
            ),
            ssl: (
                Array2::zeros(model.ssl.weight.raw_dim()),
                Array1::zeros(model.ssl.bias.raw_dim()),
            ),
            cls: (
                Array2::zeros(model.cls.weight.raw_dim()),
                Array1::zeros(model.cls.bias.raw_dim()),
            ),
        }
    }

    pub fn zero(&mut self) {
        self.visit_mut(|_, s| s.fill(F::zero()));
    }

    pub fn add_assign(&mut self, other: &ModelGrads<F>) {
        for (a, b) in self.convs.iter_mut().zip(other.convs.iter()) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
        self.shared.0 += &other.shared.0;
        self.shared.1 += &other.shared.1;
        self.ssl.0 += &other.ssl.0;
        self.ssl.1 += &other.ssl.1;
        self.cls.0 += &other.cls.0;
        self.cls.1 += &other.cls.1;
    }

    pub fn scale(&mut self, factor: F) {
        self.visit_mut(|_, slice| {
            for v in slice {
                *v *= factor;
            }
        });
    }

    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'static str, &'a [F])) {
        let names = param_names();
        let mut i = 0;
        for c in &self.convs {
            f(names[i], c.0.as_slice().expect("contiguous"));
            f(names[i + 1], c.1.as_slice().expect("contiguous"));
            i += 2;
        }
        for pair in [&self.shared, &self.ssl, &self.cls] {
            f(names[i], pair.0.as_slice().expect("contiguous"));
            f(names[i + 1], pair.1.as_slice().expect("contiguous"));
            i += 2;
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut [F])) {
        let names = param_names();
        let mut i = 0;
        for c in &mut self.convs {
            f(names[i], c.0.as_slice_mut().expect("contiguous"));
            f(names[i + 1], c.1.as_slice_mut().expect("contiguous"));
            i += 2;
        }
        for pair in [&mut self.shared, &mut self.ssl, &mut self.cls] {
            f(names[i], pair.0.as_slice_mut().expect("contiguous"));
            f(names[i + 1], pair.1.as_slice_mut().expect("contiguous"));
            i += 2;
        }
    }
}

/// Canonical parameter order shared by the optimizer, checkpoints, and
/// gradient flattening.
pub fn param_names() -> [&'static str; 16] {
    [
        "conv1.weight",
        "conv1.bias",
        "conv2.weight",
        "conv2.bias",
        "conv3.weight",
        "conv3.bias",
        "conv4.weight",
        "conv4.bias",
        "conv5.weight",
        "conv5.bias",
        "shared.weight",
        "shared.bias",
        "ssl.weight",
        "ssl.bias",
        "cls.weight",
        "cls.bias",
    ]
}

/// Everything one chunk's backward pass needs, with buffers reused across
/// training steps.
#[derive(Default)]
struct BackboneTape<F> {
    input: Feature<F>,
    conv_out: Vec<Feature<F>>,
    pool_out: Vec<Feature<F>>,
    pool_idx: Vec<Vec<u8>>,
    grad_a: Feature<F>,
    grad_b: Feature<F>,
}

#[derive(Default)]
struct ChunkSlot<F> {
    tape: BackboneTape<F>,
    /// Per-layer (weight, bias) gradients, fully overwritten per step.
    conv_grads: Vec<(Vec<F>, Vec<F>)>,
    live: usize,
}

/// Reusable training-step workspace (tapes + per-chunk gradients).
#[derive(Default)]
pub struct StepContext<F> {
    chunks: Vec<ChunkSlot<F>>,
    active: usize,
    rows: usize,
}

impl<F: Scalar> StepContext<F> {
    pub fn new() -> Self {
        StepContext {
            chunks: Vec::new(),
            active: 0,
            rows: 0,
        }
    }
}

/// Intermediates for a head backward pass.
pub struct HeadTape<F> {
    rep: Array2<F>,
    hidden: Array2<F>,
    /// Pre-normalization projection and row norms (projection head only).
    raw_proj: Option<(Array2<F>, Array1<F>)>,
}

fn relu_array_inplace<F: Scalar>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| v.max(F::zero()));
}

fn relu_array_backward<F: Scalar>(grad: &mut Array2<F>, post_act: &Array2<F>) {
    grad.zip_mut_with(post_act, |g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

impl<F: Scalar> ModelState<F> {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, s| n += s.len());
        n
    }

    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(&'static str, &'a [F])) {
        let names = param_names();
        let mut i = 0;
        for c in &self.convs {
            f(names[i], c.weight.as_slice().expect("contiguous"));
            f(names[i + 1], c.bias.as_slice().expect("contiguous"));
            i += 2;
        }
        for layer in [&self.shared, &self.ssl, &self.cls] {
            f(names[i], layer.weight.as_slice().expect("contiguous"));
            f(names[i + 1], layer.bias.as_slice().expect("contiguous"));
            i += 2;
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&'static str, &mut [F])) {
        let names = param_names();
        let mut i = 0;
        for c in &mut self.convs {
            f(names[i], c.weight.as_slice_mut().expect("contiguous"));
            f(names[i + 1], c.bias.as_slice_mut().expect("contiguous"));
            i += 2;
        }
        for layer in [&mut self.shared, &mut self.ssl, &mut self.cls] {
            f(names[i], layer.weight.as_slice_mut().expect("contiguous"));
            f(names[i + 1], layer.bias.as_slice_mut().expect("contiguous"));
            i += 2;
        }
    }

    /// Draw a fresh classifier head (used when fine-tuning from a
    /// pretrained checkpoint).
    pub fn reinit_cls_head(&mut self, seed: u64) {
        let mut rng = seeding::stream(&[seed, domain::MODEL_INIT, 1]);
        self.cls = DenseLayer {
            weight: uniform_init(&mut rng, (N_CLASSES, HIDDEN_DIM), HIDDEN_DIM),
            bias: uniform_init_1d(&mut rng, N_CLASSES, HIDDEN_DIM),
        };
    }

    fn check_batch(&self, images: &[Array2<F>]) -> Result<(usize, usize), NetError> {
        let first = images.first().ok_or(NetError::EmptyBatch)?;
        let (h, w) = first.dim();
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return Err(NetError::UndersizedInput {
                height: h,
                width: w,
            });
        }
        for img in images {
            if img.dim() != (h, w) {
                return Err(NetError::NonUniformBatch(h, w, img.dim().0, img.dim().1));
            }
        }
        Ok((h, w))
    }

    /// Forward one chunk, retaining the tape, writing `live * REPR_DIM`
    /// representation values.
    fn forward_chunk(
        &self,
        images: &[Array2<F>],
        h: usize,
        w: usize,
        tape: &mut BackboneTape<F>,
        rep_out: &mut [F],
    ) {
        let b = images.len();
        tape.input.ensure(b, h, w, 1);
        for (bi, img) in images.iter().enumerate() {
            let dst = &mut tape.input.data[bi * h * w..(bi + 1) * h * w];
            match img.as_slice() {
                Some(src) => dst.copy_from_slice(src),
                None => {
                    for (d, v) in dst.iter_mut().zip(img.iter()) {
                        *d = *v;
                    }
                }
            }
        }
        while tape.conv_out.len() < 5 {
            tape.conv_out.push(Feature::default());
            tape.pool_out.push(Feature::default());
            tape.pool_idx.push(Vec::new());
        }

        with_scratch::<F, _>(|scratch| {
            for l in 0..5 {
                let layer = &self.convs[l];
                let weight = layer.weight.as_slice().expect("contiguous");
                let bias = layer.bias.as_slice().expect("contiguous");
                let c_out = CONV_CHANNELS[l + 1];
                if l == 0 {
                    conv_forward_into(
                        &tape.input,
                        weight,
                        c_out,
                        KERNEL,
                        &mut scratch.cols,
                        &mut tape.conv_out[0],
                    );
                } else {
                    let (before, after) = tape.conv_out.split_at_mut(l);
                    let _ = before;
                    conv_forward_into(
                        &tape.pool_out[l - 1],
                        weight,
                        c_out,
                        KERNEL,
                        &mut scratch.cols,
                        &mut after[0],
                    );
                }
                bias_relu_inplace(&mut tape.conv_out[l], bias);
                let (pool_out, pool_idx) = (&mut tape.pool_out[l], &mut tape.pool_idx[l]);
                maxpool2_into(&tape.conv_out[l], pool_out, pool_idx);
            }
        });
        gap_into(&tape.pool_out[4], rep_out);
    }

    fn backward_chunk(&self, slot: &mut ChunkSlot<F>, grad_rep_rows: &[F]) {
        let tape = &mut slot.tape;
        while slot.conv_grads.len() < 5 {
            let l = slot.conv_grads.len();
            slot.conv_grads.push((
                vec![F::zero(); CONV_CHANNELS[l + 1] * KERNEL * KERNEL * CONV_CHANNELS[l]],
                vec![F::zero(); CONV_CHANNELS[l + 1]],
            ));
        }
        with_scratch::<F, _>(|scratch| {
            let last = &tape.pool_out[4];
            gap_backward_into(
                grad_rep_rows,
                last.batch,
                last.height,
                last.width,
                &mut tape.grad_a,
            );
            for l in (0..5).rev() {
                let conv = &tape.conv_out[l];
                maxpool2_backward_into(
                    &tape.grad_a,
                    &tape.pool_idx[l],
                    conv.height,
                    conv.width,
                    &mut tape.grad_b,
                );
                relu_backward_inplace(&mut tape.grad_b.data, &conv.data);
                let weight = self.convs[l].weight.as_slice().expect("contiguous");
                let (gw, gb) = &mut slot.conv_grads[l];
                if l == 0 {
                    conv_backward_into(
                        &tape.input,
                        weight,
                        &tape.grad_b,
                        KERNEL,
                        scratch,
                        gw,
                        gb,
                        None,
                    );
                } else {
                    conv_backward_into(
                        &tape.pool_out[l - 1],
                        weight,
                        &tape.grad_b,
                        KERNEL,
                        scratch,
                        gw,
                        gb,
                        Some(&mut tape.grad_a),
                    );
                }
            }
        });
    }

    /// Forward a batch to 512-d representations, keeping per-chunk tapes in
    /// `ctx` for a following backward pass.
    pub fn forward_training(
        &self,
        images: &[Array2<F>],
        ctx: &mut StepContext<F>,
    ) -> Result<Array2<F>, NetError> {
        let (h, w) = self.check_batch(images)?;
        let n = images.len();
        let n_chunks = n.div_ceil(GRAD_CHUNK);
        while ctx.chunks.len() < n_chunks {
            ctx.chunks.push(ChunkSlot::default());
        }
        ctx.active = n_chunks;
        ctx.rows = n;

        let mut rep = vec![F::zero(); n * REPR_DIM];
        rep.par_chunks_mut(GRAD_CHUNK * REPR_DIM)
            .zip(images.par_chunks(GRAD_CHUNK))
            .zip(ctx.chunks[..n_chunks].par_iter_mut())
            .for_each(|((rep_chunk, image_chunk), slot)| {
                slot.live = image_chunk.len();
                self.forward_chunk(image_chunk, h, w, &mut slot.tape, rep_chunk);
            });
        Ok(Array2::from_shape_vec((n, REPR_DIM), rep).expect("rep shape"))
    }

    /// Inference-only forward (tapes discarded).
    pub fn backbone_forward(&self, images: &[Array2<F>]) -> Result<Array2<F>, NetError> {
        let mut ctx = StepContext::new();
        self.forward_training(images, &mut ctx)
    }

    /// Backward through the backbone for every chunk of the last
    /// `forward_training` call. The convolution gradient fields of `out`
    /// are overwritten with the batch totals (head fields are untouched);
    /// chunk contributions merge in chunk order.
    pub fn backward_training(
        &self,
        grad_rep: &Array2<F>,
        ctx: &mut StepContext<F>,
        out: &mut ModelGrads<F>,
    ) {
        assert_eq!(grad_rep.nrows(), ctx.rows, "tape/batch row mismatch");
        assert_eq!(grad_rep.ncols(), REPR_DIM);
        let grad_flat = grad_rep.as_slice().expect("contiguous grad_rep");
        let active = ctx.active;
        grad_flat
            .par_chunks(GRAD_CHUNK * REPR_DIM)
            .zip(ctx.chunks[..active].par_iter_mut())
            .for_each(|(grad_chunk, slot)| {
                debug_assert_eq!(grad_chunk.len(), slot.live * REPR_DIM);
                self.backward_chunk(slot, grad_chunk);
            });

        for l in 0..5 {
            let (gw_out, gb_out) = &mut out.convs[l];
            let gw_slice = gw_out.as_slice_mut().expect("contiguous");
            let gb_slice = gb_out.as_slice_mut().expect("contiguous");
            for (ci, slot) in ctx.chunks[..active].iter().enumerate() {
                let (gw, gb) = &slot.conv_grads[l];
                if ci == 0 {
                    gw_slice.copy_from_slice(gw);
                    gb_slice.copy_from_slice(gb);
                } else {
                    for (a, &b) in gw_slice.iter_mut().zip(gw.iter()) {
                        *a += b;
                    }
                    for (a, &b) in gb_slice.iter_mut().zip(gb.iter()) {
                        *a += b;
                    }
                }
            }
        }
    }

    /// Projection head: shared dense, ReLU, projection dense, row L2 norm.
    pub fn ssl_head_forward(&self, rep: &Array2<F>) -> Result<(Array2<F>, HeadTape<F>), NetError> {
        if rep.ncols() != REPR_DIM {
            return Err(NetError::BadRepresentation { got: rep.ncols() });
        }
        let mut hidden = self.shared.forward(rep);
        relu_array_inplace(&mut hidden);
        let raw = self.ssl.forward(&hidden);
        let floor = F::from_f64(1e-30);
        let norms = Array1::from_iter(
            raw.rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| v * v).sum::<F>().sqrt().max(floor)),
        );
        let mut proj = raw.clone();
        for (mut row, &n) in proj.rows_mut().into_iter().zip(norms.iter()) {
            row.mapv_inplace(|v| v / n);
        }
        Ok((
            proj,
            HeadTape {
                rep: rep.clone(),
                hidden,
                raw_proj: Some((raw, norms)),
            },
        ))
    }

    /// Backward through the projection head; accumulates parameter
    /// gradients and returns the representation gradient.
    pub fn ssl_head_backward(
        &self,
        tape: &HeadTape<F>,
        grad_proj: &Array2<F>,
        grads: &mut ModelGrads<F>,
    ) -> Array2<F> {
        let (raw, norms) = tape.raw_proj.as_ref().expect("projection tape");
        // d/dy of g(y/|y|): (g - (g.z) z) / |y|.
        let mut grad_raw = Array2::<F>::zeros(raw.raw_dim());
        for i in 0..raw.nrows() {
            let n = norms[i];
            let z = raw.row(i).mapv(|v| v / n);
            let g = grad_proj.row(i);
            let dot = g.iter().zip(z.iter()).map(|(&a, &b)| a * b).sum::<F>();
            let mut out = grad_raw.row_mut(i);
            for j in 0..raw.ncols() {
                out[j] = (g[j] - dot * z[j]) / n;
            }
        }
        grads.ssl.0 += &grad_raw.t().dot(&tape.hidden);
        grads.ssl.1 += &grad_raw.sum_axis(ndarray::Axis(0));
        let mut grad_hidden = grad_raw.dot(&self.ssl.weight);
        relu_array_backward(&mut grad_hidden, &tape.hidden);
        grads.shared.0 += &grad_hidden.t().dot(&tape.rep);
        grads.shared.1 += &grad_hidden.sum_axis(ndarray::Axis(0));
        grad_hidden.dot(&self.shared.weight)
    }

    /// Classifier head: shared dense, ReLU, 2-way logits.
    pub fn cls_head_forward(&self, rep: &Array2<F>) -> Result<(Array2<F>, HeadTape<F>), NetError> {
        if rep.ncols() != REPR_DIM {
            return Err(NetError::BadRepresentation { got: rep.ncols() });
        }
        let mut hidden = self.shared.forward(rep);
        relu_array_inplace(&mut hidden);
        let logits = self.cls.forward(&hidden);
        Ok((
            logits,
            HeadTape {
                rep: rep.clone(),
                hidden,
                raw_proj: None,
            },
        ))
    }

    pub fn cls_head_backward(
        &self,
        tape: &HeadTape<F>,
        grad_logits: &Array2<F>,
        grads: &mut ModelGrads<F>,
    ) -> Array2<F> {
        grads.cls.0 += &grad_logits.t().dot(&tape.hidden);
        grads.cls.1 += &grad_logits.sum_axis(ndarray::Axis(0));
        let mut grad_hidden = grad_logits.dot(&self.cls.weight);
        relu_array_backward(&mut grad_hidden, &tape.hidden);
        grads.shared.0 += &grad_hidden.t().dot(&tape.rep);
        grads.shared.1 += &grad_hidden.sum_axis(ndarray::Axis(0));
        grad_hidden.dot(&self.shared.weight)
    }
}
