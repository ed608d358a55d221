//! Rough phase timing for repeated training steps (dev tool).
use ndarray::Array2;
use rand::Rng;
use sliceclr_core::losses::{self, ContrastiveBatch};
use sliceclr_core::network::{init_model, ModelGrads, StepContext, REPR_DIM};
use sliceclr_core::optim::AdamW;
use std::time::Instant;

fn main() {
    let n = 92usize; // sources
    let side = 64usize;
    let mut rng = sliceclr_core::seeding::stream(&[1]);
    let views: Vec<Array2<f32>> = (0..3 * n)
        .map(|_| Array2::from_shape_fn((side, side), |_| rng.gen_range(0.0f32..1.0)))
        .collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut model = init_model::<f32>(0);
    let mut ctx = StepContext::new();
    let mut grads = ModelGrads::zeros_like(&model);
    let mut opt = AdamW::new(&model, 1e-4);

    for step in 0..4 {
        let t0 = Instant::now();
        grads.zero();
        let rep = model.forward_training(&views, &mut ctx).unwrap();
        let t_fwd = t0.elapsed();

        let t = Instant::now();
        let rep_ssl = rep.slice(ndarray::s![0..2 * n, ..]).to_owned();
        let rep_cls = rep.slice(ndarray::s![2 * n.., ..]).to_owned();
        let (proj, ssl_tape) = model.ssl_head_forward(&rep_ssl).unwrap();
        let (logits, cls_tape) = model.cls_head_forward(&rep_cls).unwrap();
        let batch = ContrastiveBatch::new(proj, None).unwrap();
        let (_v, gp, gl) =
            losses::weak_simclr_with_grad(&batch, &logits, &labels, 0.1f32, 0.5f32).unwrap();
        let g_ssl = model.ssl_head_backward(&ssl_tape, &gp, &mut grads);
        let g_cls = model.cls_head_backward(&cls_tape, &gl, &mut grads);
        let mut grad_rep = Array2::<f32>::zeros((3 * n, REPR_DIM));
        grad_rep.slice_mut(ndarray::s![0..2 * n, ..]).assign(&g_ssl);
        grad_rep.slice_mut(ndarray::s![2 * n.., ..]).assign(&g_cls);
        let t_heads = t.elapsed();

        let t = Instant::now();
        model.backward_training(&grad_rep, &mut ctx, &mut grads);
        let t_bwd = t.elapsed();

        let t = Instant::now();
        opt.step(&mut model, &grads, 1e-4);
        let t_opt = t.elapsed();
        println!(
            "step {step}: fwd {:.0?} heads {:.0?} bwd {:.0?} opt {:.0?} total {:.0?} ({:.1} ms/view)",
            t_fwd,
            t_heads,
            t_bwd,
            t_opt,
            t0.elapsed(),
            t0.elapsed().as_secs_f64() * 1000.0 / (3.0 * n as f64)
        );
    }
}
