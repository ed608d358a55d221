//! Training engine: slice pooling with central-slice selection, the four
//! pretraining regimes, fine-tuning, cross-validated evaluation and the
//! beta / train-fraction ablations.

mod sampler;
mod splits;

pub use sampler::{class_weighted_sampler, draw_epoch, uniform_sampler, SamplerPlan};
pub use splits::{stratified_kfold, subsample_stratified, FoldSplit};

use crate::augment::{apply_pipeline, AugmentConfig, ViewStreamKey};
use crate::cohort::{
    mask_area, read_slice_file, select_central_slices, CohortError, CohortManifest, SliceImage,
};
use crate::eval::{
    aggregate_folds, fold_metrics_from_slices, EvalError, FoldMetrics, Procedure, ProcedureStats,
    SliceScore,
};
use crate::losses::{self, ContrastiveBatch, LossConfig, LossError, LossMethod};
use crate::network::{
    init_model, load_checkpoint, save_checkpoint, ModelGrads, ModelState, NetError, StepContext,
    REPR_DIM,
};
use crate::optim::{cosine_lr, AdamW};
use crate::probe::{fit_logistic, ProbeError};
use crate::seeding::derive_seed;
use ndarray::{s, Array2};
use rayon::prelude::*;
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("patient {patient} lacks a {channel} label")]
    MissingLabel { patient: String, channel: &'static str },
    #[error("training set is single-class ({positives} positive / {negatives} negative slices)")]
    SingleClassTraining { positives: usize, negatives: usize },
    #[error("class {class} has {count} patients, fewer than k = {k}")]
    ClassTooSmall { class: u8, count: usize, k: usize },
    #[error("k_folds must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("train_fraction must be in (0,1], got {0}")]
    BadFraction(f64),
    #[error("fold {fold} references unknown patient {patient}")]
    UnknownPatient { fold: usize, patient: String },
    #[error("non-finite loss at epoch {epoch}, step {step}; run aborted, no checkpoint written")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("beta sweep requires a radio manifest")]
    MissingRadioManifest,
}

/// Full training configuration with the published defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_epochs: usize,
    pub lr_pretrain: f64,
    pub wd_pretrain: f64,
    pub lr_finetune: f64,
    pub wd_finetune: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub k_folds: usize,
    pub weighted_sampling: bool,
    pub loss: LossConfig,
    pub aug: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 92,
            n_epochs: 200,
            lr_pretrain: 1e-4,
            wd_pretrain: 1e-4,
            lr_finetune: 1e-5,
            wd_finetune: 1e-3,
            seed: 0,
            train_fraction: 1.0,
            k_folds: 5,
            weighted_sampling: true,
            loss: LossConfig::default(),
            aug: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("train.batch_size must be positive".into());
        }
        if self.n_epochs == 0 {
            return Err("train.n_epochs must be positive".into());
        }
        for (name, v) in [
            ("train.lr_pretrain", self.lr_pretrain),
            ("train.lr_finetune", self.lr_finetune),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("train.wd_pretrain", self.wd_pretrain),
            ("train.wd_finetune", self.wd_finetune),
        ] {
            if v < 0.0 {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(format!(
                "train.train_fraction must be in (0,1], got {}",
                self.train_fraction
            ));
        }
        if self.k_folds < 2 {
            return Err(format!("train.k_folds must be >= 2, got {}", self.k_folds));
        }
        self.loss.validate()?;
        self.aug.validate()?;
        Ok(())
    }
}

/// Which label channel a pool trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelChannel {
    Histo,
    Radio,
}

impl LabelChannel {
    fn name(self) -> &'static str {
        match self {
            LabelChannel::Histo => "histo",
            LabelChannel::Radio => "radio",
        }
    }
}

/// One preprocessed training slice.
#[derive(Debug, Clone)]
pub struct PooledSlice {
    pub patient_idx: usize,
    pub image: SliceImage,
    pub label: u8,
}

/// All selected, preprocessed slices of a cohort, in memory.
#[derive(Debug, Clone)]
pub struct SlicePool {
    pub slices: Vec<PooledSlice>,
    pub patient_ids: Vec<String>,
    pub patient_labels: Vec<u8>,
    pub channel: LabelChannel,
}

impl SlicePool {
    pub fn slice_labels(&self) -> Vec<u8> {
        self.slices.iter().map(|s| s.label).collect()
    }

    /// Slice indices belonging to a patient-id set.
    pub fn slices_of(&self, patients: &HashSet<&str>) -> Vec<usize> {
        self.slices
            .iter()
            .enumerate()
            .filter(|(_, s)| patients.contains(self.patient_ids[s.patient_idx].as_str()))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Load, centrally select and preprocess every usable slice of a cohort.
///
/// Slice labels inherit the patient label on the requested channel; a
/// patient without that label fails the build. Without masks, every slice
/// counts as liver-bearing with unit area.
pub fn build_pool(
    manifest: &CohortManifest,
    channel: LabelChannel,
    central_fraction: f64,
) -> Result<SlicePool, TrainError> {
    let mut patient_ids = Vec::with_capacity(manifest.patients.len());
    let mut patient_labels = Vec::with_capacity(manifest.patients.len());
    for p in &manifest.patients {
        let label = match channel {
            LabelChannel::Histo => p.y_histo,
            LabelChannel::Radio => p.y_radio,
        }
        .ok_or_else(|| TrainError::MissingLabel {
            patient: p.patient_id.clone(),
            channel: channel.name(),
        })?;
        patient_ids.push(p.patient_id.clone());
        patient_labels.push(label);
    }

    let per_patient: Vec<Vec<PooledSlice>> = manifest
        .patients
        .par_iter()
        .enumerate()
        .map(|(patient_idx, p)| -> Result<Vec<PooledSlice>, TrainError> {
            let areas: Vec<usize> = match &p.mask_refs {
                Some(masks) => masks
                    .iter()
                    .map(|m| Ok(mask_area(&read_slice_file(&manifest.root.join(m))?)))
                    .collect::<Result<Vec<_>, CohortError>>()?,
                None => vec![1; p.slice_refs.len()],
            };
            let selected = select_central_slices(&areas, central_fraction)?;
            let label = patient_labels[patient_idx];
            selected
                .into_iter()
                .map(|slice_index| {
                    let raw = read_slice_file(&manifest.root.join(&p.slice_refs[slice_index]))?;
                    let image =
                        crate::cohort::preprocess_slice(&raw, &p.patient_id, slice_index)?;
                    Ok(PooledSlice {
                        patient_idx,
                        image,
                        label,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(SlicePool {
        slices: per_patient.into_iter().flatten().collect(),
        patient_ids,
        patient_labels,
        channel,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

fn write_loss_curve(path: &Path, stats: &[EpochStat]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,loss,lr")?;
    for s in stats {
        writeln!(f, "{},{},{}", s.epoch, s.loss, s.lr)?;
    }
    Ok(())
}

fn write_predictions(path: &Path, preds: &[SliceScore]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "patient_id,slice_index,prob_positive")?;
    for p in preds {
        writeln!(f, "{},{},{}", p.patient_id, p.slice_index, p.prob_positive)?;
    }
    Ok(())
}

/// Assemble the view batch for one optimizer step.
///
/// Contrastive methods interleave their two views as rows (2k, 2k+1); the
/// combined objective appends its classifier view as a trailing block.
fn build_view_batch(
    pool: &SlicePool,
    batch_indices: &[usize],
    positions: &[u64],
    epoch: u64,
    stream_seed: u64,
    method: LossMethod,
    aug: &AugmentConfig,
) -> (Vec<Array2<f32>>, Vec<u8>) {
    let n_views = method.n_views();
    let per_sample: Vec<Vec<Array2<f32>>> = batch_indices
        .par_iter()
        .zip(positions.par_iter())
        .map(|(&slice_idx, &pos)| {
            let key = ViewStreamKey {
                global_seed: stream_seed,
                epoch,
                sample_index: pos,
            };
            (0..n_views)
                .map(|v| {
                    let mut rng = key.rng(v as u64);
                    apply_pipeline(&pool.slices[slice_idx].image.pixels, &mut rng, aug)
                })
                .collect()
        })
        .collect();

    let n = batch_indices.len();
    let labels: Vec<u8> = batch_indices.iter().map(|&i| pool.slices[i].label).collect();
    let mut views = Vec::with_capacity(n * n_views);
    match method {
        LossMethod::Weak => {
            for mut vs in per_sample {
                views.push(vs.remove(0));
            }
        }
        LossMethod::Simclr | LossMethod::Supcon => {
            for mut vs in per_sample {
                views.push(vs.remove(0));
                views.push(vs.remove(0));
            }
        }
        LossMethod::WeakSimclr => {
            let mut third = Vec::with_capacity(n);
            for mut vs in per_sample {
                views.push(vs.remove(0));
                views.push(vs.remove(0));
                third.push(vs.remove(0));
            }
            views.extend(third);
        }
    }
    (views, labels)
}

/// One forward/backward pass; the gradient buffer is fully rewritten.
fn training_step(
    model: &ModelState<f32>,
    views: &[Array2<f32>],
    labels: &[u8],
    method: LossMethod,
    loss_cfg: &LossConfig,
    ctx: &mut StepContext<f32>,
    grads: &mut ModelGrads<f32>,
) -> Result<f64, TrainError> {
    let tau = loss_cfg.tau as f32;
    let n = labels.len();
    grads.zero();
    let rep = model.forward_training(views, ctx)?;

    let (loss, grad_rep) = match method {
        LossMethod::Weak => {
            let (logits, tape) = model.cls_head_forward(&rep)?;
            let (value, grad_logits) = losses::weak_bce_with_grad(&logits, labels)?;
            let grad_rep = model.cls_head_backward(&tape, &grad_logits, grads);
            (value.total as f64, grad_rep)
        }
        LossMethod::Simclr => {
            let (proj, tape) = model.ssl_head_forward(&rep)?;
            let batch = ContrastiveBatch::new(proj, None)?;
            let (value, grad_proj) = losses::ntxent_with_grad(&batch, tau)?;
            let grad_rep = model.ssl_head_backward(&tape, &grad_proj, grads);
            (value.total as f64, grad_rep)
        }
        LossMethod::Supcon => {
            let doubled: Vec<u8> = labels.iter().flat_map(|&y| [y, y]).collect();
            let (proj, tape) = model.ssl_head_forward(&rep)?;
            let batch = ContrastiveBatch::new(proj, Some(doubled))?;
            let (value, grad_proj) = losses::supcon_with_grad(&batch, tau)?;
            let grad_rep = model.ssl_head_backward(&tape, &grad_proj, grads);
            (value.total as f64, grad_rep)
        }
        LossMethod::WeakSimclr => {
            let rep_ssl = rep.slice(s![0..2 * n, ..]).to_owned();
            let rep_cls = rep.slice(s![2 * n.., ..]).to_owned();
            let (proj, ssl_tape) = model.ssl_head_forward(&rep_ssl)?;
            let (logits, cls_tape) = model.cls_head_forward(&rep_cls)?;
            let batch = ContrastiveBatch::new(proj, None)?;
            let (value, grad_proj, grad_logits) = losses::weak_simclr_with_grad(
                &batch,
                &logits,
                labels,
                tau,
                loss_cfg.beta as f32,
            )?;
            let g_ssl = model.ssl_head_backward(&ssl_tape, &grad_proj, grads);
            let g_cls = model.cls_head_backward(&cls_tape, &grad_logits, grads);
            let mut grad_rep = Array2::<f32>::zeros((3 * n, REPR_DIM));
            grad_rep.slice_mut(s![0..2 * n, ..]).assign(&g_ssl);
            grad_rep.slice_mut(s![2 * n.., ..]).assign(&g_cls);
            (value.total as f64, grad_rep)
        }
    };

    model.backward_training(&grad_rep, ctx, grads);
    Ok(loss)
}

/// The training loop shared by pretraining and fine-tuning.
#[allow(clippy::too_many_arguments)]
fn run_training(
    model: &mut ModelState<f32>,
    pool: &SlicePool,
    subset: Option<&[usize]>,
    method: LossMethod,
    cfg: &TrainConfig,
    lr_base: f64,
    weight_decay: f64,
    stream_seed: u64,
) -> Result<Vec<EpochStat>, TrainError> {
    let all_indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..pool.slices.len()).collect(),
    };
    let labels: Vec<u8> = all_indices.iter().map(|&i| pool.slices[i].label).collect();
    let plan = if cfg.weighted_sampling {
        class_weighted_sampler(&labels)?
    } else {
        uniform_sampler(labels.len())
    };

    let steps_per_epoch = plan.epoch_length.div_ceil(cfg.batch_size);
    let total_steps = cfg.n_epochs * steps_per_epoch;
    let mut optimizer = AdamW::new(model, weight_decay);
    let mut stats = Vec::with_capacity(cfg.n_epochs);
    let mut step = 0usize;
    let mut ctx = StepContext::new();
    let mut grads = ModelGrads::zeros_like(model);

    for epoch in 0..cfg.n_epochs {
        let order = draw_epoch(&plan, stream_seed, epoch as u64);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_indices: Vec<usize> = chunk.iter().map(|&j| all_indices[j]).collect();
            let positions: Vec<u64> = (0..chunk.len())
                .map(|j| (batch_no * cfg.batch_size + j) as u64)
                .collect();
            let (views, batch_labels) = build_view_batch(
                pool,
                &batch_indices,
                &positions,
                epoch as u64,
                stream_seed,
                method,
                &cfg.aug,
            );
            let loss = training_step(
                model,
                &views,
                &batch_labels,
                method,
                &cfg.loss,
                &mut ctx,
                &mut grads,
            )?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            let lr = cosine_lr(step, total_steps, lr_base);
            optimizer.step(model, &grads, lr);
            step += 1;
            epoch_loss += loss;
            n_batches += 1;
        }
        stats.push(EpochStat {
            epoch,
            loss: epoch_loss / n_batches.max(1) as f64,
            lr: cosine_lr(step, total_steps, lr_base),
        });
    }
    Ok(stats)
}

/// Forward slices without augmentation and return the positive-class
/// probability per slice.
pub fn predict_slices(
    model: &ModelState<f32>,
    pool: &SlicePool,
    slice_indices: &[usize],
) -> Result<Vec<SliceScore>, TrainError> {
    let images: Vec<Array2<f32>> = slice_indices
        .iter()
        .map(|&i| pool.slices[i].image.pixels.clone())
        .collect();
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let rep = model.backbone_forward(&images)?;
    let (logits, _) = model.cls_head_forward(&rep)?;
    let probs = losses::softmax_rows(&logits);
    Ok(slice_indices
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let s = &pool.slices[i];
            SliceScore {
                patient_id: pool.patient_ids[s.patient_idx].clone(),
                slice_index: s.image.slice_index,
                prob_positive: f64::from(probs[[row, 1]]),
                label: s.label,
            }
        })
        .collect())
}

/// Frozen 512-d backbone representations (no augmentation), f64 for the
/// probe.
pub fn extract_representations(
    model: &ModelState<f32>,
    pool: &SlicePool,
    slice_indices: &[usize],
) -> Result<Array2<f64>, TrainError> {
    let images: Vec<Array2<f32>> = slice_indices
        .iter()
        .map(|&i| pool.slices[i].image.pixels.clone())
        .collect();
    let rep = model.backbone_forward(&images)?;
    Ok(rep.mapv(f64::from))
}

pub struct PretrainArtifacts {
    pub model: ModelState<f32>,
    pub checkpoint_path: PathBuf,
    pub curve: Vec<EpochStat>,
}

/// Pretrain on the weakly-labeled cohort with the selected objective.
pub fn pretrain(
    cfg: &TrainConfig,
    manifest: &CohortManifest,
    method: LossMethod,
    central_fraction: f64,
    run_dir: &Path,
) -> Result<PretrainArtifacts, TrainError> {
    std::fs::create_dir_all(run_dir)?;
    let pool = build_pool(manifest, LabelChannel::Radio, central_fraction)?;
    let mut model = init_model::<f32>(cfg.seed);
    model.provenance = format!("pretrain:{}", method.as_str());
    let curve = run_training(
        &mut model,
        &pool,
        None,
        method,
        cfg,
        cfg.lr_pretrain,
        cfg.wd_pretrain,
        cfg.seed,
    )?;
    let checkpoint_path = run_dir.join("checkpoint.ckpt");
    save_checkpoint(&model, &checkpoint_path)?;
    write_loss_curve(&run_dir.join("loss_curve.csv"), &curve)?;
    Ok(PretrainArtifacts {
        model,
        checkpoint_path,
        curve,
    })
}

pub struct FinetuneRun {
    pub model: ModelState<f32>,
    pub predictions: Vec<SliceScore>,
    pub curve: Vec<EpochStat>,
    pub n_train_patients: usize,
}

/// Fine-tune on one fold of the histologically labeled cohort.
///
/// With a pretrained initialization the backbone and shared dense are
/// transferred and the classifier head is re-drawn; without one the whole
/// model starts from random weights. Validation slices are predicted
/// without augmentation.
pub fn finetune(
    cfg: &TrainConfig,
    pool: &SlicePool,
    fold: &FoldSplit,
    init: Option<&ModelState<f32>>,
) -> Result<FinetuneRun, TrainError> {
    let known: HashSet<&str> = pool.patient_ids.iter().map(String::as_str).collect();
    for pid in fold
        .train_patient_ids
        .iter()
        .chain(fold.val_patient_ids.iter())
    {
        if !known.contains(pid.as_str()) {
            return Err(TrainError::UnknownPatient {
                fold: fold.fold_index,
                patient: pid.clone(),
            });
        }
    }

    let fold_seed = derive_seed(&[cfg.seed, fold.fold_index as u64]);

    // Stratified train-fraction subsampling; validation is untouched.
    let train_labels: Vec<u8> = fold
        .train_patient_ids
        .iter()
        .map(|pid| {
            let idx = pool.patient_ids.iter().position(|p| p == pid).expect("known");
            pool.patient_labels[idx]
        })
        .collect();
    let kept = subsample_stratified(
        &fold.train_patient_ids,
        &train_labels,
        cfg.train_fraction,
        fold_seed,
    )?;

    let train_set: HashSet<&str> = kept.iter().map(String::as_str).collect();
    let val_set: HashSet<&str> = fold.val_patient_ids.iter().map(String::as_str).collect();
    let train_slices = pool.slices_of(&train_set);
    let val_slices = pool.slices_of(&val_set);

    let mut model = match init {
        Some(pretrained) => {
            let mut m = pretrained.clone();
            m.reinit_cls_head(fold_seed);
            m.provenance = format!("{}+finetune", pretrained.provenance);
            m
        }
        None => {
            let mut m = init_model::<f32>(fold_seed);
            m.provenance = "finetune:scratch".to_string();
            m
        }
    };

    let curve = run_training(
        &mut model,
        pool,
        Some(&train_slices),
        LossMethod::Weak,
        cfg,
        cfg.lr_finetune,
        cfg.wd_finetune,
        fold_seed,
    )?;
    let predictions = predict_slices(&model, pool, &val_slices)?;
    Ok(FinetuneRun {
        model,
        predictions,
        curve,
        n_train_patients: kept.len(),
    })
}

/// Outcome of the full k-fold protocol for one pretraining method.
pub struct CvOutcome {
    pub cv_linear: Option<ProcedureStats>,
    pub finetune: ProcedureStats,
}

/// Run both evaluation procedures over stratified folds.
///
/// The linear probe trains on frozen slice representations of the training
/// patients and is evaluated patient-level on the validation patients;
/// fine-tuning runs the full network per fold. `pretrained = None` is the
/// from-scratch baseline, which has no meaningful frozen representation,
/// so its probe column is absent.
pub fn run_cv(
    cfg: &TrainConfig,
    pool: &SlicePool,
    pretrained: Option<&ModelState<f32>>,
    out_dir: &Path,
) -> Result<CvOutcome, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let folds = stratified_kfold(&pool.patient_ids, &pool.patient_labels, cfg.k_folds, cfg.seed)?;

    let cv_linear = match pretrained {
        Some(model) => {
            let all: Vec<usize> = (0..pool.slices.len()).collect();
            let reps = extract_representations(model, pool, &all)?;
            let mut fold_metrics = Vec::with_capacity(folds.len());
            for fold in &folds {
                let fm = probe_fold(pool, &reps, fold, out_dir)?;
                fold_metrics.push(fm);
            }
            Some(aggregate_folds(&fold_metrics, cfg.k_folds))
        }
        None => None,
    };

    let mut fold_metrics = Vec::with_capacity(folds.len());
    for fold in &folds {
        let run = finetune(cfg, pool, fold, pretrained)?;
        let fold_dir = out_dir.join(format!("finetune_fold{}", fold.fold_index));
        std::fs::create_dir_all(&fold_dir)?;
        write_loss_curve(&fold_dir.join("loss_curve.csv"), &run.curve)?;
        write_predictions(&fold_dir.join("predictions.csv"), &run.predictions)?;
        save_checkpoint(&run.model, &fold_dir.join("checkpoint.ckpt"))?;
        fold_metrics.push(fold_metrics_from_slices(fold.fold_index, &run.predictions)?);
    }
    let finetune_stats = aggregate_folds(&fold_metrics, cfg.k_folds);

    Ok(CvOutcome {
        cv_linear,
        finetune: finetune_stats,
    })
}

/// Linear evaluation of one fold on frozen representations.
fn probe_fold(
    pool: &SlicePool,
    reps: &Array2<f64>,
    fold: &FoldSplit,
    out_dir: &Path,
) -> Result<FoldMetrics, TrainError> {
    let train_set: HashSet<&str> = fold.train_patient_ids.iter().map(String::as_str).collect();
    let val_set: HashSet<&str> = fold.val_patient_ids.iter().map(String::as_str).collect();
    let train_slices = pool.slices_of(&train_set);
    let val_slices = pool.slices_of(&val_set);

    let gather = |idx: &[usize]| -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((idx.len(), reps.ncols()));
        for (row, &i) in idx.iter().enumerate() {
            m.row_mut(row).assign(&reps.row(i));
        }
        m
    };
    let x_train = gather(&train_slices);
    let y_train: Vec<u8> = train_slices.iter().map(|&i| pool.slices[i].label).collect();
    let fit = fit_logistic(&x_train, &y_train, 1.0)?;

    let x_val = gather(&val_slices);
    let probs = fit.model.predict_proba(&x_val);
    let scores: Vec<SliceScore> = val_slices
        .iter()
        .zip(probs.iter())
        .map(|(&i, &p)| {
            let s = &pool.slices[i];
            SliceScore {
                patient_id: pool.patient_ids[s.patient_idx].clone(),
                slice_index: s.image.slice_index,
                prob_positive: p,
                label: s.label,
            }
        })
        .collect();
    let probe_dir = out_dir.join("probe");
    std::fs::create_dir_all(&probe_dir)?;
    write_predictions(
        &probe_dir.join(format!("predictions_fold{}.csv", fold.fold_index)),
        &scores,
    )?;
    Ok(fold_metrics_from_slices(fold.fold_index, &scores)?)
}

/// Probe-only protocol: stratified folds, frozen representations from an
/// existing checkpointed model, one linear evaluation per fold.
pub fn probe_cv(
    cfg: &TrainConfig,
    pool: &SlicePool,
    model: &ModelState<f32>,
    out_dir: &Path,
) -> Result<ProcedureStats, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let folds = stratified_kfold(&pool.patient_ids, &pool.patient_labels, cfg.k_folds, cfg.seed)?;
    let all: Vec<usize> = (0..pool.slices.len()).collect();
    let reps = extract_representations(model, pool, &all)?;
    let mut metrics = Vec::with_capacity(folds.len());
    for fold in &folds {
        metrics.push(probe_fold(pool, &reps, fold, out_dir)?);
    }
    Ok(aggregate_folds(&metrics, cfg.k_folds))
}

/// Ablation sweeps: the mixing weight or the training-data fraction.
#[derive(Debug, Clone)]
pub enum Sweep {
    Beta(Vec<f64>),
    Fraction(Vec<f64>),
}

pub struct AblationOutcome {
    pub rows: Vec<crate::eval::ReportRow>,
    /// (x, mean AUC, std AUC) triples for curve-style output.
    pub curve: Vec<(f64, Option<f64>, Option<f64>)>,
}

/// Run the full k-fold protocol once per sweep setting.
pub fn run_ablation(
    cfg: &TrainConfig,
    sweep: &Sweep,
    radio_manifest: Option<&CohortManifest>,
    histo_pool: &SlicePool,
    central_fraction: f64,
    out_dir: &Path,
) -> Result<AblationOutcome, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    match sweep {
        Sweep::Beta(values) => {
            let radio = radio_manifest.ok_or(TrainError::MissingRadioManifest)?;
            for &beta in values {
                let mut c = cfg.clone();
                c.loss.beta = beta;
                c.loss.method = LossMethod::WeakSimclr;
                let setting_dir = out_dir.join(format!("beta_{beta}"));
                let artifacts = pretrain(
                    &c,
                    radio,
                    LossMethod::WeakSimclr,
                    central_fraction,
                    &setting_dir.join("pretrain"),
                )?;
                let outcome = run_cv(&c, histo_pool, Some(&artifacts.model), &setting_dir)?;
                curve.push((
                    beta,
                    outcome.cv_linear.as_ref().and_then(|s| s.mean_auc),
                    outcome.cv_linear.as_ref().and_then(|s| s.std_auc),
                ));
                rows.push(crate::eval::ReportRow {
                    label: format!("{beta}"),
                    cv_linear: outcome.cv_linear,
                    finetune: Some(outcome.finetune),
                });
            }
        }
        Sweep::Fraction(values) => {
            for &fraction in values {
                let mut c = cfg.clone();
                c.train_fraction = fraction;
                let setting_dir = out_dir.join(format!("fraction_{fraction}"));
                let outcome = run_cv(&c, histo_pool, None, &setting_dir)?;
                curve.push((
                    fraction,
                    outcome.finetune.mean_auc,
                    outcome.finetune.std_auc,
                ));
                rows.push(crate::eval::ReportRow {
                    label: format!("{fraction}"),
                    cv_linear: None,
                    finetune: Some(outcome.finetune),
                });
            }
        }
    }
    Ok(AblationOutcome { rows, curve })
}

/// Convenience loader used by the CLI: checkpoint from disk.
pub fn load_pretrained(path: &Path) -> Result<ModelState<f32>, TrainError> {
    Ok(load_checkpoint(path)?)
}

/// Write `Procedure` metrics next to a run.
pub fn write_procedure_metrics(
    out_dir: &Path,
    method: &str,
    procedure: Procedure,
    stats: &ProcedureStats,
) -> Result<(), TrainError> {
    let path = out_dir.join(format!("metrics_{}.json", procedure.as_str()));
    crate::eval::write_metrics_json(&path, method, procedure, stats)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, SynthParams};
    use tempfile::TempDir;

    fn tiny_cohort(seed: u64, n_patients: usize) -> (TempDir, CohortManifest) {
        let dir = TempDir::new().unwrap();
        let params = SynthParams {
            n_patients,
            positive_fraction: 0.5,
            slices_per_patient: 3,
            image_size: 32,
            weak_noise_rate: 0.1,
            texture_strength: 1.5,
            seed,
        };
        let (manifest, _) = generate_synthetic_cohort(&params, dir.path()).unwrap();
        (dir, manifest)
    }

    fn fast_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            n_epochs: 1,
            k_folds: 2,
            lr_pretrain: 1e-3,
            lr_finetune: 1e-4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pool_selects_central_slices_and_labels() {
        let (_dir, manifest) = tiny_cohort(1, 4);
        let pool = build_pool(&manifest, LabelChannel::Radio, 0.7).unwrap();
        // ceil(0.7 * 3) = 3 slices per patient (all have liver).
        assert_eq!(pool.slices.len(), 12);
        for s in &pool.slices {
            assert_eq!(s.label, pool.patient_labels[s.patient_idx]);
        }
        // 0.34 keeps ceil(0.34*3) = 2 of 3 slices.
        let pool2 = build_pool(&manifest, LabelChannel::Radio, 0.34).unwrap();
        assert_eq!(pool2.slices.len(), 8);
    }

    #[test]
    fn missing_label_channel_is_an_error() {
        let (_dir, mut manifest) = tiny_cohort(2, 3);
        manifest.patients[1].y_radio = None;
        manifest.patients[1].radio_grade = None;
        match build_pool(&manifest, LabelChannel::Radio, 0.7) {
            Err(TrainError::MissingLabel { channel: "radio", .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn pretrain_each_method_smoke_and_determinism() {
        let (_dir, manifest) = tiny_cohort(3, 6);
        let out = TempDir::new().unwrap();
        let cfg = fast_config();
        for method in [
            LossMethod::Weak,
            LossMethod::Simclr,
            LossMethod::Supcon,
            LossMethod::WeakSimclr,
        ] {
            let a = pretrain(
                &cfg,
                &manifest,
                method,
                0.7,
                &out.path().join(format!("{}_a", method.as_str())),
            )
            .unwrap();
            let b = pretrain(
                &cfg,
                &manifest,
                method,
                0.7,
                &out.path().join(format!("{}_b", method.as_str())),
            )
            .unwrap();
            assert!(a.curve[0].loss.is_finite());
            assert!(
                (a.curve[0].loss - b.curve[0].loss).abs() < 1e-6,
                "{}: {} vs {}",
                method.as_str(),
                a.curve[0].loss,
                b.curve[0].loss
            );
            assert!(a.checkpoint_path.is_file());
        }
    }

    #[test]
    fn finetune_produces_val_predictions_and_respects_fraction() {
        let (_dir, manifest) = tiny_cohort(5, 10);
        let pool = build_pool(&manifest, LabelChannel::Histo, 0.7).unwrap();
        let cfg = fast_config();
        let folds =
            stratified_kfold(&pool.patient_ids, &pool.patient_labels, 2, cfg.seed).unwrap();
        let run = finetune(&cfg, &pool, &folds[0], None).unwrap();
        assert_eq!(
            run.predictions.len(),
            folds[0].val_patient_ids.len() * 3,
            "every selected val slice predicted"
        );
        for p in &run.predictions {
            assert!(folds[0].val_patient_ids.contains(&p.patient_id));
            assert!((0.0..=1.0).contains(&p.prob_positive));
        }
        assert_eq!(run.n_train_patients, folds[0].train_patient_ids.len());

        let mut cfg_frac = cfg.clone();
        cfg_frac.train_fraction = 0.5;
        let run_half = finetune(&cfg_frac, &pool, &folds[0], None).unwrap();
        assert!(run_half.n_train_patients < run.n_train_patients);
        // Same seed twice: identical probabilities.
        let run2 = finetune(&cfg, &pool, &folds[0], None).unwrap();
        for (a, b) in run.predictions.iter().zip(run2.predictions.iter()) {
            assert_eq!(a.prob_positive.to_bits(), b.prob_positive.to_bits());
        }
    }

    #[test]
    fn finetune_rejects_unknown_fold_patients() {
        let (_dir, manifest) = tiny_cohort(6, 4);
        let pool = build_pool(&manifest, LabelChannel::Histo, 0.7).unwrap();
        let fold = FoldSplit {
            fold_index: 0,
            train_patient_ids: vec!["p0000".into(), "ghost".into()],
            val_patient_ids: vec!["p0001".into()],
        };
        assert!(matches!(
            finetune(&fast_config(), &pool, &fold, None),
            Err(TrainError::UnknownPatient { .. })
        ));
    }
}
