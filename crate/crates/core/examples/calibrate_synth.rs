//! Calibration tool for the synthetic cohort difficulty.
//!
//! Reports (a) the linear-probe AUC on a random-init backbone and (b) an
//! optional from-scratch fine-tuned baseline, for a given texture strength.
//!
//! Usage: calibrate_synth <texture_strength> <n_histo> <epochs> <k> <seed> [baseline|pretrain[:<n_radio>:<pt_epochs>]]

use sliceclr_core::cohort::{generate_synthetic_cohort, SynthParams};
use sliceclr_core::harness::{
    build_pool, finetune, pretrain, probe_cv, stratified_kfold, LabelChannel, TrainConfig,
};
use sliceclr_core::losses::LossMethod;
use sliceclr_core::network::init_model;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let strength: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let n_histo: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(48);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(40);
    let k: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);
    let mode = args.get(6).cloned().unwrap_or_default();
    let run_baseline = mode == "baseline";

    let dir = tempfile::tempdir().unwrap();
    let params = SynthParams {
        n_patients: n_histo,
        positive_fraction: 0.4,
        slices_per_patient: 8,
        image_size: 64,
        weak_noise_rate: 0.2,
        texture_strength: strength,
        seed: 7000 + seed,
    };
    let (manifest, stats) = generate_synthetic_cohort(&params, dir.path()).unwrap();
    eprintln!(
        "cohort: {} patients, {} positive",
        stats.n_patients, stats.histo_positive
    );
    let pool = build_pool(&manifest, LabelChannel::Histo, 0.7).unwrap();

    let cfg = TrainConfig {
        n_epochs: epochs,
        k_folds: k,
        seed,
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let random_model = init_model::<f32>(seed);
    let probe_stats = probe_cv(&cfg, &pool, &random_model, &dir.path().join("probe")).unwrap();
    println!(
        "strength {strength}: random-feature probe AUC {:.4} (+/- {:.4}) [{:.1?}]",
        probe_stats.mean_auc.unwrap_or(f64::NAN),
        probe_stats.std_auc.unwrap_or(f64::NAN),
        t.elapsed()
    );

    if mode.starts_with("pretrain") {
        let parts: Vec<&str> = mode.split(':').collect();
        let n_radio: usize = parts.get(1).map(|v| v.parse().unwrap()).unwrap_or(400);
        let pt_epochs: usize = parts.get(2).map(|v| v.parse().unwrap()).unwrap_or(40);
        let radio_params = SynthParams {
            n_patients: n_radio,
            seed: 9000 + seed,
            ..params.clone()
        };
        let radio_dir = dir.path().join("radio");
        let (radio_manifest, rstats) =
            generate_synthetic_cohort(&radio_params, &radio_dir).unwrap();
        eprintln!(
            "radio cohort: {} patients, {} radio-positive",
            rstats.n_patients, rstats.radio_positive
        );
        let pt_cfg = TrainConfig {
            n_epochs: pt_epochs,
            ..cfg.clone()
        };
        let t = Instant::now();
        let artifacts = pretrain(
            &pt_cfg,
            &radio_manifest,
            LossMethod::WeakSimclr,
            0.7,
            &dir.path().join("pt"),
        )
        .unwrap();
        eprintln!(
            "pretrain {} epochs done in {:.0?}; first/last loss {:.4}/{:.4}",
            pt_epochs,
            t.elapsed(),
            artifacts.curve.first().unwrap().loss,
            artifacts.curve.last().unwrap().loss
        );
        let probe_stats =
            probe_cv(&cfg, &pool, &artifacts.model, &dir.path().join("ptprobe")).unwrap();
        println!(
            "strength {strength}: weak-SimCLR({pt_epochs}ep,{n_radio}pat) probe AUC {:.4} (+/- {:.4})",
            probe_stats.mean_auc.unwrap_or(f64::NAN),
            probe_stats.std_auc.unwrap_or(f64::NAN),
        );
    }

    if run_baseline {
        let t = Instant::now();
        let folds =
            stratified_kfold(&pool.patient_ids, &pool.patient_labels, cfg.k_folds, cfg.seed)
                .unwrap();
        let mut metrics = Vec::new();
        for fold in &folds {
            let run = finetune(&cfg, &pool, fold, None).unwrap();
            metrics.push(
                sliceclr_core::eval::fold_metrics_from_slices(fold.fold_index, &run.predictions)
                    .unwrap(),
            );
            eprintln!(
                "  fold {} AUC {:?} ({} train patients)",
                fold.fold_index,
                metrics.last().unwrap().auc,
                run.n_train_patients
            );
        }
        let stats = sliceclr_core::eval::aggregate_folds(&metrics, cfg.k_folds);
        println!(
            "strength {strength}: from-scratch baseline AUC {:.4} (+/- {:.4}) over {k} folds, {epochs} epochs [{:.1?}]",
            stats.mean_auc.unwrap_or(f64::NAN),
            stats.std_auc.unwrap_or(f64::NAN),
            t.elapsed()
        );
    }
}
