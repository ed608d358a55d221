//! Command-line entry point: synthetic data generation, pretraining,
//! fine-tuning, linear probing, cross-validated method comparison,
//! ablation sweeps, and report merging.
//!
//! Every failure exits non-zero with one machine-readable JSON error line
//! on stderr; exit status 0 means all requested artifacts were produced.

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sliceclr_core::cohort::{generate_synthetic_cohort, load_manifest, CohortError, CohortManifest};
use sliceclr_core::config::{parse_config, write_snapshot, ResolvedConfig};
use sliceclr_core::eval::{Procedure, ReportRow};
use sliceclr_core::harness::{
    build_pool, load_pretrained, pretrain, probe_cv, run_ablation, run_cv,
    write_procedure_metrics, LabelChannel, Sweep,
};
use sliceclr_core::losses::LossMethod;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sliceclr",
    about = "Weakly-supervised and self-supervised contrastive pretraining for 2D slice classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (flat key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Worker thread cap for data loading, augmentation and chunked
    /// forward/backward passes.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override both train.seed and synth.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config overrides (e.g. loss.beta=0.4).
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest, slices, masks, stats).
    GenSynth(CommonArgs),
    /// Pretrain on the weakly-labeled cohort with loss.method.
    Pretrain(CommonArgs),
    /// Cross-validated fine-tuning on the histological cohort.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to initialize from (otherwise from scratch).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Cross-validated linear probe on frozen representations.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        /// Pretrained checkpoint whose representations are probed.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full comparison grid: pretrain + both evaluation procedures per method.
    Cv {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated subset of none,weak,simclr,supcon,weak_simclr.
        #[arg(long, default_value = "none,weak,simclr,supcon,weak_simclr")]
        methods: String,
    },
    /// Ablation sweep: beta=v1,v2,... or fraction=v1,v2,...
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        sweep: String,
    },
    /// Merge metrics.json files from prior run directories into one table.
    Report {
        /// Run directories to scan (recursively) for metrics_*.json.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
    /// Itemized manifest violations, when the failure is a validation one.
    report: Option<serde_json::Value>,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
            report: None,
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError {
            code: "run_failed",
            message: e.to_string(),
            report: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut payload = json!({"error": {"code": e.code, "message": e.message}});
            if let Some(report) = e.report {
                payload["error"]["report"] = report;
            }
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn parse_overrides(args: &CommonArgs) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| {
            CliError::new("bad_override", format!("override {o:?} is not key=value"))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        pairs.push(("train.seed".to_string(), seed.to_string()));
        pairs.push(("synth.seed".to_string(), seed.to_string()));
    }
    Ok(pairs)
}

fn setup(args: &CommonArgs) -> Result<ResolvedConfig, CliError> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::new("jobs", e.to_string()))?;
    }
    let overrides = parse_overrides(args)?;
    let resolved = parse_config(args.config.as_deref(), &overrides)
        .map_err(|e| CliError::new("config", e.to_string()))?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::new("io", format!("cannot create {:?}: {e}", args.out)))?;
    write_snapshot(&resolved.config, &args.out.join("config_snapshot.cfg"))
        .map_err(|e| CliError::new("io", e.to_string()))?;
    Ok(resolved)
}

fn require_manifest(path: &Option<PathBuf>, key: &str) -> Result<CohortManifest, CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::new("config", format!("{key} is required for this command")))?;
    load_manifest(path).map_err(|e| {
        let mut err = CliError::new("manifest", e.to_string());
        if let CohortError::ValidationFailed(violations) = &e {
            err.report = serde_json::to_value(violations).ok();
        }
        err
    })
}

fn expect_artifacts(paths: &[PathBuf]) -> Result<(), CliError> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::new(
                "artifact_missing",
                format!("expected artifact {} was not produced", p.display()),
            ));
        }
    }
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<Option<LossMethod>>, CliError> {
    spec.split(',')
        .map(|m| {
            let m = m.trim();
            if m == "none" {
                Ok(None)
            } else {
                LossMethod::from_str_opt(m).map(Some).ok_or_else(|| {
                    CliError::new(
                        "methods",
                        format!(
                            "unknown method {m:?} (expected none|weak|simclr|supcon|weak_simclr)"
                        ),
                    )
                })
            }
        })
        .collect()
}

fn method_label(m: &Option<LossMethod>) -> &'static str {
    m.map_or("none", LossMethod::as_str)
}

fn print_stats(procedure: &str, stats: &sliceclr_core::eval::ProcedureStats) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "  {procedure}: AUC {} (+/- {}), balanced accuracy {} (+/- {}){}",
        fmt(stats.mean_auc),
        fmt(stats.std_auc),
        fmt(stats.mean_bal_acc),
        fmt(stats.std_bal_acc),
        if stats.complete { "" } else { " [incomplete]" }
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(args) => {
            let resolved = setup(&args)?;
            let (manifest, stats) = generate_synthetic_cohort(&resolved.config.synth, &args.out)?;
            println!(
                "generated cohort {}: {} patients ({} histo+, {} radio+), {} disagreements",
                manifest.cohort_name,
                stats.n_patients,
                stats.histo_positive,
                stats.radio_positive,
                stats.label_disagreements
            );
            expect_artifacts(&[args.out.join("manifest.jsonl"), args.out.join("stats.json")])
        }
        Command::Pretrain(args) => {
            let resolved = setup(&args)?;
            let method = resolved.config.train.loss.method;
            for w in resolved.warnings_for_method(method) {
                eprintln!("warning: {w}");
            }
            let manifest =
                require_manifest(&resolved.config.data.radio_manifest, "data.radio_manifest")?;
            let artifacts = pretrain(
                &resolved.config.train,
                &manifest,
                method,
                resolved.config.data.central_fraction,
                &args.out,
            )?;
            let last = artifacts.curve.last().expect("at least one epoch");
            println!(
                "pretrained {} for {} epochs; final loss {:.6}",
                method.as_str(),
                artifacts.curve.len(),
                last.loss
            );
            expect_artifacts(&[artifacts.checkpoint_path, args.out.join("loss_curve.csv")])
        }
        Command::Finetune { common, init } => {
            let resolved = setup(&common)?;
            let manifest =
                require_manifest(&resolved.config.data.histo_manifest, "data.histo_manifest")?;
            let pool = build_pool(
                &manifest,
                LabelChannel::Histo,
                resolved.config.data.central_fraction,
            )?;
            let pretrained = init.as_deref().map(load_pretrained).transpose()?;
            let label = pretrained
                .as_ref()
                .map_or("none".to_string(), |m| m.provenance.clone());
            let outcome = run_cv(&resolved.config.train, &pool, pretrained.as_ref(), &common.out)?;
            write_procedure_metrics(&common.out, &label, Procedure::Finetune, &outcome.finetune)?;
            if let Some(stats) = &outcome.cv_linear {
                write_procedure_metrics(&common.out, &label, Procedure::CvLinear, stats)?;
            }
            print_stats("finetune", &outcome.finetune);
            expect_artifacts(&[common.out.join("metrics_finetune.json")])
        }
        Command::Probe { common, checkpoint } => {
            let resolved = setup(&common)?;
            let manifest =
                require_manifest(&resolved.config.data.histo_manifest, "data.histo_manifest")?;
            let pool = build_pool(
                &manifest,
                LabelChannel::Histo,
                resolved.config.data.central_fraction,
            )?;
            let model = load_pretrained(&checkpoint)?;
            let stats = probe_cv(&resolved.config.train, &pool, &model, &common.out)?;
            write_procedure_metrics(&common.out, &model.provenance, Procedure::CvLinear, &stats)?;
            print_stats("cv_linear", &stats);
            expect_artifacts(&[common.out.join("metrics_cv_linear.json")])
        }
        Command::Cv { common, methods } => {
            let resolved = setup(&common)?;
            let methods = parse_methods(&methods)?;
            let histo =
                require_manifest(&resolved.config.data.histo_manifest, "data.histo_manifest")?;
            let pool = build_pool(
                &histo,
                LabelChannel::Histo,
                resolved.config.data.central_fraction,
            )?;
            let needs_radio = methods.iter().any(Option::is_some);
            let radio = if needs_radio {
                Some(require_manifest(
                    &resolved.config.data.radio_manifest,
                    "data.radio_manifest",
                )?)
            } else {
                None
            };

            let mut rows = Vec::new();
            for method in &methods {
                let label = method_label(method);
                let method_dir = common.out.join(label);
                std::fs::create_dir_all(&method_dir)
                    .map_err(|e| CliError::new("io", e.to_string()))?;
                let mut cfg = resolved.config.train.clone();
                let pretrained = match method {
                    Some(m) => {
                        for w in resolved.warnings_for_method(*m) {
                            eprintln!("warning: {w}");
                        }
                        cfg.loss.method = *m;
                        Some(
                            pretrain(
                                &cfg,
                                radio.as_ref().expect("radio manifest checked"),
                                *m,
                                resolved.config.data.central_fraction,
                                &method_dir.join("pretrain"),
                            )?
                            .model,
                        )
                    }
                    None => None,
                };
                let outcome = run_cv(&cfg, &pool, pretrained.as_ref(), &method_dir)?;
                write_procedure_metrics(&method_dir, label, Procedure::Finetune, &outcome.finetune)?;
                if let Some(stats) = &outcome.cv_linear {
                    write_procedure_metrics(&method_dir, label, Procedure::CvLinear, stats)?;
                }
                println!("== method {label}");
                if let Some(stats) = &outcome.cv_linear {
                    print_stats("cv_linear", stats);
                }
                print_stats("finetune", &outcome.finetune);
                rows.push(ReportRow {
                    label: label.to_string(),
                    cv_linear: outcome.cv_linear,
                    finetune: Some(outcome.finetune),
                });
            }
            let report_path = common.out.join("report.csv");
            sliceclr_core::eval::write_report_csv(&report_path, &rows)?;
            expect_artifacts(&[report_path])
        }
        Command::Ablate { common, sweep } => {
            let resolved = setup(&common)?;
            let (kind, values) = sweep.split_once('=').ok_or_else(|| {
                CliError::new("sweep", "expected beta=v1,v2,... or fraction=v1,v2,...")
            })?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        CliError::new("sweep", format!("cannot parse sweep value {v:?}"))
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(CliError::new("sweep", "sweep needs at least one value"));
            }
            let sweep = match kind.trim() {
                "beta" => Sweep::Beta(values),
                "fraction" => Sweep::Fraction(values),
                other => {
                    return Err(CliError::new(
                        "sweep",
                        format!("unknown sweep kind {other:?} (beta|fraction)"),
                    ))
                }
            };
            let histo =
                require_manifest(&resolved.config.data.histo_manifest, "data.histo_manifest")?;
            let pool = build_pool(
                &histo,
                LabelChannel::Histo,
                resolved.config.data.central_fraction,
            )?;
            let radio = match &sweep {
                Sweep::Beta(_) => Some(require_manifest(
                    &resolved.config.data.radio_manifest,
                    "data.radio_manifest",
                )?),
                Sweep::Fraction(_) => None,
            };
            let outcome = run_ablation(
                &resolved.config.train,
                &sweep,
                radio.as_ref(),
                &pool,
                resolved.config.data.central_fraction,
                &common.out,
            )?;
            let (table, curve, x_name) = match &sweep {
                Sweep::Beta(_) => ("beta_sweep.csv", "beta_curve.csv", "beta"),
                Sweep::Fraction(_) => ("fraction_sweep.csv", "fraction_curve.csv", "fraction"),
            };
            sliceclr_core::eval::write_report_csv(&common.out.join(table), &outcome.rows)?;
            sliceclr_core::eval::write_curve_csv(&common.out.join(curve), x_name, &outcome.curve)?;
            println!(
                "{} settings swept; table at {table}, curve at {curve}",
                outcome.rows.len()
            );
            expect_artifacts(&[common.out.join(table), common.out.join(curve)])
        }
        Command::Report { runs, out } => {
            let mut merged = Vec::new();
            for dir in &runs {
                collect_metrics(dir, &mut merged)?;
            }
            if merged.is_empty() {
                return Err(CliError::new(
                    "report",
                    "no metrics_*.json found under the given run directories",
                ));
            }
            let mut rows: std::collections::BTreeMap<String, ReportRow> =
                std::collections::BTreeMap::new();
            for report in merged {
                let entry = rows
                    .entry(report.method.clone())
                    .or_insert_with(|| ReportRow {
                        label: report.method.clone(),
                        cv_linear: None,
                        finetune: None,
                    });
                let stats = stats_from_json(&report);
                match report.procedure {
                    Procedure::CvLinear => entry.cv_linear = Some(stats),
                    Procedure::Finetune => entry.finetune = Some(stats),
                }
            }
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| CliError::new("io", e.to_string()))?;
                }
            }
            let rows: Vec<ReportRow> = rows.into_values().collect();
            sliceclr_core::eval::write_report_csv(&out, &rows)?;
            println!("merged {} method rows into {}", rows.len(), out.display());
            expect_artifacts(&[out])
        }
    }
}

fn collect_metrics(
    dir: &Path,
    out: &mut Vec<sliceclr_core::eval::MethodReport>,
) -> Result<(), CliError> {
    if !dir.exists() {
        return Err(CliError::new(
            "report",
            format!("run directory {} does not exist", dir.display()),
        ));
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::new("io", e.to_string()))? {
            let path = entry
                .map_err(|e| CliError::new("io", e.to_string()))?
                .path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".json"))
            {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::new("io", e.to_string()))?;
                let report: sliceclr_core::eval::MethodReport = serde_json::from_str(&text)
                    .map_err(|e| CliError::new("report", format!("{}: {e}", path.display())))?;
                out.push(report);
            }
        }
    }
    Ok(())
}

fn stats_from_json(
    report: &sliceclr_core::eval::MethodReport,
) -> sliceclr_core::eval::ProcedureStats {
    sliceclr_core::eval::ProcedureStats {
        folds: report
            .stats
            .folds
            .iter()
            .map(|f| sliceclr_core::eval::FoldMetrics {
                fold_index: f.fold,
                auc: f.auc,
                balanced_accuracy: f.bal_acc,
                n_val_patients: f.n_val_patients,
            })
            .collect(),
        n_folds_expected: report.stats.folds.len(),
        mean_auc: report.stats.mean_auc,
        std_auc: report.stats.std_auc,
        mean_bal_acc: report.stats.mean_bal_acc,
        std_bal_acc: report.stats.std_bal_acc,
        complete: report.stats.complete,
    }
}
