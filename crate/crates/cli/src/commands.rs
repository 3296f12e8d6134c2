use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use cxrsynth::dataset::{
    ingest_chest_xray_folder, stratified_split, ClassLabel, DatasetManifest, Ingested, Source,
    Split,
};
use cxrsynth::generation::{
    collect_class, curate_dataset, CurationConfig, GenerationProvider, RetryPolicy, StubProvider,
};
use cxrsynth::metrics::{
    bootstrap_ci, pr_curve, prevalence_baseline, roc_curve, write_pr_csv, write_roc_csv,
    MetricReport, RankingMetric, ScoredLabels,
};
use cxrsynth::model::{
    build_model, device, extract_features, grad_cam, load_input, predict_proba, train, Backbone,
    CamTarget, Checkpoint, ClassifierModel, ResNet50, StubCnn,
};
use cxrsynth::par::Execution;
use cxrsynth::raster::Raster;
use cxrsynth::representation::{embed_2d, evaluate_clustering, write_embedding_csv, KmeansConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{BackboneConfig, ProviderConfig, RunConfig};
use crate::overlay;
use crate::run::Run;

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{flag}: {} does not exist", path.display());
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ClassifierModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ckpt.model()?)
}

/// The backbone named by the config, before any fine-tuning.
pub fn pristine_backbone(cfg: &RunConfig) -> Result<Box<dyn Backbone>> {
    Ok(match &cfg.backbone {
        BackboneConfig::Stub => Box::new(StubCnn::new(cfg.seed, &device())?),
        BackboneConfig::Resnet50 { weights, corpus } => {
            Box::new(ResNet50::from_safetensors(weights, corpus, &device())?)
        }
    })
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// File-name-safe form of a record id (ids may contain slashes).
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn scored(scores: &[(String, f64)], manifest: &DatasetManifest) -> Result<ScoredLabels> {
    Ok(ScoredLabels::new(scores.iter().map(|s| s.1).collect(), manifest.labels())?)
}

/// AUROC/AUPR with bootstrap CIs plus ROC/PR curve CSVs, all under `metrics/`.
fn write_metrics(
    run: &mut Run,
    cfg: &RunConfig,
    data: &ScoredLabels,
    dataset: &str,
    model_tag: &str,
) -> Result<Vec<MetricReport>> {
    let dir = run.path("metrics");
    std::fs::create_dir_all(&dir)?;
    let mut reports = Vec::new();
    for metric in [RankingMetric::Auroc, RankingMetric::Aupr] {
        let est = bootstrap_ci(metric, data, cfg.bootstrap, cfg.seed, Execution::Parallel)?;
        let report = MetricReport::new(dataset, model_tag, metric.name(), &est);
        let path = dir.join(format!("{}_{}_{}.json", safe_name(dataset), safe_name(model_tag), metric.name()));
        report.save(&path)?;
        run.artifact(&path);
        println!(
            "{dataset} / {model_tag}: {} {:.4} [{:.4}, {:.4}]",
            metric.name(),
            est.point,
            est.ci_low,
            est.ci_high
        );
        reports.push(report);
    }
    let stem = format!("{}_{}", safe_name(dataset), safe_name(model_tag));
    let roc = run.path(format!("curves/{stem}_roc.csv"));
    let pr = run.path(format!("curves/{stem}_pr.csv"));
    std::fs::create_dir_all(run.path("curves"))?;
    write_roc_csv(&roc_curve(data)?, &roc)?;
    write_pr_csv(&pr_curve(data)?, &pr)?;
    run.artifact(&roc);
    run.artifact(&pr);
    run.record.metrics.extend(reports.iter().cloned());
    Ok(reports)
}

// ------------------------------------------------------------------ curate

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Override `crop_fraction` (0 gives the uncropped "raw" arm).
    #[arg(long)]
    pub crop_fraction: Option<f64>,
    /// Override `images_per_class`.
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Serialize)]
struct CurationLog<'a> {
    provider: &'a str,
    requested_per_class: usize,
    received: usize,
    crop_fraction: f64,
    rejections: &'a [cxrsynth::generation::Rejection],
    class_counts: BTreeMap<ClassLabel, usize>,
    seed: u64,
}

fn make_provider(cfg: &RunConfig) -> Result<(Box<dyn GenerationProvider>, Source)> {
    match &cfg.provider {
        ProviderConfig::Stub => Ok((Box::new(StubProvider::new(cfg.seed)), Source::ProceduralStub)),
        #[cfg(feature = "remote")]
        ProviderConfig::Remote { endpoint, name } => Ok((
            Box::new(cxrsynth::generation::RemoteProvider::from_env(name.clone(), endpoint.clone())?),
            Source::NanoBanana,
        )),
        #[cfg(not(feature = "remote"))]
        ProviderConfig::Remote { .. } => bail!("this build has no remote provider (enable the `remote` feature)"),
    }
}

pub fn split_counts(m: &DatasetManifest) -> BTreeMap<String, BTreeMap<ClassLabel, usize>> {
    let mut out: BTreeMap<String, BTreeMap<ClassLabel, usize>> = BTreeMap::new();
    for r in m.records() {
        let key = serde_json::to_value(r.split)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *out.entry(key).or_default().entry(r.label).or_default() += 1;
    }
    out
}

pub fn apply_curate_overrides(cfg: &mut RunConfig, args: &CurateArgs) {
    if let Some(f) = args.crop_fraction {
        cfg.crop_fraction = f;
    }
    if let Some(n) = args.per_class {
        cfg.images_per_class = n;
    }
}

pub fn run_curate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (provider, source) = make_provider(cfg)?;
    let raw_dir = run.path("raw");
    let mut raw = Vec::new();
    run.stage("generate", |_| {
        for class in ClassLabel::ALL {
            let imgs = collect_class(
                provider.as_ref(),
                class,
                cfg.images_per_class,
                cfg.generation_batch,
                RetryPolicy::default(),
                Some(&raw_dir),
                &format!("s{}", cfg.seed),
            )?;
            raw.extend(imgs.into_iter().map(|i| (i, class)));
        }
        Ok(())
    })?;
    let store = cfg.paths.curated_store.clone().unwrap_or_else(|| run.path("store"));
    let curated = run.stage("curate", |_| {
        let mut c = CurationConfig::new(&store);
        c.crop_fraction = cfg.crop_fraction;
        c.source = source;
        Ok(curate_dataset(&raw, &c, cfg.seed)?)
    })?;
    let manifest = run.stage("split", |_| Ok(stratified_split(&curated.manifest, cfg.split, cfg.seed)?))?;
    let path = run.path("manifest.json");
    manifest.save(&path)?;
    run.artifact(&path);
    run.write_json(
        "curation_log.json",
        &CurationLog {
            provider: provider.name(),
            requested_per_class: cfg.images_per_class,
            received: raw.len(),
            crop_fraction: cfg.crop_fraction,
            rejections: &curated.rejections,
            class_counts: manifest.class_counts().clone(),
            seed: cfg.seed,
        },
    )?;
    run.write_json("split_report.json", &split_counts(&manifest))?;
    println!("{}", path.display());
    Ok(())
}

// ------------------------------------------------------------------ ingest

#[derive(Debug, Subcommand)]
pub enum IngestKind {
    /// Folder corpus with NORMAL/PNEUMONIA directories (defaults to paths.chest_xray_root).
    ChestXray {
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// RSNA DICOM corpus (defaults to paths.rsna_images / paths.rsna_labels).
    Rsna {
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Pre-generated NORMAL/PNEUMONIA folder, e.g. a comparison generator's
    /// output; `--split` assigns train/val/test with the configured sizes.
    Folder {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "roentgen_v2")]
        source: String,
        #[arg(long)]
        split: bool,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(subcommand)]
    pub kind: IngestKind,
}

fn resolve<'a>(flag: &'a Option<PathBuf>, cfg: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(cfg.as_deref())
        .ok_or_else(|| anyhow!("no {name} given (flag or config)"))
}

pub fn check_ingest(cfg: &RunConfig, args: &IngestArgs) -> Result<()> {
    match &args.kind {
        IngestKind::ChestXray { root } => {
            resolve(root, &cfg.paths.chest_xray_root, "--root")?;
        }
        IngestKind::Rsna { images, labels } => {
            resolve(images, &cfg.paths.rsna_images, "--images")?;
            require_file("--labels", resolve(labels, &cfg.paths.rsna_labels, "--labels")?)?;
        }
        IngestKind::Folder { source, .. } => {
            source.parse::<Source>().map_err(|_| anyhow!("unknown source {source:?}"))?;
        }
    }
    Ok(())
}

#[cfg(feature = "dicom")]
fn ingest_rsna(images: &Path, labels: &Path) -> Result<Ingested> {
    Ok(cxrsynth::dataset::ingest_rsna(images, labels, &cxrsynth::dataset::medical::DicomDecoder)?)
}

#[cfg(not(feature = "dicom"))]
fn ingest_rsna(_: &Path, _: &Path) -> Result<Ingested> {
    bail!("this build cannot decode DICOM (enable the `dicom` feature)")
}

pub fn run_ingest(cfg: &RunConfig, args: &IngestArgs, run: &mut Run) -> Result<()> {
    let ingested = run.stage("ingest", |_| match &args.kind {
        IngestKind::ChestXray { root } => {
            Ok(ingest_chest_xray_folder(resolve(root, &cfg.paths.chest_xray_root, "--root")?)?)
        }
        IngestKind::Rsna { images, labels } => ingest_rsna(
            resolve(images, &cfg.paths.rsna_images, "--images")?,
            resolve(labels, &cfg.paths.rsna_labels, "--labels")?,
        ),
        IngestKind::Folder { root, source, split } => {
            let source: Source = source.parse()?;
            let found = ingest_chest_xray_folder(root)?;
            let records = found
                .manifest
                .records()
                .iter()
                .cloned()
                .map(|mut r| {
                    r.source = source;
                    r.split = Split::Unassigned;
                    r
                })
                .collect();
            let mut manifest = DatasetManifest::new(records, found.manifest.provenance().clone())?;
            if *split {
                manifest = stratified_split(&manifest, cfg.split, cfg.seed)?;
            }
            Ok(Ingested {
                manifest,
                skipped: found.skipped,
            })
        }
    })?;
    let m = &ingested.manifest;
    let path = run.path("manifest.json");
    m.save(&path)?;
    run.artifact(&path);
    run.write_json("skipped.json", &ingested.skipped)?;
    let labels = m.labels();
    println!(
        "{} records ({} healthy / {} pneumonia, prevalence {:.4}), {} skipped",
        m.len(),
        m.count(ClassLabel::Healthy),
        m.count(ClassLabel::Pneumonia),
        prevalence_baseline(&labels).unwrap_or(f64::NAN),
        ingested.skipped.len()
    );
    println!("{}", path.display());
    Ok(())
}

// ------------------------------------------------------------------ train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split manifest (from `curate` or `ingest folder --split`).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model_tag: Option<String>,
}

pub fn check_train(args: &TrainArgs) -> Result<()> {
    require_file("--manifest", &args.manifest)
}

pub fn run_train(cfg: &RunConfig, args: &TrainArgs, run: &mut Run) -> Result<()> {
    let tag = args.model_tag.clone().unwrap_or_else(|| cfg.model_tag.clone());
    let manifest = load_manifest(&args.manifest)?;
    let model = build_model(pristine_backbone(cfg)?, cfg.hidden_width, cfg.seed)?;
    let log_path = run.path("epoch_log.jsonl");
    let outcome = run.stage("train", |_| {
        Ok(train(
            &model,
            &manifest.subset(Split::Train),
            &manifest.subset(Split::Val),
            &cfg.train,
            &cfg.augment,
            Some(&log_path),
        )?)
    })?;
    run.artifact(&log_path);
    let ckpt_path = run.path("checkpoint.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;
    run.artifact(&ckpt_path);
    println!(
        "selected epoch {} (validation AUROC {:.4})",
        outcome.checkpoint.meta.epoch,
        outcome.checkpoint.meta.val_metric.unwrap_or(f64::NAN)
    );
    let test = manifest.subset(Split::Test);
    if !test.is_empty() {
        let best = outcome.checkpoint.model()?;
        let scores = run.stage("internal_test", |_| Ok(predict_proba(&best, &test, Execution::Parallel)?))?;
        write_metrics(run, cfg, &scored(&scores, &test)?, "internal_test", &tag)?;
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

// ------------------------------------------------------------------ eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset name used in reports; defaults to the manifest's parent
    /// directory or file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub model_tag: Option<String>,
    /// Only evaluate records of this split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    EvalExternal,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
            SplitArg::EvalExternal => Split::EvalExternal,
        }
    }
}

pub fn check_model_inputs(checkpoint: &Path, manifest: &Path) -> Result<()> {
    require_file("--checkpoint", checkpoint)?;
    require_file("--manifest", manifest)
}

fn dataset_name(given: &Option<String>, manifest: &Path) -> String {
    given.clone().unwrap_or_else(|| {
        manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

#[derive(Serialize)]
struct EvalSummary {
    dataset: String,
    model_tag: String,
    n: usize,
    positives: usize,
    prevalence_baseline: f64,
    checkpoint_sha256: String,
    manifest_sha256: String,
    reports: Vec<MetricReport>,
}

pub fn run_eval(cfg: &RunConfig, args: &EvalArgs, run: &mut Run) -> Result<()> {
    let tag = args.model_tag.clone().unwrap_or_else(|| cfg.model_tag.clone());
    let dataset = dataset_name(&args.dataset, &args.manifest);
    let before = (file_sha256(&args.checkpoint)?, file_sha256(&args.manifest)?);
    let model = load_checkpoint(&args.checkpoint)?;
    let mut manifest = load_manifest(&args.manifest)?;
    if let Some(s) = args.split {
        manifest = manifest.subset(s.into());
    }
    if manifest.is_empty() {
        bail!("no records to evaluate in {}", args.manifest.display());
    }
    let scores = run.stage("predict", |_| Ok(predict_proba(&model, &manifest, Execution::Parallel)?))?;
    let pred_path = run.path("predictions.csv");
    let mut w = String::from("record_id,label,score\n");
    for ((id, s), r) in scores.iter().zip(manifest.records()) {
        w += &format!("{id},{},{s}\n", r.label.index());
    }
    std::fs::write(&pred_path, w)?;
    run.artifact(&pred_path);
    let data = scored(&scores, &manifest)?;
    let reports = run.stage("bootstrap", |run| write_metrics(run, cfg, &data, &dataset, &tag))?;
    let after = (file_sha256(&args.checkpoint)?, file_sha256(&args.manifest)?);
    if before != after {
        bail!("checkpoint or manifest changed during evaluation");
    }
    run.write_json(
        "eval_summary.json",
        &EvalSummary {
            dataset,
            model_tag: tag,
            n: data.len(),
            positives: data.positives(),
            prevalence_baseline: prevalence_baseline(data.labels())?,
            checkpoint_sha256: before.0,
            manifest_sha256: before.1,
            reports,
        },
    )?;
    Ok(())
}

// ------------------------------------------------------------------ cluster

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fine-tuned variant as TAG=CHECKPOINT; repeatable.
    #[arg(long = "model", value_parser = parse_variant)]
    pub models: Vec<(String, PathBuf)>,
    /// Also cluster features of the configured backbone without fine-tuning.
    #[arg(long)]
    pub no_finetune: bool,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also write the raw feature matrices as CSV.
    #[arg(long)]
    pub write_features: bool,
}

fn parse_variant(s: &str) -> Result<(String, PathBuf), String> {
    let (tag, path) = s.split_once('=').ok_or("expected TAG=CHECKPOINT")?;
    if tag.is_empty() || path.is_empty() {
        return Err("expected TAG=CHECKPOINT".into());
    }
    Ok((tag.to_string(), PathBuf::from(path)))
}

pub fn check_cluster(args: &ClusterArgs) -> Result<()> {
    require_file("--manifest", &args.manifest)?;
    if args.models.is_empty() && !args.no_finetune {
        bail!("nothing to cluster: give --model TAG=CHECKPOINT and/or --no-finetune");
    }
    for (tag, path) in &args.models {
        require_file(&format!("--model {tag}"), path)?;
    }
    Ok(())
}

pub fn run_cluster(cfg: &RunConfig, args: &ClusterArgs, run: &mut Run) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let dataset = dataset_name(&args.dataset, &args.manifest);
    let labels: Vec<ClassLabel> = manifest.records().iter().map(|r| r.label).collect();
    let mut variants: Vec<(String, ClassifierModel)> = Vec::new();
    for (tag, path) in &args.models {
        variants.push((tag.clone(), load_checkpoint(path)?));
    }
    if args.no_finetune {
        variants.push((
            "no_finetune".into(),
            build_model(pristine_backbone(cfg)?, cfg.hidden_width, cfg.seed)?,
        ));
    }
    let kcfg = KmeansConfig {
        restarts: cfg.kmeans_restarts,
        ..KmeansConfig::new(2, cfg.seed)
    };
    for (tag, model) in &variants {
        let stem = format!("{}_{}", safe_name(&dataset), safe_name(tag));
        let features = run.stage(&format!("features {tag}"), |_| {
            Ok(extract_features(model, &manifest, tag, Execution::Parallel)?)
        })?;
        if args.write_features {
            let p = run.path(format!("features/{stem}.csv"));
            features.write_csv(&p)?;
            run.artifact(&p);
        }
        let report = run.stage(&format!("kmeans {tag}"), |_| {
            Ok(evaluate_clustering(&features, &labels, &kcfg, cfg.standardize_features, Execution::Parallel)?)
        })?;
        println!("{dataset} / {tag}: Acc {:.4}, ARI {:.4}", report.accuracy, report.ari);
        run.write_json(&format!("cluster/{stem}.json"), &report)?;
        let embedding = run.stage(&format!("embed {tag}"), |_| {
            Ok(embed_2d(&features, cfg.seed, cfg.embed_method, Execution::Parallel)?)
        })?;
        let p = run.path(format!("embedding/{stem}.csv"));
        std::fs::create_dir_all(run.path("embedding"))?;
        write_embedding_csv(&p, features.record_ids(), &embedding.coords, &labels, &report.assignments)?;
        run.artifact(&p);
        run.write_json(
            &format!("embedding/{stem}.json"),
            &serde_json::json!({"method": embedding.method, "params": embedding.params, "seed": embedding.seed}),
        )?;
    }
    Ok(())
}

// ------------------------------------------------------------------ explain

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Predicted,
    Healthy,
    Pneumonia,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Record ids; repeatable or comma-separated.
    #[arg(long = "id", value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long, value_enum, default_value = "predicted")]
    pub target: TargetArg,
}

pub fn run_explain(args: &ExplainArgs, run: &mut Run) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let unknown: Vec<&str> = args
        .ids
        .iter()
        .filter(|id| manifest.get(id).is_none())
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        bail!("unknown record id(s): {}", unknown.join(", "));
    }
    let model = load_checkpoint(&args.checkpoint)?;
    let target = match args.target {
        TargetArg::Predicted => CamTarget::Predicted,
        TargetArg::Healthy => CamTarget::Class(ClassLabel::Healthy),
        TargetArg::Pneumonia => CamTarget::Class(ClassLabel::Pneumonia),
    };
    std::fs::create_dir_all(run.path("overlays"))?;
    for id in &args.ids {
        let record = manifest.get(id).expect("checked above");
        let cam = run.stage(&format!("cam {id}"), |_| Ok(grad_cam(&model, &load_input(record)?, target)?))?;
        let name = safe_name(id);
        run.write_json(&format!("cams/{name}.json"), &cam)?;
        let img = Raster::load(&record.path)?;
        let png = run.path(format!("overlays/{name}.png"));
        overlay::render(&img, &cam).save_png(&png)?;
        run.artifact(&png);
        println!("{id}: target {} score {:.4}", cam.target_class.as_str(), cam.score);
    }
    Ok(())
}
