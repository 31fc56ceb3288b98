use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use slidegrade::classifier::Model;
use slidegrade::em::{run_em, split_corpus};
use slidegrade::features::{extract_features, read_feature_cache, write_feature_cache};
use slidegrade::heatmap::{
    classmap_from_heatmap, load_classmap_png, render_heatmap, save_classmap_png,
    save_heatmap_png, scale_probability, BetaThresholds,
};
use slidegrade::imaging::io::{load_mask_png, load_rgb_png, save_mask_png, save_rgb_png};
use slidegrade::metrics::{confusion_matrix, metrics_from_confusion, pixel_score};
use slidegrade::pipeline::{
    derive_seed, parse_label, read_manifest_records, run_pipeline, segment_image,
    write_manifest_records, PatchRecord, PipelineConfig, SegmentMethod,
};
use slidegrade::sample::{LabeledSample, PatchLabel};
use slidegrade::synthdata::{generate_slide_full, SlideSpec};
use slidegrade::tiling::{
    extract_patch_label, resize_patch, tile_slide, AnnotationSet, Patch, PatchLabelOutcome,
    TilingParams, Window,
};
use slidegrade::FeatureVector64;

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    edge_threshold: f64,
    #[arg(long, default_value_t = 45.0)]
    rgb_margin: f64,
    /// mst or otsu
    #[arg(long, default_value = "mst")]
    method: String,
}

pub fn segment(args: SegmentArgs) -> Result<()> {
    let method: SegmentMethod = args.method.parse()?;
    let image = load_rgb_png(&args.input)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let params = slidegrade::SegmentationParams64 {
        edge_threshold: args.edge_threshold,
        rgb_margin: args.rgb_margin,
    };
    let mask = segment_image(&image, method, &params)?;
    save_mask_png(&mask, &args.output)?;
    log::info!(
        "segmented {}: {} of {} pixels foreground",
        args.input.display(),
        mask.foreground_count(),
        mask.flags.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct TileArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Annotation JSON; omit for unlabeled tiling.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1536)]
    patch_size: u32,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 0.4)]
    min_fg: f64,
}

pub fn tile(args: TileArgs) -> Result<()> {
    let image = load_rgb_png(&args.image)?;
    let mask = load_mask_png(&args.mask)?;
    let annotations = match &args.annotations {
        Some(path) => {
            let set = AnnotationSet::load(path)?;
            set.validate(image.width, image.height)?;
            Some(set)
        }
        None => None,
    };
    let slide_id = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "slide".to_string());

    let params = TilingParams {
        patch_size: args.patch_size,
        overlap: args.overlap,
        min_fg: args.min_fg,
    };
    let patches = tile_slide(&slide_id, &image, &mask, &params)?;

    let patches_dir = args.out_dir.join("patches");
    fs::create_dir_all(&patches_dir)?;
    let mut records = Vec::with_capacity(patches.len());
    for patch in &patches {
        let file = format!("{slide_id}_{}_{}.png", patch.window.x, patch.window.y);
        save_rgb_png(&patch.pixels, patches_dir.join(&file))?;
        let label = annotations
            .as_ref()
            .map(|a| extract_patch_label(patch, a).to_string());
        records.push(PatchRecord {
            slide_id: slide_id.clone(),
            x: patch.window.x,
            y: patch.window.y,
            size: patch.window.size,
            slide_width: image.width,
            slide_height: image.height,
            fg_fraction: patch.fg_fraction,
            label,
            file: Some(file),
        });
    }
    write_manifest_records(args.out_dir.join("manifest.jsonl"), &records)?;
    log::info!("wrote {} patches to {}", records.len(), args.out_dir.display());
    println!("{}", records.len());
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// desk, mini, or foreground
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    for index in 0..args.count {
        let spec = SlideSpec::by_name(&args.preset, derive_seed(args.seed, index as u64))?;
        let slide = generate_slide_full(&spec)?;
        let stem = format!("s{index:03}");
        save_rgb_png(&slide.image, args.out_dir.join(format!("{stem}.png")))?;
        slide
            .annotations
            .save(args.out_dir.join(format!("{stem}.json")))?;
        log::info!("generated {stem} ({} regions)", slide.annotations.regions.len());
    }
    Ok(())
}

#[derive(Args)]
pub struct EmRunArgs {
    /// Directory holding the patch PNGs referenced by the manifest.
    #[arg(long)]
    patches: PathBuf,
    /// Patch manifest (JSON lines) with labels.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    annotated_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    quantile: f64,
    #[arg(long, default_value_t = slidegrade::TrainConfig64::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = slidegrade::TrainConfig64::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Resize patches before feature extraction; 0 keeps them as stored.
    #[arg(long, default_value_t = 0)]
    resize_to: u32,
    /// Optional binary feature cache reused across runs.
    #[arg(long)]
    feature_cache: Option<PathBuf>,
}

pub fn em_run(args: EmRunArgs) -> Result<()> {
    let records = read_manifest_records(&args.labels)?;
    let corpus = load_corpus(&records, &args.patches, args.resize_to, args.feature_cache.as_deref())?;
    if corpus.is_empty() {
        bail!("manifest contains no usable labeled patches");
    }
    log::info!("loaded {} labeled patches", corpus.len());

    let config = slidegrade::EmConfig64 {
        annotated_fraction: args.annotated_fraction,
        sigma: args.sigma,
        max_iterations: args.iterations,
        quantile: args.quantile,
        train: slidegrade::TrainConfig64 {
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            l2: args.l2,
            seed: args.seed,
        },
        seed: args.seed,
    };
    config.validate()?;
    let split = split_corpus(&corpus, args.annotated_fraction, args.holdout_fraction, args.seed)?;
    log::info!(
        "split: {} annotated, {} unannotated, {} held out",
        split.annotated.len(),
        split.unannotated.len(),
        split.held_out.len()
    );
    let (model, history) = run_em(&split.annotated, &split.unannotated, &split.held_out, &config)?;

    fs::create_dir_all(&args.out)?;
    model.save(args.out.join("model.json"))?;
    for record in &history.iterations {
        record
            .effective
            .save_jsonl(args.out.join(format!("effective_{}.jsonl", record.iteration)))?;
    }
    serde_json::to_writer_pretty(
        fs::File::create(args.out.join("history.json"))?,
        &history,
    )?;

    let summary = serde_json::json!({
        "patches": corpus.len(),
        "annotated": split.annotated.len(),
        "unannotated": split.unannotated.len(),
        "held_out": split.held_out.len(),
        "initial_accuracy": history.initial_held_out.as_ref().map(|m| m.accuracy),
        "final_accuracy": history.final_accuracy(),
        "iterations": history.iterations.len(),
        "effective_counts": history.iterations.iter().map(|r| r.effective_count).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_corpus(
    records: &[PatchRecord],
    patches_dir: &Path,
    resize_to: u32,
    cache: Option<&Path>,
) -> Result<Vec<LabeledSample<f64>>> {
    let labeled: Vec<(&PatchRecord, PatchLabel)> = records
        .iter()
        .filter_map(|r| match r.outcome() {
            Ok(Some(PatchLabelOutcome::Labeled(label))) => Some(Ok((r, label))),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<std::result::Result<_, _>>()?;

    if let Some(cache_path) = cache {
        if cache_path.exists() {
            let cached: Vec<(slidegrade::PatchId, FeatureVector64)> =
                read_feature_cache(cache_path)?;
            let expected: Vec<_> = labeled.iter().map(|(r, _)| r.id()).collect();
            let cached_ids: Vec<_> = cached.iter().map(|(id, _)| id.clone()).collect();
            if cached_ids == expected {
                log::info!("reusing feature cache {}", cache_path.display());
                return Ok(cached
                    .into_iter()
                    .zip(&labeled)
                    .map(|((id, features), (_, label))| LabeledSample {
                        id,
                        features,
                        label: *label,
                    })
                    .collect());
            }
            log::warn!("feature cache does not match manifest; recomputing");
        }
    }

    let mut corpus = Vec::with_capacity(labeled.len());
    for (record, label) in &labeled {
        let file = record
            .file
            .as_ref()
            .with_context(|| format!("record {} has no patch file", record.id()))?;
        let pixels = load_rgb_png(patches_dir.join(file))?;
        let patch = Patch {
            slide_id: record.slide_id.clone(),
            window: Window::new(record.x, record.y, record.size),
            pixels,
            fg_fraction: record.fg_fraction,
        };
        let patch = if resize_to > 0 && resize_to != patch.pixels.width {
            resize_patch(&patch, resize_to)?
        } else {
            patch
        };
        corpus.push(LabeledSample {
            id: record.id(),
            features: extract_features(&patch),
            label: *label,
        });
    }
    if let Some(cache_path) = cache {
        let entries: Vec<_> = corpus
            .iter()
            .map(|s| (s.id.clone(), s.features.clone()))
            .collect();
        write_feature_cache(cache_path, &entries)?;
        log::info!("wrote feature cache {}", cache_path.display());
    }
    Ok(corpus)
}

#[derive(Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    patches: PathBuf,
    /// Slide to render; defaults to the only slide in the manifest.
    #[arg(long)]
    slide: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.1, 0.5, 0.75])]
    beta: Vec<f64>,
    #[arg(long)]
    out_heatmap: PathBuf,
    #[arg(long)]
    out_classmap: PathBuf,
    #[arg(long, default_value_t = 0)]
    resize_to: u32,
}

pub fn heatmap(args: HeatmapArgs) -> Result<()> {
    let model: Model<f64> = Model::load(&args.model)?;
    let records = read_manifest_records(&args.manifest)?;
    let slide_id = match args.slide {
        Some(id) => id,
        None => {
            let mut ids: Vec<_> = records.iter().map(|r| r.slide_id.clone()).collect();
            ids.sort();
            ids.dedup();
            if ids.len() != 1 {
                bail!("manifest holds {} slides; pass --slide", ids.len());
            }
            ids.pop().unwrap()
        }
    };
    let slide_records: Vec<&PatchRecord> =
        records.iter().filter(|r| r.slide_id == slide_id).collect();
    if slide_records.is_empty() {
        bail!("no records for slide {slide_id}");
    }
    let (width, height) = (slide_records[0].slide_width, slide_records[0].slide_height);

    let mut tiles = Vec::new();
    for record in &slide_records {
        // Noisy patches were discarded upstream and carry no prediction.
        if matches!(record.outcome()?, Some(PatchLabelOutcome::Noisy)) {
            continue;
        }
        let file = record
            .file
            .as_ref()
            .with_context(|| format!("record {} has no patch file", record.id()))?;
        let pixels = load_rgb_png(args.patches.join(file))?;
        let patch = Patch {
            slide_id: record.slide_id.clone(),
            window: Window::new(record.x, record.y, record.size),
            pixels,
            fg_fraction: record.fg_fraction,
        };
        let patch = if args.resize_to > 0 && args.resize_to != patch.pixels.width {
            resize_patch(&patch, args.resize_to)?
        } else {
            patch
        };
        let prob = model.predict_proba(&extract_features(&patch))?;
        tiles.push((patch.window, scale_probability(&prob)));
    }

    let heatmap = render_heatmap(&tiles, width, height)?;
    let beta = BetaThresholds([args.beta[0], args.beta[1], args.beta[2]]);
    let classmap = classmap_from_heatmap(&heatmap, &beta)?;
    save_heatmap_png(&heatmap, &args.out_heatmap)?;
    save_classmap_png(&classmap, &args.out_classmap)?;
    log::info!("rendered {} tiles onto {width}x{height}", tiles.len());
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Predicted classmap PNG.
    #[arg(long, requires = "truth")]
    pred: Option<PathBuf>,
    /// Ground-truth classmap PNG.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Predicted patch manifest (labels compared by patch id).
    #[arg(long, requires = "truth_manifest")]
    pred_manifest: Option<PathBuf>,
    #[arg(long)]
    truth_manifest: Option<PathBuf>,
    /// Write the metrics JSON here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let mut output = serde_json::Map::new();

    if let (Some(pred), Some(truth)) = (&args.pred, &args.truth) {
        let pred = load_classmap_png(pred)?;
        let truth = load_classmap_png(truth)?;
        output.insert("score".into(), pixel_score::<f64>(&pred, &truth)?.into());
    }

    if let (Some(pred_path), Some(truth_path)) = (&args.pred_manifest, &args.truth_manifest) {
        let preds = labels_by_id(&read_manifest_records(pred_path)?)?;
        let truths = labels_by_id(&read_manifest_records(truth_path)?)?;
        let mut pred_labels = Vec::new();
        let mut truth_labels = Vec::new();
        for (id, truth_label) in &truths {
            if let Some(pred_label) = preds.get(id) {
                pred_labels.push(*pred_label);
                truth_labels.push(*truth_label);
            }
        }
        if pred_labels.is_empty() {
            bail!("manifests share no labeled patch ids");
        }
        let cm = confusion_matrix(&pred_labels, &truth_labels)?;
        let metrics = metrics_from_confusion::<f64>(&cm);
        output.insert("precision".into(), metrics.precision.into());
        output.insert("accuracy".into(), metrics.accuracy.into());
        output.insert("f1".into(), metrics.f1.into());
        output.insert("confusion".into(), serde_json::to_value(cm)?);
    }

    if output.is_empty() {
        bail!("nothing to score: pass --pred/--truth or --pred-manifest/--truth-manifest");
    }
    let rendered = serde_json::to_string_pretty(&serde_json::Value::Object(output))?;
    if let Some(out) = &args.out {
        fs::write(out, &rendered)?;
    }
    println!("{rendered}");
    Ok(())
}

fn labels_by_id(records: &[PatchRecord]) -> Result<BTreeMap<String, PatchLabel>> {
    let mut map = BTreeMap::new();
    for record in records {
        if let Some(name) = record.label.as_deref() {
            if name != "Noisy" {
                map.insert(record.id().as_str().to_string(), parse_label(name)?);
            }
        }
    }
    Ok(map)
}

#[derive(Args)]
pub struct PipelineArgs {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    patch_size: Option<u32>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    min_fg: Option<f64>,
    #[arg(long)]
    resize_to: Option<u32>,
    #[arg(long)]
    edge_threshold: Option<f64>,
    #[arg(long)]
    rgb_margin: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    annotated_fraction: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
}

pub fn pipeline(args: PipelineArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<PipelineConfig>(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.preset {
        config.synth.preset = v;
    }
    if let Some(v) = args.count {
        config.synth.count = v;
    }
    if let Some(v) = args.patch_size {
        config.tile.patch_size = v;
    }
    if let Some(v) = args.overlap {
        config.tile.overlap = v;
    }
    if let Some(v) = args.min_fg {
        config.tile.min_fg = v;
    }
    if let Some(v) = args.resize_to {
        config.tile.resize_to = v;
    }
    if let Some(v) = args.edge_threshold {
        config.segment.edge_threshold = v;
    }
    if let Some(v) = args.rgb_margin {
        config.segment.rgb_margin = v;
    }
    if let Some(v) = &args.method {
        config.segment.method = v.parse()?;
    }
    if let Some(v) = args.annotated_fraction {
        config.em.annotated_fraction = v;
    }
    if let Some(v) = args.sigma {
        config.em.sigma = v;
    }
    if let Some(v) = args.iterations {
        config.em.iterations = v;
    }
    if let Some(v) = args.quantile {
        config.em.quantile = v;
    }
    if let Some(v) = args.holdout_fraction {
        config.em.holdout_fraction = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.l2 {
        config.train.l2 = v;
    }

    let report = run_pipeline(&config, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(())
}
