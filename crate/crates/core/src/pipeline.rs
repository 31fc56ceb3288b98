//! End-to-end orchestration: declarative config, per-slide preparation,
//! the experiment driver, and artifact persistence.
//!
//! Outputs are staged into a `.partial` sibling directory and renamed into
//! place on success, so a failed run never leaves a half-written artifact
//! directory. The run manifest records the config, crate version, and a
//! sha256 per artifact; reruns with the same config and seed are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::TrainConfig;
use crate::em::{run_em, split_corpus, EmConfig};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::heatmap::{
    classmap_from_heatmap, render_heatmap, save_classmap_png, save_heatmap_png, scale_probability,
    BetaThresholds,
};
use crate::imaging::io::{save_mask_png, save_rgb_png};
use crate::imaging::{
    mst_foreground_extract, otsu_foreground_extract, ForegroundMask, RasterImage,
    SegmentationParams,
};
use crate::metrics::{confusion_matrix, metrics_from_confusion, pixel_score, ConfusionMatrix};
use crate::sample::{LabeledSample, PatchLabel};
use crate::scalar::Real;
use crate::synthdata::{generate_slide_full, truth_classmap, SlideSpec};
use crate::tiling::{
    extract_patch_label, resize_patch, tile_slide, AnnotationSet, PatchLabelOutcome, TilingParams,
    Window,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMethod {
    Mst,
    Otsu,
}

impl std::str::FromStr for SegmentMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mst" => Ok(SegmentMethod::Mst),
            "otsu" => Ok(SegmentMethod::Otsu),
            other => Err(Error::invalid_config(format!(
                "unknown segmentation method '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub preset: String,
    pub count: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: "desk".to_string(),
            count: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentSection {
    pub method: SegmentMethod,
    pub edge_threshold: f64,
    pub rgb_margin: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            method: SegmentMethod::Mst,
            edge_threshold: 100.0,
            rgb_margin: 45.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TileSection {
    pub patch_size: u32,
    pub overlap: f64,
    pub min_fg: f64,
    /// Classifier input size; 0 disables resizing.
    pub resize_to: u32,
}

impl Default for TileSection {
    fn default() -> Self {
        Self {
            patch_size: 1536,
            overlap: 0.5,
            min_fg: 0.4,
            resize_to: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSection {
    pub annotated_fraction: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub quantile: f64,
    pub holdout_fraction: f64,
}

impl Default for EmSection {
    fn default() -> Self {
        Self {
            annotated_fraction: 0.3,
            sigma: 0.9,
            iterations: 2,
            quantile: 0.2,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let config = TrainConfig::<f64>::default();
        Self {
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            l2: config.l2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapSection {
    pub beta: [f64; 3],
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            beta: [0.1, 0.5, 0.75],
        }
    }
}

/// Declarative run configuration. Every constant of the method appears
/// here as a named, defaulted key: MST edge threshold 100 and margin 45,
/// patch size 1536 at 50% overlap with the 40% foreground cutoff, the
/// 512-pixel classifier input, hard-example quantile 0.2, and the beta
/// thresholds (0.1, 0.5, 0.75).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthSection,
    pub segment: SegmentSection,
    pub tile: TileSection,
    pub em: EmSection,
    pub train: TrainSection,
    pub heatmap: HeatmapSection,
}

impl PipelineConfig {
    /// Desk-scale preset: 3072 slides tiled with 256-pixel patches resized
    /// to 128, everything else at production defaults.
    pub fn desk() -> Self {
        let mut config = Self::default();
        config.tile.patch_size = 256;
        config.tile.resize_to = 128;
        config
    }

    /// Small fast preset matching the `mini` synth slides.
    pub fn mini() -> Self {
        let mut config = Self::default();
        config.synth.preset = "mini".to_string();
        config.synth.count = 4;
        config.tile.patch_size = 128;
        config.tile.resize_to = 0;
        config
    }

    pub fn segmentation_params(&self) -> SegmentationParams<f64> {
        SegmentationParams {
            edge_threshold: self.segment.edge_threshold,
            rgb_margin: self.segment.rgb_margin,
        }
    }

    pub fn tiling_params(&self) -> TilingParams {
        TilingParams {
            patch_size: self.tile.patch_size,
            overlap: self.tile.overlap,
            min_fg: self.tile.min_fg,
        }
    }

    pub fn em_config(&self) -> EmConfig<f64> {
        EmConfig {
            annotated_fraction: self.em.annotated_fraction,
            sigma: self.em.sigma,
            max_iterations: self.em.iterations,
            quantile: self.em.quantile,
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                epochs: self.train.epochs,
                l2: self.train.l2,
                seed: self.seed,
            },
            seed: self.seed,
        }
    }

    pub fn beta(&self) -> BetaThresholds<f64> {
        BetaThresholds(self.heatmap.beta)
    }

    /// Validates every section against its module's preconditions before
    /// any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.synth.count == 0 {
            return Err(Error::invalid_config("synth.count must be >= 1"));
        }
        SlideSpec::by_name(&self.synth.preset, 0)?;
        self.segmentation_params().validate()?;
        self.tiling_params().validate()?;
        self.em_config().validate()?;
        if !(self.em.holdout_fraction > 0.0 && self.em.holdout_fraction < 1.0) {
            return Err(Error::invalid_config("holdout_fraction must be in (0, 1)"));
        }
        self.beta().validate()?;
        Ok(())
    }
}

/// One manifest row per generated patch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub slide_width: u32,
    pub slide_height: u32,
    pub fg_fraction: f64,
    /// "Normal" | "Benign" | "InSitu" | "Invasive" | "Noisy", or absent
    /// when no annotations were supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    /// Patch PNG filename, when patches are materialized on disk.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub file: Option<String>,
}

impl PatchRecord {
    pub fn id(&self) -> crate::sample::PatchId {
        crate::sample::PatchId::for_tile(&self.slide_id, self.x, self.y)
    }

    pub fn outcome(&self) -> Result<Option<PatchLabelOutcome>> {
        match self.label.as_deref() {
            None => Ok(None),
            Some("Noisy") => Ok(Some(PatchLabelOutcome::Noisy)),
            Some(name) => parse_label(name).map(|l| Some(PatchLabelOutcome::Labeled(l))),
        }
    }
}

pub fn parse_label(name: &str) -> Result<PatchLabel> {
    match name {
        "Normal" => Ok(PatchLabel::Normal),
        "Benign" => Ok(PatchLabel::Benign),
        "InSitu" => Ok(PatchLabel::InSitu),
        "Invasive" => Ok(PatchLabel::Invasive),
        other => Err(Error::invalid_input(format!("unknown label '{other}'"))),
    }
}

pub fn write_manifest_records(path: impl AsRef<Path>, records: &[PatchRecord]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest_records(path: impl AsRef<Path>) -> Result<Vec<PatchRecord>> {
    let file = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// A labeled, feature-extracted patch with the geometry needed to render
/// slide-level maps.
#[derive(Debug, Clone)]
pub struct CorpusEntry<S: Real> {
    pub slide_index: usize,
    pub window: Window,
    pub sample: LabeledSample<S>,
}

/// Per-slide tiling/labeling/feature product.
pub struct PreparedSlide<S: Real> {
    pub records: Vec<PatchRecord>,
    pub entries: Vec<CorpusEntry<S>>,
}

/// Tiles a masked slide, labels each patch from the annotations, resizes,
/// and extracts features. Noisy patches appear in the records but never in
/// the corpus entries.
pub fn prepare_slide<S: Real>(
    slide_index: usize,
    slide_id: &str,
    image: &RasterImage,
    mask: &ForegroundMask,
    annotations: &AnnotationSet,
    config: &PipelineConfig,
) -> Result<PreparedSlide<S>> {
    let patches = tile_slide(slide_id, image, mask, &config.tiling_params())?;
    let mut records = Vec::with_capacity(patches.len());
    let mut entries = Vec::new();
    for patch in patches {
        let outcome = extract_patch_label(&patch, annotations);
        records.push(PatchRecord {
            slide_id: slide_id.to_string(),
            x: patch.window.x,
            y: patch.window.y,
            size: patch.window.size,
            slide_width: image.width,
            slide_height: image.height,
            fg_fraction: patch.fg_fraction,
            label: Some(outcome.to_string()),
            file: None,
        });
        if let PatchLabelOutcome::Labeled(label) = outcome {
            let resized;
            let for_features = if config.tile.resize_to > 0
                && config.tile.resize_to != patch.pixels.width
            {
                resized = resize_patch(&patch, config.tile.resize_to)?;
                &resized
            } else {
                &patch
            };
            entries.push(CorpusEntry {
                slide_index,
                window: patch.window,
                sample: LabeledSample {
                    id: patch.id(),
                    features: extract_features(for_features),
                    label,
                },
            });
        }
    }
    Ok(PreparedSlide { records, entries })
}

/// Stable per-slide seed derivation.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn segment_image(
    image: &RasterImage,
    method: SegmentMethod,
    params: &SegmentationParams<f64>,
) -> Result<ForegroundMask> {
    match method {
        SegmentMethod::Mst => mst_foreground_extract(image, params),
        SegmentMethod::Otsu => otsu_foreground_extract::<f64>(image),
    }
}

/// Summary scores emitted as `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Mean per-slide pixel score of the predicted classmaps.
    pub score: f64,
    pub confusion: ConfusionMatrix,
    pub pixel_scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    config: &'a PipelineConfig,
    artifacts: BTreeMap<String, String>,
}

pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub metrics: MetricsReport,
}

/// Runs synth -> segment -> tile/label -> EM -> heatmap/classmap ->
/// metrics, writing every artifact plus a manifest. Fails if `out_dir`
/// already exists; partial output stays in a `.partial` staging directory
/// that the next run clears.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineReport> {
    config.validate()?;
    if out_dir.exists() {
        return Err(Error::invalid_input(format!(
            "output directory {} already exists",
            out_dir.display()
        )));
    }
    let name = out_dir
        .file_name()
        .ok_or_else(|| Error::invalid_input("output path needs a final component"))?
        .to_string_lossy()
        .to_string();
    let parent = out_dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = parent.join(format!(".{name}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;

    let result = build_run(config, &staging);
    match result {
        Ok(metrics) => {
            fs::rename(&staging, out_dir)?;
            Ok(PipelineReport {
                out_dir: out_dir.to_path_buf(),
                metrics,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn build_run(config: &PipelineConfig, dir: &Path) -> Result<MetricsReport> {
    for sub in ["slides", "masks", "annotations", "heatmaps", "classmaps"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut artifacts: Vec<PathBuf> = Vec::new();

    struct SlideTruth {
        annotations: AnnotationSet,
        width: u32,
        height: u32,
    }

    let mut slides = Vec::new();
    let mut records = Vec::new();
    let mut corpus: Vec<CorpusEntry<f64>> = Vec::new();
    for index in 0..config.synth.count {
        let slide_id = format!("s{index:03}");
        let spec = SlideSpec::by_name(&config.synth.preset, derive_seed(config.seed, index as u64))?;
        log::info!("generating slide {slide_id}");
        let slide = generate_slide_full(&spec)?;

        let slide_png = dir.join("slides").join(format!("{slide_id}.png"));
        save_rgb_png(&slide.image, &slide_png)?;
        artifacts.push(slide_png);
        let ann_path = dir.join("annotations").join(format!("{slide_id}.json"));
        slide.annotations.save(&ann_path)?;
        artifacts.push(ann_path);

        log::info!("segmenting slide {slide_id}");
        let mask = segment_image(&slide.image, config.segment.method, &config.segmentation_params())?;
        let mask_png = dir.join("masks").join(format!("{slide_id}.png"));
        save_mask_png(&mask, &mask_png)?;
        artifacts.push(mask_png);

        let prepared: PreparedSlide<f64> =
            prepare_slide(index, &slide_id, &slide.image, &mask, &slide.annotations, config)?;
        records.extend(prepared.records);
        corpus.extend(prepared.entries);
        slides.push(SlideTruth {
            annotations: slide.annotations,
            width: slide.image.width,
            height: slide.image.height,
        });
    }

    let manifest_jsonl = dir.join("manifest.jsonl");
    write_manifest_records(&manifest_jsonl, &records)?;
    artifacts.push(manifest_jsonl);

    if corpus.is_empty() {
        return Err(Error::invalid_input(
            "tiling produced no labeled patches; nothing to train on",
        ));
    }

    log::info!("running EM over {} patches", corpus.len());
    let samples: Vec<LabeledSample<f64>> = corpus.iter().map(|e| e.sample.clone()).collect();
    let em_config = config.em_config();
    let split = split_corpus(
        &samples,
        config.em.annotated_fraction,
        config.em.holdout_fraction,
        config.seed,
    )?;
    let (model, history) = run_em(&split.annotated, &split.unannotated, &split.held_out, &em_config)?;

    let model_path = dir.join("model.json");
    model.save(&model_path)?;
    artifacts.push(model_path);
    for record in &history.iterations {
        let path = dir.join(format!("effective_{}.jsonl", record.iteration));
        record.effective.save_jsonl(&path)?;
        artifacts.push(path);
    }
    let history_path = dir.join("history.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&history_path)?), &history)?;
    artifacts.push(history_path);

    // Slide-level maps from the final model, scored against exact truth.
    let beta = config.beta();
    let mut pixel_scores = Vec::with_capacity(slides.len());
    for (index, slide) in slides.iter().enumerate() {
        let mut tiles: Vec<(Window, f64)> = Vec::new();
        for entry in corpus.iter().filter(|e| e.slide_index == index) {
            let prob = model.predict_proba(&entry.sample.features)?;
            tiles.push((entry.window, scale_probability(&prob)));
        }
        let heatmap = render_heatmap(&tiles, slide.width, slide.height)?;
        let classmap = classmap_from_heatmap(&heatmap, &beta)?;
        let slide_id = format!("s{index:03}");
        let heat_path = dir.join("heatmaps").join(format!("{slide_id}.png"));
        save_heatmap_png(&heatmap, &heat_path)?;
        artifacts.push(heat_path);
        let class_path = dir.join("classmaps").join(format!("{slide_id}.png"));
        save_classmap_png(&classmap, &class_path)?;
        artifacts.push(class_path);

        let truth = truth_classmap(&slide.annotations, slide.width, slide.height);
        pixel_scores.push(pixel_score::<f64>(&classmap, &truth)?);
    }

    // Held-out patch metrics from the final model.
    let mut predictions = Vec::with_capacity(split.held_out.len());
    let mut truths = Vec::with_capacity(split.held_out.len());
    for sample in &split.held_out {
        predictions.push(model.predict_proba(&sample.features)?.argmax());
        truths.push(sample.label);
    }
    let confusion = confusion_matrix(&predictions, &truths)?;
    let patch = metrics_from_confusion::<f64>(&confusion);
    let score = pixel_scores.iter().sum::<f64>() / pixel_scores.len() as f64;
    let metrics = MetricsReport {
        precision: patch.precision,
        accuracy: patch.accuracy,
        f1: patch.f1,
        score,
        confusion,
        pixel_scores,
    };
    let metrics_path = dir.join("metrics.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&metrics_path)?), &metrics)?;
    artifacts.push(metrics_path);

    // Manifest with content hashes, keyed by path relative to the run dir.
    let mut hashed = BTreeMap::new();
    for path in &artifacts {
        let relative = path
            .strip_prefix(dir)
            .map_err(|_| Error::invalid_input("artifact outside run directory"))?
            .to_string_lossy()
            .replace('\\', "/");
        hashed.insert(relative, sha256_hex(path)?);
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        artifacts: hashed,
    };
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(dir.join("manifest.json"))?),
        &manifest,
    )?;

    Ok(metrics)
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}
