//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them stream).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slidegrade::classifier::{
    log_likelihood, train_traced, Model, ProbabilityMap, TrainConfig,
};
use slidegrade::em::{run_em, split_corpus, EmConfig};
use slidegrade::features::{cosine_similarity, FeatureVector};
use slidegrade::heatmap::{scale_probability, BetaThresholds};
use slidegrade::imaging::{
    mst_foreground_extract, mst_partition, otsu_foreground_extract, RasterImage,
    SegmentationParams,
};
use slidegrade::pipeline::{
    derive_seed, prepare_slide, run_pipeline, sha256_hex, CorpusEntry, PipelineConfig,
};
use slidegrade::sample::{LabeledSample, PatchId, PatchLabel, Sample};
use slidegrade::selection::{collaborative_filter, effective_coefficient};
use slidegrade::synthdata::{generate_slide_full, SlideSpec};

fn criterion(name: &str, f: impl FnOnce()) {
    let result = catch_unwind(AssertUnwindSafe(f));
    match &result {
        Ok(()) => println!("[acceptance] {name}: PASS"),
        Err(_) => println!("[acceptance] {name}: FAIL"),
    }
    if let Err(payload) = result {
        std::panic::resume_unwind(payload);
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Canonical relabeling: same partition iff equal after first-seen
/// renumbering.
fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

/// Independent component oracle: BFS flood fill over grid edges whose
/// Euclidean RGB weight stays at or below the threshold. No MST anywhere.
fn flood_fill_components(image: &RasterImage, threshold: f64) -> Vec<u32> {
    let w = image.width as usize;
    let h = image.height as usize;
    let weight = |a: (usize, usize), b: (usize, usize)| -> f64 {
        let pa = image.rgb_at(a.0 as u32, a.1 as u32);
        let pb = image.rgb_at(b.0 as u32, b.1 as u32);
        let mut sum = 0.0;
        for c in 0..3 {
            let d = f64::from(pa[c]) - f64::from(pb[c]);
            sum += d * d;
        }
        sum.sqrt()
    };
    let mut labels = vec![u32::MAX; w * h];
    let mut next = 0u32;
    for start in 0..w * h {
        if labels[start] != u32::MAX {
            continue;
        }
        labels[start] = next;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            let (x, y) = (node % w, node / w);
            let mut neighbors = Vec::with_capacity(4);
            if x > 0 {
                neighbors.push((x - 1, y));
            }
            if x + 1 < w {
                neighbors.push((x + 1, y));
            }
            if y > 0 {
                neighbors.push((x, y - 1));
            }
            if y + 1 < h {
                neighbors.push((x, y + 1));
            }
            for (nx, ny) in neighbors {
                let neighbor = ny * w + nx;
                if labels[neighbor] == u32::MAX && weight((x, y), (nx, ny)) <= threshold {
                    labels[neighbor] = next;
                    queue.push_back(neighbor);
                }
            }
        }
        next += 1;
    }
    labels
}

#[test]
fn criterion_1_mst_partition_equals_threshold_components() {
    criterion("criterion 1 (MST partition == threshold components, 100 images)", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let thresholds = [30.0, 60.0, 100.0, 150.0, 250.0];
        for trial in 0..100 {
            let w = rng.random_range(2..=32u32);
            let h = rng.random_range(2..=32u32);
            let pixels: Vec<u8> = (0..w as usize * h as usize * 3)
                .map(|_| rng.random())
                .collect();
            let image = RasterImage::new(w, h, pixels).unwrap();
            let threshold = thresholds[trial % thresholds.len()];
            let params = SegmentationParams {
                edge_threshold: threshold,
                rgb_margin: 45.0f64,
            };
            let partition = mst_partition(&image, &params).unwrap();
            let oracle = flood_fill_components(&image, threshold);
            assert_eq!(
                canonical(&partition.labels),
                canonical(&oracle),
                "trial {trial}: {w}x{h} at threshold {threshold}"
            );
        }
        assert!(
            start.elapsed() < Duration::from_secs(10),
            "oracle sweep took {:?}",
            start.elapsed()
        );
    });
}

#[test]
fn criterion_2_foreground_quality_on_synthetic_slides() {
    criterion("criterion 2 (MST foreground >=99% tissue, <=1% background)", || {
        for seed in 0..5u64 {
            let slide = generate_slide_full(&SlideSpec::foreground(seed)).unwrap();
            let mask =
                mst_foreground_extract(&slide.image, &SegmentationParams::<f64>::default())
                    .unwrap();
            let mut recovered = 0usize;
            let mut false_fg = 0usize;
            let tissue: usize = slide.tissue_mask.foreground_count();
            for (got, truth) in mask.flags.iter().zip(&slide.tissue_mask.flags) {
                match (got, truth) {
                    (true, true) => recovered += 1,
                    (true, false) => false_fg += 1,
                    _ => {}
                }
            }
            let background = mask.flags.len() - tissue;
            let recall = recovered as f64 / tissue as f64;
            let false_rate = false_fg as f64 / background as f64;
            assert!(recall >= 0.99, "seed {seed}: tissue recall {recall}");
            assert!(false_rate <= 0.01, "seed {seed}: false foreground {false_rate}");

            // Otsu baseline runs alongside; no numeric claim.
            let otsu = otsu_foreground_extract::<f64>(&slide.image).unwrap();
            assert_eq!(otsu.flags.len(), mask.flags.len());
        }
    });
}

/// Line-by-line transcription of the published patch-selection pseudocode,
/// built on nothing but `cosine_similarity` and `predict_proba`.
fn patch_selection_oracle(
    unannotated: &[Sample<f64>],
    annotated: &[LabeledSample<f64>],
    model: &Model<f64>,
    sigma: f64,
) -> Vec<(PatchId, PatchLabel, [u32; 4])> {
    let mut selected = Vec::new();
    for x in unannotated {
        let prediction = match model.predict_proba(&x.features) {
            Ok(p) => p.argmax(),
            Err(_) => continue,
        };
        let mut num = [0u32; 4];
        let mut any_pair = false;
        for (y, label) in annotated.iter().map(|a| (&a.features, a.label)) {
            match cosine_similarity(&x.features, y) {
                Ok(s) => {
                    any_pair = true;
                    if s > sigma {
                        num[label.ordinal()] += 1;
                    }
                }
                Err(_) => continue, // zero-norm pair: skip
            }
        }
        if !any_pair || num == [0, 0, 0, 0] {
            continue;
        }
        let mut best = 0usize;
        for c in 1..4 {
            if num[c] > num[best] {
                best = c;
            }
        }
        if PatchLabel::from_ordinal(best).unwrap() == prediction {
            selected.push((x.id.clone(), prediction, num));
        }
    }
    selected
}

#[test]
fn criterion_3_collaborative_filter_matches_pseudocode_oracle() {
    criterion("criterion 3 (collaborative filter == pseudocode oracle, 50 trials)", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(3003);
        let sigmas = [0.6, 0.8, 0.9, 0.95, 0.99];
        for trial in 0..50 {
            let dim = rng.random_range(4..9);
            let n_unannotated = rng.random_range(20..=200);
            let n_annotated = rng.random_range(5..=100);
            let sigma = sigmas[trial % sigmas.len()];

            let mut unannotated: Vec<Sample<f64>> = Vec::with_capacity(n_unannotated);
            for i in 0..n_unannotated {
                let features = if rng.random_range(0..40) == 0 {
                    FeatureVector::new(vec![0.0; dim])
                } else {
                    FeatureVector::new((0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
                };
                unannotated.push(Sample {
                    id: PatchId::new(format!("u{i:03}")),
                    features,
                });
            }
            let mut annotated: Vec<LabeledSample<f64>> = Vec::with_capacity(n_annotated);
            for i in 0..n_annotated {
                annotated.push(LabeledSample {
                    id: PatchId::new(format!("a{i:03}")),
                    features: FeatureVector::new(
                        (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
                    ),
                    label: PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap(),
                });
            }
            let weights: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let model = Model::from_parts(dim, weights, bias, TrainConfig::default()).unwrap();

            let got = collaborative_filter(&unannotated, &annotated, &model, sigma).unwrap();
            let expected = patch_selection_oracle(&unannotated, &annotated, &model, sigma);
            assert_eq!(got.members.len(), expected.len(), "trial {trial}");
            for (member, (id, label, votes)) in got.members.iter().zip(&expected) {
                assert_eq!(&member.id, id, "trial {trial}");
                assert_eq!(&member.label, label, "trial {trial}");
                assert_eq!(&member.votes, votes, "trial {trial}");
            }
        }
        assert!(
            start.elapsed() < Duration::from_secs(5),
            "oracle sweep took {:?}",
            start.elapsed()
        );
    });
}

#[test]
fn criterion_4_effective_coefficient_cases_and_range() {
    criterion("criterion 4 (effective coefficient worked cases + range)", || {
        let a = effective_coefficient(
            &ProbabilityMap([0.1f64, 0.2, 0.1, 0.6]),
            PatchLabel::Normal,
        );
        assert!((a - 1.8).abs() < 1e-12);
        let b = effective_coefficient(
            &ProbabilityMap([0.4f64, 0.6, 0.0, 0.0]),
            PatchLabel::Invasive,
        );
        assert!((b - 1.2).abs() < 1e-12);
        let c = effective_coefficient(
            &ProbabilityMap([0.05f64, 0.9, 0.03, 0.02]),
            PatchLabel::Benign,
        );
        assert!(c.abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4004);
        for _ in 0..100_000 {
            let raw: [f64; 4] = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let sum: f64 = raw.iter().sum::<f64>().max(1e-9);
            let prob = ProbabilityMap([raw[0] / sum, raw[1] / sum, raw[2] / sum, raw[3] / sum]);
            let label = PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap();
            let alpha = effective_coefficient(&prob, label);
            assert!((0.0..=3.0).contains(&alpha), "alpha {alpha} out of range");
        }
    });
}

#[test]
fn criterion_5_classifier_gradients_and_monotonicity() {
    criterion("criterion 5 (gradient check < 1e-5, monotone objective)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5005);
        for problem in 0..20 {
            let dim = rng.random_range(2..6);
            let examples: Vec<(FeatureVector<f64>, PatchLabel)> = (0..rng.random_range(4..12))
                .map(|_| {
                    (
                        FeatureVector::new(
                            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        ),
                        PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap(),
                    )
                })
                .collect();
            let weights: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-0.8..0.8)).collect();
            let bias = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let model =
                Model::from_parts(dim, weights.clone(), bias, TrainConfig::default()).unwrap();
            let (grad_w, grad_b) =
                slidegrade::classifier::training_gradient(&model, &examples).unwrap();

            let h = 1e-5;
            let check = |analytic: f64, numeric: f64, what: &str| {
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "problem {problem} {what}: analytic {analytic} vs numeric {numeric}"
                );
            };
            for k in 0..weights.len() {
                let mut plus = weights.clone();
                plus[k] += h;
                let mut minus = weights.clone();
                minus[k] -= h;
                let op = slidegrade::classifier::training_objective(
                    &Model::from_parts(dim, plus, bias, TrainConfig::default()).unwrap(),
                    &examples,
                )
                .unwrap();
                let om = slidegrade::classifier::training_objective(
                    &Model::from_parts(dim, minus, bias, TrainConfig::default()).unwrap(),
                    &examples,
                )
                .unwrap();
                check(grad_w[k], (op - om) / (2.0 * h), "weight");
            }
            for c in 0..4 {
                let mut plus = bias;
                plus[c] += h;
                let mut minus = bias;
                minus[c] -= h;
                let op = slidegrade::classifier::training_objective(
                    &Model::from_parts(dim, weights.clone(), plus, TrainConfig::default())
                        .unwrap(),
                    &examples,
                )
                .unwrap();
                let om = slidegrade::classifier::training_objective(
                    &Model::from_parts(dim, weights.clone(), minus, TrainConfig::default())
                        .unwrap(),
                    &examples,
                )
                .unwrap();
                check(grad_b[c], (op - om) / (2.0 * h), "bias");
            }
        }

        // Monotone ascent at the default step size, on histogram-scaled
        // features.
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let examples: Vec<(FeatureVector<f64>, PatchLabel)> = (0..60)
                .map(|i| {
                    let label = PatchLabel::from_ordinal(i % 4).unwrap();
                    let mut values = vec![0.05f64; 16];
                    values[label.ordinal() * 4] += 0.5 + rng.random_range(-0.2..0.2);
                    (FeatureVector::new(values), label)
                })
                .collect();
            let (_, trace) = train_traced(&examples, &TrainConfig::default()).unwrap();
            for (epoch, pair) in trace.windows(2).enumerate() {
                assert!(
                    pair[1] >= pair[0] - 1e-12,
                    "seed {seed} epoch {epoch}: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    });
}

#[test]
fn criterion_6_log_likelihood_equals_resummation() {
    criterion("criterion 6 (Q == independent per-example resummation)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6006);
        for _ in 0..10 {
            let dim = rng.random_range(3..8);
            let weights: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let bias = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let model = Model::from_parts(dim, weights, bias, TrainConfig::default()).unwrap();
            let make = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(FeatureVector<f64>, PatchLabel)> {
                (0..n)
                    .map(|_| {
                        (
                            FeatureVector::new(
                                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            ),
                            PatchLabel::from_ordinal(rng.random_range(0..4)).unwrap(),
                        )
                    })
                    .collect()
            };
            let n_annotated = rng.random_range(1..30);
            let annotated = make(&mut rng, n_annotated);
            let n_pseudo = rng.random_range(0..30);
            let pseudo = make(&mut rng, n_pseudo);
            let q = log_likelihood(&model, &annotated, &pseudo).unwrap();
            let mut expected = 0.0;
            for (x, y) in annotated.iter().chain(&pseudo) {
                expected += model.predict_proba(x).unwrap().get(*y).ln();
            }
            assert!((q - expected).abs() < 1e-9, "q {q} vs {expected}");
        }
    });
}

#[test]
fn criterion_7_beta_scaling_round_trip() {
    criterion("criterion 7 (one-hot round trip + beta bin boundaries)", || {
        let beta = BetaThresholds::<f64>::default();
        for label in PatchLabel::ALL {
            let mut raw = [0.0f64; 4];
            raw[label.ordinal()] = 1.0;
            let scaled = scale_probability(&ProbabilityMap(raw));
            assert_eq!(beta.classify(scaled), label, "one-hot {label}");
        }
        // Worked boundary cases.
        assert_eq!(beta.classify(0.05), PatchLabel::Normal);
        assert_eq!(beta.classify(0.6), PatchLabel::InSitu);
        assert_eq!(beta.classify(0.5), PatchLabel::Benign);
        assert_eq!(beta.classify(0.1), PatchLabel::Normal);
        assert_eq!(beta.classify(0.75), PatchLabel::InSitu);
        assert_eq!(beta.classify(1.0), PatchLabel::Invasive);
    });
}

fn desk_corpus() -> Vec<CorpusEntry<f64>> {
    let config = PipelineConfig::desk();
    let mut corpus = Vec::new();
    for index in 0..config.synth.count {
        let spec =
            SlideSpec::by_name(&config.synth.preset, derive_seed(config.seed, index as u64))
                .unwrap();
        let slide = generate_slide_full(&spec).unwrap();
        let mask =
            mst_foreground_extract(&slide.image, &config.segmentation_params()).unwrap();
        let prepared = prepare_slide::<f64>(
            index,
            &format!("s{index:03}"),
            &slide.image,
            &mask,
            &slide.annotations,
            &config,
        )
        .unwrap();
        corpus.extend(prepared.entries);
    }
    corpus
}

#[test]
fn criterion_8_em_improves_over_initialization_baseline() {
    criterion("criterion 8 (EM beats the initialize-only baseline over 10 seeds)", || {
        let start = Instant::now();
        let corpus = desk_corpus();
        println!("[acceptance]   desk corpus: {} labeled patches", corpus.len());
        let samples: Vec<LabeledSample<f64>> =
            corpus.iter().map(|e| e.sample.clone()).collect();

        let mut baselines = Vec::new();
        let mut first_iteration = Vec::new();
        let mut second_iteration = Vec::new();
        let mut finals = Vec::new();
        for seed in 0..10u64 {
            let split = split_corpus(&samples, 0.3, 0.2, seed).unwrap();
            let config = EmConfig {
                sigma: 0.9,
                seed,
                ..EmConfig::default()
            };
            let (_, history) =
                run_em(&split.annotated, &split.unannotated, &split.held_out, &config).unwrap();
            let baseline = history.initial_held_out.as_ref().unwrap().accuracy;
            let iter1 = history.iterations[0].held_out.as_ref().unwrap().accuracy;
            // An early stop means the model (and so the accuracy) repeats.
            let iter2 = history
                .iterations
                .get(1)
                .and_then(|r| r.held_out.as_ref())
                .map(|m| m.accuracy)
                .unwrap_or(iter1);
            let final_accuracy = history.final_accuracy().unwrap();
            println!(
                "[acceptance]   seed {seed}: baseline {baseline:.4}, iter1 {iter1:.4}, iter2 {iter2:.4}, |E1| {}",
                history.iterations[0].effective_count
            );
            baselines.push(baseline);
            first_iteration.push(iter1);
            second_iteration.push(iter2);
            finals.push(final_accuracy);
        }

        let improvements: Vec<f64> = finals
            .iter()
            .zip(&baselines)
            .map(|(f, b)| f - b)
            .collect();
        let mean_improvement = improvements.iter().sum::<f64>() / improvements.len() as f64;
        println!(
            "[acceptance]   median baseline {:.4}, median final {:.4}, mean improvement {:.4}",
            median(&baselines),
            median(&finals),
            mean_improvement
        );
        assert!(
            median(&finals) > median(&baselines),
            "median EM accuracy {} does not exceed baseline {}",
            median(&finals),
            median(&baselines)
        );
        assert!(
            mean_improvement >= 0.02,
            "mean improvement {mean_improvement} below 2 percentage points"
        );
        assert!(
            median(&second_iteration) >= median(&first_iteration),
            "iteration 2 median {} below iteration 1 median {}",
            median(&second_iteration),
            median(&first_iteration)
        );
        let elapsed = start.elapsed();
        println!("[acceptance]   criterion 8 runtime: {elapsed:?}");
        assert!(
            elapsed < Duration::from_secs(600),
            "run took {elapsed:?}, budget is 10 minutes"
        );
    });
}

#[test]
fn criterion_9_pipeline_reruns_are_byte_identical() {
    criterion("criterion 9 (pipeline determinism: byte-identical reruns)", || {
        let dir = tempfile::tempdir().unwrap();
        let mut config = PipelineConfig::mini();
        config.synth.count = 3;
        config.train.epochs = 150;
        config.seed = 42;

        let out_a = dir.path().join("run_a");
        let out_b = dir.path().join("run_b");
        run_pipeline(&config, &out_a).unwrap();
        run_pipeline(&config, &out_b).unwrap();

        for file in ["metrics.json", "manifest.json"] {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
        // The manifest hashes every artifact, so identical manifests pin
        // the whole run; spot-check one hashed artifact anyway.
        assert_eq!(
            sha256_hex(&out_a.join("model.json")).unwrap(),
            sha256_hex(&out_b.join("model.json")).unwrap()
        );
    });
}
