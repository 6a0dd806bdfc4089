use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use emofuse::consensus::{augmentation_report, augmented_labels, newly_labeled, run_consensus, ConsensusConfig};
use emofuse::container::{read_feature_container, write_feature_container};
use emofuse::data::{zip_streams, SampleRecord};
use emofuse::evaluation::{evaluate, render_confusion_csv, render_report, ReportFormat};
use emofuse::fusion::{build_fusion_vectors, svm_predict, train_svm, SubsystemOutput, SvmConfig, SvmFusionModel};
use emofuse::losses::{JeffreysParams, LossKind};
use emofuse::optim::NewBobConfig;
use emofuse::pooling::PoolingKind;
use emofuse::synth::{generate, SyntheticSpec};
use emofuse::tables::{
    class_counts, read_annotations, read_label_map, read_predictions, write_annotations, write_labels,
    write_predictions, Prediction,
};
use emofuse::trainer::{predict as predict_samples, train as train_model, LinearHeadModel, TrainConfig};
use emofuse::EmotionLabel;

use crate::manifest::{digest_bytes, RunManifest};
use crate::presets::Preset;
use crate::{
    ConsensusArgs, EvalArgs, FormatArg, FusePredictArgs, FuseTrainArgs, LossArg, PoolingArg, PredictArgs, SynthArgs,
    TrainArgs,
};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_labels(path: &Path) -> Result<BTreeMap<String, EmotionLabel>> {
    read_label_map(path).with_context(|| format!("reading labels {}", path.display()))
}

fn load_streams(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<SampleRecord>> {
    let mut streams = Vec::with_capacity(paths.len());
    for p in paths {
        let records = read_feature_container(p).with_context(|| format!("reading features {}", p.display()))?;
        manifest.input(p)?;
        streams.push(records);
    }
    let first = paths.first().map(|p| p.display().to_string()).unwrap_or_default();
    zip_streams(streams).with_context(|| format!("feature streams starting at {first} do not line up"))
}

fn stream_paths(features: &[PathBuf], features2: &Option<PathBuf>) -> Vec<PathBuf> {
    features.iter().cloned().chain(features2.clone()).collect()
}

/// Attaches labels, dropping samples that are unlabeled or labeled `X`.
fn attach_labels(samples: Vec<SampleRecord>, labels: &BTreeMap<String, EmotionLabel>, what: &str) -> Vec<SampleRecord> {
    let total = samples.len();
    let kept: Vec<SampleRecord> = samples
        .into_iter()
        .filter_map(|mut s| {
            let label = *labels.get(&s.sample_id)?;
            label.is_class().then(|| {
                s.label = Some(label);
                s
            })
        })
        .collect();
    if kept.len() < total {
        eprintln!(
            "{what}: skipped {} of {total} samples without a class label",
            total - kept.len()
        );
    }
    kept
}

fn write_prediction_file(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_predictions(predictions, create(path)?).with_context(|| format!("writing predictions {}", path.display()))
}

pub fn consensus(args: &ConsensusArgs, manifest_path: Option<&Path>) -> Result<()> {
    let config = ConsensusConfig::new(args.threshold, !args.no_neutral_drop).context("--threshold")?;
    let annotations = read_annotations(&args.annotations)
        .with_context(|| format!("reading annotations {}", args.annotations.display()))?;
    let original = load_labels(&args.original)?;
    let mut manifest = RunManifest::new("consensus", None, config)?;
    manifest.input(&args.annotations)?;
    manifest.input(&args.original)?;

    let run = run_consensus(&annotations, &original, &config)?;

    let mut w = create(&args.out)?;
    writeln!(w, "sample_id,label,source")?;
    for r in &run.results {
        writeln!(w, "{},{},{}", r.sample_id, r.label, r.source.as_str())?;
    }
    w.flush()?;
    manifest.output(&args.out)?;

    let augmented = augmented_labels(&original, &run.results);
    if let Some(path) = &args.augmented_labels {
        write_labels(&augmented, create(path)?).with_context(|| format!("writing labels {}", path.display()))?;
        manifest.output(path)?;
    }
    if let Some(path) = &args.report {
        let before = class_counts(original.values());
        let after = class_counts(augmented.iter().map(|(_, l)| l));
        let mut text = augmentation_report(&before, &after);
        text.push('\n');
        text.push_str(&format!(
            "Annotators: {} scored, {} discarded (threshold {})\n",
            run.scores.len(),
            run.discarded.len(),
            config.evaluator_threshold
        ));
        for id in &run.discarded {
            text.push_str(&format!("  {id} {:.4}\n", run.scores[id]));
        }
        text.push_str(&format!(
            "Newly labeled samples: {}\n",
            newly_labeled(&original, &run.results).len()
        ));
        write_text(path, &text)?;
        manifest.output(path)?;
    }
    manifest.write(manifest_path, &args.out)?;
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, streams: usize) -> Result<TrainConfig> {
    let preset = args.preset.map(Preset::defaults);
    if let (Some(p), Some(name)) = (&preset, args.preset) {
        if p.streams != streams {
            bail!(
                "--preset {name:?} expects {} feature stream(s), got {streams}",
                p.streams
            );
        }
    }
    let loss = match (args.loss, &preset) {
        (Some(LossArg::Nll), _) => LossKind::Nll,
        (Some(LossArg::Jeffreys), p) => {
            let fallback = match p.as_ref().map(|p| p.loss) {
                Some(LossKind::Jeffreys(j)) => Some(j),
                _ => None,
            };
            jeffreys_from_flags(args, fallback)?
        }
        (None, Some(p)) => match p.loss {
            LossKind::Jeffreys(j) => jeffreys_from_flags(args, Some(j))?,
            LossKind::Nll => LossKind::Nll,
        },
        (None, None) => LossKind::Nll,
    };
    if loss == LossKind::Nll && (args.alpha.is_some() || args.beta.is_some()) {
        bail!("--alpha and --beta only apply to --loss jeffreys");
    }
    let pooling = match (args.pooling, &preset) {
        (Some(PoolingArg::Mean), _) => PoolingKind::Mean,
        (Some(PoolingArg::Attention), _) => PoolingKind::Attention,
        (None, Some(p)) => p.pooling,
        (None, None) => PoolingKind::Mean,
    };
    let newbob = (!args.no_newbob).then_some(NewBobConfig {
        improvement_threshold: args.newbob_threshold,
        anneal_factor: args.newbob_factor,
        patience: args.newbob_patience,
    });
    let config = TrainConfig {
        loss,
        pooling,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        learning_rate_head: args.lr_head,
        learning_rate_pooling: args.lr_pooling,
        newbob,
        seed: args.seed,
    };
    config.validate().context("invalid training options")?;
    Ok(config)
}

fn jeffreys_from_flags(args: &TrainArgs, fallback: Option<JeffreysParams>) -> Result<LossKind> {
    let (alpha, beta) = match (args.alpha, args.beta, fallback) {
        (Some(a), Some(b), _) => (a, b),
        (a, b, Some(f)) => (a.unwrap_or(f.alpha), b.unwrap_or(f.beta)),
        (None, _, None) => bail!("--loss jeffreys requires --alpha"),
        (_, None, None) => bail!("--loss jeffreys requires --beta"),
    };
    let params = JeffreysParams::new(alpha, beta).context("--alpha/--beta")?;
    Ok(LossKind::Jeffreys(params))
}

pub fn train(args: &TrainArgs, manifest_path: Option<&Path>) -> Result<()> {
    let paths = stream_paths(&args.features, &args.features2);
    let config = resolve_train_config(args, paths.len())?;
    let mut manifest = RunManifest::new("train", Some(args.seed), &config)?;

    let labels = load_labels(&args.labels)?;
    manifest.input(&args.labels)?;
    let train_set = attach_labels(load_streams(&paths, &mut manifest)?, &labels, "train");
    if train_set.is_empty() {
        bail!("no labeled training samples in {}", paths[0].display());
    }

    let dev_paths = stream_paths(&args.dev_features, &args.dev_features2);
    let dev_set = match (&args.dev_labels, dev_paths.is_empty()) {
        (Some(path), false) => {
            let dev_labels = load_labels(path)?;
            manifest.input(path)?;
            attach_labels(load_streams(&dev_paths, &mut manifest)?, &dev_labels, "dev")
        }
        (None, true) => Vec::new(),
        (Some(_), true) => bail!("--dev-labels given without --dev-features"),
        (None, false) => bail!("--dev-features given without --dev-labels"),
    };

    let (model, history) = train_model(&train_set, &dev_set, &config).context("training failed")?;
    model
        .save(&args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    manifest.output(&args.out)?;

    if let Some(path) = &args.history {
        let mut w = create(path)?;
        writeln!(w, "epoch,train_loss,dev_macro_f1,lr_head,lr_pooling")?;
        for r in &history {
            writeln!(
                w,
                "{},{:.6},{:.6},{:e},{:e}",
                r.epoch, r.train_loss, r.dev_macro_f1, r.lr_head, r.lr_pooling
            )?;
        }
        w.flush()?;
        manifest.output(path)?;
    }
    if let Some(best) = history.iter().map(|r| r.dev_macro_f1).reduce(f64::max) {
        eprintln!("train: {} epochs, best dev Macro-F1 {best:.4}", history.len());
    }
    manifest.write(manifest_path, &args.out)?;
    Ok(())
}

pub fn predict(args: &PredictArgs, manifest_path: Option<&Path>) -> Result<()> {
    let model =
        LinearHeadModel::load(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let paths = stream_paths(&args.features, &args.features2);
    if paths.len() != model.stream_dims.len() {
        bail!(
            "model {} expects {} feature stream(s), got {} via --features",
            args.model.display(),
            model.stream_dims.len(),
            paths.len()
        );
    }
    let mut manifest = RunManifest::new("predict", Some(model.metadata.seed), json!({}))?;
    manifest.input(&args.model)?;
    let samples = load_streams(&paths, &mut manifest)?;
    let predictions: Vec<Prediction> = predict_samples(&model, &samples)?
        .into_iter()
        .map(|(id, p)| Prediction::from_posterior(id, p))
        .collect();
    write_prediction_file(&args.out, &predictions)?;
    manifest.output(&args.out)?;
    manifest.write(manifest_path, &args.out)?;
    Ok(())
}

fn load_subsystems(inputs: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<SubsystemOutput>> {
    inputs
        .iter()
        .map(|p| {
            let preds = read_predictions(p).with_context(|| format!("reading predictions {}", p.display()))?;
            manifest.input(p)?;
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok(SubsystemOutput::from_predictions(name, &preds))
        })
        .collect()
}

pub fn fuse_train(args: &FuseTrainArgs, manifest_path: Option<&Path>) -> Result<()> {
    let config = SvmConfig {
        c: args.c,
        iterations: args.iterations,
        seed: args.seed,
    };
    let mut manifest = RunManifest::new("fuse-train", Some(args.seed), config)?;
    let outputs = load_subsystems(&args.inputs, &mut manifest)?;
    let labels = load_labels(&args.labels)?;
    manifest.input(&args.labels)?;

    let vectors = build_fusion_vectors(&outputs).context("--inputs do not cover the same samples")?;
    let total = vectors.len();
    let (vectors, targets): (Vec<_>, Vec<_>) = vectors
        .into_iter()
        .filter_map(|v| {
            let l = *labels.get(&v.sample_id)?;
            l.is_class().then_some((v, l))
        })
        .unzip();
    if vectors.len() < total {
        eprintln!(
            "fuse-train: skipped {} of {total} samples without a class label",
            total - vectors.len()
        );
    }
    let model = train_svm(&vectors, &targets, &config).context("SVM training failed")?;
    model
        .save(&args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    manifest.output(&args.out)?;
    manifest.write(manifest_path, &args.out)?;
    Ok(())
}

pub fn fuse_predict(args: &FusePredictArgs, manifest_path: Option<&Path>) -> Result<()> {
    let model = SvmFusionModel::load(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let mut manifest = RunManifest::new("fuse-predict", Some(model.config.seed), json!({}))?;
    manifest.input(&args.model)?;
    let outputs = load_subsystems(&args.inputs, &mut manifest)?;
    let names: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
    if names != model.source_order.iter().map(String::as_str).collect::<Vec<_>>() {
        bail!(
            "--inputs {:?} do not match the model's sub-systems {:?}",
            names,
            model.source_order
        );
    }
    let vectors = build_fusion_vectors(&outputs).context("--inputs do not cover the same samples")?;
    let predictions = svm_predict(&model, &vectors)?
        .iter()
        .map(|p| p.to_prediction())
        .collect::<emofuse::Result<Vec<_>>>()?;
    write_prediction_file(&args.out, &predictions)?;
    manifest.output(&args.out)?;
    manifest.write(manifest_path, &args.out)?;
    Ok(())
}

pub fn eval(args: &EvalArgs, manifest_path: Option<&Path>) -> Result<()> {
    let predictions =
        read_predictions(&args.pred).with_context(|| format!("reading predictions {}", args.pred.display()))?;
    let reference = load_labels(&args.reference)?;
    let format = match args.format {
        FormatArg::Text => ReportFormat::Text,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let mut manifest = RunManifest::new(
        "eval",
        None,
        json!({ "format": format!("{:?}", args.format).to_lowercase() }),
    )?;
    manifest.input(&args.pred)?;
    manifest.input(&args.reference)?;

    let by_id: BTreeMap<&str, EmotionLabel> = predictions.iter().map(|p| (p.sample_id.as_str(), p.label)).collect();
    if let Some(p) = predictions.iter().find(|p| !reference.contains_key(&p.sample_id)) {
        bail!(
            "sample {} in {} has no reference label",
            p.sample_id,
            args.pred.display()
        );
    }
    let mut refs = Vec::new();
    let mut preds = Vec::new();
    for (id, &label) in reference.iter().filter(|(_, l)| l.is_class()) {
        let Some(&p) = by_id.get(id.as_str()) else {
            bail!("sample {id} from {} has no prediction", args.reference.display());
        };
        refs.push(label);
        preds.push(p);
    }
    let (report, cm) = evaluate(&refs, &preds).context("scoring failed")?;
    let text = render_report(&report, &cm, format);
    print!("{text}");
    manifest
        .outputs
        .insert("<stdout>".into(), digest_bytes(text.as_bytes()));

    if let Some(path) = &args.out {
        write_text(path, &text)?;
        manifest.output(path)?;
    }
    if let Some(path) = &args.confusion {
        write_text(path, &render_confusion_csv(&cm))?;
        manifest.output(path)?;
    }
    let beside = match (&args.out, &args.confusion) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => {
            let mut name = args.pred.as_os_str().to_owned();
            name.push(".eval");
            PathBuf::from(name)
        }
    };
    manifest.write(manifest_path, &beside)?;
    Ok(())
}

pub fn synth(args: &SynthArgs, manifest_path: Option<&Path>) -> Result<()> {
    let spec = SyntheticSpec {
        per_class_count: args.per_class,
        dev_per_class_count: args.dev_per_class,
        feature_dim: args.dim,
        streams: args.streams,
        min_frames: args.min_frames,
        max_frames: args.max_frames,
        separation: args.separation,
        annotators: args.annotators,
        votes_per_sample: args.votes_per_sample,
        error_rate: args.error_rate,
        seed: args.seed,
    };
    let data = generate(&spec).context("invalid synthetic spec")?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = RunManifest::new("synth", Some(args.seed), &spec)?;

    for (split, samples) in [("train", &data.train), ("dev", &data.dev)] {
        for s in 0..spec.streams {
            let path = dir.join(format!("{split}_s{s}.emf"));
            let records: Vec<_> = samples.iter().map(|r| r.streams[s].clone()).collect();
            write_feature_container(&records, &path).with_context(|| format!("writing {}", path.display()))?;
            manifest.output(&path)?;
        }
        let labels: Vec<(String, EmotionLabel)> = samples
            .iter()
            .map(|r| (r.sample_id.clone(), r.label.expect("synthetic samples are labeled")))
            .collect();
        let path = dir.join(if split == "train" {
            "train_truth.csv"
        } else {
            "dev_labels.csv"
        });
        write_labels(&labels, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
        manifest.output(&path)?;
    }

    let path = dir.join("annotations.csv");
    write_annotations(&data.annotations, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(&path)?;

    let consensus: Vec<(String, EmotionLabel)> = data.original_consensus.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let path = dir.join("train_consensus.csv");
    write_labels(&consensus, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(&path)?;

    manifest.write(manifest_path, &dir.join("synth"))?;
    Ok(())
}
