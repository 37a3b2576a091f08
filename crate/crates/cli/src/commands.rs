use std::path::{Path, PathBuf};

use cxrfuse::datasets::{compose_dataset, monte_carlo_split, read_id_list, DatasetManifest};
use cxrfuse::heatmaps::{circle_check, extract_heatmaps, overlay_file_name, read_annotations, render_overlay, LayerName};
use cxrfuse::metrics::{ConfusionMatrix, MetricsReport};
use cxrfuse::preprocess::{load_gray, stack_batch};
use cxrfuse::training::{
    cross_validate, evaluate as evaluate_model, fit, ConstantStub, FoldTrainer, NetworkFoldTrainer, NoisyOracleStub,
    PreparedSet,
};
use cxrfuse::{AnyModel, Error, FusionModelConfig, ModelSpec, Network, Result};

use crate::bundle::Bundle;
use crate::config::RunConfig;
use crate::{
    Common, ConfigArgs, CrossvalArgs, EvaluateArgs, HeatmapArgs, InferArgs, ModelFlags, PrepareArgs, SplitArgs, SplitFlags,
    Stub, TrainArgs,
};

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::path_io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::path_io(path, e))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `--out`, then `output_dir` from the config, then `<root>/<name>`.
fn output_dir(out: &Option<PathBuf>, cfg: &RunConfig, root: &Path, name: &str) -> PathBuf {
    out.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| root.join(name))
}

fn apply_split(cfg: &mut RunConfig, flags: &SplitFlags) {
    if let Some(f) = flags.folds {
        cfg.split.folds = f;
    }
    if let Some(f) = flags.train_fraction {
        cfg.split.train_fraction = f;
    }
    cfg.split.stratified |= flags.stratified;
}

/// Applies model flags and sizes the head for `classes`.
fn apply_model(cfg: &mut RunConfig, flags: &ModelFlags, classes: usize) {
    if flags.tiny {
        cfg.model = ModelSpec::Fusion(FusionModelConfig::tiny(classes));
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if flags.resnet_weights.is_some() || flags.densenet_weights.is_some() {
        cfg.weights.resnet50 = flags.resnet_weights.clone().or(cfg.weights.resnet50.take());
        cfg.weights.densenet121 = flags.densenet_weights.clone().or(cfg.weights.densenet121.take());
        match &mut cfg.model {
            ModelSpec::Fusion(c) => c.pretrained = true,
            ModelSpec::Baseline { backbone, .. } => backbone.pretrained = true,
        }
    }
    if cfg.model.num_classes() != classes {
        log::info!("sizing the classifier head for {classes} classes");
        cfg.model.set_num_classes(classes);
    }
}

fn read_manifest(path: &Path, ids: Option<&Path>) -> Result<DatasetManifest> {
    let m = DatasetManifest::read_csv(path)?;
    match ids {
        Some(list) => m.subset(&read_id_list(list)?),
        None => Ok(m),
    }
}

pub fn config(args: &ConfigArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    if args.tiny {
        cfg.model = ModelSpec::Fusion(FusionModelConfig::tiny(4));
    }
    print!("{}", serde_json::to_string_pretty(&cfg)? + "\n");
    Ok(())
}

pub fn prepare(args: &PrepareArgs, root: &Path) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(d) = args.dataset {
        cfg.dataset = d;
    }
    for (flag, slot) in [
        (&args.source1, &mut cfg.sources.source1),
        (&args.source2, &mut cfg.sources.source2),
        (&args.source3, &mut cfg.sources.source3),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| {
        output_dir(&None, &cfg, root, &cfg.dataset.to_string()).join("manifest.csv")
    });
    let manifest = compose_dataset(cfg.dataset, &cfg.source_dirs(), cfg.seeds().compose)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    manifest.write_csv(&out)?;
    println!("{}: {} images -> {}", cfg.dataset, manifest.len(), out.display());
    for (class, n) in &manifest.class_counts().0 {
        println!("  {class}: {n}");
    }
    Ok(())
}

pub fn split(args: &SplitArgs, root: &Path) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_split(&mut cfg, &args.split);
    let manifest = read_manifest(&args.manifest, None)?;
    cfg.model.set_num_classes(manifest.classes.len().max(2));
    cfg.validate()?;
    let plan = monte_carlo_split(&manifest, cfg.split.options(), cfg.seeds().split)?;
    let out = output_dir(&args.out, &cfg, root, "split");
    create_dir(&out)?;
    plan.write(&out)?;
    cfg.write(&out.join("run.json"))?;
    let f = &plan.folds[0];
    println!(
        "{} folds of {} train / {} test -> {}",
        plan.folds.len(),
        f.train.len(),
        f.test.len(),
        out.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, root: &Path) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    let manifest = read_manifest(&args.manifest, args.ids.as_deref())?;
    apply_model(&mut cfg, &args.model, manifest.classes.len());
    cfg.validate()?;
    let weights = cfg.pretrained_weights()?;
    let data = PreparedSet::from_manifest(&manifest, &cfg.preprocess())?;
    let mut model = cfg.model.build(cfg.seeds().init)?;
    if cfg.model.pretrained() {
        let n = model.load_pretrained(&weights)?;
        log::info!("loaded {n} pretrained tensors");
    }

    let out = output_dir(&args.out, &cfg, root, "train");
    create_dir(&out)?;
    cfg.write(&out.join("run.json"))?;
    let history = fit(&mut model, &data, &cfg.train_config())?;
    history.write_csv(&out.join("history.csv"))?;
    let bundle = Bundle {
        model,
        classes: manifest.classes.clone(),
        preprocess: cfg.preprocess(),
    };
    bundle.save(&out.join("model"))?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} images: loss {:.4}, accuracy {:.4} -> {}",
        history.len(),
        data.len(),
        last.loss,
        last.accuracy,
        out.join("model").display()
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, root: &Path) -> Result<()> {
    if args.batch_size == 0 {
        return Err(Error::Config("--batch-size must be at least 1".into()));
    }
    let bundle = Bundle::load(&args.model)?;
    let manifest = read_manifest(&args.manifest, args.ids.as_deref())?;
    if manifest.classes != bundle.classes {
        return Err(Error::Config(format!(
            "manifest classes {:?} differ from the model's {:?}",
            manifest.classes, bundle.classes
        )));
    }
    let data = PreparedSet::from_manifest(&manifest, &bundle.preprocess)?;
    let report = evaluate_model(&bundle.model, &data, args.batch_size)?;
    let out = args.out.clone().unwrap_or_else(|| root.join("evaluate").join("report.json"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.write_json(&out)?;
    print!("{}", report.render());
    Ok(())
}

/// Class probabilities for one image file, most likely first.
fn classify(bundle: &Bundle, path: &Path) -> Result<Vec<(String, f64)>> {
    let image = bundle.preprocess.apply(&load_gray(path)?)?;
    let probs = bundle.model.predict(&stack_batch(&[&image])?)?;
    let mut rows: Vec<(String, f64)> = bundle
        .classes
        .iter()
        .cloned()
        .zip(probs.data().iter().map(|&p| p as f64))
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(rows)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let bundle = Bundle::load(&args.model)?;
    let many = args.images.len() > 1;
    for path in &args.images {
        let rows = classify(&bundle, path)?;
        if many {
            println!("{}", path.display());
        }
        for (class, p) in rows {
            println!("{}{class}: {p:.6}", if many { "  " } else { "" });
        }
    }
    Ok(())
}

fn image_id(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn heatmap(args: &HeatmapArgs, root: &Path) -> Result<()> {
    let layers: Vec<LayerName> = if args.layers.is_empty() {
        LayerName::ALL.to_vec()
    } else {
        args.layers.iter().map(|l| l.parse()).collect::<Result<_>>()?
    };
    let check_layer: LayerName = args.check_layer.parse()?;
    let annotations = args.check.as_deref().map(read_annotations).transpose()?;
    let bundle = Bundle::load(&args.model)?;
    let AnyModel::Fusion(model) = &bundle.model else {
        return Err(Error::Config("heatmaps need a fusion model".into()));
    };
    let mut wanted = layers.clone();
    if annotations.is_some() && !wanted.contains(&check_layer) {
        wanted.push(check_layer);
    }
    let inputs: Vec<(String, PathBuf, _)> = args
        .images
        .iter()
        .map(|p| Ok((image_id(p), p.clone(), bundle.preprocess.apply(&load_gray(p)?)?)))
        .collect::<Result<_>>()?;

    let out = args.out.clone().unwrap_or_else(|| root.join("heatmaps"));
    create_dir(&out)?;
    let mut written = 0;
    for (id, path, image) in &inputs {
        let stack = extract_heatmaps(model, id, image, &wanted)?;
        for &layer in &layers {
            let map = stack.get(layer).expect("requested layer");
            render_overlay(image, map, &out.join(overlay_file_name(id, layer)))?;
            written += 1;
        }
        let Some(annotations) = &annotations else { continue };
        let map = stack.get(check_layer).expect("check layer was extracted");
        let path_str = path.to_string_lossy();
        let mine = annotations.iter().filter(|a| a.image_id == *id || a.image_id == path_str);
        for (n, ann) in mine.enumerate() {
            let c = circle_check(map, ann)?;
            let label = if ann.label.is_empty() { String::new() } else { format!(" [{}]", ann.label) };
            println!(
                "{id} circle {}{label} at ({}, {}) r {}: {} (mean {:.3} on {check_layer})",
                n + 1,
                ann.cx,
                ann.cy,
                ann.r,
                if c.detected { "detected" } else { "not detected" },
                c.mean_inside
            );
        }
    }
    if let Some(annotations) = &annotations {
        for a in annotations {
            if !inputs.iter().any(|(id, p, _)| a.image_id == *id || a.image_id == p.to_string_lossy()) {
                log::warn!("annotation for {:?} matches none of the given images", a.image_id);
            }
        }
    }
    log::info!("wrote {written} overlays to {}", out.display());
    Ok(())
}

fn write_confusion_csv(cm: &ConfusionMatrix, path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["truth\\predicted".to_string()];
    header.extend(cm.classes().iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (class, row) in cm.classes().iter().zip(cm.counts()) {
        let mut rec = vec![class.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::path_io(path, e))
}

fn write_fold(dir: &Path, report: &MetricsReport) -> Result<()> {
    create_dir(dir)?;
    report.write_json(&dir.join("report.json"))?;
    write_text(&dir.join("report.txt"), &report.render())
}

pub fn crossval(args: &CrossvalArgs, root: &Path) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_split(&mut cfg, &args.split);
    let manifest = read_manifest(&args.manifest, None)?;
    apply_model(&mut cfg, &args.model, manifest.classes.len());
    cfg.validate()?;
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.oracle_accuracy) {
        return Err(Error::Config(format!("--oracle-accuracy must be in [0, 1], got {}", args.oracle_accuracy)));
    }
    let seeds = cfg.seeds();
    let plan = monte_carlo_split(&manifest, cfg.split.options(), seeds.split)?;
    let (data, trainer): (PreparedSet, Box<dyn FoldTrainer>) = match args.stub {
        Some(Stub::Constant) => (PreparedSet::labels_only(&manifest)?, Box::new(ConstantStub)),
        Some(Stub::Oracle) => (
            PreparedSet::labels_only(&manifest)?,
            Box::new(NoisyOracleStub {
                accuracy: args.oracle_accuracy,
                seed: seeds.stub,
            }),
        ),
        None => {
            let mut t = NetworkFoldTrainer::new(cfg.model.clone(), cfg.train.clone(), seeds.train);
            t.weights = cfg.pretrained_weights()?;
            (PreparedSet::from_manifest(&manifest, &cfg.preprocess())?, Box::new(t))
        }
    };

    let out = output_dir(&args.out, &cfg, root, "crossval");
    create_dir(&out)?;
    cfg.write(&out.join("run.json"))?;
    plan.write(&out.join("split"))?;
    let cv = cross_validate(&data, &plan, trainer.as_ref(), args.jobs)?;
    for fold in &cv.folds {
        let dir = out.join(format!("fold{}", fold.fold));
        write_fold(&dir, &fold.report)?;
        if let Some(h) = &fold.history {
            h.write_csv(&dir.join("history.csv"))?;
        }
        if let (true, Some(model)) = (args.save_models, &fold.model) {
            let bundle = Bundle {
                model: model.clone(),
                classes: manifest.classes.clone(),
                preprocess: cfg.preprocess(),
            };
            bundle.save(&dir.join("model"))?;
        }
    }
    write_confusion_csv(&cv.combined, &out.join("combined_confusion.csv"))?;
    write_text(&out.join("combined_confusion.txt"), &cv.combined.render())?;
    let summary = cv.summary.render();
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    log::info!("wrote {} fold reports to {}", cv.folds.len(), out.display());
    Ok(())
}
