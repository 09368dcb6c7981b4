//! Subcommand implementations.

use crate::artifacts;
use crate::run_config::{dump_config, warn_on_hash_mismatch, RunConfig};
use anyhow::{bail, Context};
use pretext_core::classifier::{pretrain, TrainEvent, STAGES};
use pretext_core::config::TransformSet;
use pretext_core::data::{load_dataset, Dataset};
use pretext_core::eval::{
    extract_features, knn_loocv, retrieve, train_linear_probe, FeatureMatrix, ProbeResult,
    ProbeSchedule, Standardizer,
};
use pretext_core::lci::make_lci_records;
use pretext_core::transforms::{
    apply_transform, PatchParams, TransformCtx, TransformLabel, WarpParams,
};
use pretext_core::{rng, viz};
use std::io::Write as _;
use std::path::Path;

fn load_splits(cfg: &RunConfig) -> anyhow::Result<(Dataset<f32>, Dataset<f32>)> {
    let ds: Dataset<f32> = load_dataset(&cfg.dataset_spec()?)?;
    if ds.is_empty() {
        bail!("dataset '{}' contains no images (skipped: {})", cfg.dataset, ds.skipped);
    }
    if ds.skipped > 0 {
        eprintln!("note: {} undecodable files were skipped", ds.skipped);
    }
    Ok(ds.split_eval(cfg.eval_every_k))
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path, ablate: bool) -> anyhow::Result<()> {
    if ablate {
        let subsets = [
            "rot",
            "warp",
            "lci",
            "rot,warp",
            "rot,lci",
            "warp,lci",
            "rot,warp,lci",
        ];
        for subset in subsets {
            let mut sub_cfg = cfg.clone();
            sub_cfg.train.transforms = TransformSet::parse(subset)?;
            let dir = out.join(subset.replace(',', "+"));
            println!("== ablation cell: {subset}");
            run_pretrain(&sub_cfg, &dir)?;
        }
        Ok(())
    } else {
        run_pretrain(cfg, out)
    }
}

fn run_pretrain(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    cfg.train.validate()?;
    let hash = cfg.hash();
    dump_config(cfg, out)?;
    let (train_ds, _) = load_splits(cfg)?;
    println!(
        "pretraining on {} images ({}), transforms [{}], seed {}",
        train_ds.len(),
        cfg.dataset,
        cfg.train.transforms,
        cfg.train.seed
    );
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let mut last_print = 0usize;
    let bundle = pretrain(&train_ds.images, &cfg.train, |event| match event {
        TrainEvent::Step(rec) => {
            let line = serde_json::to_string(rec).expect("metrics serialize");
            writeln!(metrics, "{line}").expect("metrics write");
            if rec.step >= last_print {
                let acc: usize = rec.class_correct.iter().sum();
                let tot: usize = rec.class_total.iter().sum::<usize>().max(1);
                println!(
                    "step {:>6}  lr {:.3e}  loss {:.4}  acc {:.3}",
                    rec.step,
                    rec.lr,
                    rec.loss_c,
                    acc as f64 / tot as f64
                );
                last_print = rec.step + 50;
            }
        }
        TrainEvent::Checkpoint {
            step,
            classifier,
            inpainter,
            discriminator,
        } => {
            let dir = out.join(format!("checkpoints/step_{step:06}"));
            artifacts::save_bundle_parts(
                &dir,
                classifier,
                inpainter,
                discriminator,
                &cfg.train,
                &hash,
                step,
            )
            .expect("checkpoint write");
        }
    })?;
    metrics.flush()?;
    artifacts::save_bundle(out, &bundle, &cfg.train, &hash)?;

    // one example image per enabled transformation
    let mut example_rng = rng::stream(cfg.train.seed, &[0xE7A]);
    let source = &train_ds.images[0];
    let mut examples = Vec::new();
    for label in TransformLabel::all() {
        if !cfg.train.transforms.enabled_labels()[label.index()] {
            continue;
        }
        let mut ctx = TransformCtx {
            rng: &mut example_rng,
            warp: WarpParams {
                grid_m: cfg.train.warp.grid_m,
                d: cfg.train.warp.displacement.map(|d| d as f32),
                order: cfg.train.warp.order,
                pin_border: cfg.train.warp.pin_border,
            },
            patch: PatchParams {
                p: cfg.train.lci.patch_size,
                b: cfg.train.lci.border_b,
            },
            inpainter: bundle
                .inpainter
                .as_ref()
                .map(|f| f as &dyn pretext_core::transforms::PatchInpainter<f32>),
        };
        examples.push((label.index(), apply_transform(source, label, &mut ctx)?));
    }
    viz::render_transform_examples(&examples, out.join("transforms.png"))?;
    println!(
        "wrote {} and checkpoints to {}",
        metrics_path.display(),
        out.display()
    );
    Ok(())
}

fn parse_stages(stages: &str) -> anyhow::Result<Vec<String>> {
    let list: Vec<String> = stages
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    for s in &list {
        if !STAGES.contains(&s.as_str()) {
            bail!("unknown stage '{s}' (expected conv1..conv5)");
        }
    }
    if list.is_empty() {
        bail!("no stages requested");
    }
    Ok(list)
}

struct ProbeRow {
    init: String,
    results: Vec<ProbeResult>,
}

fn probe_row(
    net: &pretext_core::classifier::ClassifierNet<f32>,
    init: &str,
    stages: &[String],
    train_ds: &Dataset<f32>,
    eval_ds: &Dataset<f32>,
    cfg: &RunConfig,
) -> anyhow::Result<ProbeRow> {
    let schedule = ProbeSchedule {
        epochs: cfg.probe_epochs,
        batch_size: cfg.probe_batch,
        momentum: 0.9,
        seed: cfg.train.seed,
    };
    let mut results = Vec::new();
    for stage in stages {
        let ftr = extract_features(net, &train_ds.images, stage, cfg.target_units)?;
        let fev = extract_features(net, &eval_ds.images, stage, cfg.target_units)?;
        let result = train_linear_probe(&ftr, &train_ds.labels, &fev, &eval_ds.labels, &schedule)?;
        println!("  {init:>12} {stage}: {:.4}", result.accuracy);
        results.push(result);
    }
    Ok(ProbeRow {
        init: init.to_string(),
        results,
    })
}

pub fn cmd_probe(
    cfg: &RunConfig,
    checkpoint: &Path,
    stages: &str,
    include_random: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let stages = parse_stages(stages)?;
    let loaded = artifacts::load_classifier(checkpoint)?;
    warn_on_hash_mismatch(&cfg.hash(), &loaded.config_hash, "checkpoint");
    dump_config(cfg, out)?;
    let (train_ds, eval_ds) = load_splits(cfg)?;
    println!(
        "probing {} stages of the step-{} checkpoint on {} train / {} eval images",
        stages.len(),
        loaded.step,
        train_ds.len(),
        eval_ds.len()
    );
    let mut rows = vec![probe_row(
        &loaded.net,
        "pretrained",
        &stages,
        &train_ds,
        &eval_ds,
        cfg,
    )?];
    if include_random {
        let random = artifacts::random_like(&loaded.train_cfg.backbone, cfg.train.seed ^ 0x5EED);
        rows.push(probe_row(&random, "random", &stages, &train_ds, &eval_ds, cfg)?);
    }

    // plain-text table: rows = init, cols = stages
    let mut table = String::new();
    table.push_str(&format!("{:>12}", "init"));
    for s in &stages {
        table.push_str(&format!("{s:>10}"));
    }
    table.push('\n');
    for row in &rows {
        table.push_str(&format!("{:>12}", row.init));
        for r in &row.results {
            table.push_str(&format!("{:>10.4}", r.accuracy));
        }
        table.push('\n');
    }
    table.push_str(&format!(
        "config_hash {}  checkpoint_hash {}\n",
        cfg.hash(),
        loaded.checkpoint_hash
    ));
    print!("{table}");
    std::fs::write(out.join("report.txt"), &table)?;

    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(out.join("report.jsonl"))?);
    for row in &rows {
        for r in &row.results {
            let rec = serde_json::json!({
                "init": row.init,
                "stage": r.stage,
                "accuracy": r.accuracy,
                "config_hash": cfg.hash(),
                "checkpoint_hash": loaded.checkpoint_hash,
            });
            writeln!(jsonl, "{rec}")?;
        }
    }
    jsonl.flush()?;
    Ok(())
}

fn parse_k_list(k: &str) -> anyhow::Result<Vec<usize>> {
    let list: Vec<usize> = k
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().with_context(|| format!("bad k value '{s}'")))
        .collect::<anyhow::Result<_>>()?;
    if list.is_empty() {
        bail!("no k values requested");
    }
    Ok(list)
}

/// Features for nearest-neighbor protocols: five-crop concatenation when
/// the image is larger than the training resolution, single forward
/// otherwise; standardized downstream.
fn nn_features(
    net: &pretext_core::classifier::ClassifierNet<f32>,
    ds: &Dataset<f32>,
    cfg: &RunConfig,
) -> anyhow::Result<FeatureMatrix<f32>> {
    let crop = cfg.train.image_size;
    let (h, w, _) = ds.images[0].dim();
    if h > crop || w > crop {
        let rows: Vec<ndarray::Array1<f32>> = ds
            .images
            .iter()
            .map(|img| pretext_core::eval::five_crop_features(net, img, "conv5", crop, cfg.target_units))
            .collect::<pretext_core::Result<_>>()?;
        let d = rows[0].len();
        let mut data = ndarray::Array2::<f32>::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            data.row_mut(i).assign(r);
        }
        Ok(FeatureMatrix {
            data,
            stage: "conv5".into(),
            pool_grid: 0,
        })
    } else {
        Ok(extract_features(net, &ds.images, "conv5", cfg.target_units)?)
    }
}

pub fn cmd_knn(cfg: &RunConfig, checkpoint: &Path, k: &str, out: &Path) -> anyhow::Result<()> {
    let k_list = parse_k_list(k)?;
    let loaded = artifacts::load_classifier(checkpoint)?;
    warn_on_hash_mismatch(&cfg.hash(), &loaded.config_hash, "checkpoint");
    dump_config(cfg, out)?;
    let (train_ds, eval_ds) = load_splits(cfg)?;
    // LOOCV over the combined split, per the complete-dataset protocol
    let mut all = train_ds.clone();
    all.images.extend(eval_ds.images.iter().cloned());
    all.labels.extend(eval_ds.labels.iter().cloned());
    let n = all.len();
    for &k in &k_list {
        if k + 1 >= n {
            bail!("k = {k} needs more than k + 1 = {} images, dataset has {n}", k + 1);
        }
    }
    let features = nn_features(&loaded.net, &all, cfg)?;
    let mut lines = String::new();
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(out.join("knn.jsonl"))?);
    for &k in &k_list {
        let acc = knn_loocv(&features.data, &all.labels, k)?;
        println!("k = {k:>3}: LOOCV accuracy {acc:.4}");
        lines.push_str(&format!("{k} {acc}\n"));
        writeln!(
            jsonl,
            "{}",
            serde_json::json!({
                "k": k,
                "accuracy": acc,
                "config_hash": cfg.hash(),
                "checkpoint_hash": loaded.checkpoint_hash,
            })
        )?;
    }
    jsonl.flush()?;
    std::fs::write(out.join("knn.txt"), &lines)?;
    Ok(())
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum VizMode {
    Filters,
    LciExamples,
    Retrieval,
}

pub fn cmd_viz(cfg: &RunConfig, checkpoint: &Path, mode: VizMode, out: &Path) -> anyhow::Result<()> {
    let loaded = artifacts::load_classifier(checkpoint)?;
    warn_on_hash_mismatch(&cfg.hash(), &loaded.config_hash, "checkpoint");
    dump_config(cfg, out)?;
    match mode {
        VizMode::Filters => {
            let path = out.join("filters.png");
            let n = viz::render_filter_grid(&loaded.net, &path, 6)?;
            println!("wrote {n}-filter grid to {}", path.display());
        }
        VizMode::LciExamples => {
            let inpainter_path = checkpoint
                .parent()
                .map(|d| d.join(artifacts::INPAINTER_FILE))
                .filter(|p| p.is_file())
                .with_context(|| {
                    format!(
                        "no {} next to the classifier checkpoint",
                        artifacts::INPAINTER_FILE
                    )
                })?;
            let f = artifacts::load_inpainter(&inpainter_path)?;
            let (train_ds, _) = load_splits(cfg)?;
            let count = 8.min(train_ds.len());
            let sources = &train_ds.images[..count];
            let records = make_lci_records(
                sources,
                &f,
                cfg.train.lci.border_b,
                &mut rng::stream(cfg.train.seed, &[0x71C]),
            )?;
            let path = out.join("lci_examples.png");
            viz::render_lci_examples(sources, &records, &path)?;
            println!("wrote {count} before/after pairs to {}", path.display());
        }
        VizMode::Retrieval => {
            let (train_ds, eval_ds) = load_splits(cfg)?;
            let gallery = nn_features(&loaded.net, &train_ds, cfg)?;
            let std = Standardizer::fit(&gallery.data);
            let gallery_std = std.apply(&gallery.data);
            let queries = nn_features(&loaded.net, &eval_ds, cfg)?;
            let queries_std = std.apply(&queries.data);
            let count = 6.min(eval_ds.len());
            let topk = cfg.retrieval_topk.min(train_ds.len());
            let mut query_imgs = Vec::new();
            let mut neighbor_rows = Vec::new();
            for qi in 0..count {
                let ranked = retrieve(&queries_std.row(qi).to_owned(), &gallery_std, topk)?;
                query_imgs.push(eval_ds.images[qi].clone());
                neighbor_rows.push(
                    ranked
                        .iter()
                        .map(|&j| train_ds.images[j].clone())
                        .collect::<Vec<_>>(),
                );
            }
            let path = out.join("retrieval.png");
            viz::render_retrieval_strips(&query_imgs, &neighbor_rows, &path)?;
            println!(
                "wrote {count} retrieval strips (top {topk}) to {}",
                path.display()
            );
        }
    }
    Ok(())
}
