//! Shared infrastructure for the acceptance criteria: desk-scale run
//! configurations and a memoized pretrain-then-probe pipeline so criteria
//! can share identical training runs.

use pretext_core::classifier::{pretrain, ClassifierNet, ModelBundle};
use pretext_core::config::{TrainConfig, TransformSet};
use pretext_core::data::{gen_synthetic_oriented, Dataset, SyntheticOrientedSpec, SyntheticVariant};
use pretext_core::eval::{extract_features, train_linear_probe, ProbeSchedule};
use pretext_core::rng;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

/// Number of seeds for every trend criterion.
pub const SEEDS: [u64; 3] = [11, 22, 33];

pub const IMAGE_SIZE: usize = 32;
pub const PER_CLASS: usize = 96;
pub const PRETRAIN_EPOCHS: usize = 40;

pub fn desk_dataset(variant: SyntheticVariant, seed: u64) -> (Dataset<f32>, Dataset<f32>) {
    let spec = SyntheticOrientedSpec {
        variant,
        classes: 4,
        per_class: PER_CLASS,
        ..Default::default()
    };
    let ds: Dataset<f32> = gen_synthetic_oriented(&spec, IMAGE_SIZE, &mut rng::root(seed));
    ds.split_eval(4)
}

/// Desk-scale training configuration shared by the trend criteria.
pub fn desk_train_config(transforms: &str, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: PRETRAIN_EPOCHS,
        batch_size: 16,
        seed,
        image_size: IMAGE_SIZE,
        transforms: TransformSet::parse(transforms).expect("transform set"),
        log_confusion_every: 0,
        ..Default::default()
    };
    cfg.lci.patch_size = 16;
    cfg
}

/// One pretrain-then-probe measurement, identified by everything that can
/// vary across the criteria.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct RunKey {
    pub face_like: bool,
    pub transforms: String,
    pub seed: u64,
    pub patch_size: usize,
    pub ae_substitution: bool,
    pub adversarial_c: bool,
}

impl RunKey {
    pub fn generic(transforms: &str, seed: u64) -> Self {
        Self {
            face_like: false,
            transforms: transforms.to_string(),
            seed,
            patch_size: 16,
            ae_substitution: true,
            adversarial_c: true,
        }
    }

    pub fn face_like(transforms: &str, seed: u64) -> Self {
        Self {
            face_like: true,
            ..Self::generic(transforms, seed)
        }
    }
}

fn conv5_probe_accuracy(
    net: &ClassifierNet<f32>,
    train_ds: &Dataset<f32>,
    eval_ds: &Dataset<f32>,
    seed: u64,
) -> f64 {
    let ftr = extract_features(net, &train_ds.images, "conv5", 9216).expect("train features");
    let fev = extract_features(net, &eval_ds.images, "conv5", 9216).expect("eval features");
    let schedule = ProbeSchedule {
        seed,
        ..Default::default()
    };
    train_linear_probe(&ftr, &train_ds.labels, &fev, &eval_ds.labels, &schedule)
        .expect("probe")
        .accuracy
}

fn run_pipeline(key: &RunKey) -> f64 {
    let started = Instant::now();
    let variant = if key.face_like {
        SyntheticVariant::FaceLike
    } else {
        SyntheticVariant::Generic
    };
    let (train_ds, eval_ds) = desk_dataset(variant, key.seed);
    let mut cfg = desk_train_config(&key.transforms, key.seed);
    cfg.lci.patch_size = key.patch_size;
    cfg.lci.adversarial_c = key.adversarial_c;
    if !key.ae_substitution {
        cfg.ae_substitute_fraction = 0.0;
    }
    let bundle: ModelBundle<f32> =
        pretrain(&train_ds.images, &cfg, |_| {}).expect("pretraining run");
    let acc = conv5_probe_accuracy(&bundle.classifier, &train_ds, &eval_ds, key.seed);
    eprintln!(
        "    [{:>7.1?}s] {:?} -> conv5 probe {acc:.4}",
        started.elapsed().as_secs_f32(),
        key
    );
    acc
}

/// Memoized probe accuracy for a run key; criteria sharing a key share
/// the underlying training run.
pub fn probe_accuracy(key: &RunKey) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<RunKey, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&hit) = cache.lock().unwrap().get(key) {
        return hit;
    }
    // compute outside the lock so independent runs can proceed in
    // parallel test threads; a duplicate computation is only wasted time
    let acc = run_pipeline(key);
    cache.lock().unwrap().insert(key.clone(), acc);
    acc
}

/// Probe accuracy of a randomly initialized backbone (no pretraining).
pub fn random_probe_accuracy(seed: u64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&hit) = cache.lock().unwrap().get(&seed) {
        return hit;
    }
    let (train_ds, eval_ds) = desk_dataset(SyntheticVariant::Generic, seed);
    let cfg = desk_train_config("rot", seed);
    let net = ClassifierNet::<f32>::new(&cfg.backbone, &mut rng::root(seed ^ 0x5EED));
    let acc = conv5_probe_accuracy(&net, &train_ds, &eval_ds, seed);
    eprintln!("    random init seed {seed} -> conv5 probe {acc:.4}");
    cache.lock().unwrap().insert(seed, acc);
    acc
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}
