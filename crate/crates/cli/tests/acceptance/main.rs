//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Property criteria run in seconds; the trend criteria pretrain
//! desk-scale models and share cached runs where configurations coincide.

mod support;

use ndarray::{Array2, Array3};
use pretext_core::classifier::{build_batch, classifier_step, ClassifierNet};
use pretext_core::config::TransformSet;
use pretext_core::data::SyntheticVariant;
use pretext_core::eval::{knn_loocv, knn_loocv_oracle, random_feature_set, train_linear_probe, extract_features, ProbeSchedule};
use pretext_core::lci::{discriminator_step, inpainter_step, DiscriminatorNet, InpainterNet};
use pretext_core::nn::loss::{cross_entropy_masked, hinge_d_loss, hinge_g_loss};
use pretext_core::nn::AdamW;
use pretext_core::rng;
use pretext_core::transforms::{
    densify, sample_warp_spec, warp, warp_backward, ImageTensor, PatchSpec, TransformLabel, WarpField,
};
use rand::Rng as _;
use std::time::Instant;
use support::*;

fn random_image(h: usize, w: usize, rng: &mut rng::Rng) -> ImageTensor<f32> {
    Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(-1.0..1.0f32))
}

/// Criterion 1: dense flow matches the prescribed control-point offsets.
#[test]
fn criterion_01_spline_exactness() {
    let started = Instant::now();
    let mut rng = rng::root(101);
    let mut max_dev = 0.0f64;
    for _ in 0..100 {
        let spec = sample_warp_spec::<f32>(64, 64, 4, 6.4, 2, &mut rng).unwrap();
        let field = densify(&spec, 64, 64).unwrap();
        for (i, &r) in spec.rows.iter().enumerate() {
            for (j, &c) in spec.cols.iter().enumerate() {
                for k in 0..2 {
                    let dev = (field.flow[(r, c, k)] - spec.offsets[(i * 4 + j, k)]).abs();
                    max_dev = max_dev.max(dev as f64);
                }
            }
        }
    }
    let elapsed = started.elapsed();
    report(
        "01 spline exactness",
        max_dev < 1e-4 && elapsed.as_secs() < 10,
        &format!("max control-pixel deviation {max_dev:.2e} over 100 specs in {elapsed:.2?}"),
    );
}

/// Criterion 2: zero displacement warps every image bit-exactly.
#[test]
fn criterion_02_warp_identity() {
    let started = Instant::now();
    let mut rng = rng::root(102);
    let mut all_equal = true;
    for _ in 0..50 {
        let img = random_image(32, 32, &mut rng);
        let spec = sample_warp_spec::<f32>(32, 32, 4, 0.0, 2, &mut rng).unwrap();
        let field = densify(&spec, 32, 32).unwrap();
        // the interpolated zero field must itself be exactly representable
        let exact_zero = WarpField::zero(32, 32);
        let out = warp(&img, &field).unwrap();
        let out_zero = warp(&img, &exact_zero).unwrap();
        all_equal &= out == img && out_zero == img;
    }
    let elapsed = started.elapsed();
    report(
        "02 warp identity",
        all_equal && elapsed.as_secs() < 5,
        &format!("50 images bit-exact under d = 0 in {elapsed:.2?}"),
    );
}

/// Criterion 3: the LCI composition only rewrites the patch window.
#[test]
fn criterion_03_lci_locality() {
    let started = Instant::now();
    let f = InpainterNet::<f32>::new(16, 4, &mut rng::root(103));
    let mut rng = rng::root(104);
    let mut intact = true;
    for _ in 0..1000 {
        let img = random_image(32, 32, &mut rng);
        let spec = PatchSpec::sample(16, 2, 32, 32, &mut rng).unwrap();
        let e = pretext_core::transforms::extract_patch(&img, &spec).unwrap();
        let corrupted =
            pretext_core::transforms::corrupt_patch(&e, &spec.mask, &mut rng).unwrap();
        let r = f.inpaint(&corrupted).unwrap();
        let composed = pretext_core::transforms::paste_patch(&img, &r, &spec).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !spec.contains(y, x) {
                    for ch in 0..3 {
                        intact &= composed[(y, x, ch)] == img[(y, x, ch)];
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    report(
        "03 lci locality",
        intact && elapsed.as_secs() < 30,
        &format!("1000 compositions bit-identical outside the window in {elapsed:.2?}"),
    );
}

/// Criterion 4: cross-entropy and hinge algebra.
#[test]
fn criterion_04_loss_algebra() {
    let started = Instant::now();
    let logits = Array2::<f64>::zeros((6, 6));
    let labels: Vec<usize> = (0..6).collect();
    let (ce, _) = cross_entropy_masked(logits.view(), &labels, &[true; 6]).unwrap();
    let ce_dev = (ce - 6.0f64.ln()).abs();
    let d0 = hinge_d_loss(&[1.0f64], &[-1.0]);
    let d2 = hinge_d_loss(&[0.0f64], &[0.0]);
    let g0 = hinge_g_loss(&[0.0f64]);
    let elapsed = started.elapsed();
    report(
        "04 loss algebra",
        ce_dev < 1e-6 && d0 == 0.0 && d2 == 2.0 && g0 == 0.0 && elapsed.as_secs() < 1,
        &format!("ln6 deviation {ce_dev:.2e}; hinge hand cases ({d0}, {d2}, {g0}) in {elapsed:.2?}"),
    );
}

/// Criterion 5: kNN LOOCV equals the naive double-loop oracle.
#[test]
fn criterion_05_knn_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = rng::root(105);
    let mut all_match = true;
    let mut checked = 0;
    for trial in 0..20u64 {
        let n = 60 + (trial as usize * 12) % 241; // up to 300
        let duplicates = trial % 3 == 0;
        let (data, labels) = random_feature_set::<f64>(n, 12, 4, duplicates, &mut rng);
        for k in [1usize, 5, 20] {
            let got = knn_loocv(&data, &labels, k).unwrap();
            let want = knn_loocv_oracle(&data, &labels, k);
            all_match &= got == want;
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    report(
        "05 knn oracle equivalence",
        all_match && elapsed.as_secs() < 60,
        &format!("{checked} dataset/k combinations label-identical in {elapsed:.2?}"),
    );
}

/// Criterion 6: warp gradients w.r.t. the flow match central differences.
#[test]
fn criterion_06_gradient_checks() {
    let started = Instant::now();
    let mut rng = rng::root(106);
    let img: ImageTensor<f64> = Array3::from_shape_fn((16, 20, 3), |_| rng.gen_range(-1.0..1.0));
    let mut field = WarpField::zero(16, 20);
    for v in field.flow.iter_mut() {
        *v = rng.gen_range(-1.2..1.2) + 0.31;
    }
    let gout = Array3::<f64>::ones((16, 20, 3));
    let (_, gflow) = warp_backward(&img, &field, &gout).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let y = rng.gen_range(2..14);
        let x = rng.gen_range(2..18);
        let k = rng.gen_range(0..2);
        let mut fp = field.clone();
        fp.flow[(y, x, k)] += eps;
        let mut fm = field.clone();
        fm.flow[(y, x, k)] -= eps;
        let lp: f64 = warp(&img, &fp).unwrap().sum();
        let lm: f64 = warp(&img, &fm).unwrap().sum();
        let fd = (lp - lm) / (2.0 * eps);
        let an = gflow.flow[(y, x, k)];
        if fd.abs() < 1e-6 && an.abs() < 1e-6 {
            continue;
        }
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
        checked += 1;
    }
    let elapsed = started.elapsed();
    report(
        "06 gradient checks",
        worst < 1e-3 && elapsed.as_secs() < 30,
        &format!("worst relative error {worst:.2e} over {checked} sample points in {elapsed:.2?}"),
    );
}

/// Criterion 7: parameter checksums prove step isolation.
#[test]
fn criterion_07_isolation_contracts() {
    let started = Instant::now();
    let cfg = desk_train_config("rot,warp,lci", 107);
    let mut lci_cfg = cfg.lci;
    lci_cfg.patch_size = 8;
    lci_cfg.f_channels = 4;
    lci_cfg.d_channels = 4;
    let mut c = ClassifierNet::<f32>::new(&cfg.backbone, &mut rng::root(1));
    let mut f = InpainterNet::<f32>::new(8, 4, &mut rng::root(2));
    let mut d = DiscriminatorNet::<f32>::new(4, &mut rng::root(3));
    let mut rng = rng::root(108);
    let images: Vec<ImageTensor<f32>> = (0..8).map(|_| random_image(32, 32, &mut rng)).collect();
    let enabled = [true; 6];
    let mut ok = true;

    // inpainter step: F changes, C and D bit-identical
    let (cs, ds, fs) = (c.checksum(), d.checksum(), f.checksum());
    let mut opt_f = AdamW::new(0.5, 0.999, 0.0);
    inpainter_step(&mut f, &mut d, &mut c, &images, &lci_cfg, &enabled, &mut opt_f, &mut rng)
        .unwrap();
    ok &= c.checksum() == cs && d.checksum() == ds && f.checksum() != fs;

    // discriminator step: D changes, F bit-identical
    let (ds2, fs2, cs2) = (d.checksum(), f.checksum(), c.checksum());
    let mut opt_d = AdamW::new(0.5, 0.999, 0.0);
    discriminator_step(&mut d, &f, &images, &lci_cfg, &mut opt_d, &mut rng).unwrap();
    ok &= d.checksum() != ds2 && f.checksum() == fs2 && c.checksum() == cs2;

    // classifier step: C changes, F and D bit-identical
    let mut batch_cfg = cfg.clone();
    batch_cfg.lci = lci_cfg;
    let batch = build_batch(&images, &(0..8).collect::<Vec<_>>(), &batch_cfg, Some(&f), &mut rng)
        .unwrap();
    let (fs3, ds3, cs3) = (f.checksum(), d.checksum(), c.checksum());
    let mut opt_c = AdamW::new(0.5, 0.99, 1e-4);
    classifier_step(&mut c, &batch, &enabled, &mut opt_c, 3e-4).unwrap();
    ok &= c.checksum() != cs3 && f.checksum() == fs3 && d.checksum() == ds3;

    // probe training: classifier bit-identical (features + probe)
    let cs4 = c.checksum();
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let feats = extract_features(&c, &images, "conv4", 9216).unwrap();
    let _ = train_linear_probe(
        &feats,
        &labels,
        &feats,
        &labels,
        &ProbeSchedule {
            epochs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    ok &= c.checksum() == cs4;

    let elapsed = started.elapsed();
    report(
        "07 isolation contracts",
        ok && elapsed.as_secs() < 60,
        &format!("inpainter/discriminator/classifier/probe isolation held in {elapsed:.2?}"),
    );
}

/// Criterion 8: linear-probe accuracy is non-decreasing in the LCI patch
/// size (majority of cross-seed pairs ordered, three seeds).
#[test]
fn criterion_08_patch_size_trend() {
    let started = Instant::now();
    let sizes = [8usize, 16, 24];
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for &p in &sizes {
        let mut per_seed = Vec::new();
        for &seed in &SEEDS {
            let mut key = RunKey::generic("lci", seed);
            key.patch_size = p;
            per_seed.push(probe_accuracy(&key));
        }
        acc.push(per_seed);
    }
    let mut ordered_pairs = 0usize;
    let mut total_pairs = 0usize;
    for w in acc.windows(2) {
        for &small in &w[0] {
            for &large in &w[1] {
                total_pairs += 1;
                if large >= small {
                    ordered_pairs += 1;
                }
            }
        }
    }
    let pass = ordered_pairs * 2 > total_pairs;
    let elapsed = started.elapsed();
    report(
        "08 patch-size trend",
        pass && elapsed.as_secs() < 7200,
        &format!(
            "sizes {sizes:?} -> means {:?}; {ordered_pairs}/{total_pairs} cross-seed pairs ordered in {elapsed:.1?}",
            acc.iter().map(|a| (mean(a) * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

/// Criterion 9: Random < each single transform < the full combination,
/// with at least five points between Random and the combination.
#[test]
fn criterion_09_transform_set_trend() {
    let started = Instant::now();
    let random = mean(&SEEDS.map(random_probe_accuracy));
    let single = |name: &str| mean(&SEEDS.map(|s| probe_accuracy(&RunKey::generic(name, s))));
    let rot = single("rot");
    let warp_acc = single("warp");
    let lci = single("lci");
    let full = single("rot,warp,lci");
    let orderings = random < rot
        && random < warp_acc
        && random < lci
        && rot < full
        && warp_acc < full
        && lci < full;
    let margin = full - random;
    let elapsed = started.elapsed();
    report(
        "09 transform-set trend",
        orderings && margin >= 0.05 && elapsed.as_secs() < 10_800,
        &format!(
            "random {random:.4} | rot {rot:.4} warp {warp_acc:.4} lci {lci:.4} | full {full:.4} (margin {margin:.4}) in {elapsed:.1?}"
        ),
    );
}

/// Criterion 10: on the face-like dataset rotation-only pretraining is at
/// most as good as LCI-only pretraining.
#[test]
fn criterion_10_face_like_trend() {
    let started = Instant::now();
    let rot = mean(&SEEDS.map(|s| probe_accuracy(&RunKey::face_like("rot", s))));
    let lci = mean(&SEEDS.map(|s| probe_accuracy(&RunKey::face_like("lci", s))));
    let elapsed = started.elapsed();
    report(
        "10 face-like failure mode",
        rot <= lci && elapsed.as_secs() < 7200,
        &format!("rot-only {rot:.4} <= lci-only {lci:.4} in {elapsed:.1?}"),
    );
}

/// Criterion 11: disabling the autoencoded substitution or the
/// adversarial classifier term reduces probe accuracy in at least two of
/// three seeds each.
#[test]
fn criterion_11_shortcut_prevention_ablation() {
    let started = Instant::now();
    let mut no_sub_wins = 0;
    let mut no_adv_wins = 0;
    let mut detail = String::new();
    for &seed in &SEEDS {
        let full = probe_accuracy(&RunKey::generic("rot,warp,lci", seed));
        let mut no_sub_key = RunKey::generic("rot,warp,lci", seed);
        no_sub_key.ae_substitution = false;
        let no_sub = probe_accuracy(&no_sub_key);
        let mut no_adv_key = RunKey::generic("rot,warp,lci", seed);
        no_adv_key.adversarial_c = false;
        let no_adv = probe_accuracy(&no_adv_key);
        if full > no_sub {
            no_sub_wins += 1;
        }
        if full > no_adv {
            no_adv_wins += 1;
        }
        detail.push_str(&format!(
            "[seed {seed}: full {full:.4} vs no-sub {no_sub:.4}, no-adv {no_adv:.4}] "
        ));
    }
    let elapsed = started.elapsed();
    report(
        "11 shortcut-prevention ablation",
        no_sub_wins >= 2 && no_adv_wins >= 2 && elapsed.as_secs() < 10_800,
        &format!("{detail}in {elapsed:.1?}"),
    );
}

/// Criterion 12: two pretraining commands with identical config and seed
/// produce byte-identical metric logs.
#[test]
fn criterion_12_determinism() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_pretext");
    let base = std::env::temp_dir().join("pretext_acceptance_determinism");
    let _ = std::fs::remove_dir_all(&base);
    let run = |dir: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "pretrain",
                "--dataset",
                "synthetic:generic",
                "--transforms",
                "rot,warp,lci",
                "--epochs",
                "2",
                "--seed",
                "7",
                "--out",
            ])
            .arg(dir)
            .stdout(std::process::Stdio::null())
            .status()
            .expect("spawn pretext");
        assert!(status.success(), "pretrain exited nonzero");
        std::fs::read(dir.join("metrics.jsonl")).expect("metrics file")
    };
    let a = run(&base.join("a"));
    let b = run(&base.join("b"));
    let identical = a == b;
    let _ = std::fs::remove_dir_all(&base);
    let elapsed = started.elapsed();
    report(
        "12 determinism",
        identical && !a.is_empty() && elapsed.as_secs() < 1200,
        &format!(
            "two runs, {} metric bytes each, byte-identical: {identical} in {elapsed:.1?}",
            a.len()
        ),
    );
}

/// The transform-set guard: an invalid CLI transform set exits nonzero.
#[test]
fn cli_rejects_invalid_transform_set() {
    let bin = env!("CARGO_BIN_EXE_pretext");
    let out = std::process::Command::new(bin)
        .args(["pretrain", "--transforms", "bogus", "--out"])
        .arg(std::env::temp_dir().join("pretext_bogus"))
        .output()
        .expect("spawn pretext");
    assert!(!out.status.success());
    let _ = TransformSet::parse("rot").unwrap();
    let _ = TransformLabel::new(0).unwrap();
}
