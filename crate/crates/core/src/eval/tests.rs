use super::*;
use crate::config::BackboneConfig;
use crate::rng::root;
use ndarray::Array3;
use rand::Rng as _;

fn backbone_256ch() -> BackboneConfig {
    BackboneConfig {
        channels: [8, 16, 32, 64, 256],
        kernels: [3; 5],
        strides: [1, 2, 2, 1, 1],
        pools: [false; 5],
        groups: [1; 5],
    }
}

fn random_images(n: usize, size: usize, seed: u64) -> Vec<ImageTensor<f32>> {
    let mut rng = root(seed);
    (0..n)
        .map(|_| Array3::from_shape_fn((size, size, 3), |_| rng.gen_range(-1.0..1.0f32)))
        .collect()
}

#[test]
fn pooled_grid_arithmetic() {
    // 256 channels at the default budget pool to a 6x6 grid
    assert_eq!(pooled_grid_side(256, 9216), 6);
    assert_eq!(pooled_grid_side(96, 9216), 9);
    assert_eq!(pooled_grid_side(10_000, 9216), 1);
}

#[test]
fn pooling_is_monotone_in_target_units() {
    let mut last = 0;
    for target in [64, 256, 1024, 4096, 9216, 40_000] {
        let g = pooled_grid_side(64, target);
        assert!(g >= last, "grid side shrank at target {target}");
        last = g;
    }
}

#[test]
fn extraction_is_deterministic_and_respects_budget() {
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(1));
    let images = random_images(3, 32, 2);
    let a = extract_features(&c, &images, "conv5", DEFAULT_TARGET_UNITS).unwrap();
    let b = extract_features(&c, &images, "conv5", DEFAULT_TARGET_UNITS).unwrap();
    assert_eq!(a.data, b.data);
    assert!(a.data.ncols() <= DEFAULT_TARGET_UNITS);
    // 256 channels on an 8x8 map pool to 6x6: 256 * 36 = 9216 units
    assert_eq!(a.pool_grid, 6);
    assert_eq!(a.data.ncols(), 9216);
    assert!(extract_features(&c, &images, "conv9", 9216).is_err());
}

#[test]
fn constant_zero_image_gives_reproducible_row() {
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(3));
    let img = Array3::<f32>::zeros((32, 32, 3));
    let a = extract_features(&c, &[img.clone()], "conv3", 9216).unwrap();
    let b = extract_features(&c, &[img], "conv3", 9216).unwrap();
    assert_eq!(a.data, b.data);
}

#[test]
fn features_change_under_rotation() {
    // non-invariance witness on an untrained but structured network
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(4));
    let img = random_images(1, 32, 5).remove(0);
    let rot = crate::transforms::rotate(&img, 1).unwrap();
    let a = extract_features(&c, &[img], "conv5", 9216).unwrap();
    let b = extract_features(&c, &[rot], "conv5", 9216).unwrap();
    assert_ne!(a.data, b.data);
}

#[test]
fn five_crop_dimensions_and_determinism() {
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(6));
    let img = random_images(1, 40, 7).remove(0);
    let single = extract_features(
        &c,
        &[img.slice(ndarray::s![..32, ..32, ..]).to_owned()],
        "conv4",
        9216,
    )
    .unwrap();
    let five = five_crop_features(&c, &img, "conv4", 32, 9216).unwrap();
    assert_eq!(five.len(), 5 * single.data.ncols());
    let again = five_crop_features(&c, &img, "conv4", 32, 9216).unwrap();
    assert_eq!(five, again);
    assert!(five_crop_features(&c, &img, "conv4", 64, 9216).is_err());
}

#[test]
fn five_crops_of_uniform_image_are_identical() {
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(8));
    let img = Array3::<f32>::from_elem((40, 40, 3), 0.3);
    let five = five_crop_features(&c, &img, "conv4", 32, 9216).unwrap();
    let d = five.len() / 5;
    for i in 1..5 {
        for j in 0..d {
            assert_eq!(five[i * d + j], five[j]);
        }
    }
}

#[test]
fn probe_separates_linear_classes() {
    let mut rng = root(9);
    let n = 120;
    let d = 16;
    let mut data = ndarray::Array2::<f32>::zeros((n, d));
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 2;
        labels.push(class);
        for j in 0..d {
            data[(i, j)] =
                rng.gen_range(-0.5..0.5) + if class == 0 { -2.0 } else { 2.0 };
        }
    }
    let features = FeatureMatrix {
        data,
        stage: "conv5".into(),
        pool_grid: 1,
    };
    let result = train_linear_probe(
        &features,
        &labels,
        &features,
        &labels,
        &ProbeSchedule {
            epochs: 10,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(result.accuracy, 1.0);
    assert_eq!(result.curve.len(), 10);
}

#[test]
fn probe_rejects_single_class() {
    let features = FeatureMatrix {
        data: ndarray::Array2::<f32>::zeros((10, 4)),
        stage: "conv1".into(),
        pool_grid: 1,
    };
    let labels = vec![0usize; 10];
    assert!(train_linear_probe(&features, &labels, &features, &labels, &Default::default()).is_err());
}

#[test]
fn probe_schedule_lookup() {
    assert_eq!(probe_lr(0), 0.1);
    assert_eq!(probe_lr(4), 0.1);
    assert_eq!(probe_lr(5), 0.01);
    assert_eq!(probe_lr(30), 0.002);
    assert_eq!(probe_lr(45), 0.0004);
    assert_eq!(probe_lr(64), 0.0004);
}

#[test]
fn probe_training_leaves_classifier_untouched() {
    let c = ClassifierNet::<f32>::new(&backbone_256ch(), &mut root(10));
    let images = random_images(24, 32, 11);
    let labels: Vec<usize> = (0..24).map(|i| i % 2).collect();
    let before = c.checksum();
    let features = extract_features(&c, &images, "conv4", 9216).unwrap();
    let _ = train_linear_probe(
        &features,
        &labels,
        &features,
        &labels,
        &ProbeSchedule {
            epochs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(c.checksum(), before);
}

#[test]
fn knn_two_far_clusters_k1_is_perfect() {
    let mut rng = root(12);
    let n = 40;
    let mut data = ndarray::Array2::<f64>::zeros((n, 8));
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 2;
        labels.push(class);
        for j in 0..8 {
            data[(i, j)] = rng.gen_range(-0.1..0.1) + if class == 0 { -5.0 } else { 5.0 };
        }
    }
    assert_eq!(knn_loocv(&data, &labels, 1).unwrap(), 1.0);
}

#[test]
fn knn_rejects_bad_k() {
    let (data, labels) = random_feature_set::<f64>(30, 4, 3, false, &mut root(13));
    assert!(knn_loocv(&data, &labels, 0).is_err());
    assert!(knn_loocv(&data, &labels, 29).is_err());
}

#[test]
fn knn_matches_oracle_label_for_label() {
    let mut rng = root(14);
    for trial in 0..20 {
        let n = 80 + (trial % 5) * 30;
        let (data, labels) =
            random_feature_set::<f64>(n, 10, 4, trial % 3 == 0, &mut rng);
        for k in [1usize, 5, 20] {
            let got = knn_loocv(&data, &labels, k).unwrap();
            let want = knn_loocv_oracle(&data, &labels, k);
            assert_eq!(got, want, "trial {trial} k {k}");
        }
    }
}

#[test]
fn knn_duplicates_exclude_self_match() {
    let (data, labels) = random_feature_set::<f64>(60, 6, 3, true, &mut root(15));
    for k in [1usize, 5] {
        assert_eq!(
            knn_loocv(&data, &labels, k).unwrap(),
            knn_loocv_oracle(&data, &labels, k)
        );
    }
}

/// Positive per-dimension rescaling before standardization never changes
/// the predictions.
#[test]
fn knn_invariant_to_positive_rescaling() {
    let mut rng = root(16);
    let (data, labels) = random_feature_set::<f64>(90, 8, 3, false, &mut rng);
    let mut scaled = data.clone();
    for j in 0..8 {
        let s = rng.gen_range(0.3..7.0);
        for i in 0..90 {
            scaled[(i, j)] *= s;
        }
    }
    for k in [1usize, 5, 9] {
        assert_eq!(
            knn_loocv(&data, &labels, k).unwrap(),
            knn_loocv(&scaled, &labels, k).unwrap()
        );
    }
}

#[test]
fn retrieve_exact_match_ranks_first() {
    let (data, _) = random_feature_set::<f64>(50, 6, 2, false, &mut root(17));
    let q = data.row(7).to_owned();
    let ranked = retrieve(&q, &data, 5).unwrap();
    assert_eq!(ranked[0], 7);
}

#[test]
fn retrieve_all_ties_fall_back_to_index_order() {
    // query orthogonal to every row: all similarities zero
    let mut gallery = ndarray::Array2::<f64>::zeros((6, 4));
    for i in 0..6 {
        gallery[(i, 0)] = 1.0 + i as f64;
    }
    let mut q = ndarray::Array1::<f64>::zeros(4);
    q[1] = 1.0;
    let ranked = retrieve(&q, &gallery, 6).unwrap();
    assert_eq!(ranked, vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn retrieve_matches_brute_force_sort() {
    let mut rng = root(18);
    let (gallery, _) = random_feature_set::<f64>(500, 12, 4, false, &mut rng);
    let (queries, _) = random_feature_set::<f64>(10, 12, 4, false, &mut root(19));
    for qi in 0..10 {
        let q = queries.row(qi).to_owned();
        let ranked = retrieve(&q, &gallery, 500).unwrap();
        // brute-force oracle: full similarity sort with the same tie rule
        let qn: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut sims: Vec<(usize, f64)> = (0..500)
            .map(|j| {
                let row = gallery.row(j);
                let rn: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                (j, row.dot(&q) / (qn * rn))
            })
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = sims.into_iter().map(|(j, _)| j).collect();
        assert_eq!(ranked, want);
        // total order sanity: rank-1 similarity >= rank-2 similarity
        assert!(ranked.len() == 500);
    }
    assert!(retrieve(&queries.row(0).to_owned(), &gallery, 501).is_err());
}

#[test]
fn feature_roundtrip_through_container() {
    let dir = std::env::temp_dir().join("pretext_eval_feat.bin");
    let (data, labels) = random_feature_set::<f32>(20, 6, 2, false, &mut root(20));
    let features = FeatureMatrix {
        data,
        stage: "conv2".into(),
        pool_grid: 3,
    };
    save_features(&dir, &features, &labels, "cfg", "ckpt").unwrap();
    let (back, back_labels) = load_features::<f32, _>(&dir).unwrap();
    assert_eq!(back.data, features.data);
    assert_eq!(back.stage, "conv2");
    assert_eq!(back.pool_grid, 3);
    assert_eq!(back_labels, labels);
    let _ = std::fs::remove_file(&dir);
}
