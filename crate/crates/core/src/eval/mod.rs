//! Transfer evaluation on frozen features: per-stage linear probes,
//! leave-one-out kNN classification and nearest-neighbor retrieval.

use crate::classifier::ClassifierNet;
use crate::error::{Error, Result};
use crate::nn::optim::SgdMomentum;
use crate::nn::ParamMut;
use crate::rng::{stream, Rng};
use crate::scalar::Scalar;
use crate::tensor::images_to_batch;
use crate::transforms::ImageTensor;
use ndarray::{s, Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;

/// Default pooled-feature budget per stage.
pub const DEFAULT_TARGET_UNITS: usize = 9216;

/// Pooled frozen features: one row per image.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<S: Scalar> {
    pub data: Array2<S>,
    pub stage: String,
    /// Side of the pooled spatial grid.
    pub pool_grid: usize,
}

/// Largest grid side g with channels * g^2 <= target_units (at least 1).
pub fn pooled_grid_side(channels: usize, target_units: usize) -> usize {
    let mut g = 1usize;
    while channels * (g + 1) * (g + 1) <= target_units {
        g += 1;
    }
    g
}

/// Adaptive average pooling to a g x g grid (torch-style window split).
fn adaptive_avg_pool<S: Scalar>(x: &Array4<S>, g: usize) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    if (h, w) == (g, g) {
        return x.clone();
    }
    let mut out = Array4::<S>::zeros((n, c, g, g));
    for gi in 0..g {
        let y0 = gi * h / g;
        let y1 = ((gi + 1) * h).div_ceil(g);
        for gj in 0..g {
            let x0 = gj * w / g;
            let x1 = ((gj + 1) * w).div_ceil(g);
            let m = S::fl(((y1 - y0) * (x1 - x0)) as f64);
            for ni in 0..n {
                for ci in 0..c {
                    let sum = x.slice(s![ni, ci, y0..y1, x0..x1]).sum();
                    out[(ni, ci, gi, gj)] = sum / m;
                }
            }
        }
    }
    out
}

/// Forward images to `stage` (batch norm in inference mode), spatially
/// average-pool to the largest grid within `target_units`, flatten.
pub fn extract_features<S: Scalar>(
    c: &ClassifierNet<S>,
    images: &[ImageTensor<S>],
    stage: &str,
    target_units: usize,
) -> Result<FeatureMatrix<S>> {
    if images.is_empty() {
        return Err(Error::InvalidParam("no images to featurize".into()));
    }
    // process in small chunks to bound memory
    let mut rows: Vec<Array2<S>> = Vec::new();
    let mut pool_grid = 0usize;
    for chunk in images.chunks(64) {
        let batch = images_to_batch(chunk);
        let maps = c.infer_stage(batch, stage)?;
        let (n, ch, h, w) = maps.dim();
        let g = pooled_grid_side(ch, target_units).min(h.min(w));
        pool_grid = g;
        let pooled = adaptive_avg_pool(&maps, g);
        rows.push(
            pooled
                .into_shape_with_order((n, ch * g * g))
                .expect("flatten features"),
        );
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views).expect("stack features");
    for v in data.iter() {
        if !v.is_finite() {
            return Err(Error::InvalidParam("non-finite feature value".into()));
        }
    }
    Ok(FeatureMatrix {
        data,
        stage: stage.to_string(),
        pool_grid,
    })
}

/// Concatenated features of the four corner crops plus the center crop,
/// each at `crop` pixels (the training resolution).
pub fn five_crop_features<S: Scalar>(
    c: &ClassifierNet<S>,
    image: &ImageTensor<S>,
    stage: &str,
    crop: usize,
    target_units: usize,
) -> Result<Array1<S>> {
    let (h, w, _) = image.dim();
    if crop > h || crop > w {
        return Err(Error::InvalidParam(format!(
            "crop {crop} exceeds image {h}x{w}"
        )));
    }
    let anchors = [
        (0, 0),
        (0, w - crop),
        (h - crop, 0),
        (h - crop, w - crop),
        ((h - crop) / 2, (w - crop) / 2),
    ];
    let crops: Vec<ImageTensor<S>> = anchors
        .iter()
        .map(|&(y0, x0)| image.slice(s![y0..y0 + crop, x0..x0 + crop, ..]).to_owned())
        .collect();
    let feats = extract_features(c, &crops, stage, target_units)?;
    let d = feats.data.ncols();
    let mut out = Array1::<S>::zeros(5 * d);
    for i in 0..5 {
        out.slice_mut(s![i * d..(i + 1) * d])
            .assign(&feats.data.row(i));
    }
    Ok(out)
}

/// Per-dimension standardization statistics, computed on the
/// gallery/training split only.
#[derive(Debug, Clone)]
pub struct Standardizer<S: Scalar> {
    pub mean: Array1<S>,
    pub std: Array1<S>,
}

impl<S: Scalar> Standardizer<S> {
    pub fn fit(data: &Array2<S>) -> Self {
        let n = S::fl(data.nrows() as f64);
        let mean = data.sum_axis(Axis(0)) / n;
        let mut var = Array1::<S>::zeros(data.ncols());
        for row in data.rows() {
            for (j, &v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        var.mapv_inplace(|v| (v / n).sqrt());
        Self { mean, std: var }
    }

    /// Standardize rows; a constant dimension maps to exactly zero, which
    /// keeps the result invariant to positive per-dimension rescaling.
    pub fn apply(&self, data: &Array2<S>) -> Array2<S> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                if self.std[j] > S::zero() {
                    *v = (*v - self.mean[j]) / self.std[j];
                } else {
                    *v = S::zero();
                }
            }
        }
        out
    }
}

fn l2_normalize_rows<S: Scalar>(data: &Array2<S>) -> Array2<S> {
    let mut out = data.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
        if norm > S::zero() {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Majority vote with deterministic tie-breaking (smallest label wins).
fn majority_vote(labels: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for l in 1..num_classes {
        if counts[l] > counts[best] {
            best = l;
        }
    }
    best
}

/// Leave-one-out kNN accuracy over standardized features with cosine
/// similarity: each point is classified by majority vote over its k
/// nearest other points, the self-match excluded via the (k+1)-neighbor
/// trick. Ties in similarity break by ascending index; vote ties break by
/// smallest label.
pub fn knn_loocv<S: Scalar>(features: &Array2<S>, labels: &[usize], k: usize) -> Result<f64> {
    let n = features.nrows();
    if k == 0 {
        return Err(Error::InvalidParam("k must be positive".into()));
    }
    if n <= k + 1 {
        return Err(Error::InvalidParam(format!(
            "need more than k + 1 = {} points, got {n}",
            k + 1
        )));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} labels", labels.len())));
    }
    let std = Standardizer::fit(features);
    let unit = l2_normalize_rows(&std.apply(features));
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    // cosine similarity via the gram matrix of unit rows
    let sim = unit.dot(&unit.t());
    let mut correct = 0usize;
    for i in 0..n {
        // top-(k+1) by similarity desc, index asc; then drop the
        // self-match (or the last candidate when self is not among them)
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            sim[(i, b)]
                .partial_cmp(&sim[(i, a)])
                .expect("finite similarity")
                .then(a.cmp(&b))
        });
        let top: Vec<usize> = order.into_iter().take(k + 1).collect();
        let neighbors: Vec<usize> = if let Some(pos) = top.iter().position(|&j| j == i) {
            top.iter()
                .enumerate()
                .filter(|&(idx, _)| idx != pos)
                .map(|(_, &j)| j)
                .collect()
        } else {
            top[..k].to_vec()
        };
        let votes: Vec<usize> = neighbors.iter().map(|&j| labels[j]).collect();
        if majority_vote(&votes, num_classes) == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Indices of the top-k gallery rows by descending cosine similarity to
/// the query; ties break by ascending index. Inputs are standardized
/// feature rows.
pub fn retrieve<S: Scalar>(
    query: &Array1<S>,
    gallery: &Array2<S>,
    topk: usize,
) -> Result<Vec<usize>> {
    let n = gallery.nrows();
    if topk > n {
        return Err(Error::InvalidParam(format!(
            "topk {topk} exceeds gallery size {n}"
        )));
    }
    let qn = query.iter().map(|&v| v * v).sum::<S>().sqrt();
    let mut sims: Vec<(usize, S)> = (0..n)
        .map(|j| {
            let row = gallery.row(j);
            let rn = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            let dot = row.dot(query);
            let denom = qn * rn;
            let sim = if denom > S::zero() { dot / denom } else { S::zero() };
            (j, sim)
        })
        .collect();
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarity").then(a.0.cmp(&b.0)));
    Ok(sims.into_iter().take(topk).map(|(j, _)| j).collect())
}

/// The four-phase probe learning-rate schedule.
pub fn probe_lr(epoch: usize) -> f64 {
    match epoch {
        0..=4 => 0.1,
        5..=24 => 0.01,
        25..=44 => 0.002,
        _ => 0.0004,
    }
}

/// Probe training hyperparameters.
#[derive(Debug, Clone)]
pub struct ProbeSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            epochs: 65,
            batch_size: 192,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Linear-probe outcome for one stage.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub stage: String,
    pub accuracy: f64,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

fn softmax_xent_grad<S: Scalar>(
    logits: &Array2<S>,
    labels: &[usize],
) -> (f64, Array2<S>) {
    let n = logits.nrows();
    let mut grad = logits.clone();
    let mut loss = 0.0f64;
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let mx = row.iter().copied().fold(S::neg_infinity(), |a, b| a.max(b));
        let mut denom = S::zero();
        for v in row.iter() {
            denom += (*v - mx).exp();
        }
        loss -= (row[labels[i]] - mx - denom.ln()).to_f64_();
        for (j, v) in row.iter_mut().enumerate() {
            let p = (*v - mx).exp() / denom;
            let t = if j == labels[i] { S::one() } else { S::zero() };
            *v = (p - t) / S::fl(n as f64);
        }
    }
    (loss / n as f64, grad)
}

/// Train a single linear layer on frozen features with SGD + momentum and
/// the four-phase schedule; returns held-out accuracy.
pub fn train_linear_probe<S: Scalar>(
    train: &FeatureMatrix<S>,
    train_labels: &[usize],
    eval: &FeatureMatrix<S>,
    eval_labels: &[usize],
    schedule: &ProbeSchedule,
) -> Result<ProbeResult> {
    let classes = train_labels.iter().copied().max().unwrap_or(0) + 1;
    if classes < 2 {
        return Err(Error::InvalidParam(
            "probe needs at least two classes in the training labels".into(),
        ));
    }
    let d = train.data.ncols();
    // standardization statistics from the training split only
    let std = Standardizer::fit(&train.data);
    let xtr = std.apply(&train.data);
    let xev = std.apply(&eval.data);

    let mut weight = Array2::<S>::zeros((classes, d));
    let mut bias = Array1::<S>::zeros(classes);
    let mut wgrad = Array2::<S>::zeros((classes, d));
    let mut bgrad = Array1::<S>::zeros(classes);
    let mut opt = SgdMomentum::<S>::new(schedule.momentum);
    let n = xtr.nrows();
    let mut curve = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = probe_lr(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(schedule.seed, &[0x9a0b, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let mut xb = Array2::<S>::zeros((chunk.len(), d));
            let mut yb = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&xtr.row(i));
                yb.push(train_labels[i]);
            }
            let logits = linear_forward(&xb, &weight, &bias);
            let (loss, glogits) = softmax_xent_grad(&logits, &yb);
            epoch_loss += loss;
            batches += 1;
            wgrad.assign(&glogits.t().dot(&xb));
            for j in 0..classes {
                bgrad[j] = glogits.column(j).sum();
            }
            let mut params = vec![
                ParamMut {
                    name: "weight".into(),
                    value: weight.as_slice_mut().expect("layout"),
                    grad: wgrad.as_slice_mut().expect("layout"),
                },
                ParamMut {
                    name: "bias".into(),
                    value: bias.as_slice_mut().expect("layout"),
                    grad: bgrad.as_slice_mut().expect("layout"),
                },
            ];
            opt.step(&mut params, lr);
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    let logits = linear_forward(&xev, &weight, &bias);
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(eval_labels.iter()) {
        let mut best = S::neg_infinity();
        let mut pred = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                pred = j;
            }
        }
        if pred == label {
            correct += 1;
        }
    }
    Ok(ProbeResult {
        stage: train.stage.clone(),
        accuracy: correct as f64 / eval_labels.len() as f64,
        curve,
    })
}

fn linear_forward<S: Scalar>(x: &Array2<S>, w: &Array2<S>, b: &Array1<S>) -> Array2<S> {
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[j];
        }
    }
    y
}

/// Persist a feature matrix with its provenance.
pub fn save_features<S: Scalar, P: AsRef<std::path::Path>>(
    path: P,
    features: &FeatureMatrix<S>,
    labels: &[usize],
    config_hash: &str,
    checkpoint_hash: &str,
) -> Result<()> {
    let meta = serde_json::json!({
        "stage": features.stage,
        "pool_grid": features.pool_grid,
        "checkpoint_hash": checkpoint_hash,
    });
    let (n, d) = features.data.dim();
    crate::io::write_container(
        path,
        "features",
        config_hash,
        0,
        meta,
        &[
            (
                "features".to_string(),
                vec![n, d],
                features.data.iter().copied().collect(),
            ),
            (
                "labels".to_string(),
                vec![n],
                labels.iter().map(|&l| S::fl(l as f64)).collect(),
            ),
        ],
    )
}

pub fn load_features<S: Scalar, P: AsRef<std::path::Path>>(
    path: P,
) -> Result<(FeatureMatrix<S>, Vec<usize>)> {
    let container = crate::io::read_container(path)?;
    if container.kind != "features" {
        return Err(Error::Format(format!(
            "expected a features container, found '{}'",
            container.kind
        )));
    }
    let (shape, data) = container.array("features")?;
    let [n, d] = shape else {
        return Err(Error::Format("features array must be 2-d".into()));
    };
    let matrix = Array2::from_shape_vec((*n, *d), data.iter().map(|&v| S::fl(v)).collect())
        .expect("feature shape");
    let (_, labels) = container.array("labels")?;
    Ok((
        FeatureMatrix {
            data: matrix,
            stage: container
                .meta
                .get("stage")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_string(),
            pool_grid: container
                .meta
                .get("pool_grid")
                .and_then(|v| v.as_u64())
                .unwrap_or(0) as usize,
        },
        labels.iter().map(|&l| l as usize).collect(),
    ))
}

/// Naive double-loop LOOCV oracle used by the tests and the acceptance
/// suite; shares only the vote rule with the implementation.
pub fn knn_loocv_oracle<S: Scalar>(features: &Array2<S>, labels: &[usize], k: usize) -> f64 {
    let std = Standardizer::fit(features);
    let unit = l2_normalize_rows(&std.apply(features));
    let n = unit.nrows();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut correct = 0usize;
    for i in 0..n {
        let mut sims: Vec<(usize, S)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, unit.row(i).dot(&unit.row(j))))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        let votes: Vec<usize> = sims[..k].iter().map(|&(j, _)| labels[j]).collect();
        if majority_vote(&votes, num_classes) == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Synthetic feature clouds for oracle comparisons.
pub fn random_feature_set<S: Scalar>(
    n: usize,
    d: usize,
    classes: usize,
    duplicates: bool,
    rng: &mut Rng,
) -> (Array2<S>, Vec<usize>) {
    use rand::Rng as _;
    let mut data = Array2::<S>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for j in 0..d {
            let center = (class as f64 * 1.7).sin() * 2.0;
            data[(i, j)] = S::fl(center + rng.gen_range(-1.5..1.5));
        }
    }
    if duplicates {
        // exact self-ties: copy some rows verbatim
        for i in (0..n / 4).step_by(2) {
            let src = data.row(i).to_owned();
            data.row_mut(n - 1 - i).assign(&src);
            labels[n - 1 - i] = labels[i];
        }
    }
    (data, labels)
}

#[cfg(test)]
mod tests;
