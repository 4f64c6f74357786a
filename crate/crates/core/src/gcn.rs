//! A two-layer graph convolutional network trained full-batch, used as the
//! yardstick for purification quality, plus neighbourhood-recovery metrics.
//!
//! `Z = softmax(Â · relu(Â X W1) W2)` with `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{GarnetError, Result};
use crate::graph::SparseGraph;
use crate::seed::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Node features, labels in `0..num_classes` and disjoint split masks.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    train: Vec<bool>,
    val: Vec<bool>,
    test: Vec<bool>,
}

/// Split node lists as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GarnetError::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| GarnetError::InvalidDataset(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("split serializes");
        std::fs::write(path, text).map_err(|e| GarnetError::io(path, e))
    }

    /// Per-class random split; every class gets at least one training node.
    pub fn stratified(labels: &[usize], train_frac: f64, val_frac: f64, seed: u64) -> Self {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        let mut rng = rng_from_seed(seed);
        let mut split = SplitIndices {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for nodes in by_class.values_mut() {
            nodes.shuffle(&mut rng);
            let len = nodes.len();
            let n_train = ((train_frac * len as f64).round() as usize).clamp(1, len);
            let n_val = ((val_frac * len as f64).round() as usize).min(len - n_train);
            split.train.extend_from_slice(&nodes[..n_train]);
            split.val.extend_from_slice(&nodes[n_train..n_train + n_val]);
            split.test.extend_from_slice(&nodes[n_train + n_val..]);
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        split
    }
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, split: &SplitIndices) -> Result<Self> {
        let n = labels.len();
        if features.nrows() != n {
            return Err(GarnetError::DimensionMismatch {
                expected: n,
                got: features.nrows(),
            });
        }
        if features.ncols() == 0 {
            return Err(GarnetError::InvalidDataset("features need at least one column".into()));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(GarnetError::InvalidDataset("non-finite feature value".into()));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut masks = [vec![false; n], vec![false; n], vec![false; n]];
        for (mask, (name, ids)) in masks.iter_mut().zip([
            ("train", &split.train),
            ("val", &split.val),
            ("test", &split.test),
        ]) {
            for &id in ids {
                if id >= n {
                    return Err(GarnetError::IdOutOfRange { id, n });
                }
                if mask[id] {
                    return Err(GarnetError::InvalidDataset(format!(
                        "node {id} listed twice in {name}"
                    )));
                }
                mask[id] = true;
            }
        }
        let [train, val, test] = masks;
        if (0..n).any(|i| [train[i], val[i], test[i]].iter().filter(|&&b| b).count() > 1) {
            return Err(GarnetError::InvalidDataset("split masks overlap".into()));
        }
        if !train.iter().any(|&b| b) {
            return Err(GarnetError::MaskEmpty("train"));
        }
        let mut seen = vec![false; num_classes];
        for i in (0..n).filter(|&i| train[i]) {
            seen[labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(GarnetError::InvalidDataset(format!(
                "class {c} has no training node"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            train,
            val,
            test,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn nodes(&self, split: Split) -> Vec<usize> {
        let mask = self.mask(split);
        (0..self.n()).filter(|&i| mask[i]).collect()
    }
}

/// Reads one feature row per line, values separated by commas or whitespace.
pub fn load_features(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GarnetError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GarnetError::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| GarnetError::MalformedLine {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GarnetError::MalformedLine {
                    line: idx + 1,
                    reason: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn write_features(x: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for i in 0..x.nrows() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| GarnetError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnHyper {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GcnHyper {
    fn default() -> Self {
        GcnHyper {
            hidden: 64,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            epochs: 200,
            patience: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub hyper: GcnHyper,
}

impl GcnParams {
    /// Glorot-uniform initialization.
    pub fn init(d: usize, c: usize, hyper: &GcnHyper) -> Self {
        let mut rng = rng_from_seed(derive_seed(hyper.seed, "gcn-init", 0));
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        GcnParams {
            w1: glorot(d, hyper.hidden),
            w2: glorot(hyper.hidden, c),
            hyper: hyper.clone(),
        }
    }
}

/// Sparse `Â` with self-loops, row by row.
pub struct Propagation {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Propagation {
    pub fn new(g: &SparseGraph) -> Self {
        let inv_sqrt: Vec<f64> = (0..g.n())
            .map(|i| 1.0 / (g.degree(i) + 1.0).sqrt())
            .collect();
        let rows = (0..g.n())
            .map(|i| {
                let mut row = vec![(i, inv_sqrt[i] * inv_sqrt[i])];
                row.extend(g.neighbors(i).map(|(j, w)| (j, inv_sqrt[i] * w * inv_sqrt[j])));
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        Propagation { rows }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `Â M`; `Â` is symmetric, so this also serves for the backward pass.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for (i, row) in self.rows.iter().enumerate() {
                out[(i, c)] = row.iter().map(|&(j, a)| a * col[j]).sum();
            }
        }
        out
    }
}

struct Forward {
    x_in: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    drop2: Option<DMatrix<f64>>,
    probs: DMatrix<f64>,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> DMatrix<f64> {
    let keep = 1.0 - rate;
    DMatrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

fn forward(
    p: &GcnParams,
    prop: &Propagation,
    x: &DMatrix<f64>,
    dropout: Option<(f64, &mut Rng)>,
) -> Forward {
    let (x_in, rng) = match dropout {
        Some((rate, rng)) if rate > 0.0 => {
            let mask = dropout_mask(x.nrows(), x.ncols(), rate, rng);
            (x.component_mul(&mask), Some((rate, rng)))
        }
        _ => (x.clone(), None),
    };
    let z1 = prop.apply(&(&x_in * &p.w1));
    let h1_raw = z1.map(|v| v.max(0.0));
    let (h1, drop2) = match rng {
        Some((rate, rng)) => {
            let mask = dropout_mask(h1_raw.nrows(), h1_raw.ncols(), rate, rng);
            (h1_raw.component_mul(&mask), Some(mask))
        }
        None => (h1_raw, None),
    };
    let z2 = prop.apply(&(&h1 * &p.w2));
    let mut probs = z2;
    for i in 0..probs.nrows() {
        let mut row = probs.row_mut(i);
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row.apply(|v| *v /= sum);
    }
    Forward {
        x_in,
        z1,
        h1,
        drop2,
        probs,
    }
}

fn loss_and_grads_inner(
    p: &GcnParams,
    prop: &Propagation,
    data: &LabeledDataset,
    fwd: &Forward,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let train = data.nodes(Split::Train);
    let m = train.len() as f64;
    let wd = p.hyper.weight_decay;
    let mut loss = 0.0;
    let mut dz2 = DMatrix::zeros(fwd.probs.nrows(), fwd.probs.ncols());
    for &i in &train {
        let y = data.labels[i];
        loss -= fwd.probs[(i, y)].max(f64::MIN_POSITIVE).ln() / m;
        for c in 0..fwd.probs.ncols() {
            let target = if c == y { 1.0 } else { 0.0 };
            dz2[(i, c)] = (fwd.probs[(i, c)] - target) / m;
        }
    }
    loss += 0.5 * wd * (p.w1.norm_squared() + p.w2.norm_squared());

    let d_hw = prop.apply(&dz2);
    let g2 = fwd.h1.transpose() * &d_hw + &p.w2 * wd;
    let mut dh1 = d_hw * p.w2.transpose();
    if let Some(mask) = &fwd.drop2 {
        dh1.component_mul_assign(mask);
    }
    let dz1 = dh1.zip_map(&fwd.z1, |g, z| if z > 0.0 { g } else { 0.0 });
    let d_xw = prop.apply(&dz1);
    let g1 = fwd.x_in.transpose() * d_xw + &p.w1 * wd;
    (loss, g1, g2)
}

/// Training loss (mean cross-entropy on the train mask plus
/// `weight_decay / 2 * ||W||^2`) and its gradients, dropout off.
pub fn loss_and_gradients(
    p: &GcnParams,
    g: &SparseGraph,
    data: &LabeledDataset,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let prop = Propagation::new(g);
    let fwd = forward(p, &prop, &data.features, None);
    loss_and_grads_inner(p, &prop, data, &fwd)
}

struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: (usize, usize)) -> Self {
        Adam {
            m: DMatrix::zeros(shape.0, shape.1),
            v: DMatrix::zeros(shape.0, shape.1),
        }
    }

    fn step(&mut self, w: &mut DMatrix<f64>, g: &DMatrix<f64>, lr: f64, t: i32) {
        self.m = &self.m * Self::BETA1 + g * (1.0 - Self::BETA1);
        self.v = &self.v * Self::BETA2 + g.map(|x| x * x) * (1.0 - Self::BETA2);
        let c1 = 1.0 - Self::BETA1.powi(t);
        let c2 = 1.0 - Self::BETA2.powi(t);
        for ((wi, mi), vi) in w.iter_mut().zip(self.m.iter()).zip(self.v.iter()) {
            *wi -= lr * (mi / c1) / ((vi / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GcnParams,
    /// Training loss per epoch run.
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Full-batch training with Adam and early stopping on validation accuracy;
/// returns the parameters from the best validation epoch.
pub fn train_gcn(g: &SparseGraph, data: &LabeledDataset, hyper: &GcnHyper) -> Result<GcnParams> {
    train_gcn_detailed(g, data, hyper).map(|o| o.params)
}

pub fn train_gcn_detailed(
    g: &SparseGraph,
    data: &LabeledDataset,
    hyper: &GcnHyper,
) -> Result<TrainOutcome> {
    if g.n() != data.n() {
        return Err(GarnetError::SizeMismatch {
            left: g.n(),
            right: data.n(),
        });
    }
    if hyper.hidden == 0 || !(0.0..1.0).contains(&hyper.dropout) || hyper.lr.is_nan() || hyper.lr <= 0.0 {
        return Err(GarnetError::InvalidConfig(format!("invalid GCN hyperparameters {hyper:?}")));
    }
    let prop = Propagation::new(g);
    let mut params = GcnParams::init(data.features.ncols(), data.num_classes, hyper);
    let mut rng = rng_from_seed(derive_seed(hyper.seed, "dropout", 0));
    let mut opt1 = Adam::new(params.w1.shape());
    let mut opt2 = Adam::new(params.w2.shape());
    let has_val = data.val.iter().any(|&b| b);
    let mut best = (f64::NEG_INFINITY, params.clone(), 0usize);
    let mut losses = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let fwd = forward(&params, &prop, &data.features, Some((hyper.dropout, &mut rng)));
        let (loss, g1, g2) = loss_and_grads_inner(&params, &prop, data, &fwd);
        if !loss.is_finite() {
            return Err(GarnetError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        let t = epoch as i32 + 1;
        opt1.step(&mut params.w1, &g1, hyper.lr, t);
        opt2.step(&mut params.w2, &g2, hyper.lr, t);

        if has_val {
            let acc = accuracy_with(&params, &prop, data, Split::Val);
            if acc > best.0 {
                best = (acc, params.clone(), epoch);
            } else if epoch - best.2 >= hyper.patience {
                break;
            }
        } else {
            best = (f64::NEG_INFINITY, params.clone(), epoch);
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        losses,
        best_epoch: best.2,
    })
}

fn accuracy_with(p: &GcnParams, prop: &Propagation, data: &LabeledDataset, split: Split) -> f64 {
    let fwd = forward(p, prop, &data.features, None);
    let nodes = data.nodes(split);
    let correct = nodes
        .iter()
        .filter(|&&i| argmax(fwd.probs.row(i).iter().copied()) == data.labels[i])
        .count();
    correct as f64 / nodes.len() as f64
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Share of `split` nodes whose arg-max prediction matches the label.
pub fn evaluate(p: &GcnParams, g: &SparseGraph, data: &LabeledDataset, split: Split) -> Result<f64> {
    if data.mask(split).iter().all(|&b| !b) {
        return Err(GarnetError::MaskEmpty(match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }));
    }
    if g.n() != data.n() {
        return Err(GarnetError::SizeMismatch {
            left: g.n(),
            right: data.n(),
        });
    }
    Ok(accuracy_with(p, &Propagation::new(g), data, split))
}

/// Mean recall and precision of the `hops`-hop neighbourhoods of `probes`
/// in `g_purified` against those in `g_clean`.
///
/// Recall is 1 when the clean neighbourhood is empty; precision is 0 when
/// the purified neighbourhood is empty but the clean one is not, and 1 when
/// both are empty.
pub fn recovery_metrics(
    g_clean: &SparseGraph,
    g_purified: &SparseGraph,
    probes: &[usize],
    hops: usize,
) -> Result<(f64, f64)> {
    if g_clean.n() != g_purified.n() {
        return Err(GarnetError::SizeMismatch {
            left: g_clean.n(),
            right: g_purified.n(),
        });
    }
    if probes.is_empty() {
        return Err(GarnetError::InvalidConfig("no probe nodes given".into()));
    }
    let n = g_clean.n();
    let (mut recall, mut precision) = (0.0, 0.0);
    for &p in probes {
        if p >= n {
            return Err(GarnetError::ProbeOutOfRange { id: p, n });
        }
        let clean = g_clean.k_hop_neighborhood(p, hops);
        let purified = g_purified.k_hop_neighborhood(p, hops);
        let common = clean.iter().filter(|x| purified.binary_search(x).is_ok()).count() as f64;
        recall += if clean.is_empty() {
            1.0
        } else {
            common / clean.len() as f64
        };
        precision += match (purified.is_empty(), clean.is_empty()) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            _ => common / purified.len() as f64,
        };
    }
    let k = probes.len() as f64;
    Ok((recall / k, precision / k))
}
