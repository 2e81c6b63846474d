//! Learned node pruning for the branch-and-bound search.
//!
//! Baseline searches are run with tracing on; every visited node becomes one
//! labeled example (pruned by the baseline rules or expanded). A small MLP is
//! trained on those examples in rounds, later rounds fine-tuning the previous
//! weights, and then prunes nodes whose predicted probability reaches the
//! threshold. Baseline prunes are always kept.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bnb::{solve, BaselinePolicy, PruningPolicy, SolveOptions, SolveReport};
use crate::error::{invalid, Error, Result};
use crate::objective::DmProblem;
use crate::seed::child_rng;

pub const N_FEATURES: usize = 10;
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "depth",
    "plunge_depth",
    "local_lower_bound",
    "branching_value",
    "global_upper_bound",
    "solutions_found",
    "csi_ab_re",
    "csi_ab_im",
    "csi_ae_re",
    "csi_ae_im",
];
const MODEL_MAGIC: &str = "dmlab-pruning-net v1";
/// Standardized features are clamped to `[-CLAMP, CLAMP]`; an absent upper bound maps to `+CLAMP`.
const CLAMP: f64 = 3.0;

/// Node state seen by the pruning policy, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub depth: usize,
    pub plunge_depth: usize,
    pub local_lower_bound: f64,
    /// Relaxed value of the variable the node would branch on.
    pub branching_value: f64,
    /// `+inf` while there is no incumbent.
    pub global_upper_bound: f64,
    pub solutions_found: usize,
    /// Alice-Bob gain of the cell addressed by the branching variable.
    pub csi_ab: Complex64,
    /// Alice-Eve gain of that cell (first realization under partial CSI).
    pub csi_ae: Complex64,
}

impl NodeFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.depth as f64,
            self.plunge_depth as f64,
            self.local_lower_bound,
            self.branching_value,
            self.global_upper_bound,
            self.solutions_found as f64,
            self.csi_ab.re,
            self.csi_ab.im,
            self.csi_ae.re,
            self.csi_ae.im,
        ]
    }

    fn from_array(v: &[f64]) -> Self {
        Self {
            depth: v[0] as usize,
            plunge_depth: v[1] as usize,
            local_lower_bound: v[2],
            branching_value: v[3],
            global_upper_bound: v[4],
            solutions_found: v[5] as usize,
            csi_ab: Complex64::new(v[6], v[7]),
            csi_ae: Complex64::new(v[8], v[9]),
        }
    }
}

/// One visited node and whether the baseline rules pruned it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub features: NodeFeatures,
    pub pruned: bool,
}

/// Comma-separated trace with a header row; `label` is 1 for prune, 0 for expand.
pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = FEATURE_NAMES.join(",");
    out.push_str(",label\n");
    for r in records {
        let cols: Vec<String> = r.features.to_array().iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{},{}", cols.join(","), u8::from(r.pruned));
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty trace".into()))?;
    let expected = format!("{},label", FEATURE_NAMES.join(","));
    if header.trim() != expected {
        return Err(Error::Parse(format!("unexpected trace header {header:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != N_FEATURES + 1 {
                return Err(Error::Parse(format!("trace row has {} columns", vals.len())));
            }
            Ok(TraceRecord { features: NodeFeatures::from_array(&vals), pruned: vals[N_FEATURES] != 0.0 })
        })
        .collect()
}

/// Labeled node examples grouped into training rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCorpus {
    pub rounds: Vec<Vec<TraceRecord>>,
}

impl TrainingCorpus {
    pub fn len(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solves every instance with the baseline policy and tracing on. Instances are
/// grouped `round_size` at a time into rounds. Also returns the reports.
pub fn collect_training_data(
    instances: &[DmProblem],
    opts: &SolveOptions,
    round_size: usize,
) -> Result<(TrainingCorpus, Vec<SolveReport>)> {
    if instances.is_empty() || round_size == 0 {
        return Err(invalid("need at least one instance and a positive round size"));
    }
    let opts = SolveOptions { record_trace: true, ..opts.clone() };
    let mut corpus = TrainingCorpus::default();
    let mut reports = Vec::with_capacity(instances.len());
    for (i, prob) in instances.iter().enumerate() {
        let mut rep = solve(prob, &BaselinePolicy, &opts)?;
        if rep.trace.is_empty() {
            return Err(Error::DegenerateCorpus(format!("instance {i} produced an empty trace")));
        }
        if i % round_size == 0 {
            corpus.rounds.push(Vec::new());
        }
        corpus.rounds.last_mut().expect("round pushed").append(&mut rep.trace);
        reports.push(rep);
    }
    Ok((corpus, reports))
}

/// Per-feature standardization fitted on finite training values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { mean: vec![0.0; N_FEATURES], std: vec![1.0; N_FEATURES] }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64; N_FEATURES]>) -> Self {
        let mut sum = [0.0; N_FEATURES];
        let mut sq = [0.0; N_FEATURES];
        let mut cnt = [0usize; N_FEATURES];
        for r in rows {
            for j in 0..N_FEATURES {
                if r[j].is_finite() {
                    sum[j] += r[j];
                    sq[j] += r[j] * r[j];
                    cnt[j] += 1;
                }
            }
        }
        let mut mean = vec![0.0; N_FEATURES];
        let mut std = vec![1.0; N_FEATURES];
        for j in 0..N_FEATURES {
            if cnt[j] > 0 {
                let m = sum[j] / cnt[j] as f64;
                let var = (sq[j] / cnt[j] as f64 - m * m).max(0.0);
                mean[j] = m;
                std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            out[j] = if x[j].is_finite() {
                ((x[j] - self.mean[j]) / self.std[j]).clamp(-CLAMP, CLAMP)
            } else {
                CLAMP
            };
        }
        out
    }
}

/// Fully connected net `10 -> 200 -> 200 -> 200 -> 1`, ReLU hidden layers,
/// logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningNet {
    /// `(weights out x in, bias)` per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub standardizer: Standardizer,
    pub threshold: f64,
}

impl PruningNet {
    /// He-initialized weights from `seed` (label `"net-init"`), zero biases.
    pub fn new(hidden: &[usize], threshold: f64, seed: u64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid("threshold must lie in (0, 1)"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(invalid("hidden layers must be non-empty"));
        }
        let mut rng = child_rng(seed, "net-init");
        let mut dims = vec![N_FEATURES];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive variance");
                let wts = Array2::from_shape_fn((w[1], w[0]), |_| normal.sample(&mut rng));
                (wts, Array1::zeros(w[1]))
            })
            .collect();
        Ok(Self { layers, standardizer: Standardizer::identity(), threshold })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].0.ncols()];
        d.extend(self.layers.iter().map(|(w, _)| w.nrows()));
        d
    }

    fn standardized(&self, rows: &[[f64; N_FEATURES]]) -> Array2<f64> {
        let mut x = Array2::zeros((rows.len(), N_FEATURES));
        for (i, r) in rows.iter().enumerate() {
            let s = self.standardizer.apply(r);
            for j in 0..N_FEATURES {
                x[(i, j)] = s[j];
            }
        }
        x
    }

    /// Prune probabilities of a batch of standardized rows; also returns the
    /// pre-activations of every layer for backpropagation.
    fn forward_batch(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&w.t());
            z += b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let logits = acts.pop().expect("output layer").column(0).to_owned();
        (acts, logits.mapv(sigmoid))
    }

    pub fn predict(&self, f: &NodeFeatures) -> f64 {
        let x = self.standardized(&[f.to_array()]);
        self.forward_batch(&x).1[0]
    }

    pub fn predict_rows(&self, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
        if rows.is_empty() {
            return Vec::new();
        }
        self.forward_batch(&self.standardized(rows)).1.to_vec()
    }

    /// Versioned text format: dims, standardization, then row-major weights.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{MODEL_MAGIC}");
        let _ = writeln!(s, "threshold {}", self.threshold);
        let _ = writeln!(s, "dims {}", self.dims().iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
        let _ = writeln!(s, "mean {}", join(&mut self.standardizer.mean.iter().copied()));
        let _ = writeln!(s, "std {}", join(&mut self.standardizer.std.iter().copied()));
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {k} {} {}", w.nrows(), w.ncols());
            for row in w.rows() {
                let _ = writeln!(s, "{}", join(&mut row.iter().copied()));
            }
            let _ = writeln!(s, "bias {}", join(&mut b.iter().copied()));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("model file ends before {what}")));
        if next("header")?.trim() != MODEL_MAGIC {
            return Err(Error::Parse("not a pruning-net model file".into()));
        }
        fn keyed<'a>(line: &'a str, key: &str) -> Result<std::str::SplitWhitespace<'a>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("expected {key:?}, got {line:?}")));
            }
            Ok(it)
        }
        fn nums<T: std::str::FromStr>(it: impl Iterator<Item = impl AsRef<str>>) -> Result<Vec<T>> {
            it.map(|t| t.as_ref().parse::<T>().map_err(|_| Error::Parse(format!("bad number {:?}", t.as_ref()))))
                .collect()
        }
        let threshold: f64 = nums(keyed(next("threshold")?, "threshold")?)?
            .first()
            .copied()
            .ok_or_else(|| Error::Parse("missing threshold".into()))?;
        let dims: Vec<usize> = nums(keyed(next("dims")?, "dims")?)?;
        if dims.len() < 2 || dims[0] != N_FEATURES || *dims.last().expect("len checked") != 1 {
            return Err(Error::Parse(format!("bad layer dims {dims:?}")));
        }
        let mean: Vec<f64> = nums(keyed(next("mean")?, "mean")?)?;
        let std: Vec<f64> = nums(keyed(next("std")?, "std")?)?;
        if mean.len() != N_FEATURES || std.len() != N_FEATURES {
            return Err(Error::Parse("standardization length".into()));
        }
        let mut layers = Vec::new();
        for (k, w) in dims.windows(2).enumerate() {
            let head: Vec<usize> = nums(keyed(next("layer")?, "layer")?)?;
            if head != [k, w[1], w[0]] {
                return Err(Error::Parse(format!("layer header {head:?} does not match dims")));
            }
            let mut data = Vec::with_capacity(w[0] * w[1]);
            for _ in 0..w[1] {
                let row: Vec<f64> = nums(next("weights")?.split_whitespace())?;
                if row.len() != w[0] {
                    return Err(Error::Parse("weight row length".into()));
                }
                data.extend(row);
            }
            let bias: Vec<f64> = nums(keyed(next("bias")?, "bias")?)?;
            if bias.len() != w[1] {
                return Err(Error::Parse("bias length".into()));
            }
            let wm = Array2::from_shape_vec((w[1], w[0]), data).map_err(|e| Error::Parse(e.to_string()))?;
            layers.push((wm, Array1::from(bias)));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Parse("threshold outside (0, 1)".into()));
        }
        Ok(Self { layers, standardizer: Standardizer { mean, std }, threshold })
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub epochs_per_round: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier for every round after the first.
    pub fine_tune_factor: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub threshold: f64,
    pub accuracy_floor: f64,
    /// Every `holdout_every`-th example of each round is held out.
    pub holdout_every: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            hidden: vec![200, 200, 200],
            epochs_per_round: 50,
            learning_rate: 1e-3,
            fine_tune_factor: 0.1,
            momentum: 0.9,
            batch_size: 64,
            threshold: 0.5,
            accuracy_floor: 0.5,
            holdout_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PruningNet,
    pub holdout_accuracy: f64,
    /// Weighted loss on the first round's holdout after each round.
    pub round_losses: Vec<f64>,
    pub train_examples: usize,
    pub holdout_examples: usize,
}

struct Split {
    train: Vec<Vec<usize>>,
    holdout: Vec<Vec<usize>>,
}

fn split(corpus: &TrainingCorpus, every: usize) -> Split {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for round in &corpus.rounds {
        let (mut t, mut h) = (Vec::new(), Vec::new());
        for i in 0..round.len() {
            if every > 0 && i % every == every - 1 {
                h.push(i);
            } else {
                t.push(i);
            }
        }
        train.push(t);
        holdout.push(h);
    }
    Split { train, holdout }
}

fn weighted_loss(p: &[f64], y: &[f64], w: (f64, f64)) -> f64 {
    let eps = 1e-12;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            if y > 0.5 {
                -w.1 * p.max(eps).ln()
            } else {
                -w.0 * (1.0 - p).max(eps).ln()
            }
        })
        .sum();
    total / p.len().max(1) as f64
}

/// Trains the net round by round. Round 1 starts from the seeded
/// initialization; each later round fine-tunes with a reduced learning rate.
/// Loss is inverse-frequency weighted binary cross-entropy.
pub fn train_policy(corpus: &TrainingCorpus, params: &TrainParams) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::DegenerateCorpus("corpus has no examples".into()));
    }
    let sp = split(corpus, params.holdout_every);
    let rows: Vec<Vec<[f64; N_FEATURES]>> =
        corpus.rounds.iter().map(|r| r.iter().map(|t| t.features.to_array()).collect()).collect();
    let labels: Vec<Vec<f64>> =
        corpus.rounds.iter().map(|r| r.iter().map(|t| f64::from(u8::from(t.pruned))).collect()).collect();

    let train_iter = || sp.train.iter().enumerate().flat_map(|(r, idx)| idx.iter().map(move |&i| (r, i)));
    let n_train = train_iter().count();
    let n_pos = train_iter().filter(|&(r, i)| labels[r][i] > 0.5).count();
    if n_train == 0 || n_pos == 0 || n_pos == n_train {
        return Err(Error::DegenerateCorpus(format!(
            "training split has {n_pos} prune labels out of {n_train}; need both classes"
        )));
    }
    // (negative weight, positive weight)
    let cw = (n_train as f64 / (2.0 * (n_train - n_pos) as f64), n_train as f64 / (2.0 * n_pos as f64));

    let mut net = PruningNet::new(&params.hidden, params.threshold, params.seed)?;
    net.standardizer = Standardizer::fit(train_iter().map(|(r, i)| &rows[r][i]));

    let gather = |r: usize, idx: &[usize]| -> (Vec<[f64; N_FEATURES]>, Vec<f64>) {
        (idx.iter().map(|&i| rows[r][i]).collect(), idx.iter().map(|&i| labels[r][i]).collect())
    };
    let (h1x, h1y) = gather(0, &sp.holdout[0]);
    let h1 = net.standardized(&h1x);

    let mut velocity: Vec<(Array2<f64>, Array1<f64>)> =
        net.layers.iter().map(|(w, b)| (Array2::zeros(w.raw_dim()), Array1::zeros(b.raw_dim()))).collect();
    let mut round_losses = Vec::new();
    let bs = params.batch_size.max(1);
    for (r, idx) in sp.train.iter().enumerate() {
        let lr = if r == 0 { params.learning_rate } else { params.learning_rate * params.fine_tune_factor };
        let (rx, ry) = gather(r, idx);
        let x = net.standardized(&rx);
        let mut order: Vec<usize> = (0..rx.len()).collect();
        let mut rng = child_rng(params.seed, &format!("shuffle/round-{r}"));
        for _ in 0..params.epochs_per_round {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<f64> = chunk.iter().map(|&i| ry[i]).collect();
                sgd_step(&mut net, &mut velocity, &xb, &yb, cw, lr, params.momentum);
            }
        }
        if !h1y.is_empty() {
            let p = net.forward_batch(&h1).1.to_vec();
            round_losses.push(weighted_loss(&p, &h1y, cw));
        }
    }

    let mut hits = 0usize;
    let mut n_hold = 0usize;
    for (r, idx) in sp.holdout.iter().enumerate() {
        let (hx, hy) = gather(r, idx);
        for (p, y) in net.predict_rows(&hx).iter().zip(&hy) {
            hits += usize::from((*p >= net.threshold) == (*y > 0.5));
            n_hold += 1;
        }
    }
    let holdout_accuracy = if n_hold == 0 { f64::NAN } else { hits as f64 / n_hold as f64 };
    if n_hold > 0 && holdout_accuracy < params.accuracy_floor {
        return Err(Error::AccuracyBelowFloor { accuracy: holdout_accuracy, floor: params.accuracy_floor });
    }
    Ok(TrainOutcome { net, holdout_accuracy, round_losses, train_examples: n_train, holdout_examples: n_hold })
}

fn sgd_step(
    net: &mut PruningNet,
    velocity: &mut [(Array2<f64>, Array1<f64>)],
    x: &Array2<f64>,
    y: &[f64],
    cw: (f64, f64),
    lr: f64,
    momentum: f64,
) {
    let (acts, p) = net.forward_batch(x);
    let b = y.len() as f64;
    // d loss / d logit for weighted BCE.
    let mut delta = Array2::zeros((y.len(), 1));
    for i in 0..y.len() {
        let w = if y[i] > 0.5 { cw.1 } else { cw.0 };
        delta[(i, 0)] = w * (p[i] - y[i]) / b;
    }
    for k in (0..net.layers.len()).rev() {
        let a_in = &acts[k];
        let gw = delta.t().dot(a_in);
        let gb = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&net.layers[k].0);
            back.zip_mut_with(&acts[k], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
        let (vw, vb) = &mut velocity[k];
        vw.zip_mut_with(&gw, |v, &g| *v = momentum * *v - lr * g);
        vb.zip_mut_with(&gb, |v, &g| *v = momentum * *v - lr * g);
        let (w, bias) = &mut net.layers[k];
        *w += &*vw;
        *bias += &*vb;
    }
}

/// Prunes where the net's prune probability reaches its threshold.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub net: PruningNet,
}

impl PruningPolicy for LearnedPolicy {
    fn id(&self) -> String {
        format!("learned(threshold={})", self.net.threshold)
    }

    fn extra_prune(&self, features: &NodeFeatures) -> bool {
        self.net.predict(features) >= self.net.threshold
    }
}

/// Speedup of `b` over `a` in visited nodes: `visited(a) / visited(b)`.
pub fn speed_metric(a: &SolveReport, b: &SolveReport) -> f64 {
    a.visited_nodes as f64 / b.visited_nodes.max(1) as f64
}
