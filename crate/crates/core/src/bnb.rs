//! Depth-first branch and bound for the directional-modulation programs.
//!
//! Nodes fix a prefix of the flattened binary vector (`(u, m, n)` order): the
//! branching variable is always the first undetermined index, with the
//! 0-child explored first. Each node solves its relaxation by multi-start
//! projected gradient descent. The relaxations are nonconvex, so their
//! values are heuristic bounds; exactness is checked against
//! [`exhaustive_oracle`] rather than claimed.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{steering_1d, CodingSchedule};
use crate::error::{invalid, Error, Result};
use crate::objective::{DecisionVector, DmProblem, Evaluator, Target};
use crate::pruning::{NodeFeatures, TraceRecord};
use crate::seed::{child_rng, derive_seed};

/// Relaxed entries within this distance of 0 or 1 count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Case-3 pruning fires only when `L_n > U + PRUNE_TOL`.
pub const PRUNE_TOL: f64 = 1e-9;
/// Largest binary dimension the exhaustive oracle accepts.
pub const ORACLE_MAX_BITS: usize = 20;
const ORACLE_MAX_EVALS: u128 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SlackMode {
    /// Slacks optimized continuously at integral leaves.
    Continuous,
    /// Slacks restricted to `lower + k * step_deg` at integral leaves.
    Grid { step_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxOptions {
    pub starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { starts: 16, max_iters: 500, grad_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveLimits {
    pub max_nodes: Option<u64>,
    #[serde(with = "opt_secs")]
    pub max_time: Option<Duration>,
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|d| d.as_secs_f64()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub relax: RelaxOptions,
    pub slack_mode: SlackMode,
    pub limits: SolveLimits,
    pub record_trace: bool,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            relax: RelaxOptions::default(),
            slack_mode: SlackMode::Continuous,
            limits: SolveLimits::default(),
            record_trace: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Prune,
    Expand,
}

/// Extra pruning on top of the baseline rules. Baseline prunes are always
/// honored; a policy can only add prunes.
pub trait PruningPolicy {
    fn id(&self) -> String;
    fn extra_prune(&self, features: &NodeFeatures) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BaselinePolicy;

impl PruningPolicy for BaselinePolicy {
    fn id(&self) -> String {
        "baseline".into()
    }

    fn extra_prune(&self, _: &NodeFeatures) -> bool {
        false
    }
}

/// Baseline rules: prune when the relaxation is integral or its bound exceeds
/// the incumbent. Box-constrained subproblems are never infeasible.
pub fn baseline_pruning(integral: bool, lower_bound: f64, upper_bound: Option<f64>) -> Decision {
    if integral {
        return Decision::Prune;
    }
    match upper_bound {
        Some(u) if lower_bound > u + PRUNE_TOL => Decision::Prune,
        _ => Decision::Expand,
    }
}

/// Search-tree node: a fixed prefix of the flattened binary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub prefix: Vec<u8>,
    pub plunge_depth: usize,
    warm: Option<DecisionVector>,
}

impl Node {
    pub fn root() -> Self {
        Self { prefix: Vec::new(), plunge_depth: 0, warm: None }
    }

    pub fn depth(&self) -> usize {
        self.prefix.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxResult {
    pub bound: f64,
    pub solution: DecisionVector,
    /// `false` when the best start hit the iteration limit.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub schedule: CodingSchedule,
    pub slacks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub best: Option<Solution>,
    /// `+inf` when no feasible point was found.
    pub objective: f64,
    pub visited_nodes: u64,
    pub solutions_found: u64,
    pub limit_hit: bool,
    pub nonconverged_relaxations: u64,
    pub policy: String,
    pub wall_time: Duration,
    pub trace: Vec<TraceRecord>,
}

impl SolveReport {
    pub fn decision_vector(&self) -> Option<DecisionVector> {
        self.best.as_ref().map(|s| DecisionVector::from_schedule(&s.schedule, s.slacks.clone()))
    }
}

/// Slack box in normalized coordinates `y in [0, 1]`, `d = lo + y (hi - lo)`.
struct SlackBox<'a>(&'a [(f64, f64)]);

impl SlackBox<'_> {
    fn to_deg(&self, y: &[f64], out: &mut [f64]) {
        for ((o, &v), &(lo, hi)) in out.iter_mut().zip(y).zip(self.0) {
            *o = lo + v * (hi - lo);
        }
    }

    fn from_deg(&self, d: f64, i: usize) -> f64 {
        let (lo, hi) = self.0[i];
        if hi > lo {
            ((d - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

struct Pgd<'a> {
    eval: Evaluator<'a>,
    prob: &'a DmProblem,
    prefix_len: usize,
    q: Vec<f64>,
    s: Vec<f64>,
    gq: Vec<f64>,
    gs: Vec<f64>,
}

impl<'a> Pgd<'a> {
    fn new(prob: &'a DmProblem, prefix: &[u8]) -> Self {
        let mut q = vec![0.0; prob.n_binaries()];
        for (v, &b) in q.iter_mut().zip(prefix) {
            *v = f64::from(b);
        }
        Self {
            eval: Evaluator::new(prob),
            prob,
            prefix_len: prefix.len(),
            q,
            s: vec![0.0; prob.n_slacks()],
            gq: vec![0.0; prob.n_binaries()],
            gs: vec![0.0; prob.n_slacks()],
        }
    }

    fn load(&mut self, z: &[f64]) {
        let f = self.q.len() - self.prefix_len;
        self.q[self.prefix_len..].copy_from_slice(&z[..f]);
        SlackBox(self.prob.slack_bounds()).to_deg(&z[f..], &mut self.s);
    }

    fn value(&mut self, z: &[f64]) -> f64 {
        self.load(z);
        self.eval.value(&self.q, &self.s)
    }

    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        self.load(z);
        let v = self.eval.value_grad(&self.q, &self.s, &mut self.gq, &mut self.gs);
        let f = self.q.len() - self.prefix_len;
        g[..f].copy_from_slice(&self.gq[self.prefix_len..]);
        for (i, &(lo, hi)) in self.prob.slack_bounds().iter().enumerate() {
            g[f + i] = self.gs[i] * (hi - lo);
        }
        v
    }

    /// Projected gradient descent with backtracking from `z`.
    fn run(&mut self, z: &mut [f64], opts: &RelaxOptions) -> (f64, bool) {
        let dim = z.len();
        let mut g = vec![0.0; dim];
        let mut trial = vec![0.0; dim];
        let mut f = self.value_grad(z, &mut g);
        let mut t = 1.0;
        for _ in 0..opts.max_iters {
            let pg = z
                .iter()
                .zip(&g)
                .map(|(x, gi)| (x - (x - gi).clamp(0.0, 1.0)).abs())
                .fold(0.0, f64::max);
            if pg < opts.grad_tol {
                return (f, true);
            }
            loop {
                for i in 0..dim {
                    trial[i] = (z[i] - t * g[i]).clamp(0.0, 1.0);
                }
                let ft = self.value(&trial);
                let (mut lin, mut sq) = (0.0, 0.0);
                for i in 0..dim {
                    let d = trial[i] - z[i];
                    lin += g[i] * d;
                    sq += d * d;
                }
                if ft <= f + lin + sq / (2.0 * t) {
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return (f, true);
                }
            }
            let f_new = self.value_grad(&trial, &mut g);
            z.copy_from_slice(&trial);
            let stalled = f - f_new <= 1e-14 * (1.0 + f.abs());
            f = f_new;
            if stalled {
                return (f, true);
            }
            t = (t * 2.0).min(1e3);
        }
        (f, false)
    }
}

/// Best objective over the slack variables with the binaries fixed.
///
/// 1D free space is separable per step and is solved by a scan (exact on the
/// grid, refined by golden section when continuous). 2D uses per-step
/// coordinate scans, then slack-only gradient descent in continuous mode.
pub fn polish_slacks(prob: &DmProblem, binaries: &[f64], mode: SlackMode) -> (f64, Vec<f64>) {
    let mut eval = Evaluator::new(prob);
    let bounds = prob.slack_bounds();
    match prob.target() {
        Target::Channel { .. } => (eval.value(binaries, &[]), Vec::new()),
        Target::Freespace1d { theta0 } => {
            let cfg = prob.config();
            let n = cfg.n_cells;
            let mut g = Vec::with_capacity(n);
            let mut slacks = Vec::with_capacity(prob.steps());
            for (u, &(lo, hi)) in bounds.iter().enumerate() {
                crate::array::fill_gammas(cfg, binaries[u * n..(u + 1) * n].iter().copied(), &mut g);
                let beam = |d: f64| -> f64 {
                    let a = steering_1d(cfg, theta0 + d);
                    g.iter().zip(&a).map(|(x, y)| x * y).sum::<Complex64>().norm()
                };
                slacks.push(best_on_interval(&beam, lo, hi, mode));
            }
            (eval.value(binaries, &slacks), slacks)
        }
        Target::Freespace2d { .. } => {
            let step = match mode {
                SlackMode::Grid { step_deg } => step_deg,
                SlackMode::Continuous => 2.0,
            };
            let mut s: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.0f64.clamp(lo, hi)).collect();
            let mut best = eval.value(binaries, &s);
            for _sweep in 0..2 {
                for u in 0..prob.steps() {
                    let g1 = grid_points(bounds[2 * u], step);
                    let g2 = grid_points(bounds[2 * u + 1], step);
                    let mut local = (s[2 * u], s[2 * u + 1]);
                    for &a in &g1 {
                        for &b in &g2 {
                            s[2 * u] = a;
                            s[2 * u + 1] = b;
                            let v = eval.value(binaries, &s);
                            if v < best {
                                best = v;
                                local = (a, b);
                            }
                        }
                    }
                    s[2 * u] = local.0;
                    s[2 * u + 1] = local.1;
                }
            }
            if mode == SlackMode::Continuous && !s.is_empty() {
                let prefix: Vec<u8> = binaries.iter().map(|&q| q as u8).collect();
                let mut pgd = Pgd::new(prob, &prefix);
                let sb = SlackBox(bounds);
                let mut z: Vec<f64> = s.iter().enumerate().map(|(i, &d)| sb.from_deg(d, i)).collect();
                let (v, _) = pgd.run(&mut z, &RelaxOptions::default());
                if v < best {
                    let mut deg = vec![0.0; s.len()];
                    sb.to_deg(&z, &mut deg);
                    let exact = eval.value(binaries, &deg);
                    if exact < best {
                        best = exact;
                        s = deg;
                    }
                }
            }
            (best, s)
        }
    }
}

/// `lo, lo+step, ...` up to `hi`.
pub fn grid_points((lo, hi): (f64, f64), step: f64) -> Vec<f64> {
    if hi <= lo || step <= 0.0 {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Maximizer of `f` on `[lo, hi]`: grid argmax, or a 0.25 deg scan refined by
/// golden section in continuous mode. Ties keep the first point.
fn best_on_interval(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, mode: SlackMode) -> f64 {
    let step = match mode {
        SlackMode::Grid { step_deg } => step_deg,
        SlackMode::Continuous => 0.25,
    };
    let pts = grid_points((lo, hi), step);
    let (mut arg, mut fbest) = (pts[0], f(pts[0]));
    for &p in &pts[1..] {
        let v = f(p);
        if v > fbest {
            arg = p;
            fbest = v;
        }
    }
    if mode == SlackMode::Continuous && hi > lo {
        let (mut a, mut b) = ((arg - step).max(lo), (arg + step).min(hi));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..60 {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = f(x2);
            }
        }
        let m = 0.5 * (a + b);
        if f(m) > fbest {
            arg = m;
        }
    }
    arg
}

/// Solves the relaxation of the node fixing `prefix`.
///
/// Starts: the warm point (parent solution) or the box midpoint, the all-0
/// and all-1 corners of the free binaries, then Latin-hypercube interior
/// points drawn from `seed`. Results are reduced by (value, start index).
pub fn solve_relaxation(
    prob: &DmProblem,
    prefix: &[u8],
    warm: Option<&DecisionVector>,
    opts: &RelaxOptions,
    mode: SlackMode,
    seed: u64,
) -> RelaxResult {
    let nb = prob.n_binaries();
    let mut bin: Vec<f64> = vec![0.0; nb];
    for (v, &b) in bin.iter_mut().zip(prefix) {
        *v = f64::from(b);
    }
    if prefix.len() == nb {
        let (v, slacks) = polish_slacks(prob, &bin, mode);
        return RelaxResult { bound: v, solution: DecisionVector { binaries: bin, slacks }, converged: true };
    }
    let free = nb - prefix.len();
    let ns = prob.n_slacks();
    let dim = free + ns;
    let sb = SlackBox(prob.slack_bounds());
    let zero_slack: Vec<f64> = (0..ns).map(|i| sb.from_deg(0.0, i)).collect();

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.starts.max(1));
    starts.push(match warm {
        Some(w) => {
            let mut z: Vec<f64> = w.binaries[prefix.len()..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
            z.extend(w.slacks.iter().enumerate().map(|(i, &d)| sb.from_deg(d, i)));
            z
        }
        None => {
            let mut z = vec![0.5; free];
            z.extend_from_slice(&zero_slack);
            z
        }
    });
    for corner in [0.0, 1.0] {
        let mut z = vec![corner; free];
        z.extend_from_slice(&zero_slack);
        starts.push(z);
    }
    starts.truncate(opts.starts.max(1));
    let n_lhs = opts.starts.saturating_sub(starts.len());
    if n_lhs > 0 {
        let mut rng = child_rng(seed, "lhs");
        let mut pts = vec![vec![0.0; dim]; n_lhs];
        let mut perm: Vec<usize> = (0..n_lhs).collect();
        for d in 0..dim {
            perm.shuffle(&mut rng);
            for (k, p) in pts.iter_mut().enumerate() {
                p[d] = (perm[k] as f64 + rng.random::<f64>()) / n_lhs as f64;
            }
        }
        starts.extend(pts);
    }

    let mut pgd = Pgd::new(prob, prefix);
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for mut z in starts {
        let (v, conv) = pgd.run(&mut z, opts);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, z, conv));
        }
    }
    let (v, z, conv) = best.expect("at least one start");
    let mut slacks = vec![0.0; ns];
    sb.to_deg(&z[free..], &mut slacks);
    bin[prefix.len()..].copy_from_slice(&z[..free]);
    RelaxResult { bound: v, solution: DecisionVector { binaries: bin, slacks }, converged: conv }
}

/// Runs the depth-first search. Returns the best point found; hitting a limit
/// sets `limit_hit` and returns the best so far.
pub fn solve(prob: &DmProblem, policy: &dyn PruningPolicy, opts: &SolveOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let nb = prob.n_binaries();
    let n_cells = prob.config().n_cells;
    let mut stack = vec![Node::root()];
    let mut incumbent: Option<(f64, DecisionVector)> = None;
    let mut visited = 0u64;
    let mut solutions_found = 0u64;
    let mut nonconverged = 0u64;
    let mut limit_hit = false;
    let mut trace = Vec::new();

    while let Some(node) = stack.pop() {
        if opts.limits.max_nodes.is_some_and(|m| visited >= m)
            || opts.limits.max_time.is_some_and(|t| started.elapsed() >= t)
        {
            limit_hit = true;
            break;
        }
        visited += 1;
        let k = node.prefix.len();
        let relax = solve_relaxation(
            prob,
            &node.prefix,
            node.warm.as_ref(),
            &opts.relax,
            opts.slack_mode,
            derive_seed(opts.seed, &format!("mc-start-{visited}")),
        );
        if !relax.converged {
            nonconverged += 1;
        }
        let integral = relax.solution.binaries[k..]
            .iter()
            .all(|&q| q <= INTEGRALITY_TOL || q >= 1.0 - INTEGRALITY_TOL);

        // Search state on arrival, before this node's own heuristic.
        let upper_in = incumbent.as_ref().map_or(f64::INFINITY, |(u, _)| *u);
        let found_in = solutions_found as usize;

        // Rounding heuristic; the rounded point is feasible in this node's box,
        // so its value also caps the node's bound.
        let rounded: Vec<f64> = relax.solution.binaries.iter().map(|&q| if q >= 0.5 { 1.0 } else { 0.0 }).collect();
        let (hv, hs) = polish_slacks(prob, &rounded, opts.slack_mode);
        if incumbent.as_ref().is_none_or(|(u, _)| hv < *u) {
            incumbent = Some((hv, DecisionVector { binaries: rounded, slacks: hs }));
            solutions_found += 1;
        }
        let bound = relax.bound.min(hv);
        let upper = incumbent.as_ref().map(|(u, _)| *u);

        let branch = (k < nb).then_some(k);
        let (csi_ab, csi_ae) = branch.map_or((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)), |i| {
            prob.csi_of_cell(i % n_cells)
        });
        let features = NodeFeatures {
            depth: k,
            plunge_depth: node.plunge_depth,
            local_lower_bound: bound,
            branching_value: branch.map_or(0.0, |i| relax.solution.binaries[i]),
            global_upper_bound: upper_in,
            solutions_found: found_in,
            csi_ab,
            csi_ae,
        };
        let base = baseline_pruning(integral || branch.is_none(), bound, upper) == Decision::Prune;
        let prune = base || policy.extra_prune(&features);
        if opts.record_trace {
            trace.push(TraceRecord { features, pruned: base });
        }
        if prune {
            continue;
        }
        let i = branch.expect("non-integral node has a free variable");
        for bit in [1u8, 0u8] {
            let mut prefix = node.prefix.clone();
            prefix.push(bit);
            let mut warm = relax.solution.clone();
            warm.binaries[i] = f64::from(bit);
            let plunge_depth = if bit == 0 { node.plunge_depth + 1 } else { 0 };
            stack.push(Node { prefix, plunge_depth, warm: Some(warm) });
        }
    }

    let (objective, best) = match incumbent {
        Some((v, x)) => {
            let schedule = x.to_schedule(prob)?;
            (v, Some(Solution { schedule, slacks: x.slacks }))
        }
        None => (f64::INFINITY, None),
    };
    Ok(SolveReport {
        best,
        objective,
        visited_nodes: visited,
        solutions_found,
        limit_hit,
        nonconverged_relaxations: nonconverged,
        policy: policy.id(),
        wall_time: started.elapsed(),
        trace,
    })
}

/// Global optimum by enumeration of every schedule, slacks chosen by `mode`
/// (a shared grid for solver cross-checks). Refuses instances above
/// [`ORACLE_MAX_BITS`] binaries.
pub fn exhaustive_oracle(prob: &DmProblem, mode: SlackMode) -> Result<SolveReport> {
    let started = Instant::now();
    let nb = prob.n_binaries();
    if nb > ORACLE_MAX_BITS {
        return Err(Error::TooLarge(format!("2^{nb} schedules exceeds the 2^{ORACLE_MAX_BITS} oracle limit")));
    }
    let l = prob.steps();
    let w = nb / l;
    let rows = 1usize << w;
    let row_bits = |r: usize| -> Vec<f64> { (0..w).map(|n| ((r >> (w - 1 - n)) & 1) as f64).collect() };
    let combos = 1u64 << nb;
    let mask = rows - 1;
    let rows_of = |c: u64, u: usize| -> usize { ((c >> ((l - 1 - u) * w)) as usize) & mask };

    let (best_c, slacks) = match prob.target() {
        Target::Freespace1d { theta0 } => {
            let cfg = prob.config();
            let a0 = steering_1d(cfg, *theta0);
            let mut g = Vec::with_capacity(w);
            let mut xi0 = Vec::with_capacity(rows);
            // beam[u][r] = (max |Xi(theta0 + d, r)|, argmax d)
            let mut beam = vec![Vec::with_capacity(rows); l];
            for r in 0..rows {
                crate::array::fill_gammas(cfg, row_bits(r), &mut g);
                xi0.push(g.iter().zip(&a0).map(|(x, y)| x * y).sum::<Complex64>());
                for (u, &(lo, hi)) in prob.slack_bounds().iter().enumerate() {
                    let f = |d: f64| -> f64 {
                        let a = steering_1d(cfg, theta0 + d);
                        g.iter().zip(&a).map(|(x, y)| x * y).sum::<Complex64>().norm()
                    };
                    let d = best_on_interval(&f, lo, hi, mode);
                    beam[u].push((f(d), d));
                }
            }
            let mut best = (f64::INFINITY, 0u64);
            for c in 0..combos {
                let r0 = rows_of(c, 0);
                let mut v = -beam[0][r0].0;
                for u in 1..l {
                    let r = rows_of(c, u);
                    v += (xi0[r] - xi0[r0]).norm() - beam[u][r].0;
                }
                if v < best.0 {
                    best = (v, c);
                }
            }
            let slacks = (0..l).map(|u| beam[u][rows_of(best.1, u)].1).collect();
            (best.1, slacks)
        }
        Target::Channel { bob, eve, .. } => {
            let cfg = prob.config();
            let att: Vec<f64> = (0..w).map(|k| cfg.attenuation(k)).collect();
            let weight = |h: &[Complex64]| -> Vec<Complex64> { h.iter().zip(&att).map(|(h, a)| h * a).collect() };
            let wb = weight(bob);
            let we: Vec<Vec<Complex64>> = eve.iter().map(|e| weight(e)).collect();
            let mut g = Vec::with_capacity(w);
            let mut xb = Vec::with_capacity(rows);
            let mut xe = vec![Complex64::new(0.0, 0.0); rows * we.len()];
            for r in 0..rows {
                crate::array::fill_gammas(cfg, row_bits(r), &mut g);
                let dot = |v: &[Complex64]| g.iter().zip(v).map(|(x, y)| x * y).sum::<Complex64>();
                xb.push(dot(&wb));
                for (i, e) in we.iter().enumerate() {
                    xe[r * we.len() + i] = dot(e);
                }
            }
            let ne = we.len();
            let mut best = (f64::INFINITY, 0u64);
            for c in 0..combos {
                let r0 = rows_of(c, 0);
                let mut rel = 0.0;
                let mut sec = 0.0;
                for u in 1..l {
                    let r = rows_of(c, u);
                    rel += (xb[r] - xb[r0]).norm();
                    for i in 0..ne {
                        sec += (xe[r * ne + i] - xe[r0 * ne + i]).norm();
                    }
                }
                let v = rel - sec / ne as f64;
                if v < best.0 {
                    best = (v, c);
                }
            }
            (best.1, Vec::new())
        }
        Target::Freespace2d { .. } => {
            let step = match mode {
                SlackMode::Grid { step_deg } => step_deg,
                SlackMode::Continuous => {
                    return Err(invalid("the 2D oracle needs a slack grid"));
                }
            };
            let axes: Vec<Vec<f64>> = prob.slack_bounds().iter().map(|&b| grid_points(b, step)).collect();
            let per = axes.iter().map(|a| a.len() as u128).product::<u128>();
            if per.saturating_mul(u128::from(combos)) > ORACLE_MAX_EVALS {
                return Err(Error::TooLarge(format!(
                    "{} schedules x {} slack points exceeds the oracle budget",
                    combos, per
                )));
            }
            let mut eval = Evaluator::new(prob);
            let mut best = (f64::INFINITY, 0u64, Vec::new());
            let mut s = vec![0.0; axes.len()];
            for c in 0..combos {
                let bin: Vec<f64> = (0..l).flat_map(|u| row_bits(rows_of(c, u))).collect();
                let mut idx = vec![0usize; axes.len()];
                loop {
                    for (k, &i) in idx.iter().enumerate() {
                        s[k] = axes[k][i];
                    }
                    let v = eval.value(&bin, &s);
                    if v < best.0 {
                        best = (v, c, s.clone());
                    }
                    let mut d = 0;
                    while d < idx.len() {
                        idx[d] += 1;
                        if idx[d] < axes[d].len() {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                    if d == idx.len() {
                        break;
                    }
                }
            }
            (best.1, best.2)
        }
    };

    let binaries: Vec<f64> = (0..l).flat_map(|u| row_bits(rows_of(best_c, u))).collect();
    let x = DecisionVector { binaries, slacks };
    let objective = Evaluator::new(prob).value(&x.binaries, &x.slacks);
    let schedule = x.to_schedule(prob)?;
    Ok(SolveReport {
        best: Some(Solution { schedule, slacks: x.slacks }),
        objective,
        visited_nodes: combos,
        solutions_found: 1,
        limit_hit: false,
        nonconverged_relaxations: 0,
        policy: "exhaustive".into(),
        wall_time: started.elapsed(),
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayConfig;
    use crate::channel::{generate_channel, ChannelKind};

    fn small_1d(n: usize, theta0: f64) -> DmProblem {
        DmProblem::freespace_1d(ArrayConfig { n_cells: n, ..ArrayConfig::default() }, 2, theta0).unwrap()
    }

    #[test]
    fn pruning_cases() {
        assert_eq!(baseline_pruning(true, -5.0, None), Decision::Prune);
        assert_eq!(baseline_pruning(false, 1.0 + 1e-3, Some(1.0)), Decision::Prune);
        assert_eq!(baseline_pruning(false, 1.0, Some(1.0)), Decision::Expand);
        assert_eq!(baseline_pruning(false, 1e9, None), Decision::Expand);
    }

    #[test]
    fn fully_fixed_relaxation_is_exact() {
        let p = small_1d(3, 80.0).with_slack_bounds(&[(0.0, 0.0)]).unwrap();
        let prefix = [1, 0, 1, 0, 0, 1];
        let r = solve_relaxation(&p, &prefix, None, &RelaxOptions::default(), SlackMode::Continuous, 0);
        let x = DecisionVector { binaries: prefix.iter().map(|&b| f64::from(b)).collect(), slacks: vec![0.0, 0.0] };
        assert_eq!(r.bound, p.objective(&x).unwrap());
    }

    #[test]
    fn root_bound_is_nonpositive() {
        let p = small_1d(5, 88.0);
        let r = solve_relaxation(&p, &[], None, &RelaxOptions::default(), SlackMode::Continuous, 1);
        assert!(r.bound <= 0.0);
    }

    #[test]
    fn one_node_limit() {
        let p = small_1d(4, 88.0);
        let opts = SolveOptions { limits: SolveLimits { max_nodes: Some(1), max_time: None }, ..SolveOptions::default() };
        let rep = solve(&p, &BaselinePolicy, &opts).unwrap();
        assert_eq!(rep.visited_nodes, 1);
        assert!(rep.best.is_some());
    }

    #[test]
    fn tiny_instance_matches_enumeration() {
        let p = small_1d(2, 88.0).with_slack_bounds(&[(0.0, 0.0)]).unwrap();
        let mode = SlackMode::Grid { step_deg: 0.5 };
        let rep = solve(&p, &BaselinePolicy, &SolveOptions { slack_mode: mode, ..SolveOptions::default() }).unwrap();
        let mut best = f64::INFINITY;
        for c in 0..16u8 {
            let x = DecisionVector {
                binaries: (0..4).map(|i| f64::from((c >> (3 - i)) & 1)).collect(),
                slacks: vec![0.0, 0.0],
            };
            best = best.min(p.objective(&x).unwrap());
        }
        assert!((rep.objective - best).abs() < 1e-12);
        let orc = exhaustive_oracle(&p, mode).unwrap();
        assert!((orc.objective - best).abs() < 1e-12);
        assert_eq!(orc.visited_nodes, 16);
    }

    #[test]
    fn oracle_single_cell() {
        let p = small_1d(1, 60.0);
        let orc = exhaustive_oracle(&p, SlackMode::Grid { step_deg: 1.0 }).unwrap();
        assert_eq!(orc.visited_nodes, 4);
        for c in 0..4u8 {
            let sched = CodingSchedule::from_rows(&[vec![c >> 1], vec![c & 1]]).unwrap();
            let x = DecisionVector::from_schedule(&sched, orc.best.as_ref().unwrap().slacks.clone());
            assert!(orc.objective <= p.objective(&x).unwrap() + 1e-12);
        }
    }

    #[test]
    fn oracle_refuses_large() {
        let p = small_1d(11, 88.0);
        assert!(matches!(exhaustive_oracle(&p, SlackMode::Grid { step_deg: 1.0 }), Err(Error::TooLarge(_))));
    }

    #[test]
    fn report_objective_reevaluates() {
        let cfg = ArrayConfig { n_cells: 5, ..ArrayConfig::default() };
        let bob = generate_channel(&ChannelKind::RayleighIid, &cfg, 1).unwrap().gains;
        let eve = generate_channel(&ChannelKind::RayleighIid, &cfg, 2).unwrap().gains;
        let p = DmProblem::channel_perfect(cfg, 2, bob, eve).unwrap();
        let rep = solve(&p, &BaselinePolicy, &SolveOptions::default()).unwrap();
        let x = rep.decision_vector().unwrap();
        assert_eq!(p.objective(&x).unwrap(), rep.objective);
    }

    #[test]
    fn solve_is_deterministic() {
        let p = small_1d(4, 70.0);
        let opts = SolveOptions { record_trace: true, seed: 5, ..SolveOptions::default() };
        let a = solve(&p, &BaselinePolicy, &opts).unwrap();
        let b = solve(&p, &BaselinePolicy, &opts).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.best, b.best);
        assert_eq!(a.visited_nodes, b.visited_nodes);
        assert_eq!(a.trace, b.trace);
    }
}
