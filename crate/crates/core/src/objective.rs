//! Directional-modulation objectives and their continuous relaxation.
//!
//! Every objective has the form `reliability - secrecy`: the first sum is
//! zero exactly when the desired receiver sees the same array factor in every
//! time step (no harmonics), and the second sum rewards either a strong beam
//! (free space) or scrambling at the eavesdropper (channel kinds). Lower is
//! better.
//!
//! The relaxation replaces each binary state by `q in [0, 1]` and
//! interpolates the per-cell phase, `kappa(q) = (1-q) b0 + q b1`, so `|Gamma|`
//! stays 1 along the path and the relaxed value is exact at integral points.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{
    self, fill_gammas, harmonic_from_steps, shifter_phase, steering_1d, steering_2d, AngleGrid,
    ArrayConfig, CodingSchedule, ShifterTable, DB_FLOOR,
};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_SLACK_DEG: f64 = 10.0;
const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[serde(rename = "freespace-1d")]
    Freespace1d,
    #[serde(rename = "freespace-2d")]
    Freespace2d,
    ChannelPerfect,
    ChannelPartial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Freespace1d { theta0: f64 },
    Freespace2d { theta0: f64, phi0: f64 },
    /// Bob's gains and one or more Eve realizations. One realization is the
    /// perfect-CSI problem; several give the averaged partial-CSI objective.
    Channel { bob: Vec<Complex64>, eve: Vec<Vec<Complex64>>, partial: bool },
}

/// One optimization instance. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DmProblem {
    config: ArrayConfig,
    steps: usize,
    target: Target,
    /// `(lower, upper)` in degrees, one pair per slack variable.
    slack_bounds: Vec<(f64, f64)>,
    // Precomputed per-cell and per-branch weights.
    cells0: Vec<Complex64>,
    branches0: Vec<Complex64>,
    bob_w: Vec<Complex64>,
    eve_w: Vec<Vec<Complex64>>,
}

/// Relaxed or integral point: binaries flattened `(u, m, n)`, slacks in
/// degrees (`d1_u` in 1D, `d1_u, d2_u` interleaved per step in 2D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub binaries: Vec<f64>,
    pub slacks: Vec<f64>,
}

impl DecisionVector {
    pub fn zeros(prob: &DmProblem) -> Self {
        Self { binaries: vec![0.0; prob.n_binaries()], slacks: vec![0.0; prob.n_slacks()] }
    }

    pub fn from_schedule(schedule: &CodingSchedule, slacks: Vec<f64>) -> Self {
        Self { binaries: schedule.states().iter().map(|&s| f64::from(s)).collect(), slacks }
    }

    pub fn is_integral(&self) -> bool {
        self.binaries.iter().all(|&q| q == 0.0 || q == 1.0)
    }

    pub fn to_schedule(&self, prob: &DmProblem) -> Result<CodingSchedule> {
        if !self.is_integral() {
            return Err(invalid("decision vector is not integral"));
        }
        let cfg = prob.config();
        CodingSchedule::new(
            prob.steps(),
            cfg.n_branches,
            cfg.n_cells,
            self.binaries.iter().map(|&q| q as u8).collect(),
        )
    }
}

impl DmProblem {
    fn build(config: ArrayConfig, steps: usize, target: Target) -> Result<Self> {
        config.validate()?;
        if steps < 2 {
            return Err(invalid("a time-modulated design needs at least 2 steps"));
        }
        let n = config.n_cells;
        let mut prob = Self {
            slack_bounds: Vec::new(),
            cells0: Vec::new(),
            branches0: Vec::new(),
            bob_w: Vec::new(),
            eve_w: Vec::new(),
            config,
            steps,
            target,
        };
        match &prob.target {
            Target::Freespace1d { theta0 } => {
                if prob.config.n_branches != 1 {
                    return Err(invalid("1D problem needs n_branches = 1"));
                }
                if !(0.0..=180.0).contains(theta0) {
                    return Err(invalid("theta0 outside [0, 180]"));
                }
                prob.cells0 = steering_1d(&prob.config, *theta0);
                prob.branches0 = vec![Complex64::new(1.0, 0.0)];
                prob.slack_bounds = vec![(-DEFAULT_SLACK_DEG, DEFAULT_SLACK_DEG); steps];
            }
            Target::Freespace2d { theta0, phi0 } => {
                if !(0.0..=90.0).contains(theta0) {
                    return Err(invalid("theta0 outside [0, 90] for the 2D array"));
                }
                let (c, b) = steering_2d(&prob.config, *theta0, *phi0);
                prob.cells0 = c;
                prob.branches0 = b;
                prob.slack_bounds = vec![(-DEFAULT_SLACK_DEG, DEFAULT_SLACK_DEG); 2 * steps];
            }
            Target::Channel { bob, eve, .. } => {
                if prob.config.n_branches != 1 {
                    return Err(invalid("channel problems use the 1D antenna"));
                }
                if bob.is_empty() || eve.is_empty() {
                    return Err(Error::MissingCsi("channel problem needs Bob and Eve CSI".into()));
                }
                if bob.len() != n || eve.iter().any(|e| e.len() != n) {
                    return Err(Error::DimensionMismatch(format!("CSI vectors must have length {n}")));
                }
                let att: Vec<f64> = (0..n).map(|k| prob.config.attenuation(k)).collect();
                prob.bob_w = bob.iter().zip(&att).map(|(h, a)| h * a).collect();
                prob.eve_w = eve.iter().map(|e| e.iter().zip(&att).map(|(h, a)| h * a).collect()).collect();
                prob.branches0 = vec![Complex64::new(1.0, 0.0)];
            }
        }
        Ok(prob)
    }

    pub fn freespace_1d(config: ArrayConfig, steps: usize, theta0: f64) -> Result<Self> {
        Self::build(config, steps, Target::Freespace1d { theta0 })
    }

    pub fn freespace_2d(config: ArrayConfig, steps: usize, theta0: f64, phi0: f64) -> Result<Self> {
        Self::build(config, steps, Target::Freespace2d { theta0, phi0 })
    }

    pub fn channel_perfect(config: ArrayConfig, steps: usize, bob: Vec<Complex64>, eve: Vec<Complex64>) -> Result<Self> {
        Self::build(config, steps, Target::Channel { bob, eve: vec![eve], partial: false })
    }

    /// Eve known only through `realizations` drawn from her channel statistics.
    pub fn channel_partial(
        config: ArrayConfig,
        steps: usize,
        bob: Vec<Complex64>,
        realizations: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        if realizations.is_empty() {
            return Err(Error::MissingCsi("partial CSI needs at least one Eve realization".into()));
        }
        Self::build(config, steps, Target::Channel { bob, eve: realizations, partial: true })
    }

    /// Replaces the slack bounds. A single pair applies to every slack.
    pub fn with_slack_bounds(mut self, bounds: &[(f64, f64)]) -> Result<Self> {
        let n = self.n_slacks();
        let expanded = match bounds.len() {
            1 => vec![bounds[0]; n],
            len if len == n => bounds.to_vec(),
            len => return Err(Error::DimensionMismatch(format!("{len} slack bounds for {n} slacks"))),
        };
        if n == 0 && !bounds.is_empty() && bounds.iter().any(|b| *b != (0.0, 0.0)) {
            return Err(invalid("channel problems carry no slack variables"));
        }
        for &(lo, hi) in &expanded {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("slack bounds ({lo}, {hi}) need lower <= upper")));
            }
        }
        self.slack_bounds = expanded;
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        match &self.target {
            Target::Freespace1d { .. } => ProblemKind::Freespace1d,
            Target::Freespace2d { .. } => ProblemKind::Freespace2d,
            Target::Channel { partial: false, .. } => ProblemKind::ChannelPerfect,
            Target::Channel { partial: true, .. } => ProblemKind::ChannelPartial,
        }
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn slack_bounds(&self) -> &[(f64, f64)] {
        &self.slack_bounds
    }

    pub fn n_binaries(&self) -> usize {
        self.steps * self.config.cells_per_step()
    }

    pub fn n_slacks(&self) -> usize {
        self.slack_bounds.len()
    }

    /// Alice-Bob and (first) Alice-Eve gain of cell `n`; the steering weight and
    /// zero in free space.
    pub fn csi_of_cell(&self, n: usize) -> (Complex64, Complex64) {
        match &self.target {
            Target::Channel { bob, eve, .. } => (bob[n], eve[0][n]),
            _ => (self.cells0[n], Complex64::new(0.0, 0.0)),
        }
    }

    /// Shifter values used in step `u` for 2D problems given that step's slacks.
    pub fn shifters_for(&self, d1: f64, d2: f64) -> Vec<Complex64> {
        match self.target {
            Target::Freespace2d { theta0, phi0 } => (0..self.config.n_branches)
                .map(|m| shifter_phase(m, theta0 + d1, phi0 + d2, &self.config))
                .collect(),
            _ => vec![Complex64::new(1.0, 0.0); self.config.n_branches],
        }
    }

    /// Full shifter table for a 2D solution.
    pub fn shifter_table(&self, slacks: &[f64]) -> ShifterTable {
        let m = self.config.n_branches;
        let values = (0..self.steps)
            .flat_map(|u| {
                let (d1, d2) = slacks.get(2 * u).zip(slacks.get(2 * u + 1)).map_or((0.0, 0.0), |(a, b)| (*a, *b));
                self.shifters_for(d1, d2)
            })
            .collect();
        ShifterTable::from_values(self.steps, m, values).expect("sized by construction")
    }

    fn check_shape(&self, x: &DecisionVector) -> Result<()> {
        if x.binaries.len() != self.n_binaries() || x.slacks.len() != self.n_slacks() {
            return Err(Error::DimensionMismatch(format!(
                "decision vector {}+{} does not match problem {}+{}",
                x.binaries.len(),
                x.slacks.len(),
                self.n_binaries(),
                self.n_slacks()
            )));
        }
        Ok(())
    }

    /// Exact objective of an integral decision vector.
    pub fn objective(&self, x: &DecisionVector) -> Result<f64> {
        self.check_shape(x)?;
        if !x.is_integral() {
            return Err(invalid("objective needs binary entries; use relax() for interior points"));
        }
        Ok(Evaluator::new(self).value(&x.binaries, &x.slacks))
    }

    /// Relaxed objective for entries in `[0, 1]`.
    pub fn relax(&self, x: &DecisionVector) -> Result<f64> {
        self.check_shape(x)?;
        if let Some(q) = x.binaries.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(invalid(format!("relaxed entry {q} outside [0, 1]")));
        }
        Ok(Evaluator::new(self).value(&x.binaries, &x.slacks))
    }

    /// Relaxed objective and its gradient (subgradient 0 at kinks where a modulus vanishes).
    pub fn relax_with_gradient(&self, x: &DecisionVector) -> Result<(f64, DecisionVector)> {
        self.check_shape(x)?;
        let mut g = DecisionVector::zeros(self);
        let v = Evaluator::new(self).value_grad(&x.binaries, &x.slacks, &mut g.binaries, &mut g.slacks);
        Ok((v, g))
    }

    /// Reliability (first) sum alone, for reporting.
    pub fn reliability_term(&self, x: &DecisionVector) -> Result<f64> {
        self.check_shape(x)?;
        Ok(Evaluator::new(self).terms(&x.binaries, &x.slacks).0)
    }
}

fn kind_guard(prob: &DmProblem, want: ProblemKind) -> Result<()> {
    if prob.kind() != want {
        return Err(invalid(format!("problem is {:?}, not {:?}", prob.kind(), want)));
    }
    Ok(())
}

pub fn objective_freespace_1d(x: &DecisionVector, prob: &DmProblem) -> Result<f64> {
    kind_guard(prob, ProblemKind::Freespace1d)?;
    prob.objective(x)
}

pub fn objective_freespace_2d(x: &DecisionVector, prob: &DmProblem) -> Result<f64> {
    kind_guard(prob, ProblemKind::Freespace2d)?;
    prob.objective(x)
}

pub fn objective_channel_perfect(x: &DecisionVector, prob: &DmProblem) -> Result<f64> {
    kind_guard(prob, ProblemKind::ChannelPerfect)?;
    prob.objective(x)
}

pub fn objective_channel_partial(x: &DecisionVector, prob: &DmProblem) -> Result<f64> {
    kind_guard(prob, ProblemKind::ChannelPartial)?;
    prob.objective(x)
}

#[inline]
fn unit_conj(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z.conj() / r
    }
}

/// `out[k] += Re(coeff * j*delta * sum_{n>=k} g[n] w[n])`.
#[inline]
fn suffix_grad(out: &mut [f64], g: &[Complex64], w: &[Complex64], coeff: Complex64, delta: f64) {
    let c = coeff * J * delta;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in (0..g.len()).rev() {
        acc += g[k] * w[k];
        out[k] += (c * acc).re;
    }
}

#[inline]
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable scratch for repeated objective evaluation.
pub struct Evaluator<'a> {
    prob: &'a DmProblem,
    gam: Vec<Vec<Complex64>>,
    scratch: Vec<Complex64>,
    agg: Vec<Complex64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(prob: &'a DmProblem) -> Self {
        let rows = prob.steps * prob.config.n_branches;
        Self {
            prob,
            gam: vec![Vec::with_capacity(prob.config.n_cells); rows],
            scratch: Vec::with_capacity(prob.config.n_cells),
            agg: vec![Complex64::new(0.0, 0.0); prob.config.n_cells],
        }
    }

    fn fill(&mut self, q: &[f64]) {
        let n = self.prob.config.n_cells;
        for (r, g) in self.gam.iter_mut().enumerate() {
            fill_gammas(&self.prob.config, q[r * n..(r + 1) * n].iter().copied(), g);
        }
    }

    pub fn value(&mut self, q: &[f64], s: &[f64]) -> f64 {
        let (a, b) = self.terms(q, s);
        a - b
    }

    /// `(reliability sum, secrecy sum)`; the objective is their difference.
    pub fn terms(&mut self, q: &[f64], s: &[f64]) -> (f64, f64) {
        self.fill(q);
        let p = self.prob;
        let cfg = &p.config;
        let l = p.steps;
        match &p.target {
            Target::Freespace1d { theta0 } => {
                let xi0: Vec<Complex64> = (0..l).map(|u| dot(&self.gam[u], &p.cells0)).collect();
                let rel = (1..l).map(|u| (xi0[u] - xi0[0]).norm()).sum();
                let sec = (0..l)
                    .map(|u| dot(&self.gam[u], &steering_1d(cfg, theta0 + s[u])).norm())
                    .sum();
                (rel, sec)
            }
            Target::Freespace2d { theta0, phi0 } => {
                let m_count = cfg.n_branches;
                let mut xi0 = Vec::with_capacity(l);
                let mut sec = 0.0;
                for u in 0..l {
                    let (d1, d2) = (s[2 * u], s[2 * u + 1]);
                    let lam = p.shifters_for(d1, d2);
                    let (cd, bd) = steering_2d(cfg, theta0 + d1, phi0 + d2);
                    let mut z0 = Complex64::new(0.0, 0.0);
                    let mut zd = Complex64::new(0.0, 0.0);
                    for m in 0..m_count {
                        let g = &self.gam[u * m_count + m];
                        z0 += lam[m] * p.branches0[m] * dot(g, &p.cells0);
                        zd += lam[m] * bd[m] * dot(g, &cd);
                    }
                    xi0.push(z0);
                    sec += zd.norm();
                }
                let rel = (1..l).map(|u| (xi0[u] - xi0[0]).norm()).sum();
                (rel, sec)
            }
            Target::Channel { .. } => {
                let xb: Vec<Complex64> = (0..l).map(|u| dot(&self.gam[u], &p.bob_w)).collect();
                let rel = (1..l).map(|u| (xb[u] - xb[0]).norm()).sum();
                let mut sec = 0.0;
                for e in &p.eve_w {
                    let x0 = dot(&self.gam[0], e);
                    sec += (1..l).map(|u| (dot(&self.gam[u], e) - x0).norm()).sum::<f64>();
                }
                (rel, sec / p.eve_w.len() as f64)
            }
        }
    }

    /// Objective value; writes the gradient into `gq` (binaries) and `gs` (slacks, per degree).
    pub fn value_grad(&mut self, q: &[f64], s: &[f64], gq: &mut [f64], gs: &mut [f64]) -> f64 {
        self.fill(q);
        gq.iter_mut().for_each(|v| *v = 0.0);
        gs.iter_mut().for_each(|v| *v = 0.0);
        let p = self.prob;
        let cfg = &p.config;
        let l = p.steps;
        let n = cfg.n_cells;
        let delta = cfg.phase1() - cfg.phase0();
        let k0 = cfg.wavenumber();
        let deg = std::f64::consts::PI / 180.0;
        match &p.target {
            Target::Freespace1d { theta0 } => {
                let xi0: Vec<Complex64> = (0..l).map(|u| dot(&self.gam[u], &p.cells0)).collect();
                let mut value = 0.0;
                for u in 1..l {
                    let z = xi0[u] - xi0[0];
                    value += z.norm();
                    let c = unit_conj(z);
                    suffix_grad(&mut gq[u * n..(u + 1) * n], &self.gam[u], &p.cells0, c, delta);
                    suffix_grad(&mut gq[..n], &self.gam[0], &p.cells0, -c, delta);
                }
                for u in 0..l {
                    let th = theta0 + s[u];
                    let a = steering_1d(cfg, th);
                    let z = dot(&self.gam[u], &a);
                    value -= z.norm();
                    let c = -unit_conj(z);
                    suffix_grad(&mut gq[u * n..(u + 1) * n], &self.gam[u], &a, c, delta);
                    // d a_n / d theta = a_n * j n k0 p (-sin theta)
                    let psi = -k0 * cfg.cell_period_m * th.to_radians().sin();
                    let dz: Complex64 = (0..n).map(|k| self.gam[u][k] * a[k] * J * (k as f64 * psi)).sum();
                    gs[u] = (c * dz).re * deg;
                }
                value
            }
            Target::Freespace2d { theta0, phi0 } => {
                let m_count = cfg.n_branches;
                let w = n * m_count;
                let dd = cfg.branch_spacing();
                let pp = cfg.cell_period_m;
                let mut xi0 = Vec::with_capacity(l);
                let mut lams = Vec::with_capacity(l);
                let mut value = 0.0;
                for u in 0..l {
                    let (d1, d2) = (s[2 * u], s[2 * u + 1]);
                    let lam = p.shifters_for(d1, d2);
                    let (th, ph) = (theta0 + d1, phi0 + d2);
                    let (cd, bd) = steering_2d(cfg, th, ph);
                    let (st, ct) = th.to_radians().sin_cos();
                    let (sp, cp) = ph.to_radians().sin_cos();
                    let mut zd = Complex64::new(0.0, 0.0);
                    let mut dth = Complex64::new(0.0, 0.0);
                    let mut dph = Complex64::new(0.0, 0.0);
                    let mut z0 = Complex64::new(0.0, 0.0);
                    for m in 0..m_count {
                        let g = &self.gam[u * m_count + m];
                        let cm = lam[m] * bd[m];
                        z0 += lam[m] * p.branches0[m] * dot(g, &p.cells0);
                        for k in 0..n {
                            let t = cm * g[k] * cd[k];
                            zd += t;
                            let (kf, mf) = (k as f64, m as f64);
                            dth += t * J * (kf * k0 * pp * ct * sp + mf * k0 * dd * ct * cp);
                            dph += t * J * (kf * k0 * pp * st * cp - mf * k0 * dd * st * sp);
                        }
                    }
                    value -= zd.norm();
                    let c = -unit_conj(zd);
                    for m in 0..m_count {
                        let off = u * w + m * n;
                        suffix_grad(&mut gq[off..off + n], &self.gam[u * m_count + m], &cd, c * lam[m] * bd[m], delta);
                    }
                    gs[2 * u] = (c * dth).re * deg;
                    gs[2 * u + 1] = (c * dph).re * deg;
                    xi0.push(z0);
                    lams.push(lam);
                }
                for u in 1..l {
                    let z = xi0[u] - xi0[0];
                    value += z.norm();
                    let c = unit_conj(z);
                    for m in 0..m_count {
                        let off = u * w + m * n;
                        let cu = c * lams[u][m] * p.branches0[m];
                        suffix_grad(&mut gq[off..off + n], &self.gam[u * m_count + m], &p.cells0, cu, delta);
                        let c0 = -c * lams[0][m] * p.branches0[m];
                        suffix_grad(&mut gq[m * n..(m + 1) * n], &self.gam[m], &p.cells0, c0, delta);
                    }
                }
                value
            }
            Target::Channel { .. } => {
                let xb: Vec<Complex64> = (0..l).map(|u| dot(&self.gam[u], &p.bob_w)).collect();
                let mut value = 0.0;
                for u in 1..l {
                    let z = xb[u] - xb[0];
                    value += z.norm();
                    let c = unit_conj(z);
                    suffix_grad(&mut gq[u * n..(u + 1) * n], &self.gam[u], &p.bob_w, c, delta);
                    suffix_grad(&mut gq[..n], &self.gam[0], &p.bob_w, -c, delta);
                }
                let scale = 1.0 / p.eve_w.len() as f64;
                let zero = Complex64::new(0.0, 0.0);
                let mut agg0 = vec![zero; n];
                for u in 1..l {
                    self.agg.iter_mut().for_each(|v| *v = zero);
                    for e in &p.eve_w {
                        let z = dot(&self.gam[u], e) - dot(&self.gam[0], e);
                        value -= z.norm() * scale;
                        let c = -unit_conj(z) * scale;
                        for k in 0..n {
                            let t = c * e[k];
                            self.agg[k] += t;
                            agg0[k] -= t;
                        }
                    }
                    self.scratch.clear();
                    self.scratch.extend_from_slice(&self.agg);
                    suffix_grad(&mut gq[u * n..(u + 1) * n], &self.gam[u], &self.scratch, Complex64::new(1.0, 0.0), delta);
                }
                suffix_grad(&mut gq[..n], &self.gam[0], &agg0, Complex64::new(1.0, 0.0), delta);
                value
            }
        }
    }
}

/// Settings for [`verify_dm_constraints`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Harmonics `1 <= |nu| <= max_harmonic` are checked.
    pub max_harmonic: i64,
    /// Angles with `|theta - theta0| >= exclusion_deg` form the undesired set.
    pub exclusion_deg: f64,
    /// Grid for beam-peak and undesired-angle checks; `None` uses the default grid
    /// (0.1 deg in 1D, 1 deg in 2D).
    pub grid: Option<AngleGrid>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { max_harmonic: 10, exclusion_deg: 10.0, grid: None }
    }
}

/// Outcome of the three directional-modulation checks. All ratios in dB
/// relative to the local fundamental `|W(0, .)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmReport {
    /// (a) worst harmonic-to-fundamental ratio at the desired direction (or at Bob).
    pub target_harmonic_db: f64,
    /// (b) per-step `|argmax |Xi^u| - theta0|` in degrees (angular distance in 2D). Empty for channel kinds.
    pub peak_deviation_deg: Vec<f64>,
    /// (c) min over undesired angles (or Eve realizations) of the worst harmonic ratio.
    pub undesired_min_db: f64,
    /// Angle (or realization index) where (c) is attained.
    pub undesired_argmin: f64,
    /// Fraction of undesired points whose worst harmonic ratio is at least `-5` dB.
    pub undesired_fraction_within_5db: f64,
    pub undesired_points: usize,
}

/// `20 log10(num/den)`, +300 dB when only the denominator vanishes.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= f64::MIN_POSITIVE {
        if num <= f64::MIN_POSITIVE {
            DB_FLOOR
        } else {
            -DB_FLOOR
        }
    } else {
        array::magnitude_db(num, den)
    }
}

fn worst_harmonic_db(steps: &[Complex64], max_harmonic: i64) -> f64 {
    let w0 = harmonic_from_steps(steps, 0).norm();
    let worst = (1..=max_harmonic)
        .flat_map(|k| [k, -k])
        .map(|nu| harmonic_from_steps(steps, nu).norm())
        .fold(0.0, f64::max);
    ratio_db(worst, w0)
}

fn great_circle_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (t1, p1) = (a.0.to_radians(), a.1.to_radians());
    let (t2, p2) = (b.0.to_radians(), b.1.to_radians());
    let c = t1.cos() * t2.cos() + t1.sin() * t2.sin() * (p1 - p2).cos();
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Checks a schedule against the directional-modulation requirements:
/// no harmonics towards the receiver, beam peaks at the receiver, harmonics
/// present elsewhere. `slacks` select the 2D shifter values (ignored otherwise).
pub fn verify_dm_constraints(
    schedule: &CodingSchedule,
    prob: &DmProblem,
    slacks: &[f64],
    opts: &VerifyOptions,
) -> Result<DmReport> {
    schedule.check_against(prob.config())?;
    if schedule.steps() != prob.steps() {
        return Err(Error::DimensionMismatch("schedule steps differ from problem".into()));
    }
    let cfg = prob.config();
    let vmax = opts.max_harmonic.max(1);
    let mut far = Vec::new();
    let (target_db, peaks) = match prob.target() {
        Target::Freespace1d { theta0 } => {
            let grid = match &opts.grid {
                Some(AngleGrid::Theta(v)) => v.clone(),
                Some(_) => return Err(invalid("1D verification needs a theta grid")),
                None => array::uniform_points(0.0, 180.0, 0.1)?,
            };
            let at = |th: f64| array::step_factors_1d(schedule, th, cfg);
            let target_db = worst_harmonic_db(&at(*theta0)?, vmax);
            let mut best = vec![(f64::NEG_INFINITY, 0.0); schedule.steps()];
            for &th in &grid {
                let xis = at(th)?;
                for (u, xi) in xis.iter().enumerate() {
                    if xi.norm() > best[u].0 {
                        best[u] = (xi.norm(), th);
                    }
                }
                if (th - theta0).abs() >= opts.exclusion_deg {
                    far.push((th, worst_harmonic_db(&xis, vmax)));
                }
            }
            (target_db, best.iter().map(|b| (b.1 - theta0).abs()).collect())
        }
        Target::Freespace2d { theta0, phi0 } => {
            let table = prob.shifter_table(slacks);
            let grid = match &opts.grid {
                Some(AngleGrid::ThetaPhi(v)) => v.clone(),
                Some(_) => return Err(invalid("2D verification needs a (theta, phi) grid")),
                None => match AngleGrid::default_2d(1.0) {
                    AngleGrid::ThetaPhi(v) => v,
                    AngleGrid::Theta(_) => unreachable!(),
                },
            };
            let at = |th: f64, ph: f64| array::step_factors_2d(schedule, th, ph, &table, cfg);
            let target_db = worst_harmonic_db(&at(*theta0, *phi0)?, vmax);
            let mut best = vec![(f64::NEG_INFINITY, (0.0, 0.0)); schedule.steps()];
            for &(th, ph) in &grid {
                let xis = at(th, ph)?;
                for (u, xi) in xis.iter().enumerate() {
                    if xi.norm() > best[u].0 {
                        best[u] = (xi.norm(), (th, ph));
                    }
                }
                if great_circle_deg((th, ph), (*theta0, *phi0)) >= opts.exclusion_deg {
                    far.push((th, worst_harmonic_db(&xis, vmax)));
                }
            }
            (target_db, best.iter().map(|b| great_circle_deg(b.1, (*theta0, *phi0))).collect())
        }
        Target::Channel { .. } => {
            let target_db = worst_harmonic_db(&array::step_factors_weighted(schedule, &prob.bob_w, cfg)?, vmax);
            for (i, e) in prob.eve_w.iter().enumerate() {
                far.push((i as f64, worst_harmonic_db(&array::step_factors_weighted(schedule, e, cfg)?, vmax)));
            }
            (target_db, Vec::new())
        }
    };
    let (undesired_argmin, undesired_min_db) = far
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((f64::NAN, f64::NAN));
    let within = far.iter().filter(|f| f.1 >= -5.0).count();
    Ok(DmReport {
        target_harmonic_db: target_db,
        peak_deviation_deg: peaks,
        undesired_min_db,
        undesired_argmin,
        undesired_fraction_within_5db: if far.is_empty() { 0.0 } else { within as f64 / far.len() as f64 },
        undesired_points: far.len(),
    })
}
