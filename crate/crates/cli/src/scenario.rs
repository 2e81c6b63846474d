//! Scenario files: one JSON document fully determines a run.
//!
//! Every section and field has a default, so `{}` is a valid scenario (the
//! 9-cell, 2-step free-space design towards 88 degrees). The resolved scenario,
//! with defaults applied and schedules inlined, is echoed into each manifest.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dmlab_core::array::{AngleGrid, ArrayConfig, CodingSchedule};
use dmlab_core::bnb::{RelaxOptions, SlackMode, SolveLimits, SolveOptions};
use dmlab_core::channel::{generate_channel, ChannelKind};
use dmlab_core::link::OfdmConfig;
use dmlab_core::objective::{DmProblem, ProblemKind, VerifyOptions};
use dmlab_core::pruning::TrainParams;
use dmlab_core::seed::derive_seed;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub array: ArrayConfig,
    pub problem: ProblemSpec,
    /// Inline schedule: one row of bits per line, 2D steps as blocks of M rows.
    pub schedule: Option<Vec<Vec<u8>>>,
    /// Schedule text file (for example a `solve` output). Inlined on resolution.
    pub schedule_file: Option<String>,
    /// Slacks belonging to `schedule` (2D shifter steering); zeros when absent.
    pub schedule_slacks: Option<Vec<f64>>,
    pub solver: SolverSpec,
    pub pattern: PatternSpec,
    pub ofdm: OfdmConfig,
    pub ber: BerSpec,
    pub verify: VerifySpec,
    pub train: TrainSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            array: ArrayConfig::default(),
            problem: ProblemSpec::default(),
            schedule: None,
            schedule_file: None,
            schedule_slacks: None,
            solver: SolverSpec::default(),
            pattern: PatternSpec::default(),
            ofdm: OfdmConfig::default(),
            ber: BerSpec::default(),
            verify: VerifySpec::default(),
            train: TrainSpec::default(),
        }
    }
}

/// Where a channel vector comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSource {
    /// Explicit gains as `[re, im]` pairs.
    Gains { gains: Vec<[f64; 2]> },
    /// Seeded draw from a channel model.
    Model(ChannelKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub steps: usize,
    pub theta0: f64,
    pub phi0: Option<f64>,
    /// One `[lower, upper]` pair for every slack, or one per slack.
    pub slack_bounds: Vec<[f64; 2]>,
    pub bob: Option<ChannelSource>,
    pub eve: Option<ChannelSource>,
    /// Eve realizations averaged by the partial-CSI objective.
    pub eve_realizations: usize,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Freespace1d,
            steps: 2,
            theta0: 88.0,
            phi0: None,
            slack_bounds: vec![[-10.0, 10.0]],
            bob: None,
            eve: None,
            eve_realizations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    Baseline,
    /// Path to a model file written by `train-pruner`.
    Learned(String),
}

impl PolicySpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "baseline" => Ok(Self::Baseline),
            Some(("learned", path)) if !path.is_empty() => Ok(Self::Learned(path.to_string())),
            _ => bail!("policy must be `baseline` or `learned:<model-path>`, got {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub relax: RelaxOptions,
    pub slack_mode: SlackMode,
    pub limits: SolveLimits,
    pub policy: PolicySpec,
    /// Also run the exhaustive oracle in `solve` (set by `--exhaustive`).
    pub exhaustive: bool,
    /// Slack grid for the exhaustive oracle.
    pub oracle_slack_step_deg: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            relax: RelaxOptions::default(),
            slack_mode: SlackMode::Continuous,
            limits: SolveLimits { max_nodes: Some(20_000), max_time: None },
            policy: PolicySpec::Baseline,
            exhaustive: false,
            oracle_slack_step_deg: 0.5,
        }
    }
}

impl SolverSpec {
    pub fn options(&self, seed: u64) -> SolveOptions {
        SolveOptions {
            relax: self.relax.clone(),
            slack_mode: self.slack_mode,
            limits: self.limits.clone(),
            record_trace: false,
            seed: derive_seed(seed, "solver"),
        }
    }
}

/// `[start, stop, step]` in degrees.
pub type Range3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSpec {
    pub nu_min: i64,
    pub nu_max: i64,
    pub theta: Range3,
    /// Azimuth grid for 2D arrays; `phi = 360` is excluded.
    pub phi: Range3,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self { nu_min: -3, nu_max: 3, theta: [0.0, 180.0, 0.1], phi: [0.0, 360.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSpec {
    /// Eb/N0 of angle sweeps.
    pub eb_n0_db: f64,
    pub theta: Range3,
    pub phi: Option<f64>,
    /// Also sweep this static row (repeated every step) as the no-DM baseline.
    pub static_row: Option<Vec<u8>>,
    pub snr_grid: Vec<f64>,
    /// Eve channels drawn for the SNR sweep (true channels, not the design realizations).
    pub eve_test_realizations: usize,
}

impl Default for BerSpec {
    fn default() -> Self {
        Self {
            eb_n0_db: 15.0,
            theta: [0.0, 180.0, 1.0],
            phi: None,
            static_row: None,
            snr_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            eve_test_realizations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub max_harmonic: i64,
    pub exclusion_deg: f64,
    pub theta_step: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { max_harmonic: 10, exclusion_deg: 10.0, theta_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub train_instances: usize,
    pub holdout_instances: usize,
    pub round_size: usize,
    pub params: TrainParams,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self { train_instances: 50, holdout_instances: 10, round_size: 10, params: TrainParams::default() }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("scenario is not valid JSON")?;
        // A manifest carries the resolved scenario under "scenario".
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("manifest_version") => {
                m.remove("scenario").context("manifest has no scenario")?
            }
            v => v,
        };
        let sc: Scenario = serde_json::from_value(value).context("invalid scenario")?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        let p = &self.problem;
        ensure!(p.steps >= 2, "problem.steps must be at least 2");
        let two_d = self.array.n_branches > 1;
        match p.kind {
            ProblemKind::Freespace1d => {
                ensure!(!two_d, "freespace-1d needs array.n_branches = 1");
                ensure!((0.0..=180.0).contains(&p.theta0), "theta0 must lie in [0, 180]");
            }
            ProblemKind::Freespace2d => {
                ensure!(p.phi0.is_some(), "freespace-2d needs problem.phi0");
                ensure!((0.0..=90.0).contains(&p.theta0), "theta0 must lie in [0, 90] for the 2D array");
            }
            ProblemKind::ChannelPerfect | ProblemKind::ChannelPartial => {
                ensure!(!two_d, "channel problems use the 1D antenna (n_branches = 1)");
                ensure!(p.bob.is_some(), "channel problem needs problem.bob CSI");
                ensure!(p.eve.is_some(), "channel problem needs problem.eve CSI");
                if p.kind == ProblemKind::ChannelPartial {
                    ensure!(p.eve_realizations >= 1, "partial CSI needs eve_realizations >= 1");
                }
            }
        }
        for src in [&p.bob, &p.eve].into_iter().flatten() {
            if let ChannelSource::Gains { gains } = src {
                ensure!(
                    gains.len() == self.array.n_cells,
                    "CSI has {} gains, array has {} cells",
                    gains.len(),
                    self.array.n_cells
                );
            }
        }
        for b in &p.slack_bounds {
            ensure!(b[0] <= b[1], "slack bounds need lower <= upper");
        }
        ensure!(
            self.schedule.is_none() || self.schedule_file.is_none(),
            "give either schedule or schedule_file, not both"
        );
        if let Some(rows) = &self.schedule {
            self.schedule_from_rows(rows)?;
        }
        ensure!(self.pattern.nu_min <= self.pattern.nu_max, "pattern.nu_min > pattern.nu_max");
        for r in [self.pattern.theta, self.pattern.phi, self.ber.theta] {
            ensure!(r[2] > 0.0 && r[0] <= r[1], "angle range {r:?} needs start <= stop and step > 0");
        }
        self.ofdm.validate()?;
        ensure!(self.verify.theta_step > 0.0, "verify.theta_step must be positive");
        ensure!(self.solver.oracle_slack_step_deg > 0.0, "oracle slack step must be positive");
        if let Some(row) = &self.ber.static_row {
            ensure!(row.len() == self.array.cells_per_step(), "ber.static_row must have M*N entries");
        }
        ensure!(self.train.round_size >= 1, "train.round_size must be positive");
        Ok(())
    }

    pub fn schedule_from_rows(&self, rows: &[Vec<u8>]) -> Result<CodingSchedule> {
        let m = self.array.n_branches;
        ensure!(!rows.is_empty() && rows.len() % m == 0, "schedule needs a multiple of {m} rows");
        let cells = rows[0].len();
        ensure!(cells == self.array.n_cells, "schedule rows have {cells} cells, array has {}", self.array.n_cells);
        let s = CodingSchedule::new(rows.len() / m, m, cells, rows.concat())?;
        ensure!(s.steps() == self.problem.steps, "schedule has {} steps, problem has {}", s.steps(), self.problem.steps);
        Ok(s)
    }

    /// Reads `schedule_file` into the inline `schedule` field.
    pub fn inline_schedule_file(&mut self) -> Result<()> {
        if let Some(path) = self.schedule_file.take() {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading schedule file {path}"))?;
            let s = CodingSchedule::parse_text(&text, self.array.n_branches)
                .with_context(|| format!("parsing schedule file {path}"))?;
            self.schedule = Some(schedule_rows(&s));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Option<CodingSchedule>> {
        self.schedule.as_ref().map(|r| self.schedule_from_rows(r)).transpose()
    }

    pub fn slacks_for(&self, prob: &DmProblem) -> Vec<f64> {
        self.schedule_slacks.clone().unwrap_or_else(|| vec![0.0; prob.n_slacks()])
    }

    fn channel(&self, src: &ChannelSource, label: &str) -> Result<Vec<Complex64>> {
        Ok(match src {
            ChannelSource::Gains { gains } => gains.iter().map(|g| Complex64::new(g[0], g[1])).collect(),
            ChannelSource::Model(kind) => generate_channel(kind, &self.array, derive_seed(self.seed, label))?.gains,
        })
    }

    /// Bob's channel for instance `tag` (`"main"` for the scenario's own problem).
    pub fn bob_gains(&self, tag: &str) -> Result<Vec<Complex64>> {
        let src = self.problem.bob.as_ref().context("no Bob CSI")?;
        self.channel(src, &format!("channel/{tag}/bob-0"))
    }

    /// Eve realizations used by the objective (one for perfect CSI).
    pub fn eve_design_gains(&self, tag: &str) -> Result<Vec<Vec<Complex64>>> {
        let src = self.problem.eve.as_ref().context("no Eve CSI")?;
        let n = match self.problem.kind {
            ProblemKind::ChannelPartial => self.problem.eve_realizations,
            _ => 1,
        };
        (0..n).map(|i| self.channel(src, &format!("channel/{tag}/eve-design-{i}"))).collect()
    }

    /// Eve channels used for link simulation. Perfect CSI reuses the design
    /// channel; partial CSI draws fresh realizations from the same model.
    pub fn eve_test_gains(&self, tag: &str) -> Result<Vec<Vec<Complex64>>> {
        match self.problem.kind {
            ProblemKind::ChannelPerfect => self.eve_design_gains(tag),
            _ => {
                let src = self.problem.eve.as_ref().context("no Eve CSI")?;
                (0..self.ber.eve_test_realizations)
                    .map(|i| self.channel(src, &format!("channel/{tag}/eve-{i}")))
                    .collect()
            }
        }
    }

    pub fn problem_for(&self, tag: &str) -> Result<DmProblem> {
        let p = &self.problem;
        let prob = match p.kind {
            ProblemKind::Freespace1d => DmProblem::freespace_1d(self.array.clone(), p.steps, p.theta0)?,
            ProblemKind::Freespace2d => {
                DmProblem::freespace_2d(self.array.clone(), p.steps, p.theta0, p.phi0.context("phi0")?)?
            }
            ProblemKind::ChannelPerfect => {
                let eve = self.eve_design_gains(tag)?.remove(0);
                DmProblem::channel_perfect(self.array.clone(), p.steps, self.bob_gains(tag)?, eve)?
            }
            ProblemKind::ChannelPartial => {
                DmProblem::channel_partial(self.array.clone(), p.steps, self.bob_gains(tag)?, self.eve_design_gains(tag)?)?
            }
        };
        if prob.n_slacks() == 0 {
            return Ok(prob);
        }
        let bounds: Vec<(f64, f64)> = p.slack_bounds.iter().map(|b| (b[0], b[1])).collect();
        Ok(prob.with_slack_bounds(&bounds)?)
    }

    pub fn problem(&self) -> Result<DmProblem> {
        self.problem_for("main")
    }

    pub fn pattern_grid(&self) -> Result<AngleGrid> {
        let t = self.pattern.theta;
        if self.array.n_branches == 1 {
            return Ok(AngleGrid::theta_range(t[0], t[1], t[2])?);
        }
        let ph = self.pattern.phi;
        let ts = dmlab_core::array::uniform_points(t[0], t[1], t[2])?;
        let ps: Vec<f64> = dmlab_core::array::uniform_points(ph[0], ph[1], ph[2])?
            .into_iter()
            .filter(|&p| p < 360.0)
            .collect();
        Ok(AngleGrid::ThetaPhi(ts.iter().flat_map(|&t| ps.iter().map(move |&p| (t, p))).collect()))
    }

    pub fn verify_options(&self) -> Result<VerifyOptions> {
        let grid = if self.array.n_branches == 1 {
            Some(AngleGrid::theta_range(0.0, 180.0, self.verify.theta_step)?)
        } else {
            None
        };
        Ok(VerifyOptions { max_harmonic: self.verify.max_harmonic, exclusion_deg: self.verify.exclusion_deg, grid })
    }
}

pub fn schedule_rows(s: &CodingSchedule) -> Vec<Vec<u8>> {
    (0..s.steps()).flat_map(|u| (0..s.branches()).map(move |m| s.row(u, m).to_vec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        s.validate().unwrap();
        assert_eq!(s.array.phase0_deg, -18.0);
        assert_eq!(s.array.phase1_deg, 15.0);
    }

    #[test]
    fn resolved_round_trip() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(Scenario::from_json(r#"{"array": {"n_cell": 3}}"#).is_err());
    }

    #[test]
    fn channel_without_csi_rejected() {
        let s = Scenario::from_json(r#"{"problem": {"kind": "channel-perfect"}}"#).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn channel_sources_parse() {
        let s = Scenario::from_json(
            r#"{"array": {"n_cells": 2}, "problem": {"kind": "channel-partial",
                "bob": {"gains": [[1, 0], [0, 1]]},
                "eve": {"kind": "doubly-correlated", "psi_t": {"exponential": {"rho": 0.5}}},
                "eve_realizations": 3}}"#,
        )
        .unwrap();
        s.validate().unwrap();
        let p = s.problem().unwrap();
        assert_eq!(p.kind(), ProblemKind::ChannelPartial);
        assert_eq!(s.eve_design_gains("main").unwrap().len(), 3);
    }

    #[test]
    fn policy_flag_parsing() {
        assert_eq!(PolicySpec::parse("baseline").unwrap(), PolicySpec::Baseline);
        assert_eq!(PolicySpec::parse("learned:m.txt").unwrap(), PolicySpec::Learned("m.txt".into()));
        assert!(PolicySpec::parse("learned:").is_err());
        assert!(PolicySpec::parse("greedy").is_err());
    }
}
