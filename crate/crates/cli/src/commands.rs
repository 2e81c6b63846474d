//! Subcommand implementations. Each command computes every output in memory
//! and hands back a file set; nothing touches the disk until all work succeeded.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dmlab_core::array::{pattern_sweep, AngleGrid, CodingSchedule, Direction, ShifterTable};
use dmlab_core::bnb::{exhaustive_oracle, solve, BaselinePolicy, PruningPolicy, SlackMode, SolveReport};
use dmlab_core::link::{ber_sweep_angle, ber_sweep_snr, channel_kernel, freespace_kernel, simulate_kernel};
use dmlab_core::objective::{verify_dm_constraints, DmProblem, DmReport, Target};
use dmlab_core::pruning::{collect_training_data, speed_metric, train_policy, LearnedPolicy, PruningNet, TrainParams};
use dmlab_core::seed::{child_rng, derive_seed};
use dmlab_core::textfmt::sig9;
use serde::Serialize;

use crate::scenario::{schedule_rows, ChannelSource, PolicySpec, Scenario};

/// Named text outputs of one command.
#[derive(Debug, Default)]
pub struct FileSet {
    pub files: Vec<(String, String)>,
}

impl FileSet {
    fn add(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.files.push((name.into(), body.into()));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str())
    }

    /// Writes every file under `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    command: &'a str,
    seed: u64,
    outputs: Vec<String>,
    scenario: &'a Scenario,
}

fn finish(mut files: FileSet, command: &str, sc: &Scenario) -> FileSet {
    let outputs = files.files.iter().map(|(n, _)| n.clone()).collect();
    let m = Manifest { manifest_version: 1, command, seed: sc.seed, outputs, scenario: sc };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    files.add("manifest.json", text);
    files
}

fn load_policy(spec: &PolicySpec) -> Result<Box<dyn PruningPolicy>> {
    Ok(match spec {
        PolicySpec::Baseline => Box::new(BaselinePolicy),
        PolicySpec::Learned(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading model {path}"))?;
            Box::new(LearnedPolicy { net: PruningNet::from_text(&text).with_context(|| format!("in model {path}"))? })
        }
    })
}

fn run_solver(sc: &Scenario, prob: &DmProblem, tag: &str) -> Result<SolveReport> {
    let policy = load_policy(&sc.solver.policy)?;
    let opts = sc.solver.options(derive_seed(sc.seed, tag));
    let rep = solve(prob, policy.as_ref(), &opts)?;
    ensure!(rep.best.is_some(), "solver found no feasible schedule");
    Ok(rep)
}

/// Loads the schedule (inline or from file) or, when none is given, solves for
/// one. The scenario is updated to carry the schedule inline so its manifest
/// replays without solving again.
fn resolve_schedule(sc: &mut Scenario, prob: &DmProblem) -> Result<(CodingSchedule, Vec<f64>)> {
    sc.inline_schedule_file()?;
    if sc.schedule.is_none() {
        let rep = run_solver(sc, prob, "main")?;
        let best = rep.best.expect("checked by run_solver");
        sc.schedule = Some(schedule_rows(&best.schedule));
        sc.schedule_slacks = (!best.slacks.is_empty()).then_some(best.slacks);
    }
    let schedule = sc.schedule()?.expect("schedule inlined");
    let slacks = sc.slacks_for(prob);
    ensure!(slacks.len() == prob.n_slacks(), "schedule_slacks needs {} entries", prob.n_slacks());
    Ok((schedule, slacks))
}

fn shifters(prob: &DmProblem, slacks: &[f64]) -> Option<ShifterTable> {
    matches!(prob.target(), Target::Freespace2d { .. }).then(|| prob.shifter_table(slacks))
}

fn nu_label(nu: i64) -> String {
    if nu < 0 {
        format!("m{}", -nu)
    } else {
        format!("p{nu}")
    }
}

pub fn cmd_pattern(mut sc: Scenario) -> Result<FileSet> {
    sc.inline_schedule_file()?;
    sc.validate()?;
    let prob = sc.problem()?;
    let (schedule, slacks) = resolve_schedule(&mut sc, &prob)?;
    let grid = sc.pattern_grid()?;
    let table = shifters(&prob, &slacks);
    let pats = pattern_sweep(&schedule, sc.pattern.nu_min..=sc.pattern.nu_max, &grid, &sc.array, table.as_ref())?;
    let mut files = FileSet::default();
    for p in pats {
        let mut out = String::new();
        match &p.grid {
            AngleGrid::Theta(ts) => {
                out.push_str("theta_deg,magnitude,magnitude_db\n");
                for (i, t) in ts.iter().enumerate() {
                    writeln!(out, "{},{},{}", sig9(*t), sig9(p.magnitudes[i]), sig9(p.magnitudes_db[i])).unwrap();
                }
            }
            AngleGrid::ThetaPhi(tp) => {
                out.push_str("theta_deg,phi_deg,magnitude,magnitude_db\n");
                for (i, (t, ph)) in tp.iter().enumerate() {
                    writeln!(out, "{},{},{},{}", sig9(*t), sig9(*ph), sig9(p.magnitudes[i]), sig9(p.magnitudes_db[i]))
                        .unwrap();
                }
            }
        }
        files.add(format!("pattern_nu_{}.csv", nu_label(p.nu)), out);
    }
    Ok(finish(files, "pattern", &sc))
}

#[derive(Serialize)]
struct SolveSummary {
    kind: dmlab_core::objective::ProblemKind,
    objective: f64,
    visited_nodes: u64,
    solutions_found: u64,
    limit_hit: bool,
    nonconverged_relaxations: u64,
    policy: String,
    slacks_deg: Vec<f64>,
    oracle: Option<OracleCheck>,
}

#[derive(Serialize)]
struct OracleCheck {
    objective: f64,
    slack_step_deg: f64,
    abs_difference: f64,
    agrees: bool,
}

/// Agreement tolerance between the solver and the exhaustive oracle.
pub const ORACLE_AGREEMENT_TOL: f64 = 1e-6;

fn schedule_text(s: &CodingSchedule) -> String {
    format!("# steps={} branches={} cells={}\n{}", s.steps(), s.branches(), s.cells(), s.to_text())
}

pub fn cmd_solve(mut sc: Scenario) -> Result<FileSet> {
    sc.inline_schedule_file()?;
    sc.validate()?;
    let prob = sc.problem()?;
    let rep = run_solver(&sc, &prob, "main")?;
    let oracle = if sc.solver.exhaustive {
        let step = sc.solver.oracle_slack_step_deg;
        let o = exhaustive_oracle(&prob, SlackMode::Grid { step_deg: step })?;
        let diff = (o.objective - rep.objective).abs();
        Some(OracleCheck { objective: o.objective, slack_step_deg: step, abs_difference: diff, agrees: diff <= ORACLE_AGREEMENT_TOL })
    } else {
        None
    };
    let best = rep.best.clone().expect("checked by run_solver");
    let summary = SolveSummary {
        kind: prob.kind(),
        objective: rep.objective,
        visited_nodes: rep.visited_nodes,
        solutions_found: rep.solutions_found,
        limit_hit: rep.limit_hit,
        nonconverged_relaxations: rep.nonconverged_relaxations,
        policy: rep.policy.clone(),
        slacks_deg: best.slacks.clone(),
        oracle,
    };
    let mut files = FileSet::default();
    files.add("schedule.txt", schedule_text(&best.schedule));
    files.add("solve_report.json", serde_json::to_string_pretty(&summary)? + "\n");
    Ok(finish(files, "solve", &sc))
}

pub fn cmd_ber(mut sc: Scenario) -> Result<FileSet> {
    sc.inline_schedule_file()?;
    sc.validate()?;
    let prob = sc.problem()?;
    let (schedule, slacks) = resolve_schedule(&mut sc, &prob)?;
    let noise_seed = derive_seed(sc.seed, "link");
    let mut files = FileSet::default();
    match prob.target() {
        Target::Channel { bob, .. } => {
            let eves = sc.eve_test_gains("main")?;
            let r = ber_sweep_snr(&schedule, bob, &eves, &sc.ber.snr_grid, &sc.ofdm, &sc.array, noise_seed)?;
            files.add("ber_snr.csv", r.to_csv());
        }
        target => {
            let reference = match *target {
                Target::Freespace1d { theta0 } => Direction { theta: theta0, phi: None },
                Target::Freespace2d { theta0, phi0 } => Direction { theta: theta0, phi: Some(phi0) },
                Target::Channel { .. } => unreachable!(),
            };
            let t = sc.ber.theta;
            let ts = dmlab_core::array::uniform_points(t[0], t[1], t[2])?;
            let grid = match (sc.array.n_branches > 1, sc.ber.phi.or(reference.phi)) {
                (true, Some(phi)) => AngleGrid::ThetaPhi(ts.iter().map(|&t| (t, phi)).collect()),
                (true, None) => bail!("2D BER sweep needs ber.phi"),
                (false, _) => AngleGrid::Theta(ts),
            };
            let table = shifters(&prob, &slacks);
            let dm = ber_sweep_angle(
                &schedule, &grid, sc.ber.eb_n0_db, &sc.ofdm, &sc.array, table.as_ref(), Some(reference), "dm", noise_seed,
            )?;
            files.add("ber_angle_dm.csv", dm.to_csv());
            if let Some(row) = &sc.ber.static_row {
                let fixed = CodingSchedule::repeated(row, schedule.steps(), sc.array.n_branches)?;
                let st = ber_sweep_angle(
                    &fixed, &grid, sc.ber.eb_n0_db, &sc.ofdm, &sc.array, table.as_ref(), Some(reference), "static",
                    noise_seed,
                )?;
                files.add("ber_angle_static.csv", st.to_csv());
            }
        }
    }
    Ok(finish(files, "ber", &sc))
}

#[derive(Serialize)]
struct VerifySummary {
    report: DmReport,
    /// Worst harmonic at least 10 dB below the fundamental at the receiver.
    target_suppressed_10db: bool,
    /// Every undesired point has a harmonic within 5 dB of its fundamental.
    undesired_all_within_5db: bool,
}

pub fn cmd_verify(mut sc: Scenario) -> Result<FileSet> {
    sc.inline_schedule_file()?;
    sc.validate()?;
    let prob = sc.problem()?;
    let (schedule, slacks) = resolve_schedule(&mut sc, &prob)?;
    let report = verify_dm_constraints(&schedule, &prob, &slacks, &sc.verify_options()?)?;
    let summary = VerifySummary {
        target_suppressed_10db: report.target_harmonic_db <= -10.0,
        undesired_all_within_5db: report.undesired_min_db >= -5.0,
        report,
    };
    let mut files = FileSet::default();
    files.add("verify.json", serde_json::to_string_pretty(&summary)? + "\n");
    Ok(finish(files, "verify", &sc))
}

/// Bob's BER for one solved schedule at `ber.eb_n0_db`: through Bob's channel
/// for channel kinds, towards the desired direction otherwise.
fn bob_ber(sc: &Scenario, prob: &DmProblem, rep: &SolveReport, label: &str) -> Result<f64> {
    let best = rep.best.as_ref().context("no schedule")?;
    let kernel = match prob.target() {
        Target::Channel { bob, .. } => channel_kernel(&best.schedule, bob, &sc.array, &sc.ofdm)?,
        Target::Freespace1d { theta0 } => {
            freespace_kernel(&best.schedule, Direction { theta: *theta0, phi: None }, None, &sc.array, &sc.ofdm)?
        }
        Target::Freespace2d { theta0, phi0 } => {
            let t = prob.shifter_table(&best.slacks);
            freespace_kernel(&best.schedule, Direction { theta: *theta0, phi: Some(*phi0) }, Some(&t), &sc.array, &sc.ofdm)?
        }
    };
    let mut rng = child_rng(derive_seed(sc.seed, "link"), &format!("noise/{label}"));
    Ok(simulate_kernel(&kernel, sc.ber.eb_n0_db, &sc.ofdm, &mut rng).ber())
}

#[derive(Serialize)]
struct TrainSummary {
    holdout_accuracy: f64,
    round_losses: Vec<f64>,
    train_examples: usize,
    holdout_examples: usize,
    mean_node_ratio: f64,
    learned_never_more_nodes: bool,
}

/// Training seed is derived from the master seed; `train.params.seed` is overridden.
pub fn train_params(sc: &Scenario) -> TrainParams {
    TrainParams { seed: derive_seed(sc.seed, "train"), ..sc.train.params.clone() }
}

pub fn cmd_train_pruner(mut sc: Scenario) -> Result<FileSet> {
    sc.inline_schedule_file()?;
    sc.validate()?;
    let t = &sc.train;
    ensure!(t.train_instances >= 1 && t.holdout_instances >= 1, "need at least one training and one holdout instance");
    let fixed = |s: &Option<ChannelSource>| matches!(s, Some(ChannelSource::Gains { .. }));
    ensure!(
        !fixed(&sc.problem.bob) && !fixed(&sc.problem.eve),
        "train-pruner draws one CSI per instance, so bob and eve must be channel models"
    );
    let train: Vec<DmProblem> =
        (0..t.train_instances).map(|i| sc.problem_for(&format!("train-{i}"))).collect::<Result<_>>()?;
    let hold: Vec<DmProblem> =
        (0..t.holdout_instances).map(|i| sc.problem_for(&format!("holdout-{i}"))).collect::<Result<_>>()?;

    let opts = sc.solver.options(derive_seed(sc.seed, "train-solve"));
    let (corpus, _) = collect_training_data(&train, &opts, t.round_size)?;
    let outcome = train_policy(&corpus, &train_params(&sc))?;
    let learned = LearnedPolicy { net: outcome.net.clone() };

    let mut table = String::from(
        "instance,baseline_nodes,learned_nodes,node_ratio,baseline_objective,learned_objective,baseline_bob_ber,learned_bob_ber\n",
    );
    let mut ratios = Vec::new();
    let mut never_more = true;
    for (i, prob) in hold.iter().enumerate() {
        let hopts = sc.solver.options(derive_seed(sc.seed, &format!("holdout-solve-{i}")));
        let b = solve(prob, &BaselinePolicy, &hopts)?;
        let l = solve(prob, &learned, &hopts)?;
        let ratio = speed_metric(&b, &l);
        ratios.push(ratio);
        never_more &= l.visited_nodes <= b.visited_nodes;
        let bb = bob_ber(&sc, prob, &b, &format!("holdout-{i}/baseline"))?;
        let lb = match l.best {
            Some(_) => bob_ber(&sc, prob, &l, &format!("holdout-{i}/learned"))?,
            None => f64::NAN,
        };
        writeln!(
            table,
            "{i},{},{},{},{},{},{},{}",
            b.visited_nodes,
            l.visited_nodes,
            sig9(ratio),
            sig9(b.objective),
            sig9(l.objective),
            sig9(bb),
            sig9(lb)
        )
        .unwrap();
    }
    let summary = TrainSummary {
        holdout_accuracy: outcome.holdout_accuracy,
        round_losses: outcome.round_losses.clone(),
        train_examples: outcome.train_examples,
        holdout_examples: outcome.holdout_examples,
        mean_node_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        learned_never_more_nodes: never_more,
    };
    let mut files = FileSet::default();
    files.add("model.txt", outcome.net.to_text());
    files.add("train_eval.csv", table);
    files.add("train_summary.json", serde_json::to_string_pretty(&summary)? + "\n");
    Ok(finish(files, "train-pruner", &sc))
}
