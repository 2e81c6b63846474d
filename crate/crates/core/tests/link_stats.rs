mod common;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use common::random_unit_gaussian;
use dmlab_core::array::{step_factors_weighted, AngleGrid, time_domain_pattern_1d, ArrayConfig, CodingSchedule, Direction};
use dmlab_core::bnb::{solve, BaselinePolicy, SolveOptions};
use dmlab_core::channel::{generate_channel, ChannelKind, Correlation};
use dmlab_core::link::{
    ber_sweep_angle, ber_sweep_snr, channel_kernel, freespace_kernel, qpsk_theory_ber, received_subcarriers_channel,
    received_subcarriers_freespace, simulate_kernel, HarmonicKernel, OfdmConfig,
};
use dmlab_core::objective::{verify_dm_constraints, DmProblem, VerifyOptions};
use dmlab_core::seed::{child_rng, derive_seed};
use dmlab_core::Complex64;
use gauss_quad::legendre::GaussLegendre;
use rand::Rng;

/// Directional-modulation pair for the 9-cell antenna steered to 88 deg.
fn target_pair() -> CodingSchedule {
    CodingSchedule::from_rows(&[vec![1, 1, 1, 0, 0, 0, 0, 0, 0], vec![0, 0, 1, 1, 1, 1, 1, 1, 0]]).unwrap()
}

/// A second pair that also keeps every harmonic at 88 deg 10 dB under the
/// fundamental, with a shallower notch.
fn shallow_pair() -> CodingSchedule {
    CodingSchedule::from_rows(&[vec![0, 0, 1, 1, 1, 1, 1, 1, 0], vec![1, 1, 0, 0, 0, 0, 0, 0, 1]]).unwrap()
}

fn random_qpsk(rng: &mut impl Rng, k: usize) -> Vec<Complex64> {
    let a = FRAC_1_SQRT_2;
    (0..k).map(|_| Complex64::new(if rng.random() { a } else { -a }, if rng.random() { a } else { -a })).collect()
}

/// Subcarrier outputs from the sampled time-domain pattern `Xi(theta, t) S(t)`,
/// correlated against each tone over one modulation period.
fn time_domain_subcarriers(sched: &CodingSchedule, theta: f64, s: &[Complex64], cfg: &ArrayConfig) -> Vec<Complex64> {
    let k = s.len();
    let tp = cfg.mod_period();
    let quad = GaussLegendre::new((8 * k).try_into().unwrap());
    let l = sched.steps();
    let mut points = Vec::new();
    for u in 0..l {
        let (lo, hi) = (u as f64 * tp / l as f64, (u + 1) as f64 * tp / l as f64);
        for (x, w) in quad.iter() {
            let t = 0.5 * ((hi - lo) * x + hi + lo);
            let st: Complex64 =
                s.iter().enumerate().map(|(kk, sk)| sk * Complex64::from_polar(1.0, 2.0 * PI * kk as f64 * t / tp)).sum();
            points.push((t, 0.5 * (hi - lo) * w, time_domain_pattern_1d(sched, theta, t, st, cfg).unwrap()));
        }
    }
    (0..k)
        .map(|x| {
            points.iter().map(|&(t, w, r)| w * r * Complex64::from_polar(1.0, -2.0 * PI * x as f64 * t / tp)).sum::<Complex64>()
                / tp
        })
        .collect()
}

/// Noiseless error-vector magnitude (power ratio) after scaling by the
/// fundamental weight.
fn evm(y: &[Complex64], s: &[Complex64], w0: Complex64) -> f64 {
    let err: f64 = y.iter().zip(s).map(|(yx, sx)| (yx / w0 - sx).norm_sqr()).sum();
    err / s.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

#[test]
fn evm_small_at_target_and_large_away() {
    let cfg = ArrayConfig::default();
    let sched = target_pair();
    let mut rng = child_rng(101, "evm");
    let s = random_qpsk(&mut rng, 64);
    let ofdm = OfdmConfig::default();
    let at = |theta: f64| {
        let y = time_domain_subcarriers(&sched, theta, &s, &cfg);
        let w0 = freespace_kernel(&sched, Direction { theta, phi: None }, None, &cfg, &ofdm).unwrap().fundamental();
        evm(&y, &s, w0)
    };
    let (near, far) = (at(88.0), at(50.0));
    assert!(near <= 0.01, "EVM at 88 deg {near}");
    assert!(far >= 0.30, "EVM at 50 deg {far}");
}

#[test]
fn dm_satisfying_schedule_has_low_evm_at_target() {
    let cfg = ArrayConfig::default();
    let prob = DmProblem::freespace_1d(cfg.clone(), 2, 88.0).unwrap();
    let ofdm = OfdmConfig::default();
    let mut rng = child_rng(103, "evm-dm");
    let s = random_qpsk(&mut rng, 64);
    let dir = Direction { theta: 88.0, phi: None };
    for sched in [target_pair(), shallow_pair()] {
        let report = verify_dm_constraints(&sched, &prob, &[0.0, 0.0], &VerifyOptions::default()).unwrap();
        assert!(report.target_harmonic_db <= -10.0);
        let y = received_subcarriers_freespace(&sched, dir, None, &s, &cfg, &ofdm).unwrap();
        let w0 = freespace_kernel(&sched, dir, None, &cfg, &ofdm).unwrap().fundamental();
        let e = evm(&y, &s, w0);
        assert!(
            10.0 * e.log10() <= -20.0,
            "EVM {:.2} dB with worst harmonic {:.2} dB",
            10.0 * e.log10(),
            report.target_harmonic_db
        );
    }
}

#[test]
fn steering_gains_reduce_to_free_space() {
    let cfg = ArrayConfig { leakage_np_per_m: 1.5, ..ArrayConfig::default() };
    let ofdm = OfdmConfig::default();
    let mut rng = child_rng(107, "los");
    for _ in 0..5 {
        let theta = rng.random_range(0.0..180.0);
        let sched = common::random_modulated(&mut rng, 4, 9);
        let gains = generate_channel(&ChannelKind::LineOfSight { theta_deg: theta }, &cfg, 0).unwrap().gains;
        let s = random_qpsk(&mut rng, 64);
        let a = received_subcarriers_channel(&sched, &gains, &s, &cfg, &ofdm).unwrap();
        let b = received_subcarriers_freespace(&sched, Direction { theta, phi: None }, None, &s, &cfg, &ofdm).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-12);
        }
    }
}

#[test]
fn static_schedule_has_no_leakage_through_any_channel() {
    let cfg = ArrayConfig::default();
    let ofdm = OfdmConfig::default();
    let mut rng = child_rng(109, "static-channel");
    let sched = CodingSchedule::repeated(&[1, 0, 0, 1, 0, 1, 1, 0, 0], 3, 1).unwrap();
    for _ in 0..10 {
        let h = random_unit_gaussian(&mut rng, 9);
        // Exact cancellation up to rounding in the harmonic sums.
        assert!(channel_kernel(&sched, &h, &cfg, &ofdm).unwrap().interference_ratio() <= 1e-24);
    }
}

/// Total harmonic power off the fundamental, `sum_{nu != 0} |W(nu)|^2`, from
/// the mean power of the piecewise-constant waveform.
fn off_fundamental_power(steps: &[Complex64]) -> (f64, f64) {
    let mean_power = steps.iter().map(|x| x.norm_sqr()).sum::<f64>() / steps.len() as f64;
    let w0 = (steps.iter().sum::<Complex64>() / steps.len() as f64).norm_sqr();
    (mean_power - w0, w0)
}

#[test]
fn solved_channel_schedule_separates_bob_and_eve() {
    let cfg = ArrayConfig { n_cells: 10, ..ArrayConfig::default() };
    let mut rng = child_rng(113, "solved-channel");
    let bob = random_unit_gaussian(&mut rng, 10);
    let eve = random_unit_gaussian(&mut rng, 10);
    let prob = DmProblem::channel_perfect(cfg.clone(), 2, bob.clone(), eve.clone()).unwrap();
    let rep = solve(&prob, &BaselinePolicy, &SolveOptions::default()).unwrap();
    let sched = rep.best.unwrap().schedule;
    let (ib, wb) = off_fundamental_power(&step_factors_weighted(&sched, &bob, &cfg).unwrap());
    let (ie, we) = off_fundamental_power(&step_factors_weighted(&sched, &eve, &cfg).unwrap());
    assert!(ib <= 1e-4 * wb, "Bob interference {ib} vs fundamental {wb}");
    assert!(ie >= 0.1 * we, "Eve interference {ie} vs fundamental {we}");
}

#[test]
fn correlated_channel_covariance_matches() {
    let cfg = ArrayConfig { n_cells: 8, ..ArrayConfig::default() };
    let kind = ChannelKind::DoublyCorrelated { psi_t: Correlation::Exponential { rho: 0.5 } };
    let draws = 100_000;
    let mut cov = vec![Complex64::new(0.0, 0.0); 64];
    for i in 0..draws {
        let h = generate_channel(&kind, &cfg, derive_seed(127, &format!("draw-{i}"))).unwrap().gains;
        for a in 0..8 {
            for b in 0..8 {
                cov[a * 8 + b] += h[a] * h[b].conj();
            }
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..8usize {
        for b in 0..8usize {
            let want = 0.5f64.powi(a.abs_diff(b) as i32);
            let got = cov[a * 8 + b] / draws as f64;
            num += (got - want).norm_sqr();
            den += want * want;
            if a == b {
                assert!((got.re - 1.0).abs() <= 0.01, "entry {a} power {}", got.re);
            }
        }
    }
    assert!((num / den).sqrt() <= 0.02, "Frobenius-relative error {}", (num / den).sqrt());
}

fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn independent_seeds_agree_within_binomial_spread() {
    let cfg = ArrayConfig::default();
    let ofdm = OfdmConfig::default().with_min_bits(200_000);
    let kernel = freespace_kernel(&target_pair(), Direction { theta: 70.0, phi: None }, None, &cfg, &ofdm).unwrap();
    let runs: Vec<_> = (0..5).map(|i| simulate_kernel(&kernel, 8.0, &ofdm, &mut child_rng(131, &format!("run-{i}")))).collect();
    let bits: u64 = runs.iter().map(|r| r.bits).sum();
    let p = runs.iter().map(|r| r.errors).sum::<u64>() as f64 / bits as f64;
    assert!(p > 0.0);
    for r in &runs {
        assert!((r.ber() - p).abs() <= 3.0 * binomial_sigma(p, r.bits), "{} vs pooled {p}", r.ber());
    }
}

#[test]
fn static_peak_and_dm_target_have_comparable_ber() {
    let cfg = ArrayConfig::default();
    let ofdm = OfdmConfig::default().with_min_bits(500_000);
    let static_sched = CodingSchedule::repeated(&[0; 9], 2, 1).unwrap();
    // The all-zero row peaks where the per-cell phases cancel.
    let peak = (18f64.to_radians() / (cfg.wavenumber() * cfg.cell_period_m)).acos().to_degrees();
    let grid = AngleGrid::Theta(vec![peak]);
    let high = ber_sweep_angle(&static_sched, &grid, 15.0, &ofdm, &cfg, None, None, "static", 137).unwrap();
    assert!(high.rows[0].ber < 1e-3, "static BER at the peak {}", high.rows[0].ber);

    // Paired streams at 7 dB so both rates are measurable.
    let at88 = AngleGrid::Theta(vec![88.0]);
    let frozen = CodingSchedule::repeated(target_pair().row(0, 0), 2, 1).unwrap();
    let dm = ber_sweep_angle(&target_pair(), &at88, 7.0, &ofdm, &cfg, None, None, "dm", 139).unwrap().rows[0].ber;
    let st = ber_sweep_angle(&frozen, &at88, 7.0, &ofdm, &cfg, None, None, "static", 139).unwrap().rows[0].ber;
    assert!(st > 0.0 && dm <= 2.0 * st && dm >= 0.5 * st, "DM {dm} vs static {st}");
}

#[test]
fn undegraded_curves_without_modulation() {
    let cfg = ArrayConfig::default();
    let ofdm = OfdmConfig::default().with_min_bits(200_000);
    let mut rng = child_rng(149, "no-dm");
    let sched = CodingSchedule::repeated(&[0, 1, 0, 0, 1, 1, 0, 1, 0], 2, 1).unwrap();
    let bob = random_unit_gaussian(&mut rng, 9);
    let eves = vec![random_unit_gaussian(&mut rng, 9)];
    let res = ber_sweep_snr(&sched, &bob, &eves, &[4.0], &ofdm, &cfg, 151).unwrap();
    let theory = qpsk_theory_ber(4.0);
    for r in &res.rows {
        let sigma = binomial_sigma(theory, r.bits_tested);
        assert!((r.ber - theory).abs() <= 4.0 * sigma, "{} BER {} vs {theory}", r.series, r.ber);
    }
}

#[test]
fn ber_sweep_is_a_function_of_its_inputs() {
    let cfg = ArrayConfig::default();
    let ofdm = OfdmConfig { n_frames: 200, ..OfdmConfig::default() };
    let grid = AngleGrid::theta_range(40.0, 140.0, 20.0).unwrap();
    let a = ber_sweep_angle(&target_pair(), &grid, 10.0, &ofdm, &cfg, None, None, "dm", 157).unwrap();
    let b = ber_sweep_angle(&target_pair(), &grid, 10.0, &ofdm, &cfg, None, None, "dm", 157).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pure_awgn_kernel_tracks_theory() {
    let ofdm = OfdmConfig::default().with_min_bits(1_000_000);
    let kernel = HarmonicKernel::from_steps(&[Complex64::new(1.0, 0.0)], ofdm.n_subcarriers, None);
    let c = simulate_kernel(&kernel, 6.0, &ofdm, &mut child_rng(163, "awgn"));
    let theory = qpsk_theory_ber(6.0);
    assert!((c.ber() / theory - 1.0).abs() <= 0.05, "BER {} vs {theory}", c.ber());
}
