//! OFDM/QPSK link simulation through the time-modulated antenna.
//!
//! With the subcarrier width equal to `f_p`, harmonic `nu` of the switching
//! moves energy from subcarrier `k` onto subcarrier `k + nu`, so the received
//! tones are the linear convolution `y_x = sum_k s_k W(x - k)`. Energy pushed
//! outside the band is dropped. The receiver divides by the noiseless gain
//! `W(0)` (genie equalizer) and sees complex Gaussian noise on top.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::array::{
    harmonic_from_steps, step_factors_1d, step_factors_2d, step_factors_weighted, AngleGrid, ArrayConfig,
    CodingSchedule, Direction, ShifterTable,
};
use crate::error::{invalid, Error, Result};
use crate::seed::child_rng;
use crate::textfmt::sig9;

pub const BITS_PER_SYMBOL: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    /// Multiple of `2 * n_subcarriers` (whole OFDM symbols).
    pub bits_per_frame: usize,
    pub n_frames: usize,
    /// Harmonics beyond `|nu| > harmonic_limit` are dropped; `None` keeps every
    /// in-band term.
    pub harmonic_limit: Option<usize>,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        // 3907 one-symbol frames: about 5e5 bits per point.
        Self { n_subcarriers: 64, bits_per_frame: 128, n_frames: 3907, harmonic_limit: None }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(invalid("n_subcarriers must be positive"));
        }
        if self.n_frames == 0 {
            return Err(invalid("n_frames must be positive"));
        }
        let sym = BITS_PER_SYMBOL * self.n_subcarriers;
        if self.bits_per_frame == 0 || self.bits_per_frame % sym != 0 {
            return Err(invalid(format!("bits_per_frame must be a positive multiple of {sym}")));
        }
        Ok(())
    }

    /// Subcarrier width, equal to the modulation frequency by construction.
    pub fn subcarrier_width(&self, array: &ArrayConfig) -> f64 {
        array.mod_freq_hz
    }

    pub fn total_bits(&self) -> u64 {
        (self.bits_per_frame * self.n_frames) as u64
    }

    /// Frames needed for at least `bits` bits.
    pub fn with_min_bits(mut self, bits: u64) -> Self {
        self.n_frames = bits.div_ceil(self.bits_per_frame as u64).max(1) as usize;
        self
    }
}

/// Gray-mapped QPSK with unit energy: `(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt 2`.
pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(invalid("QPSK needs an even number of bits"));
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    bits.chunks_exact(2)
        .map(|p| match (p[0], p[1]) {
            (b0 @ (0 | 1), b1 @ (0 | 1)) => {
                Ok(Complex64::new(a * (1.0 - 2.0 * f64::from(b0)), a * (1.0 - 2.0 * f64::from(b1))))
            }
            _ => Err(invalid("bits must be 0 or 1")),
        })
        .collect()
}

/// Minimum-distance decisions (sign of each quadrature).
pub fn qpsk_demodulate(symbols: &[Complex64]) -> Vec<u8> {
    symbols.iter().flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)]).collect()
}

/// Per-dimension noise standard deviation for unit-energy symbols.
pub fn noise_sigma(eb_n0_db: f64, bits_per_symbol: usize) -> f64 {
    (1.0 / (2.0 * bits_per_symbol as f64 * 10f64.powf(eb_n0_db / 10.0))).sqrt()
}

/// Adds complex Gaussian noise; `eb_n0_db = +inf` bypasses the noise.
pub fn awgn(symbols: &[Complex64], eb_n0_db: f64, bits_per_symbol: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    if eb_n0_db == f64::INFINITY {
        return symbols.to_vec();
    }
    let normal = Normal::new(0.0, noise_sigma(eb_n0_db, bits_per_symbol)).expect("finite sigma");
    symbols
        .iter()
        .map(|s| s + Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Uncoded QPSK bit error rate over AWGN, `Q(sqrt(2 Eb/N0))`.
pub fn qpsk_theory_ber(eb_n0_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(eb_n0_db / 10.0)).sqrt())
}

/// `C_s = log2(1 + SNR_R) - log2(1 + SNR_E)`, clamped at 0. Linear SNRs.
pub fn secrecy_capacity(snr_r: f64, snr_e: f64) -> Result<f64> {
    if snr_r < 0.0 || snr_e < 0.0 || snr_r.is_nan() || snr_e.is_nan() {
        return Err(invalid("SNR values must be nonnegative"));
    }
    if snr_r <= snr_e {
        return Ok(0.0);
    }
    Ok(((1.0 + snr_r) / (1.0 + snr_e)).log2())
}

/// Harmonic weights `W(nu)` for `nu = -(K-1)..=K-1`, index `nu + K - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicKernel {
    k: usize,
    taps: Vec<Complex64>,
}

impl HarmonicKernel {
    pub fn from_steps(step_values: &[Complex64], n_subcarriers: usize, limit: Option<usize>) -> Self {
        let k = n_subcarriers;
        let span = k as i64 - 1;
        let lim = limit.map_or(span, |v| (v as i64).min(span));
        let taps = (-span..=span)
            .map(|nu| if nu.abs() <= lim { harmonic_from_steps(step_values, nu) } else { Complex64::new(0.0, 0.0) })
            .collect();
        Self { k, taps }
    }

    pub fn weight(&self, nu: i64) -> Complex64 {
        let idx = nu + self.k as i64 - 1;
        if idx < 0 || idx as usize >= self.taps.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.taps[idx as usize]
        }
    }

    pub fn fundamental(&self) -> Complex64 {
        self.weight(0)
    }

    /// `y_x = sum_k s_k W(x - k)` for one OFDM symbol.
    pub fn apply(&self, s: &[Complex64]) -> Vec<Complex64> {
        let k = self.k;
        let mut y = vec![Complex64::new(0.0, 0.0); k];
        for (kk, &sk) in s.iter().enumerate() {
            for (x, yx) in y.iter_mut().enumerate() {
                let w = self.taps[x + k - 1 - kk];
                if w.re != 0.0 || w.im != 0.0 {
                    *yx += sk * w;
                }
            }
        }
        y
    }

    /// Mean in-band interference-to-signal ratio after equalization,
    /// `mean_x sum_{k != x} |W(x-k)|^2 / |W(0)|^2`.
    pub fn interference_ratio(&self) -> f64 {
        let w0 = self.fundamental().norm_sqr();
        let k = self.k as i64;
        let total: f64 = (0..k)
            .map(|x| (0..k).filter(|&kk| kk != x).map(|kk| self.weight(x - kk).norm_sqr()).sum::<f64>())
            .sum();
        if w0 == 0.0 {
            f64::INFINITY
        } else {
            total / (k as f64 * w0)
        }
    }

    /// Post-equalization SINR, treating interference as noise.
    pub fn effective_sinr(&self, eb_n0_db: f64) -> f64 {
        let noise = if eb_n0_db == f64::INFINITY { 0.0 } else { 2.0 * noise_sigma(eb_n0_db, BITS_PER_SYMBOL).powi(2) };
        1.0 / (self.interference_ratio() + noise)
    }
}

fn check_symbols(s: &[Complex64], k: usize) -> Result<()> {
    if s.len() != k {
        return Err(Error::DimensionMismatch(format!("{} symbols for {k} subcarriers", s.len())));
    }
    Ok(())
}

/// Kernel towards a free-space direction. 2D schedules need `shifters`.
pub fn freespace_kernel(
    schedule: &CodingSchedule,
    dir: Direction,
    shifters: Option<&ShifterTable>,
    cfg: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<HarmonicKernel> {
    let steps = match dir.phi {
        None => step_factors_1d(schedule, dir.theta, cfg)?,
        Some(phi) => {
            let t = shifters.ok_or_else(|| invalid("2D direction needs shifter values"))?;
            step_factors_2d(schedule, dir.theta, phi, t, cfg)?
        }
    };
    Ok(HarmonicKernel::from_steps(&steps, ofdm.n_subcarriers, ofdm.harmonic_limit))
}

/// Kernel through a narrowband channel; gains are weighted by the leakage factor.
pub fn channel_kernel(
    schedule: &CodingSchedule,
    gains: &[Complex64],
    cfg: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<HarmonicKernel> {
    if gains.len() != cfg.n_cells {
        return Err(Error::DimensionMismatch(format!("{} gains for {} cells", gains.len(), cfg.n_cells)));
    }
    let w: Vec<Complex64> = gains.iter().enumerate().map(|(n, h)| h * cfg.attenuation(n)).collect();
    let steps = step_factors_weighted(schedule, &w, cfg)?;
    Ok(HarmonicKernel::from_steps(&steps, ofdm.n_subcarriers, ofdm.harmonic_limit))
}

pub fn received_subcarriers_freespace(
    schedule: &CodingSchedule,
    dir: Direction,
    shifters: Option<&ShifterTable>,
    s: &[Complex64],
    cfg: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Vec<Complex64>> {
    check_symbols(s, ofdm.n_subcarriers)?;
    Ok(freespace_kernel(schedule, dir, shifters, cfg, ofdm)?.apply(s))
}

pub fn received_subcarriers_channel(
    schedule: &CodingSchedule,
    gains: &[Complex64],
    s: &[Complex64],
    cfg: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Vec<Complex64>> {
    check_symbols(s, ofdm.n_subcarriers)?;
    Ok(channel_kernel(schedule, gains, cfg, ofdm)?.apply(s))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BitCount {
    pub bits: u64,
    pub errors: u64,
}

impl BitCount {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    fn add(&mut self, o: BitCount) {
        self.bits += o.bits;
        self.errors += o.errors;
    }
}

/// Monte Carlo over `ofdm.n_frames` frames through one kernel.
pub fn simulate_kernel(kernel: &HarmonicKernel, eb_n0_db: f64, ofdm: &OfdmConfig, rng: &mut ChaCha8Rng) -> BitCount {
    let k = ofdm.n_subcarriers;
    let w0 = kernel.fundamental();
    let inv = if w0.norm() > 0.0 { w0.inv() } else { Complex64::new(0.0, 0.0) };
    let symbols_per_frame = ofdm.bits_per_frame / (BITS_PER_SYMBOL * k);
    let mut count = BitCount::default();
    let mut bits = vec![0u8; BITS_PER_SYMBOL * k];
    for _ in 0..ofdm.n_frames {
        for _ in 0..symbols_per_frame {
            bits.iter_mut().for_each(|b| *b = rng.random_range(0..2u8));
            let s = qpsk_modulate(&bits).expect("even length");
            let y: Vec<Complex64> = kernel.apply(&s).into_iter().map(|v| v * inv).collect();
            let z = awgn(&y, eb_n0_db, BITS_PER_SYMBOL, rng);
            let hat = qpsk_demodulate(&z);
            count.bits += bits.len() as u64;
            count.errors += bits.iter().zip(&hat).filter(|(a, b)| a != b).count() as u64;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRow {
    pub series: String,
    /// Angle in degrees (theta) or Eb/N0 in dB.
    pub axis: f64,
    pub phi: Option<f64>,
    pub ber: f64,
    pub bits_tested: u64,
    pub bit_errors: u64,
    /// Post-equalization SINR (linear) used for the secrecy capacity.
    pub sinr: f64,
    pub secrecy_capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkResult {
    /// Column name of the axis, `theta_deg` or `eb_n0_db`.
    pub axis_name: String,
    pub rows: Vec<LinkRow>,
}

impl LinkResult {
    pub fn series(&self, name: &str) -> impl Iterator<Item = &LinkRow> {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.series == name)
    }

    pub fn merge(mut self, other: LinkResult) -> Result<Self> {
        if self.axis_name != other.axis_name {
            return Err(invalid("cannot merge results over different axes"));
        }
        self.rows.extend(other.rows);
        Ok(self)
    }

    /// Comma-separated table with a header row, floats at 9 significant digits.
    pub fn to_csv(&self) -> String {
        let with_phi = self.rows.iter().any(|r| r.phi.is_some());
        let mut out = format!("series,{}", self.axis_name);
        if with_phi {
            out.push_str(",phi_deg");
        }
        out.push_str(",ber,bits_tested,bit_errors,secrecy_capacity\n");
        for r in &self.rows {
            out.push_str(&r.series);
            out.push(',');
            out.push_str(&sig9(r.axis));
            if with_phi {
                out.push(',');
                out.push_str(&r.phi.map_or_else(String::new, sig9));
            }
            out.push_str(&format!(",{},{},{},{}\n", sig9(r.ber), r.bits_tested, r.bit_errors, sig9(r.secrecy_capacity)));
        }
        out
    }
}

/// BER versus direction at fixed Eb/N0. Point `i` draws bits and noise from
/// label `"noise/trial-<i>"`, so sweeps with the same seed are paired.
/// The secrecy column compares each point's SINR with `reference`'s.
#[allow(clippy::too_many_arguments)]
pub fn ber_sweep_angle(
    schedule: &CodingSchedule,
    grid: &AngleGrid,
    eb_n0_db: f64,
    ofdm: &OfdmConfig,
    cfg: &ArrayConfig,
    shifters: Option<&ShifterTable>,
    reference: Option<Direction>,
    series: &str,
    seed: u64,
) -> Result<LinkResult> {
    ofdm.validate()?;
    if grid.is_empty() {
        return Err(invalid("angle grid is empty"));
    }
    let ref_sinr = match reference {
        Some(d) => Some(freespace_kernel(schedule, d, shifters, cfg, ofdm)?.effective_sinr(eb_n0_db)),
        None => None,
    };
    let mut rows = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let dir = grid.direction(i);
        let kernel = freespace_kernel(schedule, dir, shifters, cfg, ofdm)?;
        let mut rng = child_rng(seed, &format!("noise/trial-{i}"));
        let c = simulate_kernel(&kernel, eb_n0_db, ofdm, &mut rng);
        let sinr = kernel.effective_sinr(eb_n0_db);
        let cs = match ref_sinr {
            Some(r) => secrecy_capacity(r, sinr)?,
            None => 0.0,
        };
        rows.push(LinkRow {
            series: series.to_string(),
            axis: dir.theta,
            phi: dir.phi,
            ber: c.ber(),
            bits_tested: c.bits,
            bit_errors: c.errors,
            sinr,
            secrecy_capacity: cs,
        });
    }
    Ok(LinkResult { axis_name: "theta_deg".into(), rows })
}

/// Bob's and Eve's BER versus Eb/N0 through fading channels. Eve's curve
/// pools every realization in `eves`. Rows are `bob` then `eve` per grid point.
pub fn ber_sweep_snr(
    schedule: &CodingSchedule,
    bob: &[Complex64],
    eves: &[Vec<Complex64>],
    eb_n0_grid: &[f64],
    ofdm: &OfdmConfig,
    cfg: &ArrayConfig,
    seed: u64,
) -> Result<LinkResult> {
    ofdm.validate()?;
    if eves.is_empty() {
        return Err(Error::MissingCsi("SNR sweep needs at least one Eve channel".into()));
    }
    let kb = channel_kernel(schedule, bob, cfg, ofdm)?;
    let ke: Vec<HarmonicKernel> = eves.iter().map(|e| channel_kernel(schedule, e, cfg, ofdm)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(2 * eb_n0_grid.len());
    for (i, &snr) in eb_n0_grid.iter().enumerate() {
        let cb = simulate_kernel(&kb, snr, ofdm, &mut child_rng(seed, &format!("noise/bob/trial-{i}")));
        let mut ce = BitCount::default();
        for (e, k) in ke.iter().enumerate() {
            ce.add(simulate_kernel(k, snr, ofdm, &mut child_rng(seed, &format!("noise/eve-{e}/trial-{i}"))));
        }
        let sb = kb.effective_sinr(snr);
        let se = ke.iter().map(|k| k.effective_sinr(snr)).sum::<f64>() / ke.len() as f64;
        let cs = secrecy_capacity(sb, se)?;
        for (name, c, sinr) in [("bob", cb, sb), ("eve", ce, se)] {
            rows.push(LinkRow {
                series: name.into(),
                axis: snr,
                phi: None,
                ber: c.ber(),
                bits_tested: c.bits,
                bit_errors: c.errors,
                sinr,
                secrecy_capacity: cs,
            });
        }
    }
    Ok(LinkResult { axis_name: "eb_n0_db".into(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::array_factor_1d;

    #[test]
    fn gray_map_and_decisions() {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(qpsk_modulate(&[0, 0]).unwrap()[0], Complex64::new(a, a));
        assert_eq!(qpsk_modulate(&[1, 0]).unwrap()[0], Complex64::new(-a, a));
        assert_eq!(qpsk_demodulate(&[Complex64::new(0.9, 1.1) * a]), vec![0, 0]);
        assert!(qpsk_modulate(&[1]).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let mut rng = child_rng(1, "bits");
        let bits: Vec<u8> = (0..1_000_000).map(|_| rng.random_range(0..2u8)).collect();
        let s = qpsk_modulate(&bits).unwrap();
        let y = awgn(&s, f64::INFINITY, 2, &mut rng);
        assert_eq!(y, s);
        assert_eq!(qpsk_demodulate(&y), bits);
    }

    #[test]
    fn noise_power() {
        let mut rng = child_rng(2, "noise");
        let zeros = vec![Complex64::new(0.0, 0.0); 1_000_000];
        let n = awgn(&zeros, 3.0, 2, &mut rng);
        let p = n.iter().map(|v| v.norm_sqr()).sum::<f64>() / n.len() as f64;
        let want = 2.0 * noise_sigma(3.0, 2).powi(2);
        assert!((p / want - 1.0).abs() < 0.01, "{p} vs {want}");
    }

    #[test]
    fn theory_value_at_6db() {
        assert!((qpsk_theory_ber(6.0) - 2.3882e-3).abs() < 1e-6);
    }

    #[test]
    fn secrecy_examples() {
        assert_eq!(secrecy_capacity(2.0, 2.0).unwrap(), 0.0);
        assert!((secrecy_capacity(3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(secrecy_capacity(1.0, 3.0).unwrap(), 0.0);
        assert!(secrecy_capacity(-1.0, 0.0).is_err());
    }

    #[test]
    fn static_schedule_has_no_leakage() {
        let cfg = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let sched = CodingSchedule::repeated(&[0, 1, 1, 0, 1, 0, 0, 1, 0], 2, 1).unwrap();
        let mut rng = child_rng(3, "s");
        let bits: Vec<u8> = (0..128).map(|_| rng.random_range(0..2u8)).collect();
        let s = qpsk_modulate(&bits).unwrap();
        let dir = Direction { theta: 70.0, phi: None };
        let y = received_subcarriers_freespace(&sched, dir, None, &s, &cfg, &ofdm).unwrap();
        let xi = array_factor_1d(sched.row(0, 0), 70.0, &cfg).unwrap();
        for (yx, sx) in y.iter().zip(&s) {
            assert!((yx - sx * xi).norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_reads_off_harmonics() {
        let cfg = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let sched = CodingSchedule::from_rows(&[vec![1, 1, 1, 0, 0, 0, 0, 0, 0], vec![0, 0, 1, 1, 1, 1, 1, 1, 0]]).unwrap();
        let mut s = vec![Complex64::new(0.0, 0.0); 64];
        s[0] = Complex64::new(1.0, 0.0);
        let dir = Direction { theta: 50.0, phi: None };
        let y = received_subcarriers_freespace(&sched, dir, None, &s, &cfg, &ofdm).unwrap();
        for (x, yx) in y.iter().enumerate() {
            let w = crate::array::harmonic_weight_1d(&sched, x as i64, 50.0, &cfg).unwrap();
            assert!((yx - w).norm() < 1e-15);
        }
    }

    #[test]
    fn result_csv_layout() {
        let r = LinkResult {
            axis_name: "eb_n0_db".into(),
            rows: vec![LinkRow {
                series: "bob".into(),
                axis: 15.0,
                phi: None,
                ber: 1.0 / 3.0,
                bits_tested: 3,
                bit_errors: 1,
                sinr: 2.0,
                secrecy_capacity: 0.5,
            }],
        };
        assert_eq!(
            r.to_csv(),
            "series,eb_n0_db,ber,bits_tested,bit_errors,secrecy_capacity\nbob,15,0.333333333,3,1,0.5\n"
        );
    }

    #[test]
    fn zero_frames_rejected() {
        let ofdm = OfdmConfig { n_frames: 0, ..OfdmConfig::default() };
        let sched = CodingSchedule::repeated(&[0; 9], 2, 1).unwrap();
        let grid = AngleGrid::Theta(vec![60.0]);
        assert!(ber_sweep_angle(&sched, &grid, 10.0, &ofdm, &ArrayConfig::default(), None, None, "dm", 0).is_err());
    }
}
