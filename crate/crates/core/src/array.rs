//! Antenna-side mathematics for the space-time coded leaky-wave antenna.
//!
//! A 1D antenna is a chain of `N` unit cells; every cell is in state 0 or 1
//! during each of the `L` equal slots of the modulation period `T_p = 1/f_p`.
//! The wave reaching cell `n` has accumulated the phase of every earlier cell,
//! so the cell phasor is the cumulative product
//! `Gamma_n(q) = prod_{k<=n} exp(j kappa(q_k))`.
//!
//! The 2D architecture feeds `M` such chains in parallel, each behind a
//! digital phase shifter `Lambda_m`.
//!
//! Indexing in this module is zero-based (`u`, `m`, `n` start at 0) except for
//! [`cumulative_phase`], which takes the number of traversed cells.
//!
//! `sinc` is the unnormalized `sin(x)/x` with `sinc(0) = 1`. Note that
//! `numpy.sinc` and several DSP crates use `sin(pi x)/(pi x)` instead.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Magnitudes (relative to the reference) below this clamp to [`DB_FLOOR`].
pub const MAGNITUDE_FLOOR: f64 = 1e-15;
pub const DB_FLOOR: f64 = -300.0;

/// Physical antenna parameters. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_cells: usize,
    pub n_branches: usize,
    /// Unit-cell period `p` in meters.
    pub cell_period_m: f64,
    /// Branch spacing `d` in meters; `None` means half a free-space wavelength.
    pub branch_spacing_m: Option<f64>,
    /// Leakage factor `alpha` in nepers per meter.
    pub leakage_np_per_m: f64,
    /// Per-cell phase in state 0 (`beta_0 p`), degrees.
    pub phase0_deg: f64,
    /// Per-cell phase in state 1 (`beta_1 p`), degrees.
    pub phase1_deg: f64,
    pub carrier_hz: f64,
    /// Modulation frequency `f_p`, equal to the OFDM subcarrier width.
    pub mod_freq_hz: f64,
    pub shifter_bits: u32,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_cells: 9,
            n_branches: 1,
            cell_period_m: 0.015,
            branch_spacing_m: None,
            leakage_np_per_m: 0.0,
            phase0_deg: -18.0,
            phase1_deg: 15.0,
            carrier_hz: 1.95e9,
            mod_freq_hz: 15e3,
            shifter_bits: 8,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.n_branches == 0 {
            return Err(invalid("n_cells and n_branches must be at least 1"));
        }
        let positive = [
            ("cell_period_m", self.cell_period_m),
            ("carrier_hz", self.carrier_hz),
            ("mod_freq_hz", self.mod_freq_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.leakage_np_per_m.is_finite() && self.leakage_np_per_m >= 0.0) {
            return Err(invalid("leakage factor must be nonnegative"));
        }
        if let Some(d) = self.branch_spacing_m {
            if !(d.is_finite() && d > 0.0) {
                return Err(invalid("branch spacing must be positive"));
            }
        }
        if !(1..=30).contains(&self.shifter_bits) {
            return Err(invalid("shifter_bits must be in 1..=30"));
        }
        if !(self.phase0_deg.is_finite() && self.phase1_deg.is_finite()) {
            return Err(invalid("cell phases must be finite"));
        }
        Ok(())
    }

    /// Free-space wavenumber `k0 = 2 pi f0 / c`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn branch_spacing(&self) -> f64 {
        self.branch_spacing_m.unwrap_or_else(|| 0.5 * self.wavelength())
    }

    pub fn mod_period(&self) -> f64 {
        1.0 / self.mod_freq_hz
    }

    pub fn phase0(&self) -> f64 {
        self.phase0_deg.to_radians()
    }

    pub fn phase1(&self) -> f64 {
        self.phase1_deg.to_radians()
    }

    /// Per-cell phase for a (possibly relaxed) state `q in [0, 1]`.
    ///
    /// Written as `(1-q) b0 + q b1` so both endpoints are bit-exact.
    #[inline]
    pub fn kappa(&self, q: f64) -> f64 {
        (1.0 - q) * self.phase0() + q * self.phase1()
    }

    /// `exp(-alpha (n) p)` for zero-based cell `n`.
    #[inline]
    pub fn attenuation(&self, n: usize) -> f64 {
        (-self.leakage_np_per_m * n as f64 * self.cell_period_m).exp()
    }

    /// Number of binary decision variables per time step (`M * N`).
    pub fn cells_per_step(&self) -> usize {
        self.n_cells * self.n_branches
    }
}

/// Binary state tensor `q[u][m][n]`, stored step-major then branch then cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodingSchedule {
    steps: usize,
    branches: usize,
    cells: usize,
    states: Vec<u8>,
}

impl CodingSchedule {
    pub fn new(steps: usize, branches: usize, cells: usize, states: Vec<u8>) -> Result<Self> {
        if steps == 0 || branches == 0 || cells == 0 {
            return Err(invalid("schedule dimensions must be positive"));
        }
        if states.len() != steps * branches * cells {
            return Err(Error::DimensionMismatch(format!(
                "expected {} states for {}x{}x{}, got {}",
                steps * branches * cells,
                steps,
                branches,
                cells,
                states.len()
            )));
        }
        if let Some(bad) = states.iter().find(|&&s| s > 1) {
            return Err(invalid(format!("state {bad} is not binary")));
        }
        Ok(Self { steps, branches, cells, states })
    }

    /// One row of `N` states per time step.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cells = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cells) {
            return Err(Error::DimensionMismatch("rows have unequal length".into()));
        }
        Self::new(rows.len(), 1, cells, rows.concat())
    }

    /// One `M x N` slab per time step.
    pub fn from_slabs(slabs: &[Vec<Vec<u8>>]) -> Result<Self> {
        let branches = slabs.first().map_or(0, Vec::len);
        let cells = slabs.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut states = Vec::new();
        for slab in slabs {
            if slab.len() != branches || slab.iter().any(|r| r.len() != cells) {
                return Err(Error::DimensionMismatch("slabs have unequal shape".into()));
            }
            for row in slab {
                states.extend_from_slice(row);
            }
        }
        Self::new(slabs.len(), branches, cells, states)
    }

    /// The same row (or slab) repeated in every step: no time modulation.
    pub fn repeated(slab: &[u8], steps: usize, branches: usize) -> Result<Self> {
        if branches == 0 || slab.len() % branches != 0 {
            return Err(Error::DimensionMismatch("slab length not divisible by branches".into()));
        }
        let cells = slab.len() / branches;
        Self::new(steps, branches, cells, slab.repeat(steps))
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    /// States of step `u`, all branches (`M * N` entries).
    pub fn slab(&self, u: usize) -> &[u8] {
        let w = self.branches * self.cells;
        &self.states[u * w..(u + 1) * w]
    }

    pub fn row(&self, u: usize, m: usize) -> &[u8] {
        let s = self.slab(u);
        &s[m * self.cells..(m + 1) * self.cells]
    }

    pub fn is_static(&self) -> bool {
        (1..self.steps).all(|u| self.slab(u) == self.slab(0))
    }

    pub fn check_against(&self, cfg: &ArrayConfig) -> Result<()> {
        if self.cells != cfg.n_cells || self.branches != cfg.n_branches {
            return Err(Error::DimensionMismatch(format!(
                "schedule is {}x{} per step, array is {}x{}",
                self.branches, self.cells, cfg.n_branches, cfg.n_cells
            )));
        }
        Ok(())
    }

    /// Text form: one line of space-separated bits per row; 2D steps are
    /// blocks of `M` lines separated by a blank line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in 0..self.steps {
            if u > 0 && self.branches > 1 {
                out.push('\n');
            }
            for m in 0..self.branches {
                let line: Vec<String> = self.row(u, m).iter().map(u8::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse_text(text: &str, branches: usize) -> Result<Self> {
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| match t {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::Parse(format!("bad state token {other:?}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        if branches == 0 || rows.is_empty() || rows.len() % branches != 0 {
            return Err(Error::Parse(format!(
                "{} rows cannot form steps of {} branches",
                rows.len(),
                branches
            )));
        }
        let cells = rows[0].len();
        if rows.iter().any(|r| r.len() != cells) {
            return Err(Error::Parse("rows have unequal length".into()));
        }
        Self::new(rows.len() / branches, branches, cells, rows.concat())
    }
}

/// Phase-shifter values `Lambda[u][m]`, one per step and branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ShifterTable {
    steps: usize,
    branches: usize,
    values: Vec<Complex64>,
}

impl ShifterTable {
    pub fn unity(steps: usize, branches: usize) -> Self {
        Self { steps, branches, values: vec![Complex64::new(1.0, 0.0); steps * branches] }
    }

    /// Quantized shifters steering step `u` towards `directions[u] = (theta, phi)`.
    pub fn steered(cfg: &ArrayConfig, directions: &[(f64, f64)]) -> Self {
        let branches = cfg.n_branches;
        let values = directions
            .iter()
            .flat_map(|&(th, ph)| (0..branches).map(move |m| shifter_phase(m, th, ph, cfg)))
            .collect();
        Self { steps: directions.len(), branches, values }
    }

    pub fn from_values(steps: usize, branches: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != steps * branches {
            return Err(Error::DimensionMismatch("shifter table size".into()));
        }
        Ok(Self { steps, branches, values })
    }

    pub fn step(&self, u: usize) -> &[Complex64] {
        &self.values[u * self.branches..(u + 1) * self.branches]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn branches(&self) -> usize {
        self.branches
    }
}

/// Unnormalized sinc, `sin(x)/x`, `sinc(0) = 1`.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// `sinc(nu pi / L)`, exactly zero when `nu` is a nonzero multiple of `L`.
#[inline]
pub fn harmonic_sinc(nu: i64, steps: usize) -> f64 {
    let l = steps as i64;
    if nu != 0 && nu % l == 0 {
        0.0
    } else {
        sinc(nu as f64 * PI / steps as f64)
    }
}

/// `exp(-j 2 pi k / L)` with `k` reduced modulo `L` first.
#[inline]
fn root_of_unity(k: i64, steps: usize) -> Complex64 {
    let l = steps as i64;
    let r = k.rem_euclid(l);
    Complex64::from_polar(1.0, -2.0 * PI * r as f64 / steps as f64)
}

/// Writes `Gamma_n` for `n = 0..states.len()` into `out`.
#[inline]
pub(crate) fn fill_gammas<I>(cfg: &ArrayConfig, states: I, out: &mut Vec<Complex64>)
where
    I: IntoIterator<Item = f64>,
{
    out.clear();
    let mut acc = 0.0;
    for q in states {
        acc += cfg.kappa(q);
        out.push(Complex64::from_polar(1.0, acc));
    }
}

fn gammas_u8(cfg: &ArrayConfig, row: &[u8]) -> Vec<Complex64> {
    let mut g = Vec::with_capacity(row.len());
    fill_gammas(cfg, row.iter().map(|&s| f64::from(s)), &mut g);
    g
}

/// Cumulative phasor after traversing the first `n` cells of `row` (`1 <= n <= N`).
pub fn cumulative_phase(row: &[u8], cfg: &ArrayConfig, n: usize) -> Result<Complex64> {
    if n == 0 || n > row.len() {
        return Err(invalid(format!("cell count {n} outside 1..={}", row.len())));
    }
    if row.iter().any(|&s| s > 1) {
        return Err(invalid("states must be binary"));
    }
    let phase: f64 = row[..n].iter().map(|&s| cfg.kappa(f64::from(s))).sum();
    Ok(Complex64::from_polar(1.0, phase))
}

/// Per-cell spatial weights `exp(-alpha n p) exp(j k0 n p cos(theta))` of the 1D antenna.
pub fn steering_1d(cfg: &ArrayConfig, theta_deg: f64) -> Vec<Complex64> {
    let psi = cfg.wavenumber() * cfg.cell_period_m * theta_deg.to_radians().cos();
    (0..cfg.n_cells)
        .map(|n| Complex64::from_polar(cfg.attenuation(n), n as f64 * psi))
        .collect()
}

/// Cell weights `exp(-alpha n p) exp(j n k0 p sin(theta) sin(phi))` and branch weights
/// `exp(j m k0 d sin(theta) cos(phi))` of the 2D array.
pub fn steering_2d(cfg: &ArrayConfig, theta_deg: f64, phi_deg: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let (st, _) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    let k0 = cfg.wavenumber();
    let psi_cell = k0 * cfg.cell_period_m * st * sp;
    let psi_branch = k0 * cfg.branch_spacing() * st * cp;
    let cells = (0..cfg.n_cells)
        .map(|n| Complex64::from_polar(cfg.attenuation(n), n as f64 * psi_cell))
        .collect();
    let branches = (0..cfg.n_branches)
        .map(|m| Complex64::from_polar(1.0, m as f64 * psi_branch))
        .collect();
    (cells, branches)
}

#[inline]
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_theta_1d(theta_deg: f64) -> Result<()> {
    if !(0.0..=180.0).contains(&theta_deg) {
        return Err(invalid(format!("theta {theta_deg} outside [0, 180] degrees")));
    }
    Ok(())
}

/// Instantaneous array factor `Xi(theta, q)` of one 1D schedule row.
pub fn array_factor_1d(row: &[u8], theta_deg: f64, cfg: &ArrayConfig) -> Result<Complex64> {
    check_theta_1d(theta_deg)?;
    if row.len() != cfg.n_cells {
        return Err(Error::DimensionMismatch(format!(
            "row has {} cells, array has {}",
            row.len(),
            cfg.n_cells
        )));
    }
    Ok(dot(&gammas_u8(cfg, row), &steering_1d(cfg, theta_deg)))
}

/// Array factor with externally supplied per-cell weights: channel gains
/// (times leakage) or a free-space steering vector.
pub fn array_factor_weighted(row: &[u8], weights: &[Complex64], cfg: &ArrayConfig) -> Result<Complex64> {
    if row.len() != weights.len() {
        return Err(Error::DimensionMismatch("row and weight lengths differ".into()));
    }
    Ok(dot(&gammas_u8(cfg, row), weights))
}

/// Instantaneous array factor `Xi(theta, phi, q)` of one `M x N` slab.
pub fn array_factor_2d(
    slab: &[u8],
    theta_deg: f64,
    phi_deg: f64,
    shifters: &[Complex64],
    cfg: &ArrayConfig,
) -> Result<Complex64> {
    let (m_count, n_count) = (cfg.n_branches, cfg.n_cells);
    if slab.len() != m_count * n_count {
        return Err(Error::DimensionMismatch(format!(
            "slab has {} states, array needs {}x{}",
            slab.len(),
            m_count,
            n_count
        )));
    }
    if shifters.len() != m_count {
        return Err(Error::DimensionMismatch(format!(
            "{} shifter values for {} branches",
            shifters.len(),
            m_count
        )));
    }
    let (cells, branches) = steering_2d(cfg, theta_deg, phi_deg);
    Ok((0..m_count)
        .map(|m| {
            let g = gammas_u8(cfg, &slab[m * n_count..(m + 1) * n_count]);
            shifters[m] * branches[m] * dot(&g, &cells)
        })
        .sum())
}

/// Round-half-toward-zero to an integer.
#[inline]
fn round_half_toward_zero(x: f64) -> f64 {
    x.signum() * (x.abs() - 0.5).ceil().max(0.0)
}

/// Quantized shifter value `Lambda_m = exp(-j gamma_m)` for zero-based branch `m`.
///
/// `gamma_m = m k0 d sin(theta0) cos(phi0)` is rounded to the nearest multiple
/// of `2 pi / 2^bits`, ties toward zero phase.
pub fn shifter_phase(m: usize, theta0_deg: f64, phi0_deg: f64, cfg: &ArrayConfig) -> Complex64 {
    let gamma = ideal_shifter_gamma(m, theta0_deg, phi0_deg, cfg);
    let step = 2.0 * PI / f64::from(1u32 << cfg.shifter_bits);
    let q = round_half_toward_zero(gamma / step) * step;
    Complex64::from_polar(1.0, -q)
}

/// Unquantized shifter phase `gamma_m` in radians.
pub fn ideal_shifter_gamma(m: usize, theta0_deg: f64, phi0_deg: f64, cfg: &ArrayConfig) -> f64 {
    m as f64
        * cfg.wavenumber()
        * cfg.branch_spacing()
        * theta0_deg.to_radians().sin()
        * phi0_deg.to_radians().cos()
}

/// Fourier coefficient `c_{nu n}` of the switching waveform of cell `cell`
/// (zero-based, so `Gamma` covers cells `0..=cell`) in branch `branch`.
///
/// With `shifters`, the coefficient is that of `U_{mn}(t)` including
/// `Lambda_m^u`.
pub fn fourier_coefficient(
    schedule: &CodingSchedule,
    branch: usize,
    cell: usize,
    nu: i64,
    cfg: &ArrayConfig,
    shifters: Option<&ShifterTable>,
) -> Result<Complex64> {
    if branch >= schedule.branches() || cell >= schedule.cells() {
        return Err(invalid("branch or cell index out of range"));
    }
    let l = schedule.steps();
    let s = harmonic_sinc(nu, l) / l as f64;
    if s == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for u in 0..l {
        let mut gamma = cumulative_phase(schedule.row(u, branch), cfg, cell + 1)?;
        if let Some(t) = shifters {
            gamma *= t.step(u)[branch];
        }
        // exp(-j pi nu (2u+1) / L) for zero-based u, reduced modulo 2L.
        let k = (nu * (2 * u as i64 + 1)).rem_euclid(2 * l as i64);
        acc += gamma * Complex64::from_polar(1.0, -PI * k as f64 / l as f64);
    }
    Ok(acc * s)
}

/// Time-invariant harmonic weight from per-step array factors `Xi^u`:
/// `W(nu) = (1/L) sinc(nu pi/L) exp(j pi nu/L) sum_u Xi^u exp(-j 2 pi nu u / L)`
/// with `u` counted from 1.
pub fn harmonic_from_steps(step_values: &[Complex64], nu: i64) -> Complex64 {
    let l = step_values.len();
    let s = harmonic_sinc(nu, l);
    if s == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let sum: Complex64 = step_values
        .iter()
        .enumerate()
        .map(|(u, xi)| xi * root_of_unity(nu * (u as i64 + 1), l))
        .sum();
    // exp(j pi nu / L), reduced modulo 2L.
    let k = nu.rem_euclid(2 * l as i64);
    let lead = Complex64::from_polar(1.0, PI * k as f64 / l as f64);
    lead * sum * (s / l as f64)
}

/// Per-step array factors `Xi^u(theta)` of a 1D schedule.
pub fn step_factors_1d(schedule: &CodingSchedule, theta_deg: f64, cfg: &ArrayConfig) -> Result<Vec<Complex64>> {
    schedule.check_against(cfg)?;
    check_theta_1d(theta_deg)?;
    let w = steering_1d(cfg, theta_deg);
    Ok((0..schedule.steps()).map(|u| dot(&gammas_u8(cfg, schedule.row(u, 0)), &w)).collect())
}

/// Per-step array factors with arbitrary per-cell weights (1D channel domain).
pub fn step_factors_weighted(
    schedule: &CodingSchedule,
    weights: &[Complex64],
    cfg: &ArrayConfig,
) -> Result<Vec<Complex64>> {
    if schedule.branches() != 1 || weights.len() != schedule.cells() {
        return Err(Error::DimensionMismatch("weights must match a 1D schedule".into()));
    }
    Ok((0..schedule.steps()).map(|u| dot(&gammas_u8(cfg, schedule.row(u, 0)), weights)).collect())
}

/// Per-step array factors `Xi(theta, phi, q_u)` of a 2D schedule.
pub fn step_factors_2d(
    schedule: &CodingSchedule,
    theta_deg: f64,
    phi_deg: f64,
    shifters: &ShifterTable,
    cfg: &ArrayConfig,
) -> Result<Vec<Complex64>> {
    schedule.check_against(cfg)?;
    if shifters.steps() != schedule.steps() || shifters.branches() != schedule.branches() {
        return Err(Error::DimensionMismatch("shifter table does not match schedule".into()));
    }
    (0..schedule.steps())
        .map(|u| array_factor_2d(schedule.slab(u), theta_deg, phi_deg, shifters.step(u), cfg))
        .collect()
}

/// `W(nu, theta)` for a 1D schedule (time factor stripped).
pub fn harmonic_weight_1d(schedule: &CodingSchedule, nu: i64, theta_deg: f64, cfg: &ArrayConfig) -> Result<Complex64> {
    Ok(harmonic_from_steps(&step_factors_1d(schedule, theta_deg, cfg)?, nu))
}

/// `W(nu, theta, phi)` for a 2D schedule (time factor stripped).
pub fn harmonic_weight_2d(
    schedule: &CodingSchedule,
    nu: i64,
    theta_deg: f64,
    phi_deg: f64,
    shifters: &ShifterTable,
    cfg: &ArrayConfig,
) -> Result<Complex64> {
    Ok(harmonic_from_steps(&step_factors_2d(schedule, theta_deg, phi_deg, shifters, cfg)?, nu))
}

/// Full harmonic weight including the time factor `exp(j 2 pi nu f_p t)`.
pub fn harmonic_weight_at(w: Complex64, nu: i64, t: f64, cfg: &ArrayConfig) -> Complex64 {
    let cycles = (nu as f64 * cfg.mod_freq_hz * t).rem_euclid(1.0);
    w * Complex64::from_polar(1.0, 2.0 * PI * cycles)
}

/// `20 log10(mag / reference)` with the -300 dB floor.
pub fn magnitude_db(mag: f64, reference: f64) -> f64 {
    let r = if reference > 0.0 { mag / reference } else { 0.0 };
    if r < MAGNITUDE_FLOOR {
        DB_FLOOR
    } else {
        20.0 * r.log10()
    }
}

/// A direction in degrees. `phi` is `None` for the 1D antenna.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AngleGrid {
    /// 1D grid of theta values.
    Theta(Vec<f64>),
    /// 2D grid, ordered lexicographically by (theta, phi).
    ThetaPhi(Vec<(f64, f64)>),
}

impl AngleGrid {
    /// Inclusive uniform theta grid; the end point is kept when it lands on the grid.
    pub fn theta_range(start: f64, stop: f64, step: f64) -> Result<Self> {
        Ok(Self::Theta(uniform_points(start, stop, step)?))
    }

    pub fn theta_phi_range(theta: (f64, f64, f64), phi: (f64, f64, f64)) -> Result<Self> {
        let ts = uniform_points(theta.0, theta.1, theta.2)?;
        let ps = uniform_points(phi.0, phi.1, phi.2)?;
        Ok(Self::ThetaPhi(ts.iter().flat_map(|&t| ps.iter().map(move |&p| (t, p))).collect()))
    }

    /// Default 1D grid: theta in [0, 180] at 0.1 degrees.
    pub fn default_1d() -> Self {
        Self::theta_range(0.0, 180.0, 0.1).expect("static grid")
    }

    /// Default 2D grid: theta in [0, 90], phi in [0, 360) at `step` degrees.
    pub fn default_2d(step: f64) -> Self {
        let ts = uniform_points(0.0, 90.0, step).expect("static grid");
        let ps: Vec<f64> = uniform_points(0.0, 360.0, step)
            .expect("static grid")
            .into_iter()
            .filter(|&p| p < 360.0)
            .collect();
        Self::ThetaPhi(ts.iter().flat_map(|&t| ps.iter().map(move |&p| (t, p))).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Theta(v) => v.len(),
            Self::ThetaPhi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn direction(&self, i: usize) -> Direction {
        match self {
            Self::Theta(v) => Direction { theta: v[i], phi: None },
            Self::ThetaPhi(v) => Direction { theta: v[i].0, phi: Some(v[i].1) },
        }
    }

    fn check_increasing(&self) -> Result<()> {
        let ok = match self {
            Self::Theta(v) => v.windows(2).all(|w| w[0] < w[1]),
            Self::ThetaPhi(v) => v.windows(2).all(|w| w[0] < w[1]),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("angle grid must be strictly increasing"))
        }
    }
}

/// `start, start+step, ...` up to `stop` inclusive (with a 1e-9 step tolerance).
/// Points are computed as `start + i*step` to avoid accumulated drift.
pub fn uniform_points(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(invalid(format!("bad grid {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPattern {
    pub nu: i64,
    pub grid: AngleGrid,
    pub magnitudes: Vec<f64>,
    /// Normalized to the maximum of `|W(0, .)|` over the grid.
    pub magnitudes_db: Vec<f64>,
}

/// Harmonic patterns `|W(nu, .)|` for every `nu` in `nus`.
///
/// `shifters` is required for 2D grids and ignored for 1D.
pub fn pattern_sweep(
    schedule: &CodingSchedule,
    nus: RangeInclusive<i64>,
    grid: &AngleGrid,
    cfg: &ArrayConfig,
    shifters: Option<&ShifterTable>,
) -> Result<Vec<HarmonicPattern>> {
    if grid.is_empty() {
        return Err(invalid("angle grid is empty"));
    }
    grid.check_increasing()?;
    schedule.check_against(cfg)?;
    let steps_at = |i: usize| -> Result<Vec<Complex64>> {
        match grid {
            AngleGrid::Theta(v) => step_factors_1d(schedule, v[i], cfg),
            AngleGrid::ThetaPhi(v) => {
                let table = shifters.ok_or_else(|| invalid("2D sweep needs shifter values"))?;
                step_factors_2d(schedule, v[i].0, v[i].1, table, cfg)
            }
        }
    };
    let nus: Vec<i64> = nus.collect();
    let mut mags = vec![Vec::with_capacity(grid.len()); nus.len()];
    let mut fundamental_max: f64 = 0.0;
    for i in 0..grid.len() {
        let xis = steps_at(i)?;
        fundamental_max = fundamental_max.max(harmonic_from_steps(&xis, 0).norm());
        for (k, &nu) in nus.iter().enumerate() {
            mags[k].push(harmonic_from_steps(&xis, nu).norm());
        }
    }
    Ok(nus
        .into_iter()
        .zip(mags)
        .map(|(nu, magnitudes)| {
            let magnitudes_db = magnitudes.iter().map(|&m| magnitude_db(m, fundamental_max)).collect();
            HarmonicPattern { nu, grid: grid.clone(), magnitudes, magnitudes_db }
        })
        .collect())
}

/// Active zero-based step at time `t` (periodic in `T_p`).
pub fn active_step(t: f64, steps: usize, cfg: &ArrayConfig) -> usize {
    let frac = (t * cfg.mod_freq_hz).rem_euclid(1.0);
    ((frac * steps as f64).floor() as usize).min(steps - 1)
}

/// Direct piecewise evaluation of the 1D far-field pattern `R(theta, t)` for
/// input sample `s_t = S(t)`, without Fourier expansion.
pub fn time_domain_pattern_1d(
    schedule: &CodingSchedule,
    theta_deg: f64,
    t: f64,
    s_t: Complex64,
    cfg: &ArrayConfig,
) -> Result<Complex64> {
    schedule.check_against(cfg)?;
    let u = active_step(t, schedule.steps(), cfg);
    Ok(s_t * array_factor_1d(schedule.row(u, 0), theta_deg, cfg)?)
}

/// Direct piecewise evaluation of the 2D pattern `R(theta, phi, t)`.
pub fn time_domain_pattern_2d(
    schedule: &CodingSchedule,
    theta_deg: f64,
    phi_deg: f64,
    t: f64,
    s_t: Complex64,
    shifters: &ShifterTable,
    cfg: &ArrayConfig,
) -> Result<Complex64> {
    schedule.check_against(cfg)?;
    let u = active_step(t, schedule.steps(), cfg);
    Ok(s_t * array_factor_2d(schedule.slab(u), theta_deg, phi_deg, shifters.step(u), cfg)?)
}

/// Time-domain response through per-cell weights (channel domain).
pub fn time_domain_weighted(
    schedule: &CodingSchedule,
    weights: &[Complex64],
    t: f64,
    s_t: Complex64,
    cfg: &ArrayConfig,
) -> Result<Complex64> {
    let u = active_step(t, schedule.steps(), cfg);
    Ok(s_t * array_factor_weighted(schedule.row(u, 0), weights, cfg)?)
}
