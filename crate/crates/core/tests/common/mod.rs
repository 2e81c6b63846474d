//! Shared oracles for the integration tests.

#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use dmlab_core::array::{ArrayConfig, CodingSchedule};
use dmlab_core::Complex64;
use rand::Rng;

pub fn random_schedule(rng: &mut impl Rng, steps: usize, branches: usize, cells: usize) -> CodingSchedule {
    let states = (0..steps * branches * cells).map(|_| rng.random_range(0..2u8)).collect();
    CodingSchedule::new(steps, branches, cells, states).unwrap()
}

/// Random schedule with at least two distinct steps.
pub fn random_modulated(rng: &mut impl Rng, steps: usize, cells: usize) -> CodingSchedule {
    loop {
        let s = random_schedule(rng, steps, 1, cells);
        if !s.is_static() {
            return s;
        }
    }
}

pub fn random_unit_gaussian(rng: &mut impl Rng, n: usize) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// Complex number in 256-bit binary floating point.
#[derive(Clone)]
pub struct HpComplex {
    pub re: BigFloat,
    pub im: BigFloat,
}

/// Arbitrary-precision arithmetic context.
pub struct Hp {
    p: usize,
    rm: RoundingMode,
    cc: Consts,
}

impl Hp {
    pub fn new() -> Self {
        Self { p: 256, rm: RoundingMode::ToEven, cc: Consts::new().expect("constants cache") }
    }

    pub fn num(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.p)
    }

    pub fn zero(&self) -> HpComplex {
        HpComplex { re: self.num(0.0), im: self.num(0.0) }
    }

    pub fn from_c(&self, z: Complex64) -> HpComplex {
        HpComplex { re: self.num(z.re), im: self.num(z.im) }
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, self.rm)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, self.rm)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, self.rm)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, self.rm)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(self.p, self.rm)
    }

    pub fn sin(&mut self, x: &BigFloat) -> BigFloat {
        x.sin(self.p, self.rm, &mut self.cc)
    }

    pub fn cos(&mut self, x: &BigFloat) -> BigFloat {
        x.cos(self.p, self.rm, &mut self.cc)
    }

    pub fn exp(&mut self, x: &BigFloat) -> BigFloat {
        x.exp(self.p, self.rm, &mut self.cc)
    }

    pub fn sqrt(&self, x: &BigFloat) -> BigFloat {
        x.sqrt(self.p, self.rm)
    }

    pub fn deg_to_rad(&mut self, deg: f64) -> BigFloat {
        let pi = self.pi();
        let d = self.num(deg);
        self.div(&self.mul(&d, &pi), &self.num(180.0))
    }

    /// `exp(j phase)` scaled by `mag`.
    pub fn polar(&mut self, mag: &BigFloat, phase: &BigFloat) -> HpComplex {
        let (c, s) = (self.cos(phase), self.sin(phase));
        HpComplex { re: self.mul(mag, &c), im: self.mul(mag, &s) }
    }

    pub fn cadd(&self, a: &HpComplex, b: &HpComplex) -> HpComplex {
        HpComplex { re: self.add(&a.re, &b.re), im: self.add(&a.im, &b.im) }
    }

    pub fn csub(&self, a: &HpComplex, b: &HpComplex) -> HpComplex {
        HpComplex { re: self.sub(&a.re, &b.re), im: self.sub(&a.im, &b.im) }
    }

    pub fn cmul(&self, a: &HpComplex, b: &HpComplex) -> HpComplex {
        HpComplex {
            re: self.sub(&self.mul(&a.re, &b.re), &self.mul(&a.im, &b.im)),
            im: self.add(&self.mul(&a.re, &b.im), &self.mul(&a.im, &b.re)),
        }
    }

    pub fn scale(&self, z: &HpComplex, s: &BigFloat) -> HpComplex {
        HpComplex { re: self.mul(&z.re, s), im: self.mul(&z.im, s) }
    }

    pub fn cabs(&self, a: &HpComplex) -> BigFloat {
        self.sqrt(&self.add(&self.mul(&a.re, &a.re), &self.mul(&a.im, &a.im)))
    }

    /// Free-space wavenumber `2 pi f0 / c`.
    pub fn wavenumber(&mut self, cfg: &ArrayConfig) -> BigFloat {
        let pi = self.pi();
        let two_pi = self.mul(&self.num(2.0), &pi);
        self.div(&self.mul(&two_pi, &self.num(cfg.carrier_hz)), &self.num(299_792_458.0))
    }

    /// Cumulative phasors of one row, computed from the phase sum directly.
    pub fn gammas(&mut self, row: &[u8], cfg: &ArrayConfig) -> Vec<HpComplex> {
        let k0 = self.deg_to_rad(cfg.phase0_deg);
        let k1 = self.deg_to_rad(cfg.phase1_deg);
        let one = self.num(1.0);
        let mut acc = self.num(0.0);
        row.iter()
            .map(|&q| {
                acc = self.add(&acc, if q == 0 { &k0 } else { &k1 });
                let a = acc.clone();
                self.polar(&one, &a)
            })
            .collect()
    }

    /// `|a - b| <= tol` where `b` is an `f64` result.
    pub fn close(&mut self, a: &BigFloat, b: f64, tol: f64) -> bool {
        let d = self.sub(a, &self.num(b)).abs();
        d.cmp(&self.num(tol)).is_some_and(|c| c <= 0)
    }

    pub fn close_c(&mut self, a: &HpComplex, b: Complex64, tol: f64) -> bool {
        let d = self.csub(a, &self.from_c(b));
        let m = self.cabs(&d);
        m.cmp(&self.num(tol)).is_some_and(|c| c <= 0)
    }
}
