//! Small numeric helpers shared across modules.

use num_complex::Complex64 as C64;

/// Table of ln(k!) for k = 0..=max, built by direct summation.
///
/// Factorials overflow f64 beyond 170!, so all multinomial weights are
/// assembled in log space from this table.
#[derive(Debug, Clone)]
pub struct LnFactorials {
    table: Vec<f64>,
}

impl LnFactorials {
    pub fn up_to(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        let mut acc = 0.0f64;
        table.push(0.0);
        for k in 1..=max {
            acc += (k as f64).ln();
            table.push(acc);
        }
        Self { table }
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.table[k]
    }

    /// ln of the multinomial coefficient N!/(m_1!...m_n!), with N = sum(m).
    pub fn ln_multinomial(&self, m: &[u32]) -> f64 {
        let n_total: u32 = m.iter().sum();
        let mut v = self.get(n_total as usize);
        for &mj in m {
            v -= self.get(mj as usize);
        }
        v
    }
}

/// Binomial coefficient as f64 by the usual multiplicative loop.
pub fn binomial_f64(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut res = 1.0f64;
    for i in 0..k {
        res = res * (n - i) as f64 / (i + 1) as f64;
    }
    res
}

/// Sum of conj(a_j) * b_j.
#[inline]
pub fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Plain bilinear sum a_j * b_j (no conjugation; doubled-phase-space pairing).
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum of |z_j|^2.
#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Continuation of the complex logarithm: principal log of `value`, with the
/// imaginary part shifted by a multiple of 2π so it is nearest to `reference`.
#[inline]
pub fn ln_continued(value: C64, reference: C64) -> C64 {
    let principal = value.ln();
    let turns = ((reference.im - principal.im) / std::f64::consts::TAU).round();
    C64::new(principal.re, principal.im + turns * std::f64::consts::TAU)
}

/// Format a float with 17 significant digits (round-trips f64 exactly).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `count` uniformly spaced samples of [0, end], endpoints included.
pub fn linspace(end: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2);
    (0..count)
        .map(|k| end * k as f64 / (count - 1) as f64)
        .collect()
}
