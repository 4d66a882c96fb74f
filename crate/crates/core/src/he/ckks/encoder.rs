//! Canonical-embedding encoder for real slot vectors.
//!
//! Slot `j` is the evaluation of the message polynomial at `zeta^(5^j)`, with
//! `zeta = exp(i*pi/d)`; its conjugate root carries the same (real) value.
//! With this ordering the automorphism `X -> X^(5^k)` rotates slots left by k.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Encoder {
    degree: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// zeta^i for i in 0..d.
    twist: Vec<Complex64>,
    /// Index t of the root zeta^(2t+1) = zeta^(5^j) for slot j.
    slot_pos: Vec<usize>,
    /// Index of the conjugate root zeta^(-5^j).
    conj_pos: Vec<usize>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("degree", &self.degree).finish()
    }
}

impl Encoder {
    pub fn new(degree: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(degree);
        let inverse = planner.plan_fft_inverse(degree);
        let twist = (0..degree)
            .map(|i| Complex64::from_polar(1.0, std::f64::consts::PI * i as f64 / degree as f64))
            .collect();
        let two_d = 2 * degree as u64;
        let slots = degree / 2;
        let mut slot_pos = Vec::with_capacity(slots);
        let mut conj_pos = Vec::with_capacity(slots);
        let mut g = 1u64;
        for _ in 0..slots {
            slot_pos.push(((g - 1) / 2) as usize);
            conj_pos.push(((two_d - g - 1) / 2) as usize);
            g = g * 5 % two_d;
        }
        Self { degree, forward, inverse, twist, slot_pos, conj_pos }
    }

    /// Real coefficients of the polynomial whose slots are `values`.
    pub fn embed_inverse(&self, values: &[f64]) -> Vec<f64> {
        let d = self.degree;
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        for (j, &v) in values.iter().enumerate() {
            buf[self.slot_pos[j]] = Complex64::new(v, 0.0);
            buf[self.conj_pos[j]] = Complex64::new(v, 0.0);
        }
        // m_i = (1/d) zeta^{-i} sum_t v_t exp(-2 pi i t i / d)
        self.forward.process(&mut buf);
        let inv_d = 1.0 / d as f64;
        buf.iter().zip(&self.twist).map(|(x, w)| (x * w.conj()).re * inv_d).collect()
    }

    /// Slot values of the polynomial with real coefficients `coeffs`.
    pub fn embed(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = coeffs.iter().zip(&self.twist).map(|(&c, w)| w * c).collect();
        // v_t = sum_i (m_i zeta^i) exp(+2 pi i t i / d)
        self.inverse.process(&mut buf);
        self.slot_pos.iter().map(|&t| buf[t].re).collect()
    }
}
