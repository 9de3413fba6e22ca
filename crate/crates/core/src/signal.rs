//! Second-order IIR sections obtained from analog prototypes by the
//! bilinear transform.

use std::f64::consts::{PI, SQRT_2};

/// Transposed direct-form II biquad.
#[derive(Debug, Clone, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    /// Discretizes `(b2 s² + b1 s + b0) / (a2 s² + a1 s + a0)` with the
    /// bilinear transform at sample period `dt`.
    ///
    /// Coefficients are ordered `[x0, x1, x2]` by ascending power of `s`.
    pub fn from_analog(num: [f64; 3], den: [f64; 3], dt: f64) -> Self {
        let k = 2.0 / dt;
        let k2 = k * k;
        let z = |c: [f64; 3]| {
            [
                c[2] * k2 + c[1] * k + c[0],
                2.0 * (c[0] - c[2] * k2),
                c[2] * k2 - c[1] * k + c[0],
            ]
        };
        let bz = z(num);
        let az = z(den);
        let norm = az[0];
        Self {
            b: [bz[0] / norm, bz[1] / norm, bz[2] / norm],
            a: [az[1] / norm, az[2] / norm],
            s1: 0.0,
            s2: 0.0,
        }
    }

    /// Butterworth low-pass with unit DC gain, prewarped so the -3 dB point
    /// lands on `cutoff_hz` exactly.
    pub fn lowpass(cutoff_hz: f64, dt: f64) -> Self {
        let w = prewarp(cutoff_hz, dt);
        Self::from_analog([w * w, 0.0, 0.0], [w * w, SQRT_2 * w, 1.0], dt)
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// Largest pole magnitude of the discrete section.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        } else {
            // complex pair: |p|² = a2
            a2.sqrt()
        }
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0
    }

    /// Steady-state gain for a constant input.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Analog angular frequency that maps onto `hz` after the bilinear transform.
pub fn prewarp(hz: f64, dt: f64) -> f64 {
    2.0 / dt * (PI * hz * dt).tan()
}
