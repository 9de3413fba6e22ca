//! Normalized Hill-model force relationships.
//!
//! The active/passive force-length and force-velocity curves are monotone
//! piecewise-cubic (Fritsch–Carlson / PCHIP) interpolants through the
//! classic Zajac knot tables; outside the tabulated range they hold their
//! end values. The tendon force-strain relation is analytic.

/// Strain at which the tendon leaves its exponential toe region.
pub const TENDON_TOE_STRAIN: f64 = 0.0127;
const TOE_SCALE: f64 = 0.06142;
const TOE_RATE: f64 = 124.929;
const LINEAR_SLOPE: f64 = 37.5;
const LINEAR_OFFSET: f64 = 0.2375;

const ACTIVE_FL_X: [f64; 17] = [
    -5.0, 0.0, 0.401, 0.402, 0.4035, 0.52725, 0.62875, 0.71875, 0.86125, 1.045, 1.2175, 1.43875,
    1.61875, 1.62, 1.621, 2.2, 5.0,
];
const ACTIVE_FL_Y: [f64; 17] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.226667, 0.636667, 0.856667, 0.95, 0.993333, 0.77, 0.246667, 0.0,
    0.0, 0.0, 0.0, 0.0,
];
const PASSIVE_FL_X: [f64; 13] = [
    -5.0, 0.998, 0.999, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.601, 1.602, 5.0,
];
const PASSIVE_FL_Y: [f64; 13] = [
    0.0, 0.0, 0.0, 0.0, 0.035, 0.12, 0.26, 0.55, 1.17, 2.0, 2.0, 2.0, 2.0,
];
const FV_X: [f64; 11] = [-10.0, -1.0, -0.6, -0.3, -0.1, 0.0, 0.1, 0.3, 0.6, 0.8, 10.0];
const FV_Y: [f64; 11] = [0.0, 0.0, 0.08, 0.2, 0.55, 1.0, 1.4, 1.6, 1.7, 1.75, 1.75];

/// Knot tables `(x, y)` for the active force-length curve.
pub fn active_fl_knots() -> (&'static [f64], &'static [f64]) {
    (&ACTIVE_FL_X, &ACTIVE_FL_Y)
}

pub fn passive_fl_knots() -> (&'static [f64], &'static [f64]) {
    (&PASSIVE_FL_X, &PASSIVE_FL_Y)
}

pub fn force_velocity_knots() -> (&'static [f64], &'static [f64]) {
    (&FV_X, &FV_Y)
}

/// Monotone piecewise-cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// # Panics
    /// If fewer than two knots are given, lengths differ, or `x` is not
    /// strictly increasing.
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len(), "need >= 2 matching knots");
        assert!(
            x.windows(2).all(|w| w[1] > w[0]),
            "knots must be strictly increasing"
        );
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            slopes: d,
        }
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let n = self.x.len();
        if xq <= self.x[0] {
            return self.y[0];
        }
        if xq >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&v| v <= xq) - 1;
        let h = self.x[k + 1] - self.x[k];
        let t = (xq - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

// Three-point end slope with the shape-preserving corrections of
// Fritsch & Carlson / Moler.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Tendon force-strain relation, normalized by maximal isometric force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TendonCurve {
    /// Exponential toe region up to 1.27 % strain, linear beyond.
    Standard,
    /// `stiffness · max(strain, 0)`; a large stiffness approximates a rigid tendon.
    Linear { stiffness: f64 },
}

impl TendonCurve {
    pub fn force(&self, strain: f64) -> f64 {
        match *self {
            TendonCurve::Standard => tendon_force_norm(strain),
            TendonCurve::Linear { stiffness } => stiffness * strain.max(0.0),
        }
    }
}

/// Normalized tendon force for a given strain.
///
/// The toe region is `0.06142·(exp(124.929·ε) − 1)`, which meets the linear
/// branch `37.5·ε − 0.2375` at ε = 0.0127 to within 1e-5.
pub fn tendon_force_norm(strain: f64) -> f64 {
    if strain <= 0.0 {
        0.0
    } else if strain <= TENDON_TOE_STRAIN {
        TOE_SCALE * (TOE_RATE * strain).exp_m1()
    } else {
        LINEAR_SLOPE * strain - LINEAR_OFFSET
    }
}

/// Strain that produces normalized tendon force `force`; inverse of
/// [`tendon_force_norm`], choosing the linear branch whenever it yields a
/// strain above the toe cut-off.
pub fn tendon_strain_for_force(force: f64) -> f64 {
    if force <= 0.0 {
        return 0.0;
    }
    let linear = (force + LINEAR_OFFSET) / LINEAR_SLOPE;
    if linear > TENDON_TOE_STRAIN {
        linear
    } else {
        (force / TOE_SCALE).ln_1p() / TOE_RATE
    }
}

/// The four normalized force relationships of the muscle-tendon unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub active_fl: MonotoneCubic,
    pub passive_fl: MonotoneCubic,
    pub fv: MonotoneCubic,
    pub tendon: TendonCurve,
}

impl CurveSet {
    pub fn standard() -> Self {
        Self {
            active_fl: MonotoneCubic::new(&ACTIVE_FL_X, &ACTIVE_FL_Y),
            passive_fl: MonotoneCubic::new(&PASSIVE_FL_X, &PASSIVE_FL_Y),
            fv: MonotoneCubic::new(&FV_X, &FV_Y),
            tendon: TendonCurve::Standard,
        }
    }

    pub fn with_tendon(mut self, tendon: TendonCurve) -> Self {
        self.tendon = tendon;
        self
    }
}

impl Default for CurveSet {
    fn default() -> Self {
        Self::standard()
    }
}
