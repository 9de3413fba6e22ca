//! Hill-type muscle-tendon unit with an elastic tendon.
//!
//! Given the whole-unit length, activation and the fiber velocity estimate
//! from the previous instant, [`solve_equilibrium`] finds the fiber length at
//! which tendon force equals the fiber force projected through the pennation
//! angle. [`MtuUnit`] wraps that solve with the per-stream velocity estimator.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::curves::CurveSet;
use crate::error::{Error, Result};
use crate::model::MtuParams;
use crate::signal::Biquad;

/// Fiber velocities are normalized by this many optimal fiber lengths per second.
pub const VELOCITY_SCALE: f64 = 10.0;
/// Cutoff of the low-pass applied to the finite-difference fiber velocity.
pub const VELOCITY_FILTER_HZ: f64 = 20.0;
/// Initial bracket on fiber length, in optimal fiber lengths.
pub const BRACKET: (f64, f64) = (0.3, 1.8);
pub const MAX_ITER: usize = 100;
/// Residual tolerance as a fraction of maximal isometric force.
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

/// `(l_t − l_slack) / l_slack`.
#[inline]
pub fn tendon_strain(l_t: f64, l_slack: f64) -> f64 {
    (l_t - l_slack) / l_slack
}

/// Pennation angle at a given fiber length under constant muscle thickness.
///
/// The second value is true when the fiber was shorter than the muscle
/// thickness and the angle was clamped to 90°.
pub fn pennation(fiber_length: f64, p: &MtuParams) -> (f64, bool) {
    let ratio = p.l_opt * p.alpha_opt.sin() / fiber_length;
    if ratio >= 1.0 {
        (FRAC_PI_2, true)
    } else {
        (ratio.asin(), false)
    }
}

/// Components of fiber force (N).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FiberForce {
    pub active: f64,
    pub passive: f64,
    pub damping: f64,
    /// Sum of the components, floored at zero.
    pub total: f64,
}

/// Fiber force for normalized length and velocity at activation `a`.
pub fn fiber_force(l_norm: f64, v_norm: f64, a: f64, p: &MtuParams, c: &CurveSet) -> FiberForce {
    let active = p.f_max_iso * c.active_fl.eval(l_norm) * c.fv.eval(v_norm) * a;
    let passive = p.f_max_iso * c.passive_fl.eval(l_norm);
    let damping = p.f_max_iso * p.damping * v_norm;
    FiberForce {
        active,
        passive,
        damping,
        total: (active + passive + damping).max(0.0),
    }
}

/// How an equilibrium was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// No sign change even after widening the bracket to the stiff-tendon
    /// solution; the state is that boundary solution.
    StiffTendonFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtuForces {
    /// Force transmitted by the whole unit (= tendon force).
    pub f_mtu: f64,
    pub f_active: f64,
    pub f_passive: f64,
    pub f_damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtuState {
    pub lmt: f64,
    pub fiber_length: f64,
    pub fiber_velocity_norm: f64,
    pub pennation: f64,
    pub tendon_strain: f64,
    pub forces: MtuForces,
    /// `tendon force − fiber force · cos(pennation)` (N).
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Pennation was clamped at 90° somewhere during the solve.
    pub pennation_clamped: bool,
}

struct Residual<'a> {
    lmt: f64,
    v_norm: f64,
    a: f64,
    p: &'a MtuParams,
    c: &'a CurveSet,
}

impl Residual<'_> {
    fn eval(&self, fiber_length: f64) -> f64 {
        self.full(fiber_length).residual
    }

    fn full(&self, fiber_length: f64) -> MtuState {
        let p = self.p;
        let (alpha, clamped) = pennation(fiber_length, p);
        let cos_a = alpha.cos();
        let l_t = self.lmt - fiber_length * cos_a;
        let strain = tendon_strain(l_t, p.l_slack);
        let f_t = p.f_max_iso * self.c.tendon.force(strain);
        let ff = fiber_force(fiber_length / p.l_opt, self.v_norm, self.a, p, self.c);
        MtuState {
            lmt: self.lmt,
            fiber_length,
            fiber_velocity_norm: self.v_norm,
            pennation: alpha,
            tendon_strain: strain,
            forces: MtuForces {
                f_mtu: f_t,
                f_active: ff.active,
                f_passive: ff.passive,
                f_damping: ff.damping,
            },
            residual: f_t - ff.total * cos_a,
            iterations: 0,
            status: SolveStatus::Converged,
            pennation_clamped: clamped,
        }
    }
}

/// Fiber length where the unit is in equilibrium with a slack tendon.
fn stiff_tendon_length(lmt: f64, p: &MtuParams) -> f64 {
    let along = (lmt - p.l_slack).max(0.0);
    let thickness = p.l_opt * p.alpha_opt.sin();
    along.hypot(thickness)
}

/// Solves tendon force = fiber force · cos(pennation) for fiber length.
///
/// `tol` is the accepted absolute residual in newtons.
pub fn solve_equilibrium(
    lmt: f64,
    v_norm_prev: f64,
    a: f64,
    p: &MtuParams,
    c: &CurveSet,
    tol: f64,
) -> Result<MtuState> {
    if !lmt.is_finite() || !(0.0..=1.0).contains(&a) || !v_norm_prev.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "equilibrium inputs lmt={lmt}, a={a}, v={v_norm_prev}"
        )));
    }
    let r = Residual {
        lmt,
        v_norm: v_norm_prev,
        a,
        p,
        c,
    };
    let thickness = p.l_opt * p.alpha_opt.sin();
    // fibers cannot be shorter than the muscle is thick
    let floor = thickness * (1.0 + 1e-9);
    let mut lo = (BRACKET.0 * p.l_opt).max(floor);
    let mut hi = (BRACKET.1 * p.l_opt).max(lo * 1.5);
    let mut f_lo = r.eval(lo);
    let mut f_hi = r.eval(hi);

    if f_lo * f_hi > 0.0 {
        let stiff = stiff_tendon_length(lmt, p).max(floor);
        if f_lo > 0.0 && stiff > hi {
            // tendon still taut at the upper bound
            hi = stiff;
            f_hi = r.eval(hi);
        } else if f_lo < 0.0 && stiff < lo {
            lo = stiff;
            f_lo = r.eval(lo);
        }
    }
    if f_lo == 0.0 {
        return Ok(finish(&r, lo, 0, SolveStatus::Converged));
    }
    if f_hi == 0.0 {
        return Ok(finish(&r, hi, 0, SolveStatus::Converged));
    }
    if f_lo * f_hi > 0.0 {
        let fallback = stiff_tendon_length(lmt, p).clamp(lo, hi);
        return Ok(finish(&r, fallback, 0, SolveStatus::StiffTendonFallback));
    }
    let (root, iters) = brent(|x| r.eval(x), lo, hi, f_lo, f_hi, tol)?;
    Ok(finish(&r, root, iters, SolveStatus::Converged))
}

fn finish(r: &Residual<'_>, fiber_length: f64, iterations: usize, status: SolveStatus) -> MtuState {
    let mut s = r.full(fiber_length);
    s.iterations = iterations;
    s.status = status;
    s
}

/// Brent–Dekker root finding on a bracket with `f(a)·f(b) < 0`.
///
/// Stops once `|f| <= ftol`; if the bracket collapses to machine precision
/// first, or `MAX_ITER` is reached, the residual is reported as an error.
fn brent(
    f: impl Fn(f64) -> f64,
    a0: f64,
    b0: f64,
    fa0: f64,
    fb0: f64,
    ftol: f64,
) -> Result<(f64, usize)> {
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        if fb.abs() <= ftol {
            return Ok((b, iter - 1));
        }
        let xtol = 2.0 * f64::EPSILON * b.abs();
        let m = 0.5 * (c - b);
        if m.abs() <= xtol {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: fb.abs(),
            });
        }
        if e.abs() >= xtol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                // secant
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                // inverse quadratic interpolation
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (xtol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > xtol { d } else { xtol.copysign(m) };
        fb = f(b);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        residual: fb.abs(),
    })
}

/// Streaming muscle-tendon unit: owns the fiber-velocity estimator state.
#[derive(Debug, Clone)]
pub struct MtuUnit {
    params: MtuParams,
    curves: Arc<CurveSet>,
    prev_fiber: Option<f64>,
    filter: Option<(f64, Biquad)>,
    v_norm: f64,
}

impl MtuUnit {
    pub fn new(params: MtuParams, curves: Arc<CurveSet>) -> Self {
        Self {
            params,
            curves,
            prev_fiber: None,
            filter: None,
            v_norm: 0.0,
        }
    }

    pub fn params(&self) -> &MtuParams {
        &self.params
    }

    /// Normalized fiber velocity estimate to be used by the next step.
    pub fn velocity_norm(&self) -> f64 {
        self.v_norm
    }

    pub fn reset(&mut self) {
        self.prev_fiber = None;
        self.filter = None;
        self.v_norm = 0.0;
    }

    /// Advances the unit by `dt` seconds to length `lmt` at activation `a`.
    ///
    /// The fiber force uses the velocity estimated from the preceding
    /// equilibria; the new equilibrium then updates that estimate.
    pub fn step(&mut self, lmt: f64, a: f64, dt: f64) -> Result<MtuState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let tol = RELATIVE_TOLERANCE * self.params.f_max_iso;
        let state = solve_equilibrium(lmt, self.v_norm, a, &self.params, &self.curves, tol)?;
        let filter = match &mut self.filter {
            Some((fdt, f)) if (*fdt - dt).abs() <= 1e-9 * dt => f,
            slot => &mut slot.insert((dt, Biquad::lowpass(VELOCITY_FILTER_HZ, dt))).1,
        };
        let raw = match self.prev_fiber {
            Some(prev) => (state.fiber_length - prev) / dt,
            None => 0.0,
        };
        let v = filter.process(raw);
        self.v_norm = v / (VELOCITY_SCALE * self.params.l_opt);
        self.prev_fiber = Some(state.fiber_length);
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::TendonCurve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn soleus() -> MtuParams {
        MtuParams {
            shape_factor: -1.0,
            f_max_iso: 2839.0,
            l_opt: 0.05,
            l_slack: 0.25,
            alpha_opt: 0.436,
            damping: 0.1,
        }
    }

    fn unpennated() -> MtuParams {
        MtuParams {
            alpha_opt: 0.0,
            ..soleus()
        }
    }

    #[test]
    fn strain_examples() {
        assert_eq!(tendon_strain(0.25, 0.25), 0.0);
        assert!((tendon_strain(1.05 * 0.25, 0.25) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn pennation_examples() {
        let mut p = unpennated();
        assert_eq!(pennation(0.03, &p).0, 0.0);
        p.alpha_opt = 0.3;
        assert!((pennation(p.l_opt, &p).0 - 0.3).abs() < 1e-12);
        p.l_opt = 0.05;
        p.alpha_opt = 0.2;
        let (a, clamped) = pennation(0.06, &p);
        assert!((a - (0.05 * 0.2f64.sin() / 0.06).asin()).abs() < 1e-15);
        assert!((a - 0.16632).abs() < 1e-5);
        assert!(!clamped);
        assert!(pennation(0.001, &p).1);
    }

    #[test]
    fn fiber_force_examples() {
        let c = CurveSet::standard();
        let p = soleus();
        assert_eq!(fiber_force(1.0, 0.0, 0.0, &p, &c).total, 0.0);
        let f = fiber_force(1.045, 0.0, 1.0, &p, &c);
        assert!((f.active - p.f_max_iso * 0.993333).abs() < 1e-9);
        let f = fiber_force(1.2, 0.0, 0.5, &p, &c);
        let expected = p.f_max_iso * (c.active_fl.eval(1.2) * 0.5 + 0.12);
        assert!((f.total - expected).abs() < 1e-9);
    }

    #[test]
    fn damping_cannot_push() {
        let c = CurveSet::standard();
        let p = MtuParams { damping: 5.0, ..soleus() };
        assert_eq!(fiber_force(1.0, -0.9, 0.0, &p, &c).total, 0.0);
    }

    #[test]
    fn rigid_tendon_limit() {
        let c = CurveSet::standard().with_tendon(TendonCurve::Linear { stiffness: 1e6 });
        let p = soleus();
        // Lengths where the passive fiber is stretched, so the root is unique.
        for lmt in [0.31, 0.32, 0.33, 0.34] {
            let s = solve_equilibrium(lmt, 0.0, 0.0, &p, &c, 1e-6 * p.f_max_iso).unwrap();
            let along = s.fiber_length * s.pennation.cos();
            assert!((along - (lmt - p.l_slack)).abs() <= 1e-6, "lmt {lmt}");
        }
    }

    #[test]
    fn residual_within_tolerance_on_random_draws() {
        let c = CurveSet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p = MtuParams {
                shape_factor: -1.0,
                f_max_iso: rng.random_range(200.0..4000.0),
                l_opt: rng.random_range(0.03..0.12),
                l_slack: rng.random_range(0.1..0.4),
                alpha_opt: rng.random_range(0.0..0.5),
                damping: 0.1,
            };
            let lmt = p.l_slack + p.l_opt * rng.random_range(0.6..1.5);
            let a = rng.random_range(0.0..1.0);
            let tol = RELATIVE_TOLERANCE * p.f_max_iso;
            let s = solve_equilibrium(lmt, 0.0, a, &p, &c, tol).unwrap();
            if s.status == SolveStatus::Converged {
                assert!(s.residual.abs() <= tol);
            }
        }
    }

    #[test]
    fn slack_unit_transmits_no_force() {
        let c = CurveSet::standard();
        let p = soleus();
        for lmt in [0.2, 0.24, 0.249] {
            let s = solve_equilibrium(lmt, 0.0, 0.0, &p, &c, 1e-3).unwrap();
            assert_eq!(s.forces.f_mtu, 0.0);
        }
        let s = solve_equilibrium(0.249, 0.0, 0.0, &p, &c, 1e-3).unwrap();
        assert_eq!(s.forces.f_mtu, 0.0);
    }

    #[test]
    fn stationary_inputs_converge() {
        let mut u = MtuUnit::new(soleus(), Arc::new(CurveSet::standard()));
        let mut last = None;
        for _ in 0..100 {
            last = Some(u.step(0.30, 0.4, 1e-3).unwrap());
        }
        assert!(u.velocity_norm().abs() < 1e-12);
        let again = u.step(0.30, 0.4, 1e-3).unwrap();
        assert_eq!(again.fiber_length, last.unwrap().fiber_length);
    }

    #[test]
    fn ramp_velocity_sign_follows_ramp() {
        for slope in [0.02, -0.02] {
            let mut u = MtuUnit::new(soleus(), Arc::new(CurveSet::standard()));
            for k in 0..300 {
                u.step(0.30 + slope * k as f64 * 1e-3, 0.3, 1e-3).unwrap();
            }
            assert_eq!(u.velocity_norm().signum(), slope.signum());
        }
    }

    #[test]
    fn rejects_bad_step() {
        let mut u = MtuUnit::new(soleus(), Arc::new(CurveSet::standard()));
        assert!(u.step(0.3, 0.5, 0.0).is_err());
        assert!(u.step(f64::NAN, 0.5, 1e-3).is_err());
        assert!(u.step(0.3, 1.5, 1e-3).is_err());
    }
}
