//! Joint-angle to muscle-tendon length surrogates.
//!
//! Each muscle-tendon unit gets a cubic interpolating B-spline over one or two
//! joint angles (tensor product for two), fitted to a tabulated length grid
//! with not-a-knot end conditions. Moment arms are the analytic partial
//! derivatives of the spline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DEGREE: usize = 3;

/// Tabulated muscle-tendon lengths on a rectilinear grid of joint angles.
///
/// `lmt` is row-major: the first DOF varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryGrid {
    pub mtu: String,
    pub dofs: Vec<String>,
    pub knots: Vec<Vec<f64>>,
    pub lmt: Vec<f64>,
}

impl GeometryGrid {
    /// Samples `f` on the tensor grid spanned by `knots`.
    pub fn sample(
        mtu: impl Into<String>,
        dofs: Vec<String>,
        knots: Vec<Vec<f64>>,
        f: impl Fn(&[f64]) -> f64,
    ) -> Self {
        let mut lmt = Vec::new();
        match knots.len() {
            1 => lmt.extend(knots[0].iter().map(|&a| f(&[a]))),
            2 => {
                for &a in &knots[0] {
                    for &b in &knots[1] {
                        lmt.push(f(&[a, b]));
                    }
                }
            }
            _ => {}
        }
        Self {
            mtu: mtu.into(),
            dofs,
            knots,
            lmt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::InvalidModel(format!("geometry grid for {}: {msg}", self.mtu));
        if self.dofs.is_empty() || self.dofs.len() > 2 {
            return Err(err(format!("{} DOFs; 1 or 2 supported", self.dofs.len())));
        }
        if self.knots.len() != self.dofs.len() {
            return Err(err("knot vectors do not match DOF count".into()));
        }
        for (dof, k) in self.dofs.iter().zip(&self.knots) {
            if k.len() < DEGREE + 1 {
                return Err(err(format!("{dof} has {} knots; at least 4 required", k.len())));
            }
            if !k.windows(2).all(|w| w[1] > w[0]) || k.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("{dof} knots are not strictly increasing")));
            }
        }
        let expected: usize = self.knots.iter().map(Vec::len).product();
        if self.lmt.len() != expected {
            return Err(err(format!("{} lengths for {expected} grid nodes", self.lmt.len())));
        }
        if let Some(v) = self.lmt.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(err(format!("non-positive length {v}")));
        }
        Ok(())
    }

    /// Angular interval `[first knot, last knot]` for each DOF.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.knots
            .iter()
            .map(|k| (k[0], k[k.len() - 1]))
            .collect()
    }
}

/// Reads a grid CSV with columns `<joint1>[,<joint2>],lmt`.
pub fn load_grid(path: impl AsRef<Path>, mtu: &str) -> Result<GeometryGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let n_cols = headers.len();
    if n_cols < 2 || n_cols > 3 || headers.get(n_cols - 1).map(str::trim) != Some("lmt") {
        return Err(parse_err(1, "expected columns <joint>[,<joint>],lmt".into()));
    }
    let mut dofs = Vec::new();
    let mut to_rad = Vec::new();
    for h in headers.iter().take(n_cols - 1) {
        let h = h.trim();
        match h.strip_suffix("[deg]") {
            Some(name) => {
                dofs.push(name.trim().to_string());
                to_rad.push(true);
            }
            None => {
                dofs.push(h.trim_end_matches("[rad]").trim().to_string());
                to_rad.push(false);
            }
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != n_cols {
            return Err(parse_err(line, format!("expected {n_cols} fields")));
        }
        let mut row = Vec::with_capacity(n_cols);
        for (j, cell) in rec.iter().enumerate() {
            let mut v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?}")))?;
            if j < dofs.len() && to_rad[j] {
                v = v.to_radians();
            }
            row.push(v);
        }
        rows.push(row);
    }
    let mut knots: Vec<Vec<f64>> = (0..dofs.len())
        .map(|d| {
            let mut k: Vec<f64> = rows.iter().map(|r| r[d]).collect();
            k.sort_by(f64::total_cmp);
            k.dedup();
            k
        })
        .collect();
    let stride: usize = if dofs.len() == 2 { knots[1].len() } else { 1 };
    let total: usize = knots.iter().map(Vec::len).product();
    if rows.len() != total {
        return Err(parse_err(
            0,
            format!("{} rows do not form a complete {total}-node grid", rows.len()),
        ));
    }
    let mut lmt = vec![f64::NAN; total];
    for r in &rows {
        let mut idx = 0;
        for d in 0..dofs.len() {
            let i = knots[d].partition_point(|&k| k < r[d]);
            idx = if d == 0 { i * stride } else { idx + i };
        }
        if !lmt[idx].is_nan() {
            return Err(parse_err(0, "duplicate grid node".into()));
        }
        lmt[idx] = r[dofs.len()];
    }
    knots.shrink_to_fit();
    let grid = GeometryGrid {
        mtu: mtu.to_string(),
        dofs,
        knots,
        lmt,
    };
    grid.validate()?;
    Ok(grid)
}

pub fn write_grid(grid: &GeometryGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{},lmt", grid.dofs.join(",")).map_err(io)?;
    match grid.knots.len() {
        1 => {
            for (a, l) in grid.knots[0].iter().zip(&grid.lmt) {
                writeln!(out, "{a:?},{l:?}").map_err(io)?;
            }
        }
        _ => {
            let n2 = grid.knots[1].len();
            for (i, a) in grid.knots[0].iter().enumerate() {
                for (j, b) in grid.knots[1].iter().enumerate() {
                    writeln!(out, "{a:?},{b:?},{:?}", grid.lmt[i * n2 + j]).map_err(io)?;
                }
            }
        }
    }
    out.flush().map_err(io)
}

/// Cubic B-spline basis over not-a-knot knots for one angle axis.
#[derive(Debug, Clone, PartialEq)]
struct SplineAxis {
    nodes: Vec<f64>,
    t: Vec<f64>,
}

impl SplineAxis {
    fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        let mut t = Vec::with_capacity(n + DEGREE + 1);
        t.extend(std::iter::repeat_n(nodes[0], DEGREE + 1));
        t.extend_from_slice(&nodes[2..n - 2]);
        t.extend(std::iter::repeat_n(nodes[n - 1], DEGREE + 1));
        Self {
            nodes: nodes.to_vec(),
            t,
        }
    }

    fn n(&self) -> usize {
        self.nodes.len()
    }

    fn lo(&self) -> f64 {
        self.nodes[0]
    }

    fn hi(&self) -> f64 {
        self.nodes[self.n() - 1]
    }

    /// Knot span containing `x`, right-continuous except at the last node.
    fn span(&self, x: f64) -> usize {
        let n = self.n();
        if x >= self.t[n] {
            return n - 1;
        }
        let k = self.t.partition_point(|&v| v <= x) - 1;
        k.clamp(DEGREE, n - 1)
    }

    /// Nonzero basis functions on `span` and their first two derivatives.
    fn basis(&self, span: usize, x: f64) -> [[f64; DEGREE + 1]; 3] {
        basis_derivatives(&self.t, span, x)
    }

    fn collocation(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for (i, &x) in self.nodes.iter().enumerate() {
            let span = self.span(x);
            let b = self.basis(span, x);
            for j in 0..=DEGREE {
                a[(i, span - DEGREE + j)] = b[0][j];
            }
        }
        a
    }
}

// Basis functions and derivatives of a cubic B-spline (Piegl & Tiller A2.3).
fn basis_derivatives(t: &[f64], span: usize, x: f64) -> [[f64; DEGREE + 1]; 3] {
    const P: usize = DEGREE;
    const ND: usize = 2;
    let mut ndu = [[0.0f64; P + 1]; P + 1];
    let mut left = [0.0f64; P + 1];
    let mut right = [0.0f64; P + 1];
    ndu[0][0] = 1.0;
    for j in 1..=P {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[0.0f64; P + 1]; ND + 1];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let mut a = [[0.0f64; P + 1]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=ND {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = P - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2: usize = if r as isize - 1 <= pk as isize { k - 1 } else { P - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = P as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= fac;
        }
        fac *= (P - k) as f64;
    }
    ders
}

/// Length and gradient of a surrogate at one pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryEval {
    pub lmt: f64,
    /// `∂L/∂θ` per DOF of the surrogate; unused slots are zero.
    pub gradient: [f64; 2],
    /// True when some angle was outside the fitted domain and got clamped.
    pub clamped: bool,
}

/// Fitted interpolating spline for one muscle-tendon unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySurrogate {
    mtu: String,
    dofs: Vec<String>,
    axes: Vec<SplineAxis>,
    /// Row-major, first axis slowest.
    coeffs: Vec<f64>,
}

/// Fits the cubic interpolating spline through every node of `grid`.
pub fn fit_surrogate(grid: &GeometryGrid) -> Result<GeometrySurrogate> {
    grid.validate()?;
    let axes: Vec<SplineAxis> = grid.knots.iter().map(|k| SplineAxis::new(k)).collect();
    let singular = || Error::InvalidModel(format!("singular spline system for {}", grid.mtu));
    let coeffs = match axes.as_slice() {
        [a] => {
            let lu = a.collocation().lu();
            lu.solve(&DVector::from_column_slice(&grid.lmt))
                .ok_or_else(singular)?
                .as_slice()
                .to_vec()
        }
        [a, b] => {
            let (n1, n2) = (a.n(), b.n());
            // G is n1×n2 row-major; nalgebra is column-major.
            let g = DMatrix::from_row_slice(n1, n2, &grid.lmt);
            let x = a.collocation().lu().solve(&g).ok_or_else(singular)?;
            let ct = b
                .collocation()
                .lu()
                .solve(&x.transpose())
                .ok_or_else(singular)?;
            // ct is n2×n1; row-major n1×n2 storage equals ct's column-major data
            ct.as_slice().to_vec()
        }
        _ => unreachable!("validated DOF count"),
    };
    Ok(GeometrySurrogate {
        mtu: grid.mtu.clone(),
        dofs: grid.dofs.clone(),
        axes,
        coeffs,
    })
}

impl GeometrySurrogate {
    pub fn mtu(&self) -> &str {
        &self.mtu
    }

    pub fn dofs(&self) -> &[String] {
        &self.dofs
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a.lo(), a.hi())).collect()
    }

    /// Length and gradient at `angles` (one per DOF, in `dofs()` order).
    /// Angles outside the domain are clamped to it.
    pub fn evaluate(&self, angles: &[f64]) -> GeometryEval {
        let mut clamped = false;
        let mut spans = [0usize; 2];
        let mut xs = [0.0; 2];
        for (d, axis) in self.axes.iter().enumerate() {
            let x = angles[d];
            let c = x.clamp(axis.lo(), axis.hi());
            clamped |= c != x;
            xs[d] = c;
            spans[d] = axis.span(c);
        }
        let (lmt, gradient) = self.eval_at_spans(&spans, &xs);
        GeometryEval {
            lmt,
            gradient,
            clamped,
        }
    }

    fn eval_at_spans(&self, spans: &[usize; 2], xs: &[f64; 2]) -> (f64, [f64; 2]) {
        let d = self.eval_derivatives_at_spans(spans, xs);
        (d.value, d.first)
    }

    fn eval_derivatives_at_spans(&self, spans: &[usize; 2], xs: &[f64; 2]) -> Derivatives {
        match self.axes.as_slice() {
            [a] => {
                let b = a.basis(spans[0], xs[0]);
                let base = spans[0] - DEGREE;
                let c = &self.coeffs[base..base + DEGREE + 1];
                let dot = |w: &[f64; 4]| w.iter().zip(c).map(|(w, c)| w * c).sum::<f64>();
                Derivatives {
                    value: dot(&b[0]),
                    first: [dot(&b[1]), 0.0],
                    second: [dot(&b[2]), 0.0],
                }
            }
            [a, b] => {
                let ba = a.basis(spans[0], xs[0]);
                let bb = b.basis(spans[1], xs[1]);
                let n2 = b.n();
                let (oa, ob) = (spans[0] - DEGREE, spans[1] - DEGREE);
                let mut out = Derivatives::default();
                for i in 0..=DEGREE {
                    let row = &self.coeffs[(oa + i) * n2 + ob..(oa + i) * n2 + ob + DEGREE + 1];
                    let mut s = [0.0; 3];
                    for (j, c) in row.iter().enumerate() {
                        s[0] += bb[0][j] * c;
                        s[1] += bb[1][j] * c;
                        s[2] += bb[2][j] * c;
                    }
                    out.value += ba[0][i] * s[0];
                    out.first[0] += ba[1][i] * s[0];
                    out.first[1] += ba[0][i] * s[1];
                    out.second[0] += ba[2][i] * s[0];
                    out.second[1] += ba[0][i] * s[2];
                }
                out
            }
            _ => unreachable!(),
        }
    }

    fn check_angles(&self, angles: &[f64]) -> Result<()> {
        if angles.len() != self.dofs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} angles, got {}",
                self.mtu,
                self.dofs.len(),
                angles.len()
            )));
        }
        if angles.iter().any(|a| a.is_nan()) {
            return Err(Error::InvalidArgument(format!("NaN angle for {}", self.mtu)));
        }
        Ok(())
    }

    /// Muscle-tendon length at `angles`.
    pub fn lmt(&self, angles: &[f64]) -> Result<f64> {
        self.check_angles(angles)?;
        let ev = self.evaluate(angles);
        if ev.clamped {
            log::debug!("{}: angles {angles:?} clamped to fitted domain", self.mtu);
        }
        Ok(ev.lmt)
    }

    /// `∂L/∂θ` for the named joint.
    pub fn moment_arm(&self, angles: &[f64], joint: &str) -> Result<f64> {
        self.check_angles(angles)?;
        let d = self
            .dofs
            .iter()
            .position(|j| j == joint)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("{} does not span joint {joint}", self.mtu))
            })?;
        Ok(self.evaluate(angles).gradient[d])
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Derivatives {
    value: f64,
    first: [f64; 2],
    second: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn grid1(f: impl Fn(f64) -> f64, n: usize) -> GeometryGrid {
        GeometryGrid::sample("m", vec!["ankle".into()], vec![linspace(-0.6, 0.5, n)], |a| f(a[0]))
    }

    fn grid2(f: impl Fn(f64, f64) -> f64, n: usize) -> GeometryGrid {
        GeometryGrid::sample(
            "m",
            vec!["ankle".into(), "knee".into()],
            vec![linspace(-0.6, 0.5, n), linspace(0.0, 1.5, n)],
            |a| f(a[0], a[1]),
        )
    }

    #[test]
    fn constant_grid_is_reproduced() {
        let s = fit_surrogate(&grid1(|_| 0.4, 7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = rng.random_range(-0.6..0.5);
            assert!((s.lmt(&[a]).unwrap() - 0.4).abs() <= 1e-12);
            assert!(s.moment_arm(&[a], "ankle").unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn affine_grid_is_reproduced() {
        let s = fit_surrogate(&grid1(|t| 0.4 - 0.05 * t, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = rng.random_range(-0.6..0.5);
            assert!((s.lmt(&[a]).unwrap() - (0.4 - 0.05 * a)).abs() <= 1e-9);
            assert!((s.moment_arm(&[a], "ankle").unwrap() + 0.05).abs() <= 1e-9);
        }
    }

    #[test]
    fn minimal_four_knot_grid_fits() {
        let s = fit_surrogate(&grid1(|t| 0.3 + 0.01 * t * t * t, 4)).unwrap();
        for a in linspace(-0.6, 0.5, 13) {
            assert!((s.lmt(&[a]).unwrap() - (0.3 + 0.01 * a * a * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_grid_interpolates_knots() {
        let g = grid1(|t| 0.35 + 0.02 * (3.0 * t).sin(), 11);
        let s = fit_surrogate(&g).unwrap();
        for (k, l) in g.knots[0].iter().zip(&g.lmt) {
            assert!((s.lmt(&[*k]).unwrap() - l).abs() <= 1e-9);
        }
    }

    #[test]
    fn bilinear_grid_is_reproduced() {
        let f = |t: f64, p: f64| 0.5 - 0.03 * t - 0.02 * p + 0.01 * t * p;
        let g = grid2(f, 11);
        let s = fit_surrogate(&g).unwrap();
        let mut worst: f64 = 0.0;
        for t in linspace(-0.6, 0.5, 50) {
            for p in linspace(0.0, 1.5, 50) {
                worst = worst.max((s.lmt(&[t, p]).unwrap() - f(t, p)).abs());
            }
        }
        assert!(worst <= 1e-6, "max error {worst}");
        // interpolation at every node
        for (i, t) in g.knots[0].iter().enumerate() {
            for (j, p) in g.knots[1].iter().enumerate() {
                assert!((s.lmt(&[*t, *p]).unwrap() - g.lmt[i * 11 + j]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_central_difference() {
        let f = |t: f64, p: f64| 0.45 + 0.03 * (2.0 * t).sin() - 0.02 * p * p + 0.01 * t * p;
        let s = fit_surrogate(&grid2(f, 12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..100 {
            let t = rng.random_range(-0.59..0.49);
            let p = rng.random_range(0.01..1.49);
            let ev = s.evaluate(&[t, p]);
            let dt = (s.lmt(&[t + h, p]).unwrap() - s.lmt(&[t - h, p]).unwrap()) / (2.0 * h);
            let dp = (s.lmt(&[t, p + h]).unwrap() - s.lmt(&[t, p - h]).unwrap()) / (2.0 * h);
            assert!((ev.gradient[0] - dt).abs() <= 1e-6);
            assert!((ev.gradient[1] - dp).abs() <= 1e-6);
        }
    }

    #[test]
    fn value_and_slope_continuous_across_knots() {
        let g = grid1(|t| 0.35 + 0.02 * (3.0 * t).sin() + 0.01 * t * t, 11);
        let s = fit_surrogate(&g).unwrap();
        let axis = &s.axes[0];
        // interior spline knots are t[4..n]
        for k in DEGREE + 1..axis.n() {
            let x = axis.t[k];
            let left = s.eval_derivatives_at_spans(&[k - 1, 0], &[x, 0.0]);
            let right = s.eval_derivatives_at_spans(&[k, 0], &[x, 0.0]);
            assert!((left.value - right.value).abs() <= 1e-9);
            assert!((left.first[0] - right.first[0]).abs() <= 1e-9);
            assert!((left.second[0] - right.second[0]).abs() <= 1e-7);
        }
    }

    #[test]
    fn out_of_domain_is_clamped() {
        let s = fit_surrogate(&grid1(|t| 0.4 - 0.05 * t, 6)).unwrap();
        let ev = s.evaluate(&[2.0]);
        assert!(ev.clamped);
        assert!((ev.lmt - (0.4 - 0.05 * 0.5)).abs() < 1e-12);
        assert!(!s.evaluate(&[0.1]).clamped);
    }

    #[test]
    fn nan_and_unknown_joint_are_rejected() {
        let s = fit_surrogate(&grid1(|t| 0.4 - 0.05 * t, 6)).unwrap();
        assert!(s.lmt(&[f64::NAN]).is_err());
        assert!(s.moment_arm(&[0.0], "knee").is_err());
    }

    #[test]
    fn bad_grids_are_rejected() {
        let mut g = grid1(|_| 0.4, 3);
        assert!(fit_surrogate(&g).is_err());
        g = grid1(|_| 0.4, 5);
        g.knots[0].swap(1, 2);
        assert!(fit_surrogate(&g).is_err());
        g = grid1(|_| -0.1, 5);
        assert!(fit_surrogate(&g).is_err());
    }

    #[test]
    fn grid_csv_round_trip() {
        let g = grid2(|t, p| 0.5 - 0.03 * t + 0.01 * p, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_grid(&g, &path).unwrap();
        let back = load_grid(&path, "m").unwrap();
        assert_eq!(back, g);
    }
}
