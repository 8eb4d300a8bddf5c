//! Uniform tensor grids over boxes and annuli in R^N (N = 1, 2, 3), with
//! discrete gradients, rectangle-rule quadrature and radial quadrature.
//!
//! Functions are extended by zero outside the box; annulus masks freeze the
//! excluded nodes at exactly zero (Dirichlet by masking).

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, fit_power_law};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const MAX_DIM: usize = 3;

/// Surface measure of the unit sphere S^{n-1}.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("dim {n} out of range"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points_per_axis: usize,
    /// `(r_in, r_out)`: nodes with |x - center| outside this band are masked.
    pub annulus: Option<(f64, f64)>,
}

impl GridSpec {
    pub fn new_box(dim: usize, center: &[f64], half_width: f64, m: usize) -> Result<Self> {
        let spec = GridSpec {
            dim,
            center: center.to_vec(),
            half_width,
            points_per_axis: m,
            annulus: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn new_annulus(
        dim: usize,
        center: &[f64],
        half_width: f64,
        m: usize,
        r_in: f64,
        r_out: f64,
    ) -> Result<Self> {
        let spec = GridSpec {
            dim,
            center: center.to_vec(),
            half_width,
            points_per_axis: m,
            annulus: Some((r_in, r_out)),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dim {} not in 1..=3", self.dim)));
        }
        if self.center.len() != self.dim {
            return Err(Error::InvalidGrid("center length != dim".into()));
        }
        if self.points_per_axis < 3 {
            return Err(Error::InvalidGrid("need at least 3 points per axis".into()));
        }
        if self.points_per_axis % 2 == 0 {
            // odd so the center is a node
            return Err(Error::InvalidGrid("points_per_axis must be odd".into()));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::InvalidGrid("half_width must be positive".into()));
        }
        if let Some((r_in, r_out)) = self.annulus {
            let diag = self.half_width * (self.dim as f64).sqrt();
            if !(0.0 <= r_in && r_in < r_out && r_out <= diag * (1.0 + 1e-12)) {
                return Err(Error::InvalidGrid(format!(
                    "annulus ({r_in}, {r_out}) not within [0, L*sqrt(N)] = [0, {diag}]"
                )));
            }
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.points_per_axis - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.step().powi(self.dim as i32)
    }

    #[inline]
    pub fn unravel(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let m = self.points_per_axis;
        let mut out = [0usize; MAX_DIM];
        for d in (0..self.dim).rev() {
            out[d] = idx % m;
            idx /= m;
        }
        out
    }

    #[inline]
    pub fn ravel(&self, multi: &[usize; MAX_DIM]) -> usize {
        let m = self.points_per_axis;
        let mut idx = 0;
        for d in 0..self.dim {
            idx = idx * m + multi[d];
        }
        idx
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; MAX_DIM] {
        let h = self.step();
        let multi = self.unravel(idx);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.center[d] - self.half_width + multi[d] as f64 * h;
        }
        x
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let x = self.coord(idx);
        let mut s = 0.0;
        for d in 0..self.dim {
            let dx = x[d] - self.center[d];
            s += dx * dx;
        }
        s.sqrt()
    }

    /// Annulus mask; box-interior nodes of a plain box grid are never masked.
    pub fn is_masked(&self, idx: usize) -> bool {
        match self.annulus {
            None => false,
            Some((r_in, r_out)) => {
                let r = self.radius(idx);
                r < r_in || r > r_out
            }
        }
    }

    /// True on box faces. Dirichlet solvers freeze these nodes at zero.
    pub fn is_face(&self, idx: usize) -> bool {
        let multi = self.unravel(idx);
        (0..self.dim).any(|d| multi[d] == 0 || multi[d] == self.points_per_axis - 1)
    }

    /// Tensor-product trapezoid weight: 1/2 per axis sitting on a face.
    #[inline]
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let multi = self.unravel(idx);
        let mut w = 1.0;
        for d in 0..self.dim {
            if multi[d] == 0 || multi[d] == self.points_per_axis - 1 {
                w *= 0.5;
            }
        }
        w
    }
}

/// Real-valued function sampled on a grid; masked nodes are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.node_count();
        GridFunction {
            spec,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = spec.node_count();
        let mut values = vec![0.0; n];
        for (i, v) in values.iter_mut().enumerate() {
            if !spec.is_masked(i) {
                let x = spec.coord(i);
                *v = f(&x[..spec.dim]);
            }
        }
        GridFunction { spec, values }
    }

    pub fn from_values(spec: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.node_count() {
            return Err(Error::InvalidGrid("value vector length mismatch".into()));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if spec.is_masked(i) {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidGrid(format!("non-finite value at node {i}")));
            }
        }
        Ok(GridFunction { spec, values })
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Re-apply the mask (used after in-place arithmetic).
    pub fn enforce_mask(&mut self) {
        if self.spec.annulus.is_some() {
            for i in 0..self.values.len() {
                if self.spec.is_masked(i) {
                    self.values[i] = 0.0;
                }
            }
        }
    }

    /// Tensor trapezoid rule: h^N * weighted sum over unmasked nodes.
    pub fn integrate(&self) -> f64 {
        self.integrate_with(|_, v| v)
    }

    /// Trapezoid rule of `expr(node_index, value)` over unmasked nodes.
    pub fn integrate_with(&self, expr: impl Fn(usize, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            if !self.spec.is_masked(i) {
                s += self.spec.quad_weight(i) * expr(i, v);
            }
        }
        s * self.spec.cell_volume()
    }

    /// Centered differences in the interior, one-sided at box faces.
    /// Masked nodes produce zero in every component.
    pub fn gradient(&self) -> Vec<GridFunction> {
        let spec = &self.spec;
        let m = spec.points_per_axis;
        let h = spec.step();
        let mut comps = Vec::with_capacity(spec.dim);
        for d in 0..spec.dim {
            let mut g = vec![0.0; spec.node_count()];
            for i in 0..spec.node_count() {
                if spec.is_masked(i) {
                    continue;
                }
                let multi = spec.unravel(i);
                let k = multi[d];
                let mut lo = multi;
                let mut hi = multi;
                g[i] = if k == 0 {
                    hi[d] = 1;
                    (self.values[spec.ravel(&hi)] - self.values[i]) / h
                } else if k == m - 1 {
                    lo[d] = m - 2;
                    (self.values[i] - self.values[spec.ravel(&lo)]) / h
                } else {
                    lo[d] = k - 1;
                    hi[d] = k + 1;
                    (self.values[spec.ravel(&hi)] - self.values[spec.ravel(&lo)]) / (2.0 * h)
                };
            }
            comps.push(GridFunction {
                spec: spec.clone(),
                values: g,
            });
        }
        comps
    }

    /// Exact adjoint of [`GridFunction::gradient`]: for any `u`, `w`,
    /// `sum_i sum_d w[d][i] * (grad u)[d][i] == sum_j (grad^T w)[j] * u[j]`.
    pub fn gradient_adjoint(spec: &GridSpec, w: &[Vec<f64>]) -> Vec<f64> {
        let m = spec.points_per_axis;
        let h = spec.step();
        let mut out = vec![0.0; spec.node_count()];
        for d in 0..spec.dim {
            let wd = &w[d];
            for i in 0..spec.node_count() {
                if spec.is_masked(i) || wd[i] == 0.0 {
                    continue;
                }
                let multi = spec.unravel(i);
                let k = multi[d];
                let mut lo = multi;
                let mut hi = multi;
                if k == 0 {
                    hi[d] = 1;
                    out[spec.ravel(&hi)] += wd[i] / h;
                    out[i] -= wd[i] / h;
                } else if k == m - 1 {
                    lo[d] = m - 2;
                    out[i] += wd[i] / h;
                    out[spec.ravel(&lo)] -= wd[i] / h;
                } else {
                    lo[d] = k - 1;
                    hi[d] = k + 1;
                    out[spec.ravel(&hi)] += wd[i] / (2.0 * h);
                    out[spec.ravel(&lo)] -= wd[i] / (2.0 * h);
                }
            }
        }
        for i in 0..out.len() {
            if spec.is_masked(i) {
                out[i] = 0.0;
            }
        }
        out
    }

    /// Flat binary layout: u32 N, u32 m, f64 L, f64 center[N], then row-major
    /// f64 values, all little-endian.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.spec.dim as u32).to_le_bytes())?;
        w.write_all(&(self.spec.points_per_axis as u32).to_le_bytes())?;
        w.write_all(&self.spec.half_width.to_le_bytes())?;
        for c in &self.spec.center {
            w.write_all(&c.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let m = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let half_width = f64::from_le_bytes(b8);
        let mut center = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            center.push(f64::from_le_bytes(b8));
        }
        let spec = GridSpec::new_box(dim, &center, half_width, m)?;
        let mut values = Vec::with_capacity(spec.node_count());
        for _ in 0..spec.node_count() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        GridFunction::from_values(spec, values)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let d = self.spec.dim;
        for i in 0..self.spec.node_count() {
            let x = self.spec.coord(i);
            for xd in x.iter().take(d) {
                write!(w, "{xd:.17e},")?;
            }
            writeln!(w, "{:.17e}", self.values[i])?;
        }
        Ok(())
    }
}

/// Radial profile with monotone cubic (PCHIP) interpolation and power-law
/// extension beyond the last knot.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    slopes: Vec<f64>,
    tail: Option<(f64, f64)>, // (c, alpha): v ~ c r^-alpha beyond the last knot
}

impl RadialProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 2 {
            return Err(Error::InvalidGrid("profile needs >= 2 matched knots".into()));
        }
        if radii[0] != 0.0 {
            return Err(Error::InvalidGrid("profile radii must start at 0".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("profile radii must be strictly increasing".into()));
        }
        let slopes = pchip_slopes(&radii, &values);
        let r_last = *radii.last().unwrap();
        let lo = r_last / 10.0;
        let rs: Vec<f64> = radii.iter().copied().filter(|&r| r >= lo).collect();
        let vs: Vec<f64> = radii
            .iter()
            .zip(&values)
            .filter(|(r, _)| **r >= lo)
            .map(|(_, v)| *v)
            .collect();
        let tail = fit_power_law(&rs, &vs);
        Ok(RadialProfile {
            radii,
            values,
            slopes,
            tail,
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r <= 0.0 {
            return self.values[0];
        }
        if r > self.radii[n - 1] {
            if let Some((c, alpha)) = self.tail {
                return c * r.powf(-alpha);
            }
            return 0.0;
        }
        let k = match self
            .radii
            .binary_search_by(|probe| probe.partial_cmp(&r).unwrap())
        {
            Ok(k) => return self.values[k],
            Err(k) => k - 1,
        };
        let h = self.radii[k + 1] - self.radii[k];
        let t = (r - self.radii[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k], self.slopes[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * h * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * h * (t3 - t2)
    }
}

/// Fritsch-Carlson monotone slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n - 1];
    for k in 0..n - 1 {
        d[k] = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
    }
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for k in 1..n - 1 {
        if d[k - 1] * d[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let w1 = 2.0 * (x[k + 1] - x[k]) + (x[k] - x[k - 1]);
            let w2 = (x[k + 1] - x[k]) + 2.0 * (x[k] - x[k - 1]);
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RadialIntegral {
    pub value: f64,
    /// Estimated contribution of the extrapolated tail beyond the truncation
    /// radius; also an error indicator for the truncation.
    pub tail_estimate: f64,
}

/// omega_{N-1} * int_0^inf g(r)^w r^{N-1} dr with adaptive Simpson up to
/// `r_max` and a power-law tail estimate beyond it.
pub fn radial_quadrature_fn(
    g: impl Fn(f64) -> f64,
    weight_exponent: f64,
    n: usize,
    r_max: f64,
    rel_tol: f64,
) -> Result<RadialIntegral> {
    let f = |r: f64| {
        let gv = g(r);
        let powed = if weight_exponent == 1.0 {
            gv
        } else {
            gv.abs().powf(weight_exponent) * if gv < 0.0 && weight_exponent % 2.0 == 1.0 { -1.0 } else { 1.0 }
        };
        powed * r.powi(n as i32 - 1)
    };
    // Geometric panels; the integrand may peak anywhere in [0, r_max].
    let mut edges = vec![0.0, (r_max * 1e-4).min(1.0)];
    while *edges.last().unwrap() < r_max {
        edges.push((edges.last().unwrap() * 2.0).min(r_max));
    }
    let coarse: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], 1e-8))
        .sum();
    let abs_tol = (coarse.abs() * rel_tol / edges.len() as f64).max(1e-300);
    let value: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], abs_tol))
        .sum();

    // Fit |g|^w ~ c r^-beta on the last decade to bound the dropped tail.
    let samples = 24;
    let lo = r_max / 10.0;
    let rs: Vec<f64> = (0..samples)
        .map(|i| lo * (r_max / lo).powf(i as f64 / (samples - 1) as f64))
        .collect();
    let ys: Vec<f64> = rs.iter().map(|&r| g(r).abs().powf(weight_exponent)).collect();
    let tail_estimate = if ys.iter().all(|&y| y == 0.0) {
        0.0
    } else {
        match fit_power_law(&rs, &ys) {
            Some((c, beta)) => {
                if beta <= n as f64 + 1e-6 {
                    return Err(Error::NonconvergentTail {
                        alpha: beta,
                        needed: n as f64,
                    });
                }
                c * r_max.powf(n as f64 - beta) / (beta - n as f64)
            }
            None => 0.0,
        }
    };
    let omega = sphere_area(n);
    if tail_estimate.abs() > rel_tol.max(1e-12) * value.abs().max(1e-300) * 1e3 {
        // Tail would dominate the requested accuracy budget.
        return Err(Error::NonconvergentTail {
            alpha: f64::NAN,
            needed: n as f64,
        });
    }
    Ok(RadialIntegral {
        value: omega * (value + tail_estimate),
        tail_estimate: omega * tail_estimate,
    })
}

/// Profile-backed version of [`radial_quadrature_fn`]; the profile is
/// evaluated by monotone cubic interpolation inside its knot range and by its
/// fitted power law beyond.
pub fn radial_quadrature(
    profile: &RadialProfile,
    weight_exponent: f64,
    n: usize,
    rel_tol: f64,
) -> Result<RadialIntegral> {
    let r_max = *profile.radii.last().unwrap();
    radial_quadrature_fn(|r| profile.eval(r), weight_exponent, n, r_max, rel_tol)
}
