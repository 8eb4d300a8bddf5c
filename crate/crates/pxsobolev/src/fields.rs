//! Scalar fields on R^N used as exponents (p, q) and coefficients (k, K):
//! construction from a catalog of built-in families, critical-set detection,
//! hypothesis surrogates and second-order Taylor data at infinity.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A scalar field with cached bounds over a stated sampling box and an
/// optional limit at infinity.
#[derive(Clone)]
pub struct ExponentField {
    pub dim: usize,
    eval_fn: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub limit_at_infinity: Option<f64>,
    pub sampling_half_width: f64,
}

impl std::fmt::Debug for ExponentField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExponentField")
            .field("dim", &self.dim)
            .field("lower_bound", &self.lower_bound)
            .field("upper_bound", &self.upper_bound)
            .field("limit_at_infinity", &self.limit_at_infinity)
            .finish()
    }
}

impl ExponentField {
    /// Wrap a closure; bounds are cached from a deterministic sample of the
    /// box `[-half_width, half_width]^N` plus shells out to `8 * half_width`.
    pub fn from_fn(
        dim: usize,
        half_width: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let eval_fn: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(f);
        let (lo, hi) = sample_bounds(dim, half_width, eval_fn.as_ref())?;
        Ok(ExponentField {
            dim,
            eval_fn,
            lower_bound: lo,
            upper_bound: hi,
            limit_at_infinity: None,
            sampling_half_width: half_width,
        })
    }

    pub fn with_limit(mut self, limit: f64) -> Self {
        self.limit_at_infinity = Some(limit);
        self
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        ExponentField {
            dim,
            eval_fn: Arc::new(move |_| value),
            lower_bound: value,
            upper_bound: value,
            limit_at_infinity: Some(value),
            sampling_half_width: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval_fn)(x)
    }

    /// Exponent-role invariant: 1 < p^- <= p^+ < N.
    pub fn validate_exponent_role(&self) -> Result<()> {
        let n = self.dim as f64;
        if !(self.lower_bound > 1.0 && self.lower_bound <= self.upper_bound && self.upper_bound < n)
        {
            return Err(Error::InvalidExponent(format!(
                "need 1 < p^- <= p^+ < N, got p^- = {}, p^+ = {}, N = {}",
                self.lower_bound, self.upper_bound, n
            )));
        }
        Ok(())
    }

    /// Refresh cached bounds over a new sampling box.
    pub fn resample_bounds(&mut self, half_width: f64) -> Result<()> {
        let (lo, hi) = sample_bounds(self.dim, half_width, self.eval_fn.as_ref())?;
        self.lower_bound = lo;
        self.upper_bound = hi;
        self.sampling_half_width = half_width;
        Ok(())
    }
}

fn sample_bounds(
    dim: usize,
    half_width: f64,
    f: &(dyn Fn(&[f64]) -> f64 + Send + Sync),
) -> Result<(f64, f64)> {
    let per_axis = match dim {
        1 => 513,
        2 => 65,
        _ => 21,
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut visit = |x: &[f64]| -> Result<()> {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::InvalidExponent(format!("non-finite value at {x:?}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
        Ok(())
    };
    let n = per_axis_pow(per_axis, dim);
    for i in 0..n {
        let mut x = [0.0; 3];
        let mut rem = i;
        for d in 0..dim {
            let k = rem % per_axis;
            rem /= per_axis;
            x[d] = -half_width + 2.0 * half_width * k as f64 / (per_axis - 1) as f64;
        }
        visit(&x[..dim])?;
    }
    // Shell samples so bounds also see moderately far field values.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for shell in [2.0, 4.0, 8.0] {
        let r = shell * half_width;
        for _ in 0..128 {
            let x = random_direction(dim, &mut rng).map(|c| c * r);
            visit(&x[..dim])?;
        }
    }
    Ok((lo, hi))
}

fn per_axis_pow(per_axis: usize, dim: usize) -> usize {
    per_axis.pow(dim as u32)
}

fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let mut x = [0.0; 3];
        let mut s: f64 = 0.0;
        for xd in x.iter_mut().take(dim) {
            *xd = rng.gen_range(-1.0..1.0);
            s += *xd * *xd;
        }
        if s > 1e-6 && s <= 1.0 {
            let inv = 1.0 / s.sqrt();
            for xd in x.iter_mut().take(dim) {
                *xd *= inv;
            }
            return x;
        }
    }
}

/// Critical Sobolev exponent p*(x) = N p(x) / (N - p(x)).
pub fn critical_exponent(p: &ExponentField, x: &[f64]) -> Result<f64> {
    let n = p.dim as f64;
    let px = p.eval(x);
    if px >= n - 1e-8 {
        return Err(Error::InvalidExponent(format!(
            "p(x) = {px} too close to N = {n}; critical exponent out of numeric range"
        )));
    }
    Ok(n * px / (n - px))
}

/// Grid points where q touches p*, clustered into connected components.
/// One representative per component (the node of smallest |q - p*|, ties by
/// index, so the output does not depend on scan order).
pub fn critical_set(
    p: &ExponentField,
    q: &ExponentField,
    grid: &GridSpec,
    tol_crit: f64,
) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    let n_nodes = grid.node_count();
    let mut gap = vec![f64::INFINITY; n_nodes];
    let mut violations = Vec::new();
    for i in 0..n_nodes {
        let x = grid.coord(i);
        let x = &x[..grid.dim];
        let pstar = critical_exponent(p, x)?;
        let tol = tol_crit * pstar.abs().max(1.0);
        let d = q.eval(x) - pstar;
        if d > tol {
            violations.push((x.to_vec(), d));
        }
        gap[i] = d.abs().min(f64::INFINITY);
        if d.abs() > tol {
            gap[i] = f64::INFINITY; // not critical
        }
    }
    if !violations.is_empty() {
        return Err(Error::Precondition(format!(
            "q > p* + tol at {} grid points, first at {:?} (excess {:.3e})",
            violations.len(),
            violations[0].0,
            violations[0].1
        )));
    }
    // Union-find over face-adjacent critical nodes.
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let m = grid.points_per_axis;
    for i in 0..n_nodes {
        if gap[i].is_infinite() {
            continue;
        }
        let multi = grid.unravel(i);
        for d in 0..grid.dim {
            if multi[d] + 1 < m {
                let mut nb = multi;
                nb[d] += 1;
                let j = grid.ravel(&nb);
                if gap[j].is_finite() {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }
    let mut best: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for i in 0..n_nodes {
        if gap[i].is_infinite() {
            continue;
        }
        let root = find(&mut parent, i);
        let cur = *best.entry(root).or_insert(i);
        if gap[i] < gap[cur] || (gap[i] == gap[cur] && i < cur) {
            best.insert(root, i);
        }
    }
    Ok(best
        .values()
        .map(|&i| grid.coord(i)[..grid.dim].to_vec())
        .collect())
}

/// Second-order Taylor data at infinity in inverted coordinates y = x/|x|^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfinityJet {
    pub value_at_infinity: f64,
    pub gradient_at_infinity: Vec<f64>,
    /// Row-major symmetric N x N matrix.
    pub hessian_at_infinity: Vec<Vec<f64>>,
    pub fit_residual: f64,
}

impl InfinityJet {
    /// The quadratic form (D^2 f(inf) nu, nu).
    pub fn quadratic_form(&self, nu: &[f64]) -> f64 {
        let n = self.gradient_at_infinity.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.hessian_at_infinity[i][j] * nu[i] * nu[j];
            }
        }
        s
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient_at_infinity
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest eigenvalue of the (symmetrized) Hessian at infinity.
    pub fn min_hessian_eigenvalue(&self) -> f64 {
        let n = self.gradient_at_infinity.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (self.hessian_at_infinity[i][j] + self.hessian_at_infinity[j][i])
        });
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_hessian_eigenvalue(&self) -> f64 {
        let n = self.gradient_at_infinity.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (self.hessian_at_infinity[i][j] + self.hessian_at_infinity[j][i])
        });
        m.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const DEFAULT_JET_SHELLS: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

/// Least-squares fit of `f(x) - f(inf)` against the inverted-coordinate basis
/// `{1, y_i, y_i y_j}`, `y = x/|x|^2`, over deterministic shell samples.
pub fn fit_infinity_jet(
    f: &ExponentField,
    shells: &[f64],
    samples_per_shell: usize,
) -> Result<InfinityJet> {
    let dim = f.dim;
    let n_unknowns = 1 + dim + dim * (dim + 1) / 2;
    let total = shells.len() * samples_per_shell.max(if dim == 1 { 2 } else { 1 });
    if total < n_unknowns {
        return Err(Error::Precondition(format!(
            "need at least {n_unknowns} samples, got {total}"
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut rhs: Vec<f64> = Vec::with_capacity(total);
    for (si, &r) in shells.iter().enumerate() {
        if r <= 0.0 {
            return Err(Error::Precondition("shell radii must be positive".into()));
        }
        for k in 0..samples_per_shell {
            let dir = shell_direction(dim, si, k, samples_per_shell);
            let x: Vec<f64> = dir.iter().take(dim).map(|c| c * r).collect();
            let y: Vec<f64> = x.iter().map(|xi| xi / (r * r)).collect();
            let mut row = Vec::with_capacity(n_unknowns);
            row.push(1.0);
            for yi in &y {
                row.push(*yi);
            }
            for i in 0..dim {
                for j in i..dim {
                    if i == j {
                        row.push(0.5 * y[i] * y[i]);
                    } else {
                        row.push(y[i] * y[j]);
                    }
                }
            }
            rows.push(row);
            rhs.push(f.eval(&x));
        }
    }
    let a = DMatrix::from_fn(rows.len(), n_unknowns, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond = smax / smin.max(1e-300);
    if cond > 1e10 {
        return Err(Error::IllConditioned(cond));
    }
    let sol = svd.solve(&b, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = (&a * &sol - &b).norm() / (rows.len() as f64).sqrt();

    let value = sol[0];
    let grad: Vec<f64> = (0..dim).map(|i| sol[1 + i]).collect();
    let mut hess = vec![vec![0.0; dim]; dim];
    let mut idx = 1 + dim;
    for i in 0..dim {
        for j in i..dim {
            let aij = sol[idx];
            idx += 1;
            hess[i][j] = aij;
            hess[j][i] = aij;
        }
    }
    Ok(InfinityJet {
        value_at_infinity: value,
        gradient_at_infinity: grad,
        hessian_at_infinity: hess,
        fit_residual: resid,
    })
}

/// Deterministic, well-spread directions on S^{dim-1}; shell index rotates
/// the pattern so different shells do not sample identical rays.
fn shell_direction(dim: usize, shell: usize, k: usize, total: usize) -> [f64; 3] {
    match dim {
        1 => {
            if k % 2 == 0 {
                [1.0, 0.0, 0.0]
            } else {
                [-1.0, 0.0, 0.0]
            }
        }
        2 => {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.37 * shell as f64)
                / total.max(1) as f64;
            [theta.cos(), theta.sin(), 0.0]
        }
        3 => {
            // Fibonacci sphere with a per-shell phase.
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            let i = k as f64 + 0.5;
            let z = 1.0 - 2.0 * i / total as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i / golden + 0.31 * shell as f64);
            [rho * phi.cos(), rho * phi.sin(), z]
        }
        _ => unreachable!(),
    }
}

/// Numeric surrogates for the standing hypotheses on (p, q, k, K).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisConfig {
    pub box_half_width: f64,
    pub dyadic_scales: Vec<f64>,
    pub directions_per_scale: usize,
    pub shells: Vec<f64>,
    pub seed: u64,
    pub tol_crit: f64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig {
            box_half_width: 4.0,
            dyadic_scales: (3..=15).map(|k| 2f64.powi(-k)).collect(),
            directions_per_scale: 32,
            shells: vec![10.0, 20.0, 40.0, 80.0, 100.0],
            seed: 1,
            tol_crit: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateSequence {
    pub holds: bool,
    pub measured: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// osc(p, q; h) * |ln h| decreasing over dyadic h.
    pub h1: SurrogateSequence,
    /// max over shells of |p - p(inf)| ln |x| (and q) decreasing.
    pub h2_p: SurrogateSequence,
    pub h2_q: SurrogateSequence,
    /// 1 < p^- <= p^+ < N, q <= p* on samples, q(inf) = p*(inf).
    pub h3_bounds: bool,
    pub h3_infinity_critical: bool,
    /// q^- > p^+.
    pub h4: bool,
    /// k bounded on the sample box (measured range recorded).
    pub h5_k_bounded: bool,
    pub k_range: (f64, f64),
    /// decay surrogate for the compact-embedding weight: shell averages of
    /// |k| decreasing.
    pub h6_k_shell_decay: SurrogateSequence,
    /// K nonnegative with decreasing shell oscillation (limit at infinity).
    pub h7: SurrogateSequence,
    pub h7_nonnegative: bool,
    pub k_upper_limit_estimate: f64,
}

fn decreasing_to_zero(seq: &[f64]) -> bool {
    if seq.is_empty() {
        return false;
    }
    let first = seq[0];
    let last = *seq.last().unwrap();
    if seq.iter().all(|&v| v.abs() <= 1e-12) {
        return true;
    }
    last <= 0.8 * first.max(1e-12)
}

pub fn validate_hypotheses(
    p: &ExponentField,
    q: &ExponentField,
    k: &ExponentField,
    big_k: &ExponentField,
    config: &HypothesisConfig,
) -> HypothesisReport {
    let dim = p.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // H1: oscillation * |ln h| over dyadic scales.
    let mut h1_seq = Vec::new();
    for &h in &config.dyadic_scales {
        let mut osc: f64 = 0.0;
        for _ in 0..config.directions_per_scale {
            let mut x = [0.0; 3];
            for xd in x.iter_mut().take(dim) {
                *xd = rng.gen_range(-config.box_half_width..config.box_half_width);
            }
            let dir = random_direction(dim, &mut rng);
            let mut xh = x;
            for d in 0..dim {
                xh[d] += h * dir[d];
            }
            let dp = (p.eval(&xh[..dim]) - p.eval(&x[..dim])).abs();
            let dq = (q.eval(&xh[..dim]) - q.eval(&x[..dim])).abs();
            osc = osc.max(dp.max(dq));
        }
        h1_seq.push(osc * h.ln().abs());
    }
    let h1 = SurrogateSequence {
        holds: decreasing_to_zero(&h1_seq),
        measured: h1_seq,
    };

    // H2: |f - f(inf)| ln |x| over shells.
    let shell_decay = |f: &ExponentField| -> SurrogateSequence {
        let Some(f_inf) = f.limit_at_infinity else {
            return SurrogateSequence {
                holds: false,
                measured: vec![],
            };
        };
        let mut seq = Vec::new();
        for (si, &r) in config.shells.iter().enumerate() {
            let mut mx: f64 = 0.0;
            let samples = if dim == 1 { 2 } else { 64 };
            for kdx in 0..samples {
                let dir = shell_direction(dim, si, kdx, samples);
                let x: Vec<f64> = dir.iter().take(dim).map(|c| c * r).collect();
                mx = mx.max((f.eval(&x) - f_inf).abs() * r.ln());
            }
            seq.push(mx);
        }
        SurrogateSequence {
            holds: decreasing_to_zero(&seq),
            measured: seq,
        }
    };
    let h2_p = shell_decay(p);
    let h2_q = shell_decay(q);

    // H3: bound checks.
    let n = dim as f64;
    let h3_bounds = p.lower_bound > 1.0 && p.upper_bound < n && {
        // q <= p* on a deterministic sample of the box.
        let mut ok = true;
        let per_axis = 17usize;
        for i in 0..per_axis_pow(per_axis, dim) {
            let mut x = [0.0; 3];
            let mut rem = i;
            for d in 0..dim {
                let kk = rem % per_axis;
                rem /= per_axis;
                x[d] = -config.box_half_width
                    + 2.0 * config.box_half_width * kk as f64 / (per_axis - 1) as f64;
            }
            let xs = &x[..dim];
            let px = p.eval(xs);
            if px >= n {
                ok = false;
                break;
            }
            let pstar = n * px / (n - px);
            if q.eval(xs) > pstar + config.tol_crit * pstar.max(1.0) {
                ok = false;
                break;
            }
        }
        ok
    };
    let h3_infinity_critical = match (p.limit_at_infinity, q.limit_at_infinity) {
        (Some(p_inf), Some(q_inf)) if p_inf < n => {
            let pstar_inf = n * p_inf / (n - p_inf);
            (q_inf - pstar_inf).abs() <= 1e-6 * pstar_inf.max(1.0)
        }
        _ => false,
    };

    // H4.
    let h4 = q.lower_bound > p.upper_bound;

    // H5: k bounded.
    let h5_k_bounded = k.lower_bound.is_finite() && k.upper_bound.is_finite();

    // H6 surrogate: shell averages of |k| decreasing.
    let shell_avg = |f: &ExponentField, absval: bool| -> Vec<f64> {
        config
            .shells
            .iter()
            .enumerate()
            .map(|(si, &r)| {
                let samples = if dim == 1 { 2 } else { 64 };
                let mut s = 0.0;
                for kdx in 0..samples {
                    let dir = shell_direction(dim, si, kdx, samples);
                    let x: Vec<f64> = dir.iter().take(dim).map(|c| c * r).collect();
                    let v = f.eval(&x);
                    s += if absval { v.abs() } else { v };
                }
                s / samples as f64
            })
            .collect()
    };
    let h6_seq = shell_avg(k, true);
    let h6 = SurrogateSequence {
        holds: decreasing_to_zero(&h6_seq),
        measured: h6_seq,
    };

    // H7: K >= 0 and shell oscillation decreasing.
    let mut h7_seq = Vec::new();
    let mut k_nonneg = big_k.lower_bound >= -1e-12;
    let mut last_avg = 0.0;
    for (si, &r) in config.shells.iter().enumerate() {
        let samples = if dim == 1 { 2 } else { 64 };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut avg = 0.0;
        for kdx in 0..samples {
            let dir = shell_direction(dim, si, kdx, samples);
            let x: Vec<f64> = dir.iter().take(dim).map(|c| c * r).collect();
            let v = big_k.eval(&x);
            if v < -1e-12 {
                k_nonneg = false;
            }
            lo = lo.min(v);
            hi = hi.max(v);
            avg += v;
        }
        h7_seq.push(hi - lo);
        last_avg = avg / samples as f64;
    }
    let h7 = SurrogateSequence {
        holds: decreasing_to_zero(&h7_seq),
        measured: h7_seq,
    };

    HypothesisReport {
        h1,
        h2_p,
        h2_q,
        h3_bounds,
        h3_infinity_critical,
        h4,
        h5_k_bounded,
        k_range: (k.lower_bound, k.upper_bound),
        h6_k_shell_decay: h6,
        h7,
        h7_nonnegative: k_nonneg,
        k_upper_limit_estimate: last_avg,
    }
}

/// Declarative catalog of built-in field families, addressable by string id
/// in scenario configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// f == value.
    Constant { value: f64 },
    /// f(x) = limit + amplitude / (1 + |x|^2); a radial bump decaying to the
    /// limit fast enough for the log-decay hypotheses.
    RadialBumpP { limit: f64, amplitude: f64 },
    /// f(x) = limit + amplitude / ln(e + |x|); violates the log-decay
    /// hypothesis at infinity on purpose.
    InvLog { limit: f64, amplitude: f64 },
    /// f(x) = limit + (1/2) x^T H x / |x|^4 near infinity (mollified at the
    /// origin): an exact second-order jet with Hessian H at infinity.
    AnisotropicQ { limit: f64, hessian: Vec<Vec<f64>> },
    /// f(x) = amplitude * exp(-rate |x|).
    ExpDecay { amplitude: f64, rate: f64 },
    /// f(x) = amplitude * exp(-|x|^2 / width^2).
    Gaussian { amplitude: f64, width: f64 },
    /// The extremal profile U(x) = (1 + |x|^{p/(p-1)})^{(p-N)/p}.
    TalentiBubble { p: f64 },
}

impl FieldSpec {
    pub fn id(&self) -> &'static str {
        match self {
            FieldSpec::Constant { .. } => "constant",
            FieldSpec::RadialBumpP { .. } => "radial_bump_p",
            FieldSpec::InvLog { .. } => "inv_log",
            FieldSpec::AnisotropicQ { .. } => "anisotropic_q",
            FieldSpec::ExpDecay { .. } => "exp_decay",
            FieldSpec::Gaussian { .. } => "gaussian",
            FieldSpec::TalentiBubble { .. } => "talenti_bubble",
        }
    }

    pub fn all_ids() -> &'static [&'static str] {
        &[
            "constant",
            "radial_bump_p",
            "inv_log",
            "anisotropic_q",
            "exp_decay",
            "gaussian",
            "talenti_bubble",
        ]
    }

    pub fn build(&self, dim: usize, sampling_half_width: f64) -> Result<ExponentField> {
        let r2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        match self {
            FieldSpec::Constant { value } => Ok(ExponentField::constant(dim, *value)),
            FieldSpec::RadialBumpP { limit, amplitude } => {
                let (l, a) = (*limit, *amplitude);
                Ok(
                    ExponentField::from_fn(dim, sampling_half_width, move |x| {
                        l + a / (1.0 + r2(x))
                    })?
                    .with_limit(l),
                )
            }
            FieldSpec::InvLog { limit, amplitude } => {
                let (l, a) = (*limit, *amplitude);
                Ok(ExponentField::from_fn(dim, sampling_half_width, move |x| {
                    l + a / (std::f64::consts::E + r2(x).sqrt()).ln()
                })?
                .with_limit(l))
            }
            FieldSpec::AnisotropicQ { limit, hessian } => {
                if hessian.len() != dim || hessian.iter().any(|row| row.len() != dim) {
                    return Err(Error::InvalidExponent(
                        "anisotropic_q hessian must be N x N".into(),
                    ));
                }
                let l = *limit;
                let h = hessian.clone();
                Ok(ExponentField::from_fn(dim, sampling_half_width, move |x| {
                    let r2v = r2(x);
                    // Mollified near the origin so the field stays bounded.
                    let r4 = (r2v * r2v).max(1.0);
                    let mut s = 0.0;
                    for i in 0..x.len() {
                        for j in 0..x.len() {
                            s += h[i][j] * x[i] * x[j];
                        }
                    }
                    l + 0.5 * s / r4
                })?
                .with_limit(l))
            }
            FieldSpec::ExpDecay { amplitude, rate } => {
                let (a, r) = (*amplitude, *rate);
                Ok(ExponentField::from_fn(dim, sampling_half_width, move |x| {
                    a * (-r * r2(x).sqrt()).exp()
                })?
                .with_limit(0.0))
            }
            FieldSpec::Gaussian { amplitude, width } => {
                let (a, w) = (*amplitude, *width);
                Ok(ExponentField::from_fn(dim, sampling_half_width, move |x| {
                    a * (-r2(x) / (w * w)).exp()
                })?
                .with_limit(0.0))
            }
            FieldSpec::TalentiBubble { p } => {
                let p = *p;
                let n = dim as f64;
                if !(1.0 < p && p < n) {
                    return Err(Error::InvalidExponent(format!(
                        "talenti_bubble needs 1 < p < N, got p = {p}, N = {n}"
                    )));
                }
                Ok(ExponentField::from_fn(dim, sampling_half_width, move |x| {
                    let r = r2(x).sqrt();
                    (1.0 + r.powf(p / (p - 1.0))).powf((p - n) / p)
                })?
                .with_limit(0.0))
            }
        }
    }
}
