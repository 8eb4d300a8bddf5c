//! Escaping-bubble test functions u_eps centered at x_eps = r_eps nu and the
//! asymptotic expansions of their energy integrals in ln(eps)/|x_eps|^2,
//! together with the fiber-map algebra J_eps(t) = F(t C u_eps).

use crate::constants::{k_constant, TalentiBubble};
use crate::error::{Error, Result};
use crate::fields::{fit_infinity_jet, ExponentField, InfinityJet, DEFAULT_JET_SHELLS};
use crate::grid::{sphere_area, GridFunction, GridSpec};
use crate::quad::{adaptive_simpson, gauss_legendre, golden_section_max};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_C_LO: f64 = 10.0;

/// Admissible window for the bubble center distance r_eps:
/// c_lo |ln eps| << r_eps << min of the three envelopes
/// eps^{-(p-1)/4}, eps^{-1/2}, eps^{-(1/2)(N-p)/(p-1)}, each raised to the
/// power (1 - eta_margin).
pub fn hyp_r_window_with(
    eps: f64,
    p_inf: f64,
    n: usize,
    eta_margin: f64,
    c_lo: f64,
) -> Result<(f64, f64)> {
    let nf = n as f64;
    if !(1.0 < p_inf && p_inf < nf.sqrt()) {
        return Err(Error::MomentDivergence {
            p_inf,
            sqrt_n: nf.sqrt(),
        });
    }
    if !(0.0 < eps && eps < 1.0) {
        return Err(Error::Precondition("need eps in (0, 1)".into()));
    }
    if !(0.0 <= eta_margin && eta_margin < 1.0) {
        return Err(Error::Precondition("eta margin must lie in [0, 1)".into()));
    }
    let lo = c_lo * eps.ln().abs();
    let a = [
        (p_inf - 1.0) / 4.0,
        0.5,
        0.5 * (nf - p_inf) / (p_inf - 1.0),
    ];
    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps.powf(-a_min * (1.0 - eta_margin));
    if lo >= hi {
        return Err(Error::EmptyWindow { lo, hi });
    }
    Ok((lo, hi))
}

pub fn hyp_r_window(eps: f64, p_inf: f64, n: usize, eta_margin: f64) -> Result<(f64, f64)> {
    hyp_r_window_with(eps, p_inf, n, eta_margin, DEFAULT_C_LO)
}

/// Quintic smoothstep cutoff: 1 on [0, 1], 0 beyond 2, C^2 monotone between.
pub fn cutoff(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let t = r - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn cutoff_deriv(r: f64) -> f64 {
    if !(1.0..2.0).contains(&r) {
        0.0
    } else {
        let t = r - 1.0;
        -30.0 * t * t * (t - 1.0) * (t - 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct BubbleParams {
    pub eps: f64,
    pub nu: Vec<f64>,
    pub r_eps: f64,
}

impl BubbleParams {
    pub fn new(eps: f64, nu: &[f64], r_eps: f64, p_inf: f64, eta_margin: f64) -> Result<Self> {
        let norm: f64 = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "direction must be unit length, |nu| = {norm}"
            )));
        }
        let (lo, hi) = hyp_r_window(eps, p_inf, nu.len(), eta_margin)?;
        if !(lo < r_eps && r_eps < hi) {
            return Err(Error::Precondition(format!(
                "r_eps = {r_eps} outside the admissible window ({lo}, {hi})"
            )));
        }
        Ok(BubbleParams {
            eps,
            nu: nu.to_vec(),
            r_eps,
        })
    }

    pub fn center(&self) -> Vec<f64> {
        self.nu.iter().map(|v| v * self.r_eps).collect()
    }
}

/// Analytic evaluator for
/// u_eps(x) = eps^{-(N - p)/p} U((x - x_eps)/eps) eta(|x - x_eps|).
#[derive(Debug, Clone)]
pub struct BubbleEvaluator {
    pub params: BubbleParams,
    pub p_inf: f64,
    pub n: usize,
    bubble: TalentiBubble,
}

impl BubbleEvaluator {
    pub fn new(params: BubbleParams, p_inf: f64, n: usize) -> Result<Self> {
        let bubble = TalentiBubble::new(n, p_inf)?;
        Ok(BubbleEvaluator {
            params,
            p_inf,
            n,
            bubble,
        })
    }

    pub fn amplitude(&self) -> f64 {
        let nf = self.n as f64;
        self.params
            .eps
            .powf(-(nf - self.p_inf) / self.p_inf)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let c = self.params.center();
        let mut d2 = 0.0;
        for (xi, ci) in x.iter().zip(&c) {
            d2 += (xi - ci) * (xi - ci);
        }
        let d = d2.sqrt();
        if d >= 2.0 {
            return 0.0;
        }
        self.amplitude() * self.bubble.eval(d / self.params.eps) * cutoff(d)
    }

    /// Sampled onto a grid; errors when fewer than 8 nodes span the eps-core.
    pub fn to_grid(&self, grid: &GridSpec) -> Result<GridFunction> {
        let nodes_across_core = (2.0 * self.params.eps / grid.step()).floor() as usize;
        if nodes_across_core < 8 {
            return Err(Error::CoreUnresolved { nodes_across_core });
        }
        Ok(GridFunction::from_fn(grid.clone(), |x| self.eval(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Value,
    Gradient,
}

/// Direction nodes and weights summing to the unit-sphere area.
fn angular_nodes(dim: usize) -> Vec<([f64; 3], f64)> {
    match dim {
        1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
        2 => {
            let m = 32;
            (0..m)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                    ([th.cos(), th.sin(), 0.0], 2.0 * std::f64::consts::PI / m as f64)
                })
                .collect()
        }
        3 => {
            let (zs, ws) = gauss_legendre(16);
            let m = 16;
            let mut out = Vec::with_capacity(zs.len() * m);
            for (z, wz) in zs.iter().zip(&ws) {
                let rho = (1.0 - z * z).max(0.0).sqrt();
                for k in 0..m {
                    let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                    out.push((
                        [rho * phi.cos(), rho * phi.sin(), *z],
                        wz * 2.0 * std::f64::consts::PI / m as f64,
                    ));
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Core quadrature in bubble-centered coordinates y = (x - x_eps)/eps:
/// integral of coef(x) * eps^{a(x)} * G(|y|)^{e(x)} over |y| <= 2/eps, where
/// G is the bubble profile (Value) or the full cutoff gradient magnitude
/// (Gradient) and a(x) collects the eps-prefactor exponents.
fn bubble_integral(
    coef: &(dyn Fn(&[f64]) -> f64 + Sync),
    e: &ExponentField,
    kind: Kind,
    params: &BubbleParams,
    p_inf: f64,
    rel_tol: f64,
) -> Result<f64> {
    let dim = e.dim;
    let nf = dim as f64;
    let eps = params.eps;
    let ln_eps = eps.ln();
    let bubble = TalentiBubble::new(dim, p_inf)?;
    let center = params.center();
    let dirs = angular_nodes(dim);

    // eps-prefactor exponent per x: value kind carries the amplitude power
    // (N - p)/p, gradient kind the extra 1/eps from the chain rule.
    let amp_pow = match kind {
        Kind::Value => (nf - p_inf) / p_inf,
        Kind::Gradient => (nf - p_inf) / p_inf + 1.0,
    };

    let shell = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let g = match kind {
            Kind::Value => bubble.eval(s) * cutoff(eps * s),
            Kind::Gradient => {
                (bubble.deriv(s) * cutoff(eps * s) + eps * bubble.eval(s) * cutoff_deriv(eps * s))
                    .abs()
            }
        };
        if g == 0.0 {
            return 0.0;
        }
        let ln_g = g.ln();
        let mut acc = 0.0;
        let mut x = [0.0; 3];
        for (w_dir, weight) in &dirs {
            for d in 0..dim {
                x[d] = center[d] + eps * s * w_dir[d];
            }
            let xs = &x[..dim];
            let ex = e.eval(xs);
            let a = nf - ex * amp_pow;
            // exp keeps the tiny-eps prefactors exact in log space.
            let v = coef(xs) * (a * ln_eps + ex * ln_g).exp();
            acc += weight * v;
        }
        acc * s.powi(dim as i32 - 1)
    };

    // Geometric radial panels from the core out to min(2/eps, 1e5); beyond
    // that the integrand is dwarfed by the bubble tail decay.
    let r_max = (2.0 / eps).min(1e5);
    let mut edges = vec![0.0, 1e-3];
    while *edges.last().unwrap() < r_max {
        let next = (edges.last().unwrap() * 2.0).min(r_max);
        edges.push(next);
    }
    let coarse: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(&shell, w[0], w[1], 1e-8))
        .sum();
    let abs_tol = (coarse.abs() * rel_tol / edges.len() as f64).max(1e-300);
    Ok(edges
        .windows(2)
        .map(|w| adaptive_simpson(&shell, w[0], w[1], abs_tol))
        .sum())
}

/// Radial moment of g: int g(r) r^{N-1} dr scaled by the sphere area.
fn radial_moment(g: impl Fn(f64) -> f64, n: usize) -> f64 {
    let shell = |r: f64| g(r) * r.powi(n as i32 - 1);
    let mut edges: Vec<f64> = vec![0.0, 1e-3];
    while *edges.last().unwrap() < 1e6 {
        edges.push((edges.last().unwrap() * 2.0).min(1e6));
    }
    let coarse: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(&shell, w[0], w[1], 1e-8))
        .sum();
    let abs_tol = (coarse.abs() * 1e-12 / edges.len() as f64).max(1e-300);
    sphere_area(n)
        * edges
            .windows(2)
            .map(|w| adaptive_simpson(&shell, w[0], w[1], abs_tol))
            .sum::<f64>()
}

/// The bubble moments entering the closed-form coefficients.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BubbleMoments {
    pub u_q: f64,
    pub u_q_ln: f64,
    pub grad_p: f64,
    pub grad_p_ln: f64,
}

pub fn bubble_moments(n: usize, p_inf: f64) -> Result<BubbleMoments> {
    let nf = n as f64;
    if p_inf >= nf.sqrt() {
        return Err(Error::MomentDivergence {
            p_inf,
            sqrt_n: nf.sqrt(),
        });
    }
    let b = TalentiBubble::new(n, p_inf)?;
    let qs = b.critical_exponent();
    Ok(BubbleMoments {
        u_q: radial_moment(|r| b.eval(r).powf(qs), n),
        u_q_ln: radial_moment(|r| {
            let u = b.eval(r);
            u.powf(qs) * u.ln()
        }, n),
        grad_p: radial_moment(|r| b.deriv(r).abs().powf(p_inf), n),
        grad_p_ln: radial_moment(|r| {
            let g = b.deriv(r).abs();
            if g == 0.0 {
                0.0
            } else {
                g.powf(p_inf) * g.ln()
            }
        }, n),
    })
}

/// HypR-compliant schedule: eps_k = exp(-E_k) with r_eps the geometric mean
/// of the admissible window at each eps.
pub fn default_schedule(
    exponents: &[f64],
    p_inf: f64,
    n: usize,
    eta_margin: f64,
) -> Result<Vec<(f64, f64)>> {
    exponents
        .iter()
        .map(|&ek| {
            let eps = (-ek).exp();
            let (lo, hi) = hyp_r_window(eps, p_inf, n, eta_margin)?;
            Ok((eps, (lo * hi).sqrt()))
        })
        .collect()
}

pub const DEFAULT_EPS_EXPONENTS: [f64; 5] = [150.0, 175.0, 200.0, 225.0, 250.0];

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub closed_form: [f64; 3],
    pub fitted: [f64; 3],
    pub std_errors: [f64; 3],
    pub residual_rms: f64,
    pub schedule: Vec<(f64, f64)>,
    pub integrals: Vec<f64>,
    pub jet_coef: InfinityJet,
    pub jet_exp: InfinityJet,
}

impl ExpansionReport {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        for ((eps, r), v) in self.schedule.iter().zip(&self.integrals) {
            let x1 = eps.ln() / (r * r);
            let x2 = 1.0 / (r * r);
            writeln!(w, "{eps:.17e},{r:.17e},{v:.17e},{x1:.17e},{x2:.17e}")?;
        }
        Ok(())
    }
}

/// OLS of y on {1, x1, x2} with column scaling; returns coefficients,
/// standard errors and the residual RMS.
fn ols_three(x1: &[f64], x2: &[f64], y: &[f64]) -> Result<([f64; 3], [f64; 3], f64)> {
    let m = y.len();
    if m < 4 {
        return Err(Error::RankDeficient(format!(
            "need at least 4 schedule points, got {m}"
        )));
    }
    let s1 = x1.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let s2 = x2.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => x1[i] / s1,
        _ => x2[i] / s2,
    });
    let b = DVector::from_row_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if smax / smin.max(1e-300) > 1e12 {
        return Err(Error::RankDeficient(format!(
            "regressors nearly collinear (cond = {:.3e})",
            smax / smin
        )));
    }
    let sol = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &a * &sol - &b;
    let dof = (m - 3).max(1) as f64;
    let sigma2 = resid.norm_squared() / dof;
    let ata_inv = (a.transpose() * &a)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal matrix singular".into()))?;
    let se = [
        (sigma2 * ata_inv[(0, 0)]).sqrt(),
        (sigma2 * ata_inv[(1, 1)]).sqrt() / s1,
        (sigma2 * ata_inv[(2, 2)]).sqrt() / s2,
    ];
    let rms = (resid.norm_squared() / m as f64).sqrt();
    Ok(([sol[0], sol[1] / s1, sol[2] / s2], se, rms))
}

fn require_flat_gradient(jet: &InfinityJet, what: &str) -> Result<()> {
    if jet.gradient_norm() > 1e-6 {
        return Err(Error::Precondition(format!(
            "{what} must have vanishing gradient at infinity, |grad| = {:.3e}",
            jet.gradient_norm()
        )));
    }
    Ok(())
}

fn expansion_core(
    coef_field: &ExponentField,
    exp_field: &ExponentField,
    kind: Kind,
    p_inf: f64,
    nu: &[f64],
    schedule: &[(f64, f64)],
) -> Result<ExpansionReport> {
    let n = exp_field.dim;
    let nf = n as f64;
    if kind == Kind::Gradient && p_inf >= nf.sqrt() {
        return Err(Error::MomentDivergence {
            p_inf,
            sqrt_n: nf.sqrt(),
        });
    }
    let jet_coef = fit_infinity_jet(coef_field, &DEFAULT_JET_SHELLS, 24)?;
    let jet_exp = fit_infinity_jet(exp_field, &DEFAULT_JET_SHELLS, 24)?;
    require_flat_gradient(&jet_coef, "coefficient field")?;
    require_flat_gradient(&jet_exp, "exponent field")?;
    let e_inf = jet_exp.value_at_infinity;
    let crit = nf * p_inf / (nf - p_inf);
    match kind {
        Kind::Value => {
            if (e_inf - crit).abs() > 1e-6 * crit {
                return Err(Error::Precondition(format!(
                    "exponent limit {e_inf} must equal p*(inf) = {crit}"
                )));
            }
        }
        Kind::Gradient => {
            if (e_inf - p_inf).abs() > 1e-6 * p_inf {
                return Err(Error::Precondition(format!(
                    "exponent limit {e_inf} must equal p(inf) = {p_inf}"
                )));
            }
        }
    }

    let moments = bubble_moments(n, p_inf)?;
    let (m0, m_ln) = match kind {
        Kind::Value => (moments.u_q, moments.u_q_ln),
        Kind::Gradient => (moments.grad_p, moments.grad_p_ln),
    };
    let f_inf = jet_coef.value_at_infinity;
    let a_e = jet_exp.quadratic_form(nu);
    let a_f = jet_coef.quadratic_form(nu);
    let denom = match kind {
        Kind::Value => crit,
        Kind::Gradient => p_inf,
    };
    let closed = [
        f_inf * m0,
        -nf * f_inf / (2.0 * denom) * a_e * m0,
        0.5 * f_inf * a_e * m_ln + 0.5 * a_f * m0,
    ];

    let integrals: Vec<Result<f64>> = schedule
        .par_iter()
        .map(|&(eps, r_eps)| {
            let params = BubbleParams::new(eps, nu, r_eps, p_inf, 0.0)
                .or_else(|_| BubbleParams::new(eps, nu, r_eps, p_inf, 0.2))?;
            bubble_integral(
                &|x| coef_field.eval(x),
                exp_field,
                kind,
                &params,
                p_inf,
                1e-12,
            )
        })
        .collect();
    let integrals: Result<Vec<f64>> = integrals.into_iter().collect();
    let integrals = integrals?;
    let x1: Vec<f64> = schedule
        .iter()
        .map(|(e, r)| e.ln() / (r * r))
        .collect();
    let x2: Vec<f64> = schedule.iter().map(|(_, r)| 1.0 / (r * r)).collect();
    let (fitted, std_errors, residual_rms) = ols_three(&x1, &x2, &integrals)?;
    Ok(ExpansionReport {
        closed_form: closed,
        fitted,
        std_errors,
        residual_rms,
        schedule: schedule.to_vec(),
        integrals,
        jet_coef,
        jet_exp,
    })
}

/// I(eps) = int f |u_eps|^{q(x)} dx regressed on {1, ln(eps)/r^2, 1/r^2}
/// against the closed-form A0, A1, A2.
pub fn expansion_q(
    f_field: &ExponentField,
    q_field: &ExponentField,
    p_inf: f64,
    nu: &[f64],
    schedule: &[(f64, f64)],
) -> Result<ExpansionReport> {
    expansion_core(f_field, q_field, Kind::Value, p_inf, nu, schedule)
}

/// int g |grad u_eps|^{p(x)} dx against the closed-form B0, B1, B2.
pub fn expansion_grad(
    g_field: &ExponentField,
    p_field: &ExponentField,
    p_inf: f64,
    nu: &[f64],
    schedule: &[(f64, f64)],
) -> Result<ExpansionReport> {
    expansion_core(g_field, p_field, Kind::Gradient, p_inf, nu, schedule)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub values: Vec<f64>,
    pub fitted_exponent: f64,
    pub fitted_prefactor: f64,
    /// value * |x_eps|^2 decreasing along the schedule.
    pub vanishes_against_x2: bool,
    pub schedule: Vec<(f64, f64)>,
}

/// int h |u_eps|^{p(x)} dx = O(eps^{p(inf)}): fits the power law and checks
/// the o(|x_eps|^{-2}) trend.
pub fn expansion_p(
    h_field: &ExponentField,
    p_field: &ExponentField,
    p_inf: f64,
    nu: &[f64],
    schedule: &[(f64, f64)],
) -> Result<DecayReport> {
    let values: Vec<Result<f64>> = schedule
        .par_iter()
        .map(|&(eps, r_eps)| {
            let params = BubbleParams::new(eps, nu, r_eps, p_inf, 0.0)
                .or_else(|_| BubbleParams::new(eps, nu, r_eps, p_inf, 0.2))?;
            bubble_integral(
                &|x| h_field.eval(x),
                p_field,
                Kind::Value,
                &params,
                p_inf,
                1e-10,
            )
        })
        .collect();
    let values: Result<Vec<f64>> = values.into_iter().collect();
    let values = values?;
    let eps_list: Vec<f64> = schedule.iter().map(|(e, _)| *e).collect();
    let abs_vals: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let (pref, alpha) = crate::quad::fit_power_law(&eps_list, &abs_vals).unwrap_or((0.0, 0.0));
    // fit_power_law fits v ~ c x^-alpha, so the decay power in eps is -alpha.
    let fitted_exponent = -alpha;
    let scaled: Vec<f64> = schedule
        .iter()
        .zip(&values)
        .map(|((_, r), v)| v.abs() * r * r)
        .collect();
    let vanishes = scaled.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
        || abs_vals.iter().all(|&v| v == 0.0);
    Ok(DecayReport {
        values,
        fitted_exponent,
        fitted_prefactor: pref,
        vanishes_against_x2: vanishes,
        schedule: schedule.to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FiberReport {
    pub t_samples: Vec<f64>,
    pub j_samples: Vec<f64>,
    pub t_eps: f64,
    pub j_eps_max: f64,
    pub t0: f64,
    pub j0_at_t0: f64,
    pub j1_at_t0: f64,
    pub j0_second_deriv_at_t0: f64,
    pub c_value: f64,
    pub k_n_p_inv: f64,
}

/// Closed-form fiber algebra: J0, its maximizer and curvature, and J1.
#[derive(Debug, Clone, Copy)]
pub struct FiberAlgebra {
    pub n: f64,
    pub p: f64,
    pub q: f64,
    pub k_inf: f64,
    /// K(N, p)^{-1}.
    pub k_inv: f64,
    pub a_q: f64,
    pub a_p: f64,
}

impl FiberAlgebra {
    pub fn t0(&self) -> f64 {
        self.k_inf.powf(1.0 / (self.p - self.q))
    }

    pub fn j0(&self, t: f64) -> f64 {
        self.k_inv.powf(self.n)
            * (t.powf(self.p) / self.p - t.powf(self.q) * self.k_inf / self.q)
    }

    pub fn j0_at_t0(&self) -> f64 {
        self.k_inv.powf(self.n) * self.k_inf.powf(-(self.n - self.p) / self.p) / self.n
    }

    pub fn j0_second_deriv_at_t0(&self) -> f64 {
        (self.p - self.q)
            * self.k_inv.powf(self.n)
            * self.k_inf.powf((2.0 - self.p) / (self.q - self.p))
    }

    pub fn j1_at_t0(&self) -> f64 {
        0.5 * self.n
            * self.k_inv.powf(self.n)
            * self.k_inf.powf(self.p / (self.p - self.q))
            * (self.a_q / (self.q * self.q) - self.a_p / (self.p * self.p))
    }
}

/// J_eps(t) = F(t C u_eps) sampled on a t-grid with the interior maximum
/// located by golden section, plus the closed forms at t0.
#[allow(clippy::too_many_arguments)]
pub fn fiber_map(
    params: &BubbleParams,
    p_field: &ExponentField,
    q_field: &ExponentField,
    k_field: &ExponentField,
    big_k_field: &ExponentField,
    k_inf: f64,
    nu: &[f64],
    t_grid: &[f64],
) -> Result<FiberReport> {
    let n = p_field.dim;
    let nf = n as f64;
    let p_inf = p_field
        .limit_at_infinity
        .ok_or_else(|| Error::MissingEstimate("p(infinity)".into()))?;
    let q_inf = nf * p_inf / (nf - p_inf);
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "t grid must be increasing with at least 3 points".into(),
        ));
    }

    let kc = k_constant(n, p_inf)?;
    let moments = bubble_moments(n, p_inf)?;
    let u_q_norm = moments.u_q.powf(1.0 / q_inf);
    // C = K(N, p)^{-N/q(inf)} ||U||_{q(inf)}^{-1}.
    let c_value = kc.inv_value.powf(nf / q_inf) / u_q_norm;

    let j_eps = |t: f64| -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        let ln_tc = (t * c_value).ln();
        // gradient term: (tC)^{p(x)}/p(x) |grad u_eps|^{p(x)}
        let grad = bubble_integral(
            &|x| {
                let px = p_field.eval(x);
                (px * ln_tc).exp() / px
            },
            p_field,
            Kind::Gradient,
            params,
            p_inf,
            1e-12,
        )?;
        // lower-order term: (tC)^{p(x)} k(x)/p(x) |u_eps|^{p(x)}
        let low = bubble_integral(
            &|x| {
                let px = p_field.eval(x);
                (px * ln_tc).exp() * k_field.eval(x) / px
            },
            p_field,
            Kind::Value,
            params,
            p_inf,
            1e-10,
        )?;
        // source term: (tC)^{q(x)} K(x)/q(x) |u_eps|^{q(x)}
        let src = bubble_integral(
            &|x| {
                let qx = q_field.eval(x);
                (qx * ln_tc).exp() * big_k_field.eval(x) / qx
            },
            q_field,
            Kind::Value,
            params,
            p_inf,
            1e-12,
        )?;
        Ok(grad + low - src)
    };

    let mut t_samples = t_grid.to_vec();
    let mut j_samples: Vec<f64> = Vec::new();
    for &t in &t_samples {
        j_samples.push(j_eps(t)?);
    }
    let mut arg = j_samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if arg == 0 || arg == t_samples.len() - 1 {
        // One extension of the grid on the offending side.
        let extra: Vec<f64> = if arg == 0 {
            let lo = t_samples[0];
            (1..=4).map(|k| lo * 0.5f64.powi(k)).rev().collect()
        } else {
            let hi = *t_samples.last().unwrap();
            (1..=4).map(|k| hi * 2f64.powi(k)).collect()
        };
        if arg == 0 {
            let mut all = extra.clone();
            all.extend_from_slice(&t_samples);
            t_samples = all;
        } else {
            t_samples.extend_from_slice(&extra);
        }
        j_samples.clear();
        for &t in &t_samples {
            j_samples.push(j_eps(t)?);
        }
        arg = j_samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if arg == 0 || arg == t_samples.len() - 1 {
            return Err(Error::NoInteriorMax);
        }
    }
    let (t_eps, j_eps_max) = golden_section_max(
        |t| j_eps(t).unwrap_or(f64::NEG_INFINITY),
        t_samples[arg - 1],
        t_samples[arg + 1],
        1e-8 * t_samples[arg],
    );

    let jet_p = fit_infinity_jet(p_field, &DEFAULT_JET_SHELLS, 24)?;
    let jet_q = fit_infinity_jet(q_field, &DEFAULT_JET_SHELLS, 24)?;
    let algebra = FiberAlgebra {
        n: nf,
        p: p_inf,
        q: q_inf,
        k_inf,
        k_inv: kc.inv_value,
        a_q: jet_q.quadratic_form(nu),
        a_p: jet_p.quadratic_form(nu),
    };

    Ok(FiberReport {
        t_samples,
        j_samples,
        t_eps,
        j_eps_max,
        t0: algebra.t0(),
        j0_at_t0: algebra.j0_at_t0(),
        j1_at_t0: algebra.j1_at_t0(),
        j0_second_deriv_at_t0: algebra.j0_second_deriv_at_t0(),
        c_value,
        k_n_p_inv: kc.inv_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: f64 = 1.3;
    const N: usize = 2;
    fn q_inf() -> f64 {
        2.0 * P / (2.0 - P)
    }

    #[test]
    fn window_rejects_large_eps() {
        // The tightest envelope eps^{-(p-1)/4} only clears 10 |ln eps| for
        // very small eps; at 1e-3 the window is empty.
        assert!(matches!(
            hyp_r_window(1e-3, 1.3, 2, 0.2),
            Err(Error::EmptyWindow { .. })
        ));
        assert!(matches!(
            hyp_r_window(1e-2, 1.3, 2, 0.2),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn window_nonempty_for_tiny_eps() {
        let eps = (-150.0f64).exp();
        let (lo, hi) = hyp_r_window(eps, 1.3, 2, 0.2).unwrap();
        assert_relative_eq!(lo, 1500.0, max_relative = 1e-12);
        assert_relative_eq!(hi, (150.0_f64 * 0.075 * 0.8).exp(), max_relative = 1e-12);
        assert!(lo < hi);
    }

    #[test]
    fn window_lower_edge_linear_in_c_lo() {
        let eps = (-200.0f64).exp();
        let (lo1, _) = hyp_r_window_with(eps, 1.3, 2, 0.2, 10.0).unwrap();
        let (lo2, _) = hyp_r_window_with(eps, 1.3, 2, 0.2, 20.0).unwrap();
        assert_relative_eq!(lo2, 2.0 * lo1, max_relative = 1e-14);
    }

    #[test]
    fn window_requires_p_below_sqrt_n() {
        assert!(hyp_r_window((-150.0f64).exp(), 1.5, 2, 0.2).is_err());
    }

    fn small_params(e_exp: f64) -> BubbleParams {
        let eps = (-e_exp).exp();
        let (lo, hi) = hyp_r_window(eps, P, N, 0.2).unwrap();
        BubbleParams::new(eps, &[1.0, 0.0], (lo * hi).sqrt(), P, 0.2).unwrap()
    }

    #[test]
    fn bubble_center_value_and_support() {
        let params = small_params(150.0);
        let ev = BubbleEvaluator::new(params.clone(), P, N).unwrap();
        let c = params.center();
        let amp = params.eps.powf(-(2.0 - P) / P);
        assert_relative_eq!(ev.eval(&c), amp, max_relative = 1e-12);
        // Support inside B(x_eps, 2) exactly.
        assert_eq!(ev.eval(&[c[0] + 2.0, c[1]]), 0.0);
        assert_eq!(ev.eval(&[c[0] + 1.99, c[1]]) > 0.0, true);
    }

    #[test]
    fn bubble_grid_resolution_gate() {
        let params = small_params(150.0);
        let ev = BubbleEvaluator::new(params.clone(), P, N).unwrap();
        let c = params.center();
        let grid = GridSpec::new_box(2, &c, 2.0, 33).unwrap();
        assert!(matches!(
            ev.to_grid(&grid),
            Err(Error::CoreUnresolved { .. })
        ));
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(1.0), 1.0);
        assert_eq!(cutoff(2.0), 0.0);
        assert!(cutoff(1.5) > 0.0 && cutoff(1.5) < 1.0);
        let h = 1e-6;
        for r in [1.2, 1.5, 1.8] {
            let fd = (cutoff(r + h) - cutoff(r - h)) / (2.0 * h);
            assert_relative_eq!(cutoff_deriv(r), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn value_integral_matches_moment_at_moderate_eps() {
        // Constant critical exponents at eps = 1e-2: the q-modular of u_eps
        // equals the bubble moment up to the cutoff tail, within 1%.
        let q = ExponentField::constant(N, q_inf());
        // r_eps is irrelevant for constant exponents; bypass the window.
        let params = BubbleParams {
            eps: 1e-2,
            nu: vec![1.0, 0.0],
            r_eps: 1e4,
        };
        let v = bubble_integral(&|_| 1.0, &q, Kind::Value, &params, P, 1e-12).unwrap();
        let m = bubble_moments(N, P).unwrap();
        assert_relative_eq!(v, m.u_q, max_relative = 0.01);
    }

    #[test]
    fn scaling_identity_cutoff_tail() {
        // With constant exponents the integrals are eps-independent up to a
        // cutoff tail bounded by C eps^{(N-p)/(p-1)}.
        let q = ExponentField::constant(N, q_inf());
        let m = bubble_moments(N, P).unwrap();
        let tail_exp = (2.0 - P) / (P - 1.0);
        let mut prev_tail = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let params = BubbleParams {
                eps,
                nu: vec![1.0, 0.0],
                r_eps: 1e6,
            };
            let v = bubble_integral(&|_| 1.0, &q, Kind::Value, &params, P, 1e-12).unwrap();
            // Compare down to a quadrature-noise floor only.
            let floor = 1e-12 * m.u_q;
            let tail = (v - m.u_q).abs().max(floor);
            assert!(tail <= 10.0 * eps.powf(tail_exp), "eps {eps} tail {tail}");
            assert!(
                tail <= prev_tail,
                "eps {eps}: tail {tail:.3e} grew past {prev_tail:.3e}"
            );
            prev_tail = tail;
        }
    }

    #[test]
    fn expansion_q_constant_exponents() {
        let f = ExponentField::constant(N, 1.0);
        let q = ExponentField::constant(N, q_inf());
        let schedule = default_schedule(&DEFAULT_EPS_EXPONENTS, P, N, 0.2).unwrap();
        let rep = expansion_q(&f, &q, P, &[1.0, 0.0], &schedule).unwrap();
        let m = bubble_moments(N, P).unwrap();
        assert_relative_eq!(rep.closed_form[0], m.u_q, max_relative = 1e-9);
        assert!(rep.closed_form[1].abs() <= 1e-9 * m.u_q);
        assert!(rep.closed_form[2].abs() <= 1e-9 * m.u_q);
        assert_relative_eq!(rep.fitted[0], m.u_q, max_relative = 0.01);
        // Fitted slope coefficients at noise level.
        assert!(rep.fitted[1].abs() <= 3.0 * rep.std_errors[1].max(1e-9 * m.u_q));
    }

    fn aniso_q(sign: f64) -> ExponentField {
        crate::fields::FieldSpec::AnisotropicQ {
            limit: q_inf(),
            hessian: vec![vec![sign * 2.0, 0.0], vec![0.0, sign * 0.5]],
        }
        .build(N, 4.0)
        .unwrap()
    }

    #[test]
    fn expansion_q_anisotropic_sign_and_match() {
        // A(q, nu) < 0 (local max at infinity along nu) forces A1 > 0.
        let f = ExponentField::constant(N, 1.0);
        let q = aniso_q(-1.0);
        let nu = [1.0, 0.0];
        let schedule = default_schedule(&DEFAULT_EPS_EXPONENTS, P, N, 0.2).unwrap();
        let rep = expansion_q(&f, &q, P, &nu, &schedule).unwrap();
        assert!(rep.closed_form[1] > 0.0);
        assert_relative_eq!(rep.fitted[1], rep.closed_form[1], max_relative = 0.15);
    }

    #[test]
    fn expansion_q_direction_parity() {
        let f = ExponentField::constant(N, 1.0);
        let q = aniso_q(-1.0);
        let schedule = default_schedule(&[150.0, 175.0, 200.0, 225.0], P, N, 0.2).unwrap();
        let rep1 = expansion_q(&f, &q, P, &[1.0, 0.0], &schedule).unwrap();
        let rep2 = expansion_q(&f, &q, P, &[-1.0, 0.0], &schedule).unwrap();
        assert_relative_eq!(
            rep1.closed_form[1],
            rep2.closed_form[1],
            max_relative = 1e-12
        );
        for (a, b) in rep1.integrals.iter().zip(&rep2.integrals) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn expansion_grad_constant_exponents() {
        let g = ExponentField::constant(N, 1.0);
        let p_field = ExponentField::constant(N, P);
        let schedule = default_schedule(&DEFAULT_EPS_EXPONENTS, P, N, 0.2).unwrap();
        let rep = expansion_grad(&g, &p_field, P, &[1.0, 0.0], &schedule).unwrap();
        let m = bubble_moments(N, P).unwrap();
        assert_relative_eq!(rep.closed_form[0], m.grad_p, max_relative = 1e-9);
        assert_relative_eq!(rep.fitted[0], m.grad_p, max_relative = 0.01);
    }

    #[test]
    fn expansion_grad_sign_agreement() {
        // A(p, nu) > 0 (local min at infinity) forces B1 < 0; the fitted
        // coefficient agrees in sign.
        let g = ExponentField::constant(N, 1.0);
        let p_field = crate::fields::FieldSpec::AnisotropicQ {
            limit: P,
            hessian: vec![vec![0.04, 0.0], vec![0.0, 0.01]],
        }
        .build(N, 4.0)
        .unwrap();
        let schedule = default_schedule(&DEFAULT_EPS_EXPONENTS, P, N, 0.2).unwrap();
        let rep = expansion_grad(&g, &p_field, P, &[1.0, 0.0], &schedule).unwrap();
        assert!(rep.closed_form[1] < 0.0);
        assert!(rep.fitted[1] < 0.0, "fitted B1 = {}", rep.fitted[1]);
    }

    #[test]
    fn expansion_grad_moment_divergence_gate() {
        let g = ExponentField::constant(N, 1.0);
        let p_big = 2f64.sqrt() + 0.01;
        let p_field = ExponentField::constant(N, p_big);
        let schedule = vec![(1e-60, 1e3)];
        assert!(matches!(
            expansion_grad(&g, &p_field, p_big, &[1.0, 0.0], &schedule),
            Err(Error::MomentDivergence { .. })
        ));
    }

    #[test]
    fn expansion_p_zero_and_power() {
        let p_field = ExponentField::constant(N, P);
        let schedule = default_schedule(&[150.0, 175.0, 200.0, 225.0], P, N, 0.2).unwrap();
        let zero = ExponentField::constant(N, 0.0);
        let rep = expansion_p(&zero, &p_field, P, &[1.0, 0.0], &schedule).unwrap();
        assert!(rep.values.iter().all(|&v| v == 0.0));

        let one = ExponentField::constant(N, 1.0);
        let rep = expansion_p(&one, &p_field, P, &[1.0, 0.0], &schedule).unwrap();
        assert_relative_eq!(rep.fitted_exponent, P, max_relative = 0.1);
        assert!(rep.vanishes_against_x2);
    }

    #[test]
    fn fiber_algebra_t0_trivial() {
        let alg = FiberAlgebra {
            n: 2.0,
            p: P,
            q: q_inf(),
            k_inf: 1.0,
            k_inv: 0.7,
            a_q: 0.0,
            a_p: 0.0,
        };
        assert_eq!(alg.t0(), 1.0);
    }

    #[test]
    fn fiber_j0_max_matches_closed_form() {
        let alg = FiberAlgebra {
            n: 2.0,
            p: P,
            q: q_inf(),
            k_inf: 1.7,
            k_inv: k_constant(2, P).unwrap().inv_value,
            a_q: 0.0,
            a_p: 0.0,
        };
        let (t_max, j_max) = golden_section_max(|t| alg.j0(t), 1e-3, 10.0, 1e-10);
        assert_relative_eq!(t_max, alg.t0(), epsilon = 1e-6);
        assert_relative_eq!(j_max, alg.j0_at_t0(), epsilon = 1e-10 * j_max.abs().max(1.0));
    }

    #[test]
    fn fiber_j0_curvature_matches_closed_form() {
        let alg = FiberAlgebra {
            n: 2.0,
            p: P,
            q: q_inf(),
            k_inf: 0.8,
            k_inv: k_constant(2, P).unwrap().inv_value,
            a_q: 0.0,
            a_p: 0.0,
        };
        let t0 = alg.t0();
        let h = 1e-4 * t0;
        let fd = (alg.j0(t0 + h) - 2.0 * alg.j0(t0) + alg.j0(t0 - h)) / (h * h);
        assert_relative_eq!(fd, alg.j0_second_deriv_at_t0(), max_relative = 1e-6);
    }

    #[test]
    fn fiber_map_supt_approaches_j0() {
        // sup_t J_eps(t) -> J0(t0) along a HypR-compliant schedule.
        let p_field = ExponentField::constant(N, P).with_limit(P);
        let q_field = ExponentField::constant(N, q_inf()).with_limit(q_inf());
        let k_field = ExponentField::constant(N, 0.0);
        let big_k = ExponentField::constant(N, 1.0);
        let t_grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
        let mut errs = Vec::new();
        for e_exp in [150.0, 250.0] {
            let params = small_params(e_exp);
            let rep = fiber_map(
                &params, &p_field, &q_field, &k_field, &big_k, 1.0, &[1.0, 0.0], &t_grid,
            )
            .unwrap();
            errs.push((rep.j_eps_max - rep.j0_at_t0).abs() / rep.j0_at_t0);
        }
        assert!(errs[0] < 1e-3, "errors {errs:?}");
        assert!(errs[1] <= errs[0] * (1.0 + 1e-9), "errors {errs:?}");
    }

    #[test]
    fn regression_consistency_denser_schedule() {
        let f = ExponentField::constant(N, 1.0);
        let q = aniso_q(-1.0);
        let nu = [1.0, 0.0];
        let coarse = default_schedule(&DEFAULT_EPS_EXPONENTS, P, N, 0.2).unwrap();
        let dense_exps: Vec<f64> = (0..9).map(|i| 150.0 + 12.5 * i as f64).collect();
        let dense = default_schedule(&dense_exps, P, N, 0.2).unwrap();
        let rep_c = expansion_q(&f, &q, P, &nu, &coarse).unwrap();
        let rep_d = expansion_q(&f, &q, P, &nu, &dense).unwrap();
        let tol = rep_c.std_errors[1].max(1e-12 * rep_c.fitted[1].abs());
        assert!(
            (rep_c.fitted[1] - rep_d.fitted[1]).abs() <= 3.0 * tol,
            "coarse {} dense {} se {}",
            rep_c.fitted[1],
            rep_d.fitted[1],
            tol
        );
    }

    #[test]
    fn rotation_equivariance_closed_forms() {
        // Rotating nu and the Hessian together leaves A(q, nu) unchanged.
        let th = 0.7f64;
        let rot = [[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let h = [[-2.0, 0.3], [0.3, -0.5]];
        let mut h_rot = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        h_rot[i][j] += rot[i][a] * h[a][b] * rot[j][b];
                    }
                }
            }
        }
        let nu = [1.0, 0.0];
        let nu_rot = [rot[0][0], rot[1][0]];
        let jet = InfinityJet {
            value_at_infinity: q_inf(),
            gradient_at_infinity: vec![0.0, 0.0],
            hessian_at_infinity: vec![h[0].to_vec(), h[1].to_vec()],
            fit_residual: 0.0,
        };
        let jet_rot = InfinityJet {
            value_at_infinity: q_inf(),
            gradient_at_infinity: vec![0.0, 0.0],
            hessian_at_infinity: vec![h_rot[0].to_vec(), h_rot[1].to_vec()],
            fit_residual: 0.0,
        };
        assert_relative_eq!(
            jet.quadratic_form(&nu),
            jet_rot.quadratic_form(&nu_rot),
            max_relative = 1e-12
        );
    }
}
