//! Variable-exponent Lebesgue machinery: the modular, the Luxemburg norm by
//! bisection, Holder and Hardy inequality checks and the cube-norm weight
//! admissibility test.

use crate::error::{Error, Result};
use crate::fields::ExponentField;
use crate::grid::{GridFunction, GridSpec};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModularValue {
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LuxemburgNorm {
    pub value: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// rho(u) = int |u(x)|^{p(x)} dx by the rectangle rule.
pub fn modular(u: &GridFunction, p: &ExponentField) -> ModularValue {
    let spec = &u.spec;
    let value = u.integrate_with(|i, v| {
        if v == 0.0 {
            0.0
        } else {
            let x = spec.coord(i);
            v.abs().powf(p.eval(&x[..spec.dim]))
        }
    });
    ModularValue { value }
}

/// Norm-modular relations: the norm and the modular sit on the same side of
/// 1, and the power sandwiches with p^- / p^+ hold up to `tol`.
pub fn norm_modular_relations_hold(
    norm: f64,
    rho: f64,
    p_minus: f64,
    p_plus: f64,
    tol: f64,
) -> bool {
    if norm == 0.0 || rho == 0.0 {
        return norm <= tol && rho <= tol;
    }
    if (norm - 1.0).abs() <= tol {
        return (rho - 1.0).abs() <= 10.0 * tol;
    }
    let same_side = (norm < 1.0) == (rho < 1.0 + tol) || (rho - 1.0).abs() <= tol;
    let (lo, hi) = if norm >= 1.0 {
        (norm.powf(p_minus), norm.powf(p_plus))
    } else {
        (norm.powf(p_plus), norm.powf(p_minus))
    };
    same_side && rho >= lo * (1.0 - tol) - tol && rho <= hi * (1.0 + tol) + tol
}

/// Core bisection on weighted samples: minimize lambda with
/// cell_volume * sum_i w_i * |v_i / lambda|^{e_i} <= 1.
pub fn luxemburg_from_samples(
    cell_volume: f64,
    values: &[f64],
    exps: &[f64],
    weights: &[f64],
) -> Result<LuxemburgNorm> {
    assert_eq!(values.len(), exps.len());
    assert_eq!(values.len(), weights.len());
    let rho_at = |lam: f64| -> f64 {
        let mut s = 0.0;
        for ((&v, &e), &w) in values.iter().zip(exps).zip(weights) {
            if v != 0.0 {
                s += w * (v.abs() / lam).powf(e);
            }
        }
        s * cell_volume
    };
    let rho1 = rho_at(1.0);
    if rho1 == 0.0 {
        return Ok(LuxemburgNorm {
            value: 0.0,
            iterations: 0,
            bracket: (0.0, 0.0),
        });
    }
    let (p_min, p_max) = exps
        .iter()
        .zip(values)
        .filter(|(_, v)| **v != 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&e, _)| {
            (lo.min(e), hi.max(e))
        });
    // Exact for constant exponents, a valid seed otherwise.
    let a = rho1.powf(1.0 / p_min);
    let b = rho1.powf(1.0 / p_max);
    let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
    let mut iterations = 0usize;
    // rho is strictly decreasing in lambda: expand until rho(lo) >= 1 >= rho(hi).
    while rho_at(lo) < 1.0 {
        lo *= 0.5;
        iterations += 1;
        if iterations > 200 || lo < 1e-300 {
            return Err(Error::BracketFailure { lo, hi });
        }
    }
    while rho_at(hi) > 1.0 {
        hi *= 2.0;
        iterations += 1;
        if iterations > 200 || hi > 1e300 {
            return Err(Error::BracketFailure { lo, hi });
        }
    }
    let bracket = (lo, hi);
    let mut mid;
    loop {
        mid = 0.5 * (lo + hi);
        let r = rho_at(mid);
        if (r - 1.0).abs() <= 1e-12 || iterations >= 200 {
            break;
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(LuxemburgNorm {
        value: mid,
        iterations,
        bracket,
    })
}

/// Luxemburg norm inf { lambda > 0 : rho(u/lambda) <= 1 }.
pub fn luxemburg_norm(u: &GridFunction, p: &ExponentField) -> Result<LuxemburgNorm> {
    let spec = &u.spec;
    let exps: Vec<f64> = (0..spec.node_count())
        .map(|i| {
            let x = spec.coord(i);
            p.eval(&x[..spec.dim])
        })
        .collect();
    let weights: Vec<f64> = (0..spec.node_count())
        .map(|i| {
            if spec.is_masked(i) {
                0.0
            } else {
                spec.quad_weight(i)
            }
        })
        .collect();
    luxemburg_from_samples(spec.cell_volume(), &u.values, &exps, &weights)
}

/// Euclidean magnitude of the discrete gradient, as a grid function.
pub fn gradient_magnitude(u: &GridFunction) -> GridFunction {
    let comps = u.gradient();
    let n = u.spec.node_count();
    let mut vals = vec![0.0; n];
    for (i, v) in vals.iter_mut().enumerate() {
        let mut s = 0.0;
        for c in &comps {
            s += c.values[i] * c.values[i];
        }
        *v = s.sqrt();
    }
    GridFunction {
        spec: u.spec.clone(),
        values: vals,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// ||fg||_s <= ((s/p)^+ + (s/q)^+) ||f||_p ||g||_q with 1/s = 1/p + 1/q.
pub fn holder_check(
    f: &GridFunction,
    g: &GridFunction,
    p: &ExponentField,
    q: &ExponentField,
    s: &ExponentField,
) -> Result<HolderReport> {
    let spec = &f.spec;
    let mut max_dev: f64 = 0.0;
    let mut sp_plus: f64 = f64::NEG_INFINITY;
    let mut sq_plus: f64 = f64::NEG_INFINITY;
    for i in 0..spec.node_count() {
        let x = spec.coord(i);
        let xs = &x[..spec.dim];
        let (pv, qv, sv) = (p.eval(xs), q.eval(xs), s.eval(xs));
        max_dev = max_dev.max((1.0 / sv - 1.0 / pv - 1.0 / qv).abs());
        sp_plus = sp_plus.max(sv / pv);
        sq_plus = sq_plus.max(sv / qv);
    }
    if max_dev > 1e-12 {
        return Err(Error::ConjugacyViolation(max_dev));
    }
    let prod = GridFunction {
        spec: spec.clone(),
        values: f
            .values
            .iter()
            .zip(&g.values)
            .map(|(a, b)| a * b)
            .collect(),
    };
    let lhs = luxemburg_norm(&prod, s)?.value;
    let rhs = (sp_plus + sq_plus) * luxemburg_norm(f, p)?.value * luxemburg_norm(g, q)?.value;
    Ok(HolderReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-10),
    })
}

/// || |x|^{-1} v ||_{p(.)} / || grad v ||_{p(.)}. The center node carries
/// weight zero in the singular integrand; v must vanish for |x| <= 2h.
pub fn hardy_ratio(v: &GridFunction, p: &ExponentField) -> Result<f64> {
    let spec = &v.spec;
    let h = spec.step();
    if v.values.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    for i in 0..spec.node_count() {
        if spec.radius(i) <= 2.0 * h && v.values[i] != 0.0 && !spec.is_masked(i) {
            return Err(Error::Precondition(format!(
                "v must vanish for |x - center| <= 2h; nonzero at node {i}"
            )));
        }
    }
    let weighted = GridFunction {
        spec: spec.clone(),
        values: (0..spec.node_count())
            .map(|i| {
                let r = spec.radius(i);
                if r <= 1e-14 {
                    0.0
                } else {
                    v.values[i] / r
                }
            })
            .collect(),
    };
    let num = luxemburg_norm(&weighted, p)?.value;
    let den = luxemburg_norm(&gradient_magnitude(v), p)?.value;
    if den == 0.0 {
        return Err(Error::Precondition("gradient vanishes identically".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct CubeNorm {
    pub center: Vec<f64>,
    pub radius: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightAdmissibilityReport {
    /// Cube Luxemburg norms ordered by |center|.
    pub cubes: Vec<CubeNorm>,
    pub decay_flag: bool,
    /// Truncated L^1 mass of k over the sampled cubes (surrogate only).
    pub l1_surrogate: f64,
}

impl WeightAdmissibilityReport {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        for c in &self.cubes {
            for x in &c.center {
                write!(w, "{x:.17e},")?;
            }
            writeln!(w, "{:.17e},{:.17e}", c.radius, c.norm)?;
        }
        Ok(())
    }
}

/// Cube norms ||k||_{s/(s-p)}(Q(x, l)) over a list of cube centers, with a
/// monotone-envelope decay flag. The exponent s/(s-p) is nodewise, capped at
/// 1e6 where s = p.
pub fn weight_admissibility(
    k: &ExponentField,
    p: &ExponentField,
    s: &ExponentField,
    l: f64,
    cube_centers: &[Vec<f64>],
) -> Result<WeightAdmissibilityReport> {
    let dim = k.dim;
    if !(l > 0.0) {
        return Err(Error::Precondition("cube side must be positive".into()));
    }
    let m_sub = 9usize;
    let n = dim as f64;

    let mut results: Vec<Result<(CubeNorm, f64)>> = Vec::new();
    cube_centers
        .par_iter()
        .map(|c| {
            if c.len() != dim {
                return Err(Error::Precondition("cube center dim mismatch".into()));
            }
            let spec = GridSpec::new_box(dim, c, l / 2.0, m_sub)?;
            let mut values = Vec::with_capacity(spec.node_count());
            let mut exps = Vec::with_capacity(spec.node_count());
            let mut weights = Vec::with_capacity(spec.node_count());
            let mut l1 = 0.0;
            for i in 0..spec.node_count() {
                let x = spec.coord(i);
                let xs = &x[..dim];
                let (kv, pv, sv) = (k.eval(xs), p.eval(xs), s.eval(xs));
                if kv < -1e-12 {
                    return Err(Error::Precondition(format!("k < 0 at {xs:?}")));
                }
                if sv < pv - 1e-12 {
                    return Err(Error::Precondition(format!(
                        "need s >= p, got s = {sv}, p = {pv} at {xs:?}"
                    )));
                }
                if pv < n {
                    let pstar = n * pv / (n - pv);
                    if pstar - sv <= 1e-9 {
                        return Err(Error::Precondition(format!(
                            "need inf(p* - s) > 0, got p* = {pstar}, s = {sv} at {xs:?}"
                        )));
                    }
                }
                let e = if sv - pv <= sv / 1e6 {
                    1e6
                } else {
                    sv / (sv - pv)
                };
                let w = spec.quad_weight(i);
                values.push(kv.max(0.0));
                exps.push(e);
                weights.push(w);
                l1 += w * kv.max(0.0);
            }
            let norm = luxemburg_from_samples(spec.cell_volume(), &values, &exps, &weights)?.value;
            let radius = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok((
                CubeNorm {
                    center: c.clone(),
                    radius,
                    norm,
                },
                l1 * spec.cell_volume(),
            ))
        })
        .collect_into_vec(&mut results);

    let mut cubes = Vec::with_capacity(results.len());
    let mut l1_surrogate = 0.0;
    for r in results {
        let (c, l1) = r?;
        cubes.push(c);
        l1_surrogate += l1;
    }
    cubes.sort_by(|a, b| a.radius.partial_cmp(&b.radius).unwrap());

    // Monotone envelope from the far end; decay means the envelope drops.
    let mut envelope = vec![0.0; cubes.len()];
    let mut run: f64 = 0.0;
    for i in (0..cubes.len()).rev() {
        run = run.max(cubes[i].norm);
        envelope[i] = run;
    }
    let decay_flag = if envelope.iter().all(|&e| e <= 1e-14) {
        true
    } else {
        envelope.last().copied().unwrap_or(0.0) <= 0.8 * envelope[0]
    };

    Ok(WeightAdmissibilityReport {
        cubes,
        decay_flag,
        l1_surrogate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ExponentField;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_volume_box(m: usize) -> GridSpec {
        // [-1/2, 1/2]^2, volume 1.
        GridSpec::new_box(2, &[0.0, 0.0], 0.5, m).unwrap()
    }

    #[test]
    fn modular_of_one_is_volume() {
        let spec = unit_volume_box(11);
        let u = GridFunction::from_fn(spec, |_| 1.0);
        let p = ExponentField::constant(2, 2.7);
        assert_relative_eq!(modular(&u, &p).value, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn modular_of_zero_is_zero() {
        let spec = unit_volume_box(5);
        let u = GridFunction::zeros(spec);
        let p = ExponentField::constant(2, 3.0);
        assert_eq!(modular(&u, &p).value, 0.0);
    }

    #[test]
    fn modular_x1_squared_1d() {
        // int_0^1 x^2 dx = 1/3 within O(h^2).
        let spec = GridSpec::new_box(1, &[0.5], 0.5, 201).unwrap();
        let u = GridFunction::from_fn(spec.clone(), |x| x[0]);
        let p = ExponentField::constant(1, 2.0);
        let h = spec.step();
        assert!((modular(&u, &p).value - 1.0 / 3.0).abs() < h * h + 1e-12);
    }

    #[test]
    fn luxemburg_constant_exponent_is_classical() {
        let spec = unit_volume_box(11);
        let u = GridFunction::from_fn(spec, |_| 2.0);
        let p = ExponentField::constant(2, 3.0);
        let out = luxemburg_norm(&u, &p).unwrap();
        assert_relative_eq!(out.value, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn luxemburg_homogeneous() {
        let spec = unit_volume_box(9);
        let u = GridFunction::from_fn(spec.clone(), |x| (x[0] * 5.0).sin() + 0.3);
        let mut cu = u.clone();
        cu.scale(3.7);
        let p = ExponentField::from_fn(2, 0.5, |x| 2.0 + x[0].abs()).unwrap();
        let a = luxemburg_norm(&u, &p).unwrap().value;
        let b = luxemburg_norm(&cu, &p).unwrap().value;
        assert_relative_eq!(b, 3.7 * a, epsilon = 1e-10);
    }

    #[test]
    fn luxemburg_two_cell_closed_form() {
        // Cell volumes 1/2 each, values 1, exponents 2 and 4:
        // rho(1/lam) = y/2 + y^2/2 with y = lam^-2; equals 1 at y = 1.
        let out = luxemburg_from_samples(0.5, &[1.0, 1.0], &[2.0, 4.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(out.value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn holder_trivial_ones() {
        let spec = unit_volume_box(9);
        let f = GridFunction::from_fn(spec.clone(), |_| 1.0);
        let g = f.clone();
        let p = ExponentField::constant(2, 2.0);
        let q = ExponentField::constant(2, 2.0);
        let s = ExponentField::constant(2, 1.0);
        let rep = holder_check(&f, &g, &p, &q, &s).unwrap();
        assert_relative_eq!(rep.lhs, 1.0, epsilon = 1e-9);
        // (s/p)^+ + (s/q)^+ = 1/2 + 1/2 with equality lhs = rhs here.
        assert_relative_eq!(rep.rhs, 1.0, epsilon = 1e-9);
        assert!(rep.holds);
    }

    #[test]
    fn holder_zero_f() {
        let spec = unit_volume_box(9);
        let f = GridFunction::zeros(spec.clone());
        let g = GridFunction::from_fn(spec, |x| x[0] + 2.0);
        let p = ExponentField::constant(2, 3.0);
        let q = ExponentField::constant(2, 1.5);
        let s = ExponentField::constant(2, 1.0);
        let rep = holder_check(&f, &g, &p, &q, &s).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn holder_conjugacy_violation() {
        let spec = unit_volume_box(5);
        let f = GridFunction::from_fn(spec.clone(), |_| 1.0);
        let g = f.clone();
        let p = ExponentField::constant(2, 2.0);
        let q = ExponentField::constant(2, 2.0);
        let s = ExponentField::constant(2, 1.5); // 1/1.5 != 1/2 + 1/2
        assert!(holder_check(&f, &g, &p, &q, &s).is_err());
    }

    #[test]
    fn hardy_zero_convention() {
        let spec = GridSpec::new_box(2, &[0.0, 0.0], 3.0, 31).unwrap();
        let v = GridFunction::zeros(spec);
        let p = ExponentField::constant(2, 1.5);
        assert_eq!(hardy_ratio(&v, &p).unwrap(), 0.0);
    }

    #[test]
    fn hardy_dilation_bounded() {
        // Annulus bump v(x) = bump(|x|), dilations v_t(x) = v(x/t): the ratio
        // stays bounded by a t-independent constant.
        let p = ExponentField::constant(2, 1.5);
        let bump = |r: f64| {
            if r <= 1.0 || r >= 2.0 {
                0.0
            } else {
                ((r - 1.0) * (2.0 - r)).powi(2)
            }
        };
        let mut ratios = Vec::new();
        for t in [1.0, 2.0, 4.0, 8.0] {
            let spec = GridSpec::new_box(2, &[0.0, 0.0], 2.5 * t, 129).unwrap();
            let v = GridFunction::from_fn(spec, |x| {
                bump((x[0] * x[0] + x[1] * x[1]).sqrt() / t)
            });
            ratios.push(hardy_ratio(&v, &p).unwrap());
        }
        // Scale invariance of the Hardy quotient: all four ratios agree.
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max < 10.0, "ratios {ratios:?}");
        assert!(max / min < 1.5, "ratios {ratios:?}");
    }

    #[test]
    fn hardy_nonzero_near_center_rejected() {
        let spec = GridSpec::new_box(2, &[0.0, 0.0], 1.0, 11).unwrap();
        let v = GridFunction::from_fn(spec, |_| 1.0);
        let p = ExponentField::constant(2, 1.5);
        assert!(hardy_ratio(&v, &p).is_err());
    }

    #[test]
    fn hardy_refinement_stability() {
        // Truncated bubble profile with a variable exponent: ratio finite and
        // stable within 20% under m -> 2m - 1.
        let p = ExponentField::from_fn(2, 6.0, |x| {
            1.5 + 0.1 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
        })
        .unwrap();
        let profile = |r: f64| {
            if r < 0.5 || r > 5.0 {
                0.0
            } else {
                let u = (1.0 + r.powf(3.0)) as f64;
                u.powf(-0.5) * ((r - 0.5) * (5.0 - r)).min(1.0)
            }
        };
        let ratio = |m: usize| {
            let spec = GridSpec::new_box(2, &[0.0, 0.0], 6.0, m).unwrap();
            let v = GridFunction::from_fn(spec, |x| {
                profile((x[0] * x[0] + x[1] * x[1]).sqrt())
            });
            hardy_ratio(&v, &p).unwrap()
        };
        let a = ratio(65);
        let b = ratio(129);
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / b < 0.2, "a = {a}, b = {b}");
    }

    fn shell_centers(n_shells: usize, spacing: f64) -> Vec<Vec<f64>> {
        (0..n_shells)
            .flat_map(|i| {
                let r = spacing * (i as f64 + 1.0);
                (0..8).map(move |k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
                    vec![r * th.cos(), r * th.sin()]
                })
            })
            .collect()
    }

    #[test]
    fn weight_zero_admissible() {
        let k = ExponentField::constant(2, 0.0);
        let p = ExponentField::constant(2, 2.0);
        let s = ExponentField::constant(2, 3.0);
        let rep = weight_admissibility(&k, &p, &s, 1.0, &shell_centers(4, 2.0)).unwrap();
        assert!(rep.cubes.iter().all(|c| c.norm == 0.0));
        assert!(rep.decay_flag);
    }

    #[test]
    fn weight_exponential_decays() {
        // N = 2 so that p = 2 < N fails; use p below N.
        let k = ExponentField::from_fn(2, 4.0, |x| {
            (-(x.iter().map(|v| v * v).sum::<f64>().sqrt())).exp()
        })
        .unwrap();
        let p = ExponentField::constant(2, 1.5);
        let s = ExponentField::constant(2, 3.0);
        let rep = weight_admissibility(&k, &p, &s, 1.0, &shell_centers(6, 2.0)).unwrap();
        assert!(rep.decay_flag);
        // Shell maxima decay monotonically (cubes within a shell are only
        // near-symmetric because the cubes are axis-aligned).
        let mut shell_max: std::collections::BTreeMap<i64, f64> = Default::default();
        for c in &rep.cubes {
            let key = (c.radius * 1e6).round() as i64;
            let e = shell_max.entry(key).or_insert(0.0);
            *e = e.max(c.norm);
        }
        let maxima: Vec<f64> = shell_max.values().cloned().collect();
        for w in maxima.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{maxima:?}");
        }
    }

    #[test]
    fn weight_constant_not_admissible() {
        let k = ExponentField::constant(2, 1.0);
        let p = ExponentField::constant(2, 1.5);
        let s = ExponentField::constant(2, 3.0);
        let rep = weight_admissibility(&k, &p, &s, 1.0, &shell_centers(5, 2.0)).unwrap();
        assert!(!rep.decay_flag);
        assert!(rep.cubes.iter().all(|c| c.norm > 0.0));
    }

    #[test]
    fn weight_domination_violation() {
        let k = ExponentField::constant(2, 1.0);
        let p = ExponentField::constant(2, 2.5);
        let s = ExponentField::constant(2, 2.0); // s < p
        assert!(weight_admissibility(&k, &p, &s, 1.0, &shell_centers(2, 2.0)).is_err());
    }

    fn random_grid_fn(seed: &[f64]) -> (GridFunction, ExponentField) {
        let spec = unit_volume_box(9);
        let vals: Vec<f64> = (0..spec.node_count())
            .map(|i| seed[i % seed.len()] * ((i as f64 * 0.61).sin() + 0.1))
            .collect();
        let u = GridFunction::from_values(spec, vals).unwrap();
        let p = ExponentField::from_fn(2, 0.5, |x| 2.0 + 0.8 * (x[0] + 0.5)).unwrap();
        (u, p)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn norm_modular_relations(scale in 0.05f64..20.0, seed in prop::collection::vec(-1.0f64..1.0, 4..10)) {
            let (mut u, p) = random_grid_fn(&seed);
            u.scale(scale);
            let rho = modular(&u, &p).value;
            let norm = luxemburg_norm(&u, &p).unwrap().value;
            if norm == 0.0 {
                prop_assert!(rho == 0.0);
            } else {
                let (pm, pp) = (2.0, 2.8);
                // ||u|| < 1 iff rho(u) < 1 (with slack for the bisection tol).
                if norm < 1.0 - 1e-9 {
                    prop_assert!(rho < 1.0 + 1e-9);
                    prop_assert!(norm.powf(pp) <= rho * (1.0 + 1e-8));
                    prop_assert!(rho <= norm.powf(pm) * (1.0 + 1e-8));
                }
                if norm > 1.0 + 1e-9 {
                    prop_assert!(rho > 1.0 - 1e-9);
                    prop_assert!(norm.powf(pm) <= rho * (1.0 + 1e-8));
                    prop_assert!(rho <= norm.powf(pp) * (1.0 + 1e-8));
                }
            }
        }

        #[test]
        fn triangle_inequality(seed1 in prop::collection::vec(-1.0f64..1.0, 4..10),
                               seed2 in prop::collection::vec(-1.0f64..1.0, 4..10)) {
            let (u, p) = random_grid_fn(&seed1);
            let (v, _) = random_grid_fn(&seed2);
            let sum = GridFunction {
                spec: u.spec.clone(),
                values: u.values.iter().zip(&v.values).map(|(a, b)| a + b).collect(),
            };
            let nu = luxemburg_norm(&u, &p).unwrap().value;
            let nv = luxemburg_norm(&v, &p).unwrap().value;
            let ns = luxemburg_norm(&sum, &p).unwrap().value;
            prop_assert!(ns <= nu + nv + 1e-9);
        }

        #[test]
        fn holder_random_conjugates(seed1 in prop::collection::vec(-1.0f64..1.0, 4..10),
                                    seed2 in prop::collection::vec(-1.0f64..1.0, 4..10),
                                    pv in 1.5f64..4.0, qv in 1.5f64..4.0) {
            let (f, _) = random_grid_fn(&seed1);
            let (g, _) = random_grid_fn(&seed2);
            let sv = 1.0 / (1.0 / pv + 1.0 / qv);
            let p = ExponentField::constant(2, pv);
            let q = ExponentField::constant(2, qv);
            let s = ExponentField::constant(2, sv);
            let rep = holder_check(&f, &g, &p, &q, &s).unwrap();
            prop_assert!(rep.holds, "lhs {} > rhs {}", rep.lhs, rep.rhs);
        }
    }

    #[test]
    fn sequence_continuity() {
        // rho(u/2^k) -> 0 and ||u/2^k|| -> 0 together.
        let (u, p) = random_grid_fn(&[0.7, -0.2, 0.9]);
        let mut prev_rho = f64::INFINITY;
        let mut prev_norm = f64::INFINITY;
        for k in 0..20 {
            let mut uk = u.clone();
            uk.scale(2f64.powi(-k));
            let rho = modular(&uk, &p).value;
            let norm = luxemburg_norm(&uk, &p).unwrap().value;
            assert!(rho <= prev_rho && norm <= prev_norm);
            prev_rho = rho;
            prev_norm = norm;
        }
        assert!(prev_rho < 1e-10 && prev_norm < 1e-5);
    }
}
