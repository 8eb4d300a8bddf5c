//! 1-D quadrature and small optimization helpers shared across modules.

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40)
}

/// Integrate `f` over `[a, b]` split into geometrically growing panels so
/// integrands spanning several decades are resolved on every scale.
pub fn adaptive_simpson_log(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    assert!(a >= 0.0 && b > a);
    // First pass at a coarse tolerance to calibrate the absolute budget.
    let mut edges = vec![a];
    let mut e = if a <= 0.0 { b.min(1.0).min((b - a) * 1e-3 + a) } else { a };
    if a <= 0.0 {
        edges.push(e);
    }
    while e < b {
        e = (e * 4.0).min(b);
        edges.push(e);
    }
    let coarse: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], 1e-6))
        .sum();
    let budget = (coarse.abs() * rel_tol).max(1e-300);
    let per_panel = budget / edges.len() as f64;
    edges
        .windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], per_panel))
        .sum()
}

/// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Legendre P_n(x) and derivative via recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
                break;
            }
        }
    }
    (nodes, weights)
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Least-squares fit of `log y = log c - alpha log r` on positive samples.
/// Returns `(c, alpha)`; used for power-law tail extrapolation.
pub fn fit_power_law(rs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&r, &y) in rs.iter().zip(ys) {
        if y <= 0.0 || r <= 0.0 {
            continue;
        }
        let x = r.ln();
        let ly = y.ln();
        n += 1.0;
        sx += x;
        sy += ly;
        sxx += x * x;
        sxy += x * ly;
    }
    if n < 2.0 {
        return None;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    Some((intercept.exp(), -slope))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-10);
    }

    #[test]
    fn simpson_log_gaussian() {
        let v = adaptive_simpson_log(&|x| (-x * x).exp(), 0.0, 20.0, 1e-12);
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_integrates_quartic() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(4)).sum();
        assert!((s - 0.4).abs() < 1e-13);
    }

    #[test]
    fn golden_section_finds_parabola_max() {
        let (x, v) = golden_section_max(|t| -(t - 1.3) * (t - 1.3), 0.0, 4.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-8);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let rs: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = rs.iter().map(|r| 3.0 * r.powf(-2.5)).collect();
        let (c, a) = fit_power_law(&rs, &ys).unwrap();
        assert!((c - 3.0).abs() < 1e-9);
        assert!((a - 2.5).abs() < 1e-9);
    }
}
