//! The fiber map J_eps(t) = F(t C u_eps): sampled maximum against the
//! closed-form algebra t0, J0(t0), J0''(t0) and J1(t0).

use pxsobolev::bubbles::{fiber_map, hyp_r_window, BubbleParams, FiberAlgebra};
use pxsobolev::constants::k_constant;
use pxsobolev::fields::ExponentField;
use pxsobolev::quad::golden_section_max;

fn main() -> pxsobolev::Result<()> {
    let (n, p_inf) = (2usize, 1.3);
    let q_inf = 26.0 / 7.0;

    // Closed-form fiber algebra with a nontrivial K(infinity).
    let alg = FiberAlgebra {
        n: n as f64,
        p: p_inf,
        q: q_inf,
        k_inf: 1.7,
        k_inv: k_constant(n, p_inf)?.inv_value,
        a_q: 0.0,
        a_p: 0.0,
    };
    let (t_max, j_max) = golden_section_max(|t| alg.j0(t), 1e-3, 10.0, 1e-10);
    println!("t0 closed {:.10}  maximized {:.10}", alg.t0(), t_max);
    println!("J0(t0) closed {:.12e}  maximized {:.12e}", alg.j0_at_t0(), j_max);
    println!("J0''(t0) = {:.6e}", alg.j0_second_deriv_at_t0());

    // Full J_eps along a HypR-compliant bubble.
    let eps = (-150.0f64).exp();
    let (lo, hi) = hyp_r_window(eps, p_inf, n, 0.2)?;
    let params = BubbleParams::new(eps, &[1.0, 0.0], (lo * hi).sqrt(), p_inf, 0.2)?;
    let p = ExponentField::constant(n, p_inf);
    let q = ExponentField::constant(n, q_inf);
    let k = ExponentField::constant(n, 0.0);
    let big_k = ExponentField::constant(n, 1.0);
    let t_grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
    let rep = fiber_map(&params, &p, &q, &k, &big_k, 1.0, &[1.0, 0.0], &t_grid)?;
    println!(
        "J_eps: t_eps = {:.8} (t0 = {:.8}), sup = {:.10e} (J0(t0) = {:.10e})",
        rep.t_eps, rep.t0, rep.j_eps_max, rep.j0_at_t0
    );
    Ok(())
}
