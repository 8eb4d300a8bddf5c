//! Escaping-bubble energy expansions: admissible center windows, the
//! regression of the energy integrals on {1, ln(eps)/r^2, 1/r^2} and the
//! comparison with the closed-form coefficients.

use pxsobolev::bubbles::{
    default_schedule, expansion_grad, expansion_p, expansion_q, hyp_r_window,
    DEFAULT_EPS_EXPONENTS,
};
use pxsobolev::fields::{ExponentField, FieldSpec};

fn main() -> pxsobolev::Result<()> {
    let (n, p_inf) = (2usize, 1.3);
    let q_inf = 26.0 / 7.0;

    let eps = (-150.0f64).exp();
    let (lo, hi) = hyp_r_window(eps, p_inf, n, 0.2)?;
    println!("admissible r_eps window at ln eps = -150: ({lo:.3e}, {hi:.3e})");

    let schedule = default_schedule(&DEFAULT_EPS_EXPONENTS, p_inf, n, 0.2)?;
    let one = ExponentField::constant(n, 1.0);
    let q = FieldSpec::AnisotropicQ {
        limit: q_inf,
        hessian: vec![vec![-2.0, 0.0], vec![0.0, -0.5]],
    }
    .build(n, 4.0)?;
    let nu = [1.0, 0.0];

    let rep = expansion_q(&one, &q, p_inf, &nu, &schedule)?;
    println!("int |u_eps|^q expansion:");
    println!("  A0 closed {:.8e}  fitted {:.8e}", rep.closed_form[0], rep.fitted[0]);
    println!("  A1 closed {:.8e}  fitted {:.8e}", rep.closed_form[1], rep.fitted[1]);
    println!("  A2 closed {:.8e}  fitted {:.8e}", rep.closed_form[2], rep.fitted[2]);
    println!("  residual rms {:.3e}", rep.residual_rms);

    let p_field = ExponentField::constant(n, p_inf);
    let rep = expansion_grad(&one, &p_field, p_inf, &nu, &schedule)?;
    println!("int |grad u_eps|^p expansion:");
    println!("  B0 closed {:.8e}  fitted {:.8e}", rep.closed_form[0], rep.fitted[0]);

    let h = FieldSpec::RadialBumpP {
        limit: 0.0,
        amplitude: 1.0,
    }
    .build(n, 4.0)?;
    let rep = expansion_p(&h, &p_field, p_inf, &nu, &schedule)?;
    println!(
        "int h |u_eps|^p decay: fitted exponent {:.4} (p(inf) = {p_inf}), o(|x_eps|^-2): {}",
        rep.fitted_exponent, rep.vanishes_against_x2
    );
    Ok(())
}
