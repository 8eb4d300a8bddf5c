//! Change-of-variables identities used by the at-infinity analysis: the
//! dilation transfer for exterior-supported functions and the conformal
//! (stereographic) weighted modulars.

use pxsobolev::constants::{scaling_transfer_check, stereographic_transfer};
use pxsobolev::fields::ExponentField;
use pxsobolev::grid::{GridFunction, GridSpec};

fn exterior_bump(grid: &GridSpec, r: f64) -> GridFunction {
    GridFunction::from_fn(grid.clone(), |x| {
        let d = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if d <= r + 0.5 {
            0.0
        } else {
            ((d - r - 0.5) * (3.0 * r - d).max(0.0)).max(0.0) / (r * r)
        }
    })
}

fn main() -> pxsobolev::Result<()> {
    let r = 8.0;
    let grid = GridSpec::new_box(2, &[0.0, 0.0], 4.0 * r, 129)?;
    let u = exterior_bump(&grid, r);

    // Constant exponents: the dilation identity is exact.
    let p = ExponentField::constant(2, 1.3);
    let q = ExponentField::constant(2, 26.0 / 7.0);
    let t = scaling_transfer_check(&u, &p, &q, r)?;
    println!(
        "dilation (constant exponents): lhs_q {:.8e} vs rhs_q {:.8e}",
        t.lhs_q, t.rhs_q
    );
    println!(
        "dilation gradient side:        lhs {:.8e} vs rhs {:.8e}",
        t.lhs_grad, t.rhs_grad
    );

    // Variable q: the identity holds to leading order as R grows.
    let qv = ExponentField::from_fn(2, 4.0 * r, |x| {
        26.0 / 7.0 + 2.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
    })?
    .with_limit(26.0 / 7.0);
    let t = scaling_transfer_check(&u, &p, &qv, r)?;
    println!(
        "dilation (variable q):  lhs_q {:.8e} vs rhs_q {:.8e} (ratio {:.4})",
        t.lhs_q,
        t.rhs_q,
        t.lhs_q / t.rhs_q
    );

    let st = stereographic_transfer(&u, &p, &qv, r)?;
    println!(
        "conformal modulars: sphere {:.6e} vs flat {:.6e}",
        st.sphere_modular, st.flat_modular
    );
    println!(
        "gradient side: sphere {:.6e} vs flat {:.6e}; Hardy term {:.6e}",
        st.sphere_gradient_modular, st.flat_gradient_modular, st.hardy_modular
    );
    Ok(())
}
