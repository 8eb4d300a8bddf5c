//! Luxemburg norms and modulars on a variable-exponent field, with the
//! norm-modular relations and a Hölder inequality check.

use pxsobolev::fields::ExponentField;
use pxsobolev::grid::{GridFunction, GridSpec};
use pxsobolev::spaces::{holder_check, luxemburg_norm, modular, norm_modular_relations_hold};

fn main() -> pxsobolev::Result<()> {
    let grid = GridSpec::new_box(2, &[0.0, 0.0], 3.0, 41)?;
    let p = ExponentField::from_fn(2, 3.0, |x| 1.5 + 0.4 / (1.0 + x[0] * x[0] + x[1] * x[1]))?;

    for scale in [0.2, 1.0, 5.0] {
        let u = GridFunction::from_fn(grid.clone(), |x| {
            scale * (-(x[0] * x[0] + x[1] * x[1])).exp()
        });
        let norm = luxemburg_norm(&u, &p)?;
        let rho = modular(&u, &p);
        let ok = norm_modular_relations_hold(
            norm.value,
            rho.value,
            p.lower_bound,
            p.upper_bound,
            1e-9,
        );
        println!(
            "scale {scale:>4}: ||u|| = {:.6}  rho(u) = {:.6}  relations hold: {ok}",
            norm.value, rho.value
        );
    }

    // Hölder: ||fg||_s <= ((s/p)^+ + (s/q)^+) ||f||_p ||g||_q with 1/s = 1/p + 1/q.
    let p2 = ExponentField::constant(2, 2.0);
    let q2 = ExponentField::constant(2, 2.0);
    let s1 = ExponentField::constant(2, 1.0);
    let f = GridFunction::from_fn(grid.clone(), |x| (x[0] * 1.3).cos());
    let g = GridFunction::from_fn(grid, |x| 1.0 / (1.0 + x[1] * x[1]));
    let rep = holder_check(&f, &g, &p2, &q2, &s1)?;
    println!(
        "Holder: lhs = {:.6} <= rhs = {:.6} (holds: {})",
        rep.lhs, rep.rhs, rep.holds
    );
    Ok(())
}
