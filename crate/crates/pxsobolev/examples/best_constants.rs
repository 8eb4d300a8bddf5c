//! Best Sobolev constants: K(N, r)^{-1} on the extremal bubble, an
//! independent Rayleigh minimization, and the localized / at-infinity
//! constant schedules.

use pxsobolev::constants::{exterior_constant, k_constant, localized_constant, rayleigh_best};
use pxsobolev::fields::ExponentField;
use pxsobolev::grid::GridSpec;

fn main() -> pxsobolev::Result<()> {
    let (n, r) = (2, 1.3);
    let kc = k_constant(n, r)?;
    println!("K({n},{r})^-1 (radial quadrature) = {:.10}", kc.inv_value);

    // Independent minimization of ||grad u||_r / ||u||_{r*} on a large box.
    let p = ExponentField::constant(n, r);
    let rstar = ExponentField::constant(n, 2.0 * r / (2.0 - r));
    let grid = GridSpec::new_box(n, &[0.0, 0.0], 12.0, 41)?;
    let outcome = rayleigh_best(&p, &rstar, &grid, 400, 1)?;
    println!(
        "Rayleigh minimization         = {:.10} (gap {:.2}%)",
        outcome.constant_estimate,
        100.0 * (outcome.constant_estimate - kc.inv_value).abs() / kc.inv_value
    );

    // Localized constant over shrinking balls at the origin.
    let pv = ExponentField::from_fn(2, 4.0, |x| {
        1.3 + 0.2 / (1.0 + x[0] * x[0] + x[1] * x[1])
    })?
    .with_limit(1.3);
    let qv = ExponentField::from_fn(2, 4.0, |x| {
        26.0 / 7.0 - 0.5 / (1.0 + x[0] * x[0] + x[1] * x[1])
    })?
    .with_limit(26.0 / 7.0);
    let seq = localized_constant(&pv, &qv, &[0.0, 0.0], &[1.0, 0.5, 0.25], 21, 150)?;
    println!(
        "S_x0 estimates over shrinking balls: {:?} -> {:.6}",
        seq.outcomes
            .iter()
            .map(|o| o.constant_estimate)
            .collect::<Vec<_>>(),
        seq.extrapolated
    );

    // Constant at infinity over growing exterior annuli.
    let seq = exterior_constant(&pv, &qv, &[4.0, 8.0, 16.0], 32.0, 21, 150)?;
    println!(
        "S_inf estimates over exterior annuli: {:?} -> {:.6}",
        seq.outcomes
            .iter()
            .map(|o| o.constant_estimate)
            .collect::<Vec<_>>(),
        seq.extrapolated
    );
    if let Some(c) = &seq.caveat {
        println!("caveat: {c}");
    }
    Ok(())
}
