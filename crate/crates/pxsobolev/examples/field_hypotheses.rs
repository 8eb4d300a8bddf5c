//! Exponent-field catalog, critical sets, Taylor data at infinity and the
//! numeric hypothesis surrogates H1-H7.

use pxsobolev::fields::{
    critical_set, fit_infinity_jet, validate_hypotheses, ExponentField, FieldSpec,
    HypothesisConfig, DEFAULT_JET_SHELLS,
};
use pxsobolev::grid::GridSpec;

fn main() -> pxsobolev::Result<()> {
    println!("field catalog: {:?}", FieldSpec::all_ids());

    let p = FieldSpec::RadialBumpP {
        limit: 1.3,
        amplitude: 0.2,
    }
    .build(2, 4.0)?;
    let q = FieldSpec::RadialBumpP {
        limit: 26.0 / 7.0,
        amplitude: -0.5,
    }
    .build(2, 4.0)?;
    let k = FieldSpec::ExpDecay {
        amplitude: 1.0,
        rate: 1.0,
    }
    .build(2, 4.0)?;
    let big_k = ExponentField::constant(2, 1.0);

    // Second-order Taylor data at infinity in inverted coordinates.
    let jet = fit_infinity_jet(&q, &DEFAULT_JET_SHELLS, 24)?;
    println!(
        "q at infinity: value {:.6}, |grad| {:.2e}, fit residual {:.2e}",
        jet.value_at_infinity,
        jet.gradient_norm(),
        jet.fit_residual
    );

    // Critical set of q against p*: here q < p* everywhere, so it is empty;
    // with q = p* it covers the grid and clusters to one component.
    let grid = GridSpec::new_box(2, &[0.0, 0.0], 2.0, 17)?;
    let pts = critical_set(&p, &q, &grid, 1e-6)?;
    println!("critical points of (p, q): {pts:?}");

    let report = validate_hypotheses(&p, &q, &k, &big_k, &HypothesisConfig::default());
    println!(
        "H1 {}  H2(p) {}  H2(q) {}  H3 {}  H4 {}  H5 {}  H6 {}  H7 {}",
        report.h1.holds,
        report.h2_p.holds,
        report.h2_q.holds,
        report.h3_bounds,
        report.h4,
        report.h5_k_bounded,
        report.h6_k_shell_decay.holds,
        report.h7.holds
    );
    Ok(())
}
