//! Numerical mountain pass for the constant-exponent sanity problem
//! p = 2, q = 4, k = 1, K = 1 on a bounded box.

use pxsobolev::fields::ExponentField;
use pxsobolev::grid::{GridFunction, GridSpec};
use pxsobolev::solver::{energy, mountain_pass_solve, ProblemData};

fn main() -> pxsobolev::Result<()> {
    let grid = GridSpec::new_box(2, &[0.0, 0.0], 3.0, 25)?;
    let data = ProblemData::new(
        ExponentField::constant(2, 2.0),
        ExponentField::constant(2, 4.0),
        ExponentField::constant(2, 1.0),
        ExponentField::constant(2, 1.0),
        grid.clone(),
        vec![],
        2.0,
        4.0,
        1.0,
    )?;

    // A negative-energy endpoint: a bump scaled past the fiber maximum.
    let mut endpoint = GridFunction::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (1.0 - r2 / 9.0).max(0.0).powi(2)
    });
    let mut t = 2.0;
    loop {
        let mut cand = endpoint.clone();
        cand.scale(t);
        if energy(&cand, &data).total < 0.0 {
            endpoint = cand;
            break;
        }
        t *= 2.0;
    }
    println!("endpoint energy: {:.6}", energy(&endpoint, &data).total);

    let trace = mountain_pass_solve(&data, &endpoint, 6, 3000, 1e-6)?;
    println!(
        "converged: {}  residual: {:.3e}  candidate energy: {:.6}",
        trace.converged, trace.final_residual_norm, trace.final_energy
    );
    println!(
        "pass value history (first/last): {:.6} -> {:.6} over {} iterations",
        trace.energy_history.first().unwrap(),
        trace.energy_history.last().unwrap(),
        trace.energy_history.len()
    );
    let peak = trace
        .final_function
        .values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    println!("candidate peak value: {peak:.6}");
    Ok(())
}
