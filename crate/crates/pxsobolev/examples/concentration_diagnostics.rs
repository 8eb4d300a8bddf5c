//! Concentration-mass diagnostics along a shrinking-bubble iterate family:
//! ball masses stabilize at the bubble moments, exterior masses vanish.

use pxsobolev::bubbles::bubble_moments;
use pxsobolev::constants::TalentiBubble;
use pxsobolev::fields::ExponentField;
use pxsobolev::grid::{GridFunction, GridSpec};
use pxsobolev::solver::{concentration_diagnostics, ProblemData, SobolevEstimates};

fn main() -> pxsobolev::Result<()> {
    let (n, p) = (2usize, 1.3);
    let q = 26.0 / 7.0;
    let grid = GridSpec::new_box(n, &[0.0, 0.0], 6.0, 121)?;
    let data = ProblemData::new(
        ExponentField::constant(n, p),
        ExponentField::constant(n, q),
        ExponentField::constant(n, 0.0),
        ExponentField::constant(n, 1.0),
        grid.clone(),
        vec![vec![0.0, 0.0]],
        p,
        q,
        1.0,
    )?;

    let bubble = TalentiBubble::new(n, p)?;
    let iterates: Vec<GridFunction> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&e: &f64| {
            GridFunction::from_fn(grid.clone(), |x| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                e.powf(-(n as f64 - p) / p) * bubble.eval(r / e)
            })
        })
        .collect();

    let diag = concentration_diagnostics(
        &iterates,
        &data,
        &[2.0, 1.0, 0.5],
        &[2.0, 3.0, 4.0],
        &SobolevEstimates::default(),
        0.05,
    )?;
    let m = bubble_moments(n, p)?;
    let pm = &diag.points[0];
    println!("ball nu(delta): {:?}", pm.nu);
    println!("bubble moment int U^q = {:.6}", m.u_q);
    println!("ball mu(delta): {:?}", pm.mu);
    println!("bubble moment int |grad U|^p = {:.6}", m.grad_p);
    println!(
        "exterior masses at largest R: nu = {:.3e}, mu = {:.3e}",
        diag.infinity.nu_limit, diag.infinity.mu_limit
    );
    Ok(())
}
