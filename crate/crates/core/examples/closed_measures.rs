// Closed-measure linear program: minimizer, invariance under the flow, the
// LP text export, and approximate closedness of orbit occupation measures.
//
//     cargo run --release --example closed_measures

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakkam::measures::{
    build_lp, invariance_defect, max_closedness_defect, occupation_measure, parse_lp_format, solve_lp, TestFunctionBasis,
};
use weakkam::simplex::SimplexOptions;
use weakkam::{LagrangianSystem, OneForm, Result, SpaceTimeGrid, State};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let sys = LagrangianSystem::pendulum();
    let omega = OneForm::zero(1);
    for k in [2, 3] {
        let basis = TestFunctionBasis::new(1, k, (grid.nt() / 2) as i32)?;
        let lp = build_lp(&sys, &omega, &basis, &grid)?;
        let out = solve_lp(&lp, &SimplexOptions::default())?;
        let inv = invariance_defect(&sys, &out.mu, grid.dt())?;
        println!(
            "K = {k}: {} rows, value {:.3e}, gap {:.1e}, {} atoms, invariance defect {:.1e}",
            basis.row_count(),
            out.value,
            out.solution.duality_gap,
            out.mu.atoms(1e-12).len(),
            inv
        );
    }

    // The text export grows with the column count; a coarse grid keeps it small.
    let coarse = SpaceTimeGrid::new(1, 16, 4, 17, 4.0)?;
    let lp = build_lp(&sys, &omega, &TestFunctionBasis::new(1, 2, 2)?, &coarse)?;
    let text = lp.to_lp_format();
    let parsed = parse_lp_format(&text)?;
    println!("LP export on 16x4: {} bytes, {} columns, {} rows parsed back", text.len(), parsed.objective.len(), parsed.rows.len());

    let basis = TestFunctionBasis::new(1, 2, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..5 {
        let start = State { x: [rng.gen(), 0.0], v: [rng.gen_range(-1.0..=1.0), 0.0], t: 0.0 };
        let mu = occupation_measure(&sys, &grid, start, 50)?;
        println!("orbit {i}: x0 = {:.3}, v0 = {:+.3}, closedness defect {:.3e}", start.x[0], start.v[0], max_closedness_defect(&mu, &basis));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
