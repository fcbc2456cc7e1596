// Flat pieces of alpha: probes along segments, the bump-form witness that
// lives away from the Aubry set, and the form built from two subsolutions.
//
//     cargo run --release --example faces

use weakkam::alpha::{direction_fan, g0_witness_build, AlphaExplorer, AlphaSettings};
use weakkam::simplex::SimplexOptions;
use weakkam::verify::VerifyHarness;
use weakkam::{DpSettings, LagrangianSystem, LaxOleinik, OneForm, Result, SpaceTimeGrid};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let dp = DpSettings::default();
    let deltas = [0.1, 0.2, 0.3, 0.5];
    for sys in [LagrangianSystem::free(1), LagrangianSystem::pendulum()] {
        let ex = AlphaExplorer::new(&sys, &grid, &dp, &SimplexOptions::default(), &AlphaSettings::default())?;
        let (report, probes) = ex.face_report(&direction_fan(1, 1), &deltas)?;
        println!("{}: delta_star = {}", sys.name(), report.directions[0].delta_star);
        for r in &probes[0].rows {
            println!("  delta {:.2}: alpha(+) + alpha(-) = {:.5} (lp) {:.5} (vi)", r.delta, r.sum_lp(), r.sum_vi());
        }
    }

    let sys = LagrangianSystem::pendulum();
    let ex = AlphaExplorer::new(&sys, &grid, &dp, &SimplexOptions::default(), &AlphaSettings::default())?;
    let harness = VerifyHarness::new(&sys, &grid, &dp, 64, 42)?;
    let aubry = harness.analysis().aubry.clone();
    let bump = OneForm::bump(1, 0, 0.3, 0.7, 1.0)?;
    let e0 = ex.e0_witness_test(&bump, &aubry, &harness, 6)?;
    println!(
        "bump on [0.3, 0.7]: class {:.3}, eps {}, N {}, delta {:.4}, affinity defect {:.1e}, certified {}",
        e0.class.0[0], e0.eps, e0.n_eps, e0.delta, e0.affinity_defect, e0.certified
    );

    let c = [0.3, 0.0];
    let a0 = harness.analysis();
    let a1 = LaxOleinik::new(&sys.with_tilt(c), &grid)?.analyze(&dp)?;
    let g0 = g0_witness_build(c, a0.alpha(), a1.alpha(), &a0.u_minus, &a1.u_minus, &a0.aubry, 5e-2)?;
    println!("c = 0.3 witness: class error {:.1e}, residual on Aubry {:.1e}", g0.class_error, g0.residual);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
