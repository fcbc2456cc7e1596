// A perturbation W vanishing on the Aubry estimate, the check that it moves
// neither alpha nor the Aubry set, and a smooth critical subsolution that is
// strict by W/2 away from the Aubry set.
//
//     cargo run --release --example subsolution

use weakkam::subsolution::{build_perturbation, perturbation_invariance_check, subsolution_with_retry};
use weakkam::verify::VerifyHarness;
use weakkam::{DpSettings, LagrangianSystem, Result, SpaceTimeGrid};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let dp = DpSettings::default();
    let sys = LagrangianSystem::pendulum();
    let h = VerifyHarness::new(&sys, &grid, &dp, 64, 42)?;
    let table = h.epsilon_table(6)?;
    for e in &table.entries {
        println!("eps = 2^-{}: N = {}, cap {:.4}", e.level, e.n_eps, e.chi_cap);
    }
    let chi = h.chi_field(&table)?;
    let aubry = &h.analysis().aubry;
    let w = build_perturbation(aubry, &chi, 1.0, 4.0 * grid.hx())?;
    println!("W: max {:.3}, positive outside the {:?}-cell tube", w.w.max(), w.zero_tube_cells);

    let inv = perturbation_invariance_check(&sys, &grid, &w, &dp, 2e-2)?;
    for c in inv.gated.iter().chain([&inv.oversized]) {
        println!("L - {} W: alpha shift {:.1e}, Aubry symmetric difference {}", c.scale, c.alpha_shift, c.symmetric_difference);
    }

    let (cert, rep) = subsolution_with_retry(&sys, &grid, &w, aubry, h.analysis().alpha(), 2.0, 0.5, &dp, 1e-2)?;
    let s = &rep.summary;
    println!("sigma {}: max defect {:.2e}, strictness margin {:.2e}, on Aubry {:.2e}", rep.sigma, s.max_defect, rep.strictness_margin, rep.aubry_strictness);
    println!("strictness quantiles {:?}", s.strictness_quantiles);
    assert!(cert.is_valid(1e-2) && rep.pass);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
