// Critical value as a function of cohomology, by value iteration on the
// tilted Lagrangian and by the closed-measure linear program.
//
//     cargo run --release --example alpha_function

use weakkam::alpha::{AlphaExplorer, AlphaSettings};
use weakkam::simplex::SimplexOptions;
use weakkam::{DpSettings, LagrangianSystem, Result, SpaceTimeGrid};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let dp = DpSettings::default();
    let cs: Vec<[f64; 2]> = [0.0, 0.25, 0.5, 1.0, 1.25].iter().map(|&c| [c, 0.0]).collect();
    for sys in [LagrangianSystem::free(1), LagrangianSystem::pendulum()] {
        let ex = AlphaExplorer::new(&sys, &grid, &dp, &SimplexOptions::default(), &AlphaSettings::default())?;
        println!("{}", sys.name());
        println!("{:>6} {:>12} {:>12} {:>12} {:>8}", "c", "alpha_lp", "alpha_vi", "c^2/2", "support");
        for s in ex.alpha_many(&cs)? {
            let c = s.c[0];
            println!("{c:>6.2} {:>12.6} {:>12.6} {:>12.6} {:>8}", s.alpha_lp, s.alpha_vi, 0.5 * c * c, s.support_size);
            assert!(s.consistent, "routes disagree at c = {c}");
        }
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
