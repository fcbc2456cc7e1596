// Horizons N(eps), the sets A_eps and the curve inequalities on random,
// orbit and DP-minimizing curves of the forced pendulum.
//
//     cargo run --release --example lemma_harness

use weakkam::verify::{dp_minimizer_curve, orbit_curve, VerifyHarness};
use weakkam::{DpSettings, LagrangianSystem, Node, Result, SpaceTimeGrid, State};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let sys = LagrangianSystem::pendulum();
    let h = VerifyHarness::new(&sys, &grid, &DpSettings::default(), 64, 42)?;
    println!("{} probes, domination slack {:.1e}", h.probes().len(), h.domination_slack());
    let eps = 0.125;
    let n_eps = h.n_epsilon(eps)?;
    let a_eps = h.a_epsilon(eps)?;
    println!("eps = {eps}: N = {n_eps}, |A_eps| = {} of {} nodes", a_eps.len(), grid.node_count());

    let mut curves = h.random_curves(20, 2, 7)?;
    curves.push(orbit_curve(20, &sys, State { x: [0.5, 0.0], v: [0.3, 0.0], t: 0.0 }, 2, 128, grid.v_max())?);
    curves.push(dp_minimizer_curve(21, h.engine(), Node { x: 32, t: 0 }, Node { x: 0, t: 0 }, 2)?);
    let chi = h.chi_field(&h.epsilon_table(6)?)?;
    let mut worst = f64::INFINITY;
    for c in &curves {
        let r = h.lemma_with(c, eps, n_eps, &a_eps);
        let q = h.check_chi_inequality(c, &chi);
        worst = worst.min(r.margin + r.tol);
        if c.id % 5 == 0 || c.id >= 20 {
            println!("curve {:>2} {:?}: lhs {:.4} rhs {:.4} mu {:.3} pass {} | chi form pass {}", c.id, c.source, r.lhs, r.rhs, r.mu, r.pass, q.pass);
        }
        assert!(r.pass && q.pass);
    }
    println!("worst margin plus tolerance {worst:.4}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
