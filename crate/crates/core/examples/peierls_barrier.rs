// Finite-horizon actions h_n, their window liminf, and a DP minimizer.
//
//     cargo run --release --example peierls_barrier

use weakkam::{DpSettings, LagrangianSystem, LaxOleinik, Node, Result, SpaceTimeGrid};

pub fn run() -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let settings = DpSettings::default();
    let engine = LaxOleinik::new(&LagrangianSystem::pendulum(), &grid)?;
    let alpha = engine.critical_value_vi(&settings)?.alpha;

    let origin = Node { x: 0, t: 0 };
    let half = Node { x: 32, t: 0 };
    let acts = engine.source_actions(half, alpha, settings.n_hi);
    println!("h_n from x = 1/2 to itself:");
    for n in [1, 2, 4, 8, 16, 32, 64] {
        println!("  n = {n:>2}: {:.6}", acts.h_n(grid.node_index(half), n));
    }
    for (src, dst) in [(origin, origin), (half, half), (origin, half), (half, origin)] {
        let b = engine.peierls_barrier(src, dst, alpha, &settings)?;
        println!("h({:.2} -> {:.2}) = {:.6} (n* = {}, oscillation {:.1e})", grid.x_of(src.x)[0], grid.x_of(dst.x)[0], b.h, b.n_star, b.oscillation);
    }

    let (path, times) = engine.minimizing_path(half, origin, 4)?;
    let cost = engine.finite_action(half, origin, 4, alpha)?;
    println!("minimizer 1/2 -> 0 over 4 periods, action {cost:.6}:");
    for (x, t) in path.iter().zip(&times).step_by(8) {
        println!("  t = {t:>6.3}  x = {:.4}", x[0]);
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
