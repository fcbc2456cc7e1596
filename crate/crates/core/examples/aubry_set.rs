// Weak KAM pair, critical value and Aubry estimate of the forced pendulum,
// written as CSV and as a binary snapshot.
//
//     cargo run --release --example aubry_set [OUT_DIR]

use weakkam::io::{decode_snapshot, encode_snapshot, fields_csv, write_atomic};
use weakkam::{DpSettings, LagrangianSystem, LaxOleinik, Result, SpaceTimeGrid};

pub fn run(out: Option<std::path::PathBuf>) -> Result<()> {
    let grid = SpaceTimeGrid::new(1, 64, 16, 65, 4.0)?;
    let engine = LaxOleinik::new(&LagrangianSystem::pendulum(), &grid)?;
    let a = engine.analyze(&DpSettings::default())?;
    let crit = &a.critical;
    println!("alpha = {:.3e} in [{:.3e}, {:.3e}] after {} periods", crit.alpha, crit.lower, crit.upper, crit.periods);
    println!("eps_a = {:.1e}, Aubry nodes = {}", a.eps_a, a.aubry.len());
    for k in 0..grid.nt() {
        let xs: Vec<String> = a.aubry.iter().filter(|n| n.t == k).map(|n| format!("{:.4}", grid.x_of(n.x)[0])).collect();
        println!("  t = {:.4}: x in {{{}}}", grid.t_of(k), xs.join(", "));
    }
    let gap = a.gap();
    println!("max (u_- - u_+) = {:.4}, domination defect of u_+ = {:.1e}", gap.max(), engine.domination_defect(&a.u_plus, a.alpha()));

    let dir = out.unwrap_or_else(|| std::env::temp_dir().join("weakkam-aubry"));
    write_atomic(&dir.join("fields.csv"), fields_csv(&grid, &[("u_minus", &a.u_minus), ("u_plus", &a.u_plus)])?.as_bytes())?;
    let bytes = encode_snapshot(&[&a.u_minus, &a.u_plus])?;
    write_atomic(&dir.join("fields.bin"), &bytes)?;
    assert_eq!(decode_snapshot(&bytes)?, vec![a.u_minus.clone(), a.u_plus.clone()]);
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run(std::env::args().nth(1).map(Into::into)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
