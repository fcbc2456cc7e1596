//! File output: CSV tables, JSON reports, and a binary snapshot of fields.
//!
//! CSV floats use `{:.16e}` (17 significant digits), LF line endings and a
//! header row. Every write goes to a temporary file in the target directory
//! and is renamed into place.
//!
//! Snapshot layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `WKSNAP01` |
//! | 4 | `u32` dim |
//! | 4 | `u32` nx |
//! | 4 | `u32` nt |
//! | 4 | `u32` nv |
//! | 8 | `f64` v_max |
//! | 4 | `u32` layer count `L` |
//! | `8 L nt nx^dim` | `f64` payload, layer-major, then node index `t * nx^dim + x` |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{SpaceTimeGrid, ValueField};
use crate::laxoleinik::BarrierTable;

const MAGIC: &[u8; 8] = b"WKSNAP01";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t_index, x_index.., t, x.., name` for every node.
pub fn fields_csv(grid: &SpaceTimeGrid, layers: &[(&str, &ValueField)]) -> Result<String> {
    if layers.iter().any(|(_, f)| f.grid() != grid) {
        return Err(invalid("all layers must share the grid"));
    }
    let mut s = String::from("t_index");
    let axes = ["x", "y"];
    for a in axes.iter().take(grid.dim()) {
        let _ = write!(s, ",{a}_index");
    }
    s.push_str(",t");
    for a in axes.iter().take(grid.dim()) {
        let _ = write!(s, ",{a}");
    }
    for (name, _) in layers {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for idx in 0..grid.node_count() {
        let n = grid.node_of(idx);
        let c = grid.space_coords(n.x);
        let x = grid.x_of(n.x);
        let _ = write!(s, "{}", n.t);
        for ci in c.iter().take(grid.dim()) {
            let _ = write!(s, ",{ci}");
        }
        let _ = write!(s, ",{}", fmt_f64(grid.t_of(n.t)));
        for xi in x.iter().take(grid.dim()) {
            let _ = write!(s, ",{}", fmt_f64(*xi));
        }
        for (_, f) in layers {
            let _ = write!(s, ",{}", fmt_f64(f.data()[idx]));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn barrier_csv(table: &BarrierTable) -> String {
    let mut s = String::from("src_x_index,src_t_index,dst_x_index,dst_t_index,h,n_star,oscillation,late_decrease\n");
    for e in &table.entries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.source.x,
            e.source.t,
            e.target.x,
            e.target.t,
            fmt_f64(e.value.h),
            e.value.n_star,
            fmt_f64(e.value.oscillation),
            fmt_f64(e.value.late_decrease)
        );
    }
    s
}

/// A plain numeric table: header plus rows of floats.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn encode_snapshot(layers: &[&ValueField]) -> Result<Vec<u8>> {
    let first = layers.first().ok_or_else(|| invalid("snapshot needs at least one layer"))?;
    let g = first.grid();
    if layers.iter().any(|f| f.grid() != g) {
        return Err(invalid("all layers must share the grid"));
    }
    let mut out = Vec::with_capacity(40 + 8 * layers.len() * g.node_count());
    out.extend_from_slice(MAGIC);
    for v in [g.dim(), g.nx(), g.nt(), g.nv()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&g.v_max().to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for f in layers {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Vec<ValueField>> {
    let bad = || invalid("malformed snapshot");
    if bytes.len() < 36 || &bytes[..8] != MAGIC {
        return Err(bad());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (dim, nx, nt, nv) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let v_max = f64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let layers = u32_at(32);
    let g = SpaceTimeGrid::new(dim, nx, nt, nv, v_max)?;
    let n = g.node_count();
    if bytes.len() != 36 + 8 * layers * n {
        return Err(bad());
    }
    (0..layers)
        .map(|l| {
            let data = bytes[36 + 8 * l * n..36 + 8 * (l + 1) * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ValueField::from_data(&g, data)
        })
        .collect()
}
