//! Periodic space-time grids on `T^d x T` and fields sampled on them.
//!
//! Spatial nodes sit at `x = i / nx` on each axis, time slices at
//! `t = k / nt`, and the velocity box `[-v_max, v_max]^d` is sampled with
//! `nv` points per axis (endpoints included). Points are stored as `[f64; 2]`;
//! when `dim == 1` the second component is ignored everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A point of `R^d` (or `T^d`) with `d <= 2`.
pub type Point = [f64; 2];

pub const MAX_DIM: usize = 2;

/// Signed representative of `a - b` on the unit circle, in `[-1/2, 1/2)`.
pub fn periodic_offset(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - (d + 0.5).floor()
}

/// Wraps a coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x.floor() can round such that w == 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    dim: usize,
    nx: usize,
    nt: usize,
    nv: usize,
    v_max: f64,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, nx: usize, nt: usize, nv: usize, v_max: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid(format!("dim must be 1 or 2, got {dim}")));
        }
        if nx < 4 {
            return Err(invalid(format!("nx must be >= 4, got {nx}")));
        }
        if nt < 2 {
            return Err(invalid(format!("nt must be >= 2, got {nt}")));
        }
        if nv < 3 {
            return Err(invalid(format!("nv must be >= 3, got {nv}")));
        }
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(invalid(format!("v_max must be positive, got {v_max}")));
        }
        let grid = Self { dim, nx, nt, nv, v_max };
        // one time step must be able to cross at least one cell
        if grid.dt() * v_max < grid.hx() * (1.0 - 1e-12) {
            return Err(invalid(format!(
                "dt * v_max = {} is below the cell width {}",
                grid.dt() * v_max,
                grid.hx()
            )));
        }
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn v_max(&self) -> f64 {
        self.v_max
    }
    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }
    pub fn dt(&self) -> f64 {
        1.0 / self.nt as f64
    }
    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / (self.nv - 1) as f64
    }

    /// Number of spatial nodes, `nx^d`.
    pub fn space_len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Number of velocity nodes, `nv^d`.
    pub fn velocity_len(&self) -> usize {
        self.nv.pow(self.dim as u32)
    }

    /// Number of space-time nodes.
    pub fn node_count(&self) -> usize {
        self.space_len() * self.nt
    }

    pub fn space_coords(&self, i: usize) -> [usize; 2] {
        if self.dim == 1 {
            [i, 0]
        } else {
            [i % self.nx, i / self.nx]
        }
    }

    /// Flat spatial index of (possibly out-of-range) integer coordinates, wrapped.
    pub fn space_index(&self, c: [i64; 2]) -> usize {
        let n = self.nx as i64;
        let a = c[0].rem_euclid(n) as usize;
        if self.dim == 1 {
            a
        } else {
            a + self.nx * c[1].rem_euclid(n) as usize
        }
    }

    pub fn x_of(&self, i: usize) -> Point {
        let c = self.space_coords(i);
        let h = self.hx();
        if self.dim == 1 {
            [c[0] as f64 * h, 0.0]
        } else {
            [c[0] as f64 * h, c[1] as f64 * h]
        }
    }

    pub fn t_of(&self, k: usize) -> f64 {
        (k % self.nt) as f64 * self.dt()
    }

    pub fn velocity_coords(&self, iv: usize) -> [usize; 2] {
        if self.dim == 1 {
            [iv, 0]
        } else {
            [iv % self.nv, iv / self.nv]
        }
    }

    pub fn v_of(&self, iv: usize) -> Point {
        let c = self.velocity_coords(iv);
        let dv = self.dv();
        let mut v = [0.0; 2];
        for a in 0..self.dim {
            v[a] = -self.v_max + c[a] as f64 * dv;
        }
        v
    }

    /// Node nearest to `(x, t)`.
    pub fn nearest_node(&self, x: Point, t: f64) -> Node {
        let mut c = [0i64; 2];
        for a in 0..self.dim {
            c[a] = (wrap_unit(x[a]) * self.nx as f64).round() as i64;
        }
        let k = (wrap_unit(t) * self.nt as f64).round() as usize % self.nt;
        Node { x: self.space_index(c), t: k }
    }

    /// Flat index of a space-time node, `t * space_len + x`.
    pub fn node_index(&self, n: Node) -> usize {
        n.t * self.space_len() + n.x
    }

    pub fn node_of(&self, idx: usize) -> Node {
        let s = self.space_len();
        Node { x: idx % s, t: idx / s }
    }

    /// Torus Euclidean distance between two nodes, time weighted like space.
    pub fn node_distance(&self, a: Node, b: Node) -> f64 {
        let xa = self.x_of(a.x);
        let xb = self.x_of(b.x);
        let mut d2 = 0.0;
        for ax in 0..self.dim {
            let d = periodic_offset(xa[ax], xb[ax]);
            d2 += d * d;
        }
        let dt = periodic_offset(self.t_of(a.t), self.t_of(b.t));
        (d2 + dt * dt).sqrt()
    }

    /// Same box and dimension with every resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.dim,
            self.nx * factor,
            self.nt * factor,
            (self.nv - 1) * factor + 1,
            self.v_max,
        )
    }
}

/// A space-time node: flat spatial index and time slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub x: usize,
    pub t: usize,
}

/// A scalar function sampled on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: SpaceTimeGrid,
    data: Vec<f64>,
}

impl ValueField {
    pub fn constant(grid: &SpaceTimeGrid, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![value; grid.node_count()],
        }
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(Point, f64) -> f64) -> Self {
        let s = grid.space_len();
        let mut data = Vec::with_capacity(grid.node_count());
        for k in 0..grid.nt() {
            let t = grid.t_of(k);
            for i in 0..s {
                data.push(f(grid.x_of(i), t));
            }
        }
        Self { grid: grid.clone(), data }
    }

    pub fn from_data(grid: &SpaceTimeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() {
            return Err(invalid(format!(
                "field has {} samples, grid has {} nodes",
                data.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid: grid.clone(), data })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let s = self.grid.space_len();
        &self.data[k * s..(k + 1) * s]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.grid.space_len();
        &mut self.data[k * s..(k + 1) * s]
    }

    pub fn get(&self, n: Node) -> f64 {
        self.data[self.grid.node_index(n)]
    }

    pub fn set(&mut self, n: Node, v: f64) {
        let i = self.grid.node_index(n);
        self.data[i] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination with another field on the same grid.
    pub fn zip_with(&self, other: &ValueField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Self {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Periodic multilinear interpolation in `x` at a fixed time slice.
    pub fn interpolate(&self, x: Point, t_index: usize) -> f64 {
        interpolate_slice(&self.grid, self.slice(t_index % self.grid.nt()), x)
    }

    /// Periodic multilinear interpolation in `x` and linear interpolation in `t`.
    pub fn interpolate_st(&self, x: Point, t: f64) -> f64 {
        let nt = self.grid.nt();
        let s = wrap_unit(t) * nt as f64;
        let k0 = (s.floor() as usize) % nt;
        let f = s - s.floor();
        let a = self.interpolate(x, k0);
        if f == 0.0 {
            return a;
        }
        let b = self.interpolate(x, (k0 + 1) % nt);
        (1.0 - f) * a + f * b
    }
}

/// Periodic multilinear interpolation of one spatial slice.
pub fn interpolate_slice(grid: &SpaceTimeGrid, slice: &[f64], x: Point) -> f64 {
    let n = grid.nx();
    let nf = n as f64;
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    for a in 0..grid.dim() {
        let s = wrap_unit(x[a]) * nf;
        let i0 = s.floor();
        frac[a] = s - i0;
        base[a] = (i0 as usize) % n;
    }
    if grid.dim() == 1 {
        let i0 = base[0];
        let f = frac[0];
        if f == 0.0 {
            return slice[i0];
        }
        (1.0 - f) * slice[i0] + f * slice[(i0 + 1) % n]
    } else {
        let (i0, j0) = (base[0], base[1]);
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let (fx, fy) = (frac[0], frac[1]);
        let v00 = slice[i0 + n * j0];
        let v10 = slice[i1 + n * j0];
        let v01 = slice[i0 + n * j1];
        let v11 = slice[i1 + n * j1];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    }
}

/// A set of space-time nodes, stored as a mask over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    grid: SpaceTimeGrid,
    mask: Vec<bool>,
}

impl NodeSet {
    pub fn empty(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            mask: vec![false; grid.node_count()],
        }
    }

    pub fn full(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            mask: vec![true; grid.node_count()],
        }
    }

    pub fn from_predicate(grid: &SpaceTimeGrid, f: impl Fn(Node) -> bool) -> Self {
        let mask = (0..grid.node_count()).map(|i| f(grid.node_of(i))).collect();
        Self { grid: grid.clone(), mask }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn insert(&mut self, n: Node) {
        let i = self.grid.node_index(n);
        self.mask[i] = true;
    }

    pub fn contains(&self, n: Node) -> bool {
        self.mask[self.grid.node_index(n)]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn iter(&self) -> impl Iterator<Item = Node> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.grid.node_of(i))
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &NodeSet) -> bool {
        self.mask.iter().zip(&other.mask).any(|(&a, &b)| a && b)
    }

    pub fn intersection_len(&self, other: &NodeSet) -> usize {
        self.mask
            .iter()
            .zip(&other.mask)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Grows the set by `cells` spatial cells (Chebyshev neighbourhood) within
    /// each time slice; time slices are left untouched.
    pub fn dilate_space(&self, cells: usize) -> NodeSet {
        let g = &self.grid;
        let r = cells as i64;
        let mut out = NodeSet::empty(g);
        for n in self.iter() {
            let c = g.space_coords(n.x);
            let (lo1, hi1) = if g.dim() == 2 { (-r, r) } else { (0, 0) };
            for d0 in -r..=r {
                for d1 in lo1..=hi1 {
                    let idx = g.space_index([c[0] as i64 + d0, c[1] as i64 + d1]);
                    out.insert(Node { x: idx, t: n.t });
                }
            }
        }
        out
    }

    /// Grows the set by `cells` in every spatial direction and in time.
    pub fn dilate(&self, cells: usize) -> NodeSet {
        let g = &self.grid;
        let space = self.dilate_space(cells);
        let mut out = space.clone();
        let nt = g.nt() as i64;
        for n in space.iter() {
            for dk in -(cells as i64)..=(cells as i64) {
                let k = (n.t as i64 + dk).rem_euclid(nt) as usize;
                out.insert(Node { x: n.x, t: k });
            }
        }
        out
    }

    /// Nodes in exactly one of the two sets.
    pub fn symmetric_difference(&self, other: &NodeSet) -> NodeSet {
        NodeSet {
            grid: self.grid.clone(),
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a != b)
                .collect(),
        }
    }

    /// True when each set is contained in the other's `cells`-dilation.
    pub fn equal_up_to(&self, other: &NodeSet, cells: usize) -> bool {
        self.is_subset(&other.dilate(cells)) && other.is_subset(&self.dilate(cells))
    }

    /// Torus distance from `n` to the nearest member, `+inf` for an empty set.
    pub fn distance_to(&self, n: Node) -> f64 {
        self.iter()
            .map(|m| self.grid.node_distance(n, m))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid64() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(SpaceTimeGrid::new(1, 3, 16, 65, 4.0).is_err());
        assert!(SpaceTimeGrid::new(1, 64, 1, 65, 4.0).is_err());
        assert!(SpaceTimeGrid::new(1, 64, 16, 2, 4.0).is_err());
        assert!(SpaceTimeGrid::new(3, 64, 16, 65, 4.0).is_err());
        // dt * v_max = 0.01 < 1/64
        assert!(SpaceTimeGrid::new(1, 64, 100, 65, 1.0).is_err());
    }

    #[test]
    fn constant_field_interpolates_to_constant() {
        let g = grid64();
        let f = ValueField::constant(&g, 5.0);
        for x in [0.0, 0.123, 0.5, 0.999_999] {
            assert_eq!(f.interpolate([x, 0.0], 3), 5.0);
        }
    }

    #[test]
    fn interpolation_hits_nodes_and_averages_midpoints() {
        let g = grid64();
        let f = ValueField::from_fn(&g, |x, _| (2.0 * PI * x[0]).sin());
        assert!(f.interpolate([0.5, 0.0], 0).abs() < 1e-12);
        let h = g.hx();
        for i in [0usize, 7, 31, 63] {
            let a = f.get(Node { x: i, t: 0 });
            let b = f.get(Node { x: (i + 1) % 64, t: 0 });
            let mid = f.interpolate([(i as f64 + 0.5) * h, 0.0], 0);
            assert!((mid - 0.5 * (a + b)).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_interpolation_is_exact_on_bilinear_data() {
        let g = SpaceTimeGrid::new(2, 8, 4, 5, 4.0).unwrap();
        let f = ValueField::from_fn(&g, |x, _| x[0] * x[1]);
        // inside a cell away from the wrap seam, bilinear data is reproduced
        let v = f.interpolate([0.3, 0.4], 0);
        assert!((v - 0.12).abs() < 1e-14);
    }

    #[test]
    fn dilation_and_distance() {
        let g = grid64();
        let mut s = NodeSet::empty(&g);
        s.insert(Node { x: 0, t: 0 });
        let d = s.dilate_space(2);
        assert_eq!(d.len(), 5);
        assert!(d.contains(Node { x: 62, t: 0 }));
        assert!(!d.contains(Node { x: 3, t: 0 }));
        let dt = s.dilate(1);
        assert_eq!(dt.len(), 9);
        assert!((s.distance_to(Node { x: 63, t: 0 }) - g.hx()).abs() < 1e-15);
        assert!((s.distance_to(Node { x: 0, t: 15 }) - g.dt()).abs() < 1e-15);
    }

    #[test]
    fn periodic_offset_is_centered() {
        assert!((periodic_offset(0.9, 0.1) + 0.2).abs() < 1e-15);
        assert!((periodic_offset(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(wrap_unit(-1e-300), 0.0);
    }
}
