//! Marching-cubes isosurface extraction and area-weighted surface sampling.

mod tables;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};
use tables::TRI_TABLE;

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
/// Corner pairs of the twelve cube edges in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("triangle index out of range".into()));
        }
        if !self
            .vertices
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite("mesh vertices"));
        }
        Ok(())
    }

    fn corners(&self, t: &[u32; 3]) -> [Vec3; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(&self.triangles[t]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Volume enclosed by a closed mesh; positive when triangles wind
    /// counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    fn edge_counts(&self) -> BTreeMap<(u32, u32), usize> {
        let mut edges = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for &i in self.triangles.iter().flatten() {
            used[i as usize] = true;
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

/// A regular lattice of `resolution^3` samples spanning `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub resolution: usize,
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Default for Grid {
    fn default() -> Self {
        Self::cube(64, 1.2)
    }
}

impl Grid {
    pub fn cube(resolution: usize, half: f64) -> Self {
        Self {
            resolution,
            lo: Vec3::repeat(-half),
            hi: Vec3::repeat(half),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidArgument(
                "grid resolution must be at least 2".into(),
            ));
        }
        if !(0..3).all(|a| self.hi[a] > self.lo[a]) {
            return Err(Error::InvalidArgument("grid bounds are empty".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> Vec3 {
        (self.hi - self.lo) / (self.resolution - 1) as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.lo + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }
}

/// Extracts the `iso` level set of a per-point field.
pub fn marching_cubes(
    mut field: impl FnMut(&Vec3) -> f64,
    grid: &Grid,
    iso: f64,
) -> Result<TriangleMesh> {
    marching_cubes_batched(|pts| Ok(pts.iter().map(&mut field).collect()), grid, iso)
}

/// As [`marching_cubes`] with the field evaluated one z-slice at a time.
pub fn marching_cubes_batched(
    mut field: impl FnMut(&[Vec3]) -> Result<Vec<f64>>,
    grid: &Grid,
    iso: f64,
) -> Result<TriangleMesh> {
    grid.validate()?;
    let n = grid.resolution;
    let mut values = Vec::with_capacity(n * n * n);
    let mut slice = Vec::with_capacity(n * n);
    for k in 0..n {
        slice.clear();
        for j in 0..n {
            for i in 0..n {
                slice.push(grid.point(i, j, k));
            }
        }
        let v = field(&slice)?;
        if v.len() != slice.len() {
            return Err(Error::InvalidArgument(
                "field returned the wrong number of values".into(),
            ));
        }
        values.extend(v);
    }
    polygonize(&values, grid, iso)
}

/// Marching cubes over precomputed lattice values (x fastest, then y, z).
/// Vertices on shared lattice edges are merged, so closed level sets give
/// watertight meshes; triangles wind counter-clockwise seen from the side
/// where the field exceeds `iso`.
pub fn polygonize(values: &[f64], grid: &Grid, iso: f64) -> Result<TriangleMesh> {
    grid.validate()?;
    let n = grid.resolution;
    if values.len() != n * n * n {
        return Err(Error::InvalidArgument(
            "value count does not match the grid".into(),
        ));
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteField {
            i: bad % n,
            j: (bad / n) % n,
            k: bad / (n * n),
        });
    }
    let mut mesh = TriangleMesh::default();
    // vertex id per lattice edge, keyed by (lower corner, axis)
    let mut edge_vertex = vec![u32::MAX; 3 * n * n * n];
    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut case = 0usize;
                let mut corner_val = [0.0; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    let v = values[grid.index(i + off[0], j + off[1], k + off[2])];
                    corner_val[c] = v;
                    if v < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut ids = [0u32; 3];
                for (t, &e) in row.iter().take_while(|&&e| e >= 0).enumerate() {
                    let [ca, cb] = EDGES[e as usize];
                    let (oa, ob) = (CORNERS[ca], CORNERS[cb]);
                    let axis = (0..3).find(|&a| oa[a] != ob[a]).unwrap_or(0);
                    let base = grid.index(i + oa[0], j + oa[1], k + oa[2]);
                    let slot = &mut edge_vertex[3 * base + axis];
                    if *slot == u32::MAX {
                        let (va, vb) = (corner_val[ca], corner_val[cb]);
                        let s = (iso - va) / (vb - va);
                        let pa = grid.point(i + oa[0], j + oa[1], k + oa[2]);
                        let pb = grid.point(i + ob[0], j + ob[1], k + ob[2]);
                        *slot = mesh.vertices.len() as u32;
                        mesh.vertices.push(pa + (pb - pa) * s);
                    }
                    ids[t % 3] = *slot;
                    if t % 3 == 2 {
                        mesh.triangles.push([ids[0], ids[2], ids[1]]);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

/// `n` points drawn uniformly over the mesh area: triangles by area, then
/// uniform barycentric coordinates.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    mesh.validate()?;
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_area(t))
        .collect();
    let pick =
        WeightedIndex::new(&areas).map_err(|_| Error::Degenerate("mesh has zero total area"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let [a, b, c] = mesh.corners(&mesh.triangles[pick.sample(&mut rng)]);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}
