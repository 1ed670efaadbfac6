//! Galerkin assembly of trilinear hexahedral element matrices.
//!
//! Mass terms use the blended 1D linear-element mass
//! `M = (M_consistent + M_lumped) / 2`, i.e. `h * [5/12, 1/12]` per element,
//! and every volume and wall mass is a tensor product of it. The blend keeps
//! the operator separable and makes the numerical dispersion of the
//! tensor-product scheme fourth order in `k h` instead of second.

use crate::geometry::{HexMesh, N_WALLS};
use crate::C64;

/// Compressed sparse row matrix with real entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_real(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `y += alpha * A x`.
    pub fn mul_add_complex(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (c, v) in self.row(i) {
                acc += x[c] * v;
            }
            *yi += alpha * acc;
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol * v.abs().max(1.0)))
    }

    /// Sum of all entries, i.e. `1^T A 1`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Rows holding at least one nonzero.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.row(i).any(|(_, v)| v != 0.0)).collect()
    }
}

/// Global FEM matrices over the mesh nodes.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    /// `int grad(phi_i) . grad(phi_j)`
    pub stiffness: CsrMatrix,
    /// `int phi_i phi_j`
    pub mass: CsrMatrix,
    /// `int_{wall s} phi_i phi_j`, one per wall tag.
    pub boundary: [CsrMatrix; N_WALLS],
}

/// Element mass of a segment of length `h`: (diagonal, off-diagonal).
pub fn segment_mass(h: f64) -> (f64, f64) {
    (5.0 * h / 12.0, h / 12.0)
}

/// 1D linear-element stiffness and mass of a uniformly divided segment,
/// returned as dense tridiagonal matrices.
pub fn axis_matrices(length: f64, divisions: usize) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let n = divisions + 1;
    let h = length / divisions as f64;
    let mut k = nalgebra::DMatrix::zeros(n, n);
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for e in 0..divisions {
        let (a, b) = (e, e + 1);
        k[(a, a)] += 1.0 / h;
        k[(b, b)] += 1.0 / h;
        k[(a, b)] -= 1.0 / h;
        k[(b, a)] -= 1.0 / h;
        let (md, mo) = segment_mass(h);
        m[(a, a)] += md;
        m[(b, b)] += md;
        m[(a, b)] += mo;
        m[(b, a)] += mo;
    }
    (k, m)
}

/// Element stiffness and mass of an `hx * hy * hz` brick, corner order
/// `a + 2b + 4c`.
pub fn element_matrices(spacing: [f64; 3]) -> ([[f64; 8]; 8], [[f64; 8]; 8]) {
    let k1 = |h: f64, a: usize, b: usize| if a == b { 1.0 / h } else { -1.0 / h };
    let m1 = |h: f64, a: usize, b: usize| {
        let (md, mo) = segment_mass(h);
        if a == b {
            md
        } else {
            mo
        }
    };
    let [hx, hy, hz] = spacing;
    let mut ke = [[0.0; 8]; 8];
    let mut me = [[0.0; 8]; 8];
    for c in 0..8 {
        let (cx, cy, cz) = (c & 1, (c >> 1) & 1, c >> 2);
        for d in 0..8 {
            let (dx, dy, dz) = (d & 1, (d >> 1) & 1, d >> 2);
            let (mx, my, mz) = (m1(hx, cx, dx), m1(hy, cy, dy), m1(hz, cz, dz));
            me[c][d] = mx * my * mz;
            ke[c][d] = k1(hx, cx, dx) * my * mz + mx * k1(hy, cy, dy) * mz + mx * my * k1(hz, cz, dz);
        }
    }
    (ke, me)
}

/// Mass of an `a * b` rectangle with nodes listed cyclically.
fn face_mass(a: f64, b: f64) -> [[f64; 4]; 4] {
    // cyclic corner i sits at (u, v) = CORNERS[i]
    const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let m1 = |h: f64, p: usize, q: usize| {
        let (md, mo) = segment_mass(h);
        if p == q {
            md
        } else {
            mo
        }
    };
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let ((ui, vi), (uj, vj)) = (CORNERS[i], CORNERS[j]);
            m1(a, ui, uj) * m1(b, vi, vj)
        })
    })
}

pub fn assemble(mesh: &HexMesh) -> SystemMatrices {
    let n = mesh.n_nodes();
    let spacing = mesh.spacing();
    let (ke, me) = element_matrices(spacing);
    let mut kt = Vec::with_capacity(mesh.n_elements() * 64);
    let mut mt = Vec::with_capacity(mesh.n_elements() * 64);
    for el in &mesh.elements {
        for c in 0..8 {
            for d in 0..8 {
                kt.push((el[c], el[d], ke[c][d]));
                mt.push((el[c], el[d], me[c][d]));
            }
        }
    }
    let [hx, hy, hz] = spacing;
    let face_dims = [(hy, hz), (hy, hz), (hx, hz), (hx, hz), (hx, hy), (hx, hy)];
    let boundary = std::array::from_fn(|tag| {
        let (a, b) = face_dims[tag];
        let fm = face_mass(a, b);
        let mut t = Vec::with_capacity(mesh.wall_faces[tag].len() * 16);
        for f in &mesh.wall_faces[tag] {
            for c in 0..4 {
                for d in 0..4 {
                    t.push((f[c], f[d], fm[c][d]));
                }
            }
        }
        CsrMatrix::from_triplets(n, t)
    });
    SystemMatrices {
        stiffness: CsrMatrix::from_triplets(n, kt),
        mass: CsrMatrix::from_triplets(n, mt),
        boundary,
    }
}

impl SystemMatrices {
    /// `(K - k^2 M + sum_s beta_s B_s) x` with `beta_s = -i k / z_s`.
    pub fn apply(&self, wavenumber: f64, betas: &[C64; N_WALLS], x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        self.stiffness.mul_add_complex(C64::new(1.0, 0.0), x, &mut y);
        self.mass.mul_add_complex(C64::new(-wavenumber * wavenumber, 0.0), x, &mut y);
        for (b, &beta) in self.boundary.iter().zip(betas) {
            b.mul_add_complex(beta, x, &mut y);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_mass_entries() {
        let mesh = HexMesh::from_divisions([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let m = assemble(&mesh).mass;
        // corner 0 against corners 0, 1 (face), 3 (edge), 7 (opposite)
        assert!((m.get(0, 0) - 125.0 / 1728.0).abs() < 1e-15);
        assert!((m.get(0, 1) - 25.0 / 1728.0).abs() < 1e-15);
        assert!((m.get(0, 3) - 5.0 / 1728.0).abs() < 1e-15);
        assert!((m.get(0, 7) - 1.0 / 1728.0).abs() < 1e-15);
    }

    #[test]
    fn invariants_on_room_mesh() {
        let mesh = HexMesh::from_divisions([0.963, 0.975, 2.075], [5, 5, 10]).unwrap();
        let mats = assemble(&mesh);
        let vol = 0.963 * 0.975 * 2.075;
        assert!((mats.mass.total() - vol).abs() < 1e-10 * vol);
        let ones = vec![1.0; mesh.n_nodes()];
        assert!(mats.stiffness.mul_real(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(mats.stiffness.is_symmetric(1e-14));
        assert!(mats.mass.is_symmetric(1e-14));
        for tag in 0..N_WALLS {
            let b = &mats.boundary[tag];
            assert!(b.is_symmetric(1e-14));
            let area = mesh.wall_face_area(tag);
            assert!((b.total() - area).abs() < 1e-10 * area);
            assert_eq!(b.nonzero_rows(), mesh.wall_nodes(tag));
        }
    }

    #[test]
    fn kronecker_structure_matches_assembly() {
        let lengths = [0.7, 0.9, 1.3];
        let div = [3, 2, 4];
        let mesh = HexMesh::from_divisions(lengths, div).unwrap();
        let mats = assemble(&mesh);
        let axes: Vec<_> = (0..3).map(|a| axis_matrices(lengths[a], div[a])).collect();
        for i in 0..mesh.n_nodes() {
            for (j, v) in mats.stiffness.row(i) {
                let (a, b) = (mesh.node_ijk(i), mesh.node_ijk(j));
                let m = |ax: usize| axes[ax].1[(a[ax], b[ax])];
                let k = |ax: usize| axes[ax].0[(a[ax], b[ax])];
                let expect = k(0) * m(1) * m(2) + m(0) * k(1) * m(2) + m(0) * m(1) * k(2);
                assert!((v - expect).abs() < 1e-12);
                assert!((mats.mass.get(i, j) - m(0) * m(1) * m(2)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mass_positive_definite_stiffness_nullity_one() {
        let mesh = HexMesh::from_divisions([1.0, 1.2, 0.8], [2, 2, 2]).unwrap();
        let mats = assemble(&mesh);
        let n = mesh.n_nodes();
        let dense = |a: &CsrMatrix| nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        let me = nalgebra::SymmetricEigen::new(dense(&mats.mass)).eigenvalues;
        assert!(me.iter().all(|&v| v > 0.0));
        let ke = nalgebra::SymmetricEigen::new(dense(&mats.stiffness)).eigenvalues;
        assert_eq!(ke.iter().filter(|v| v.abs() < 1e-10).count(), 1);
        assert!(ke.iter().all(|&v| v > -1e-10));
    }
}
