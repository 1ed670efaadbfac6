//! Cuboid room geometry, structured hexahedral meshing and microphone
//! placement.
//!
//! Nodes are numbered `i + (nx + 1) * (j + (ny + 1) * k)`, x fastest.
//! Wall tags follow the impedance ordering: 0 = `x = 0`, 1 = `x = Lx`,
//! 2 = `y = 0`, 3 = `y = Ly`, 4 = `z = 0`, 5 = `z = Lz`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

pub type Point3 = [f64; 3];

pub const N_WALLS: usize = 6;
pub const WALL_NAMES: [&str; N_WALLS] = ["x=0", "x=Lx", "y=0", "y=Ly", "z=0", "z=Lz"];

/// Room dimensions, fluid properties and the monopole source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSpec {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    /// Speed of sound, m/s.
    pub c: f64,
    /// Air density, kg/m^3.
    pub rho0: f64,
    pub source_position: Point3,
    /// Volume flow rate of the monopole, m^3/s.
    pub source_volume_flow: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        RoomSpec {
            lx: 0.963,
            ly: 0.975,
            lz: 2.075,
            c: 343.0,
            rho0: 1.2,
            source_position: [0.15, 0.825, 1.925],
            source_volume_flow: 1.0e-4,
        }
    }
}

impl RoomSpec {
    pub fn lengths(&self) -> [f64; 3] {
        [self.lx, self.ly, self.lz]
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly * self.lz
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.lx * self.ly + self.ly * self.lz + self.lx * self.lz)
    }

    /// Characteristic impedance of air.
    pub fn z0(&self) -> f64 {
        self.rho0 * self.c
    }

    pub fn max_dimension(&self) -> f64 {
        self.lx.max(self.ly).max(self.lz)
    }

    pub fn contains(&self, x: &Point3, tol: f64) -> bool {
        x.iter().zip(self.lengths()).all(|(&v, l)| v >= -tol && v <= l + tol)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.lx, self.ly, self.lz, self.c, self.rho0];
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Validation("room lengths, c and rho0 must be positive".into()));
        }
        if !self.source_volume_flow.is_finite() {
            return Err(Error::Validation("source volume flow must be finite".into()));
        }
        let inside = self
            .source_position
            .iter()
            .zip(self.lengths())
            .all(|(&v, l)| v > 0.0 && v < l);
        if !inside {
            return Err(Error::Validation(format!(
                "source {:?} must lie strictly inside the room",
                self.source_position
            )));
        }
        Ok(())
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Structured grid of axis-aligned trilinear hexahedra filling the room.
#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    pub lengths: [f64; 3],
    /// Elements per axis.
    pub divisions: [usize; 3],
    pub nodes: Vec<Point3>,
    /// Eight node indices per element, ordered by local corner
    /// `(a, b, c)` in `{0,1}^3` as `a + 2 b + 4 c`.
    pub elements: Vec<[usize; 8]>,
    /// Four node indices per boundary face, grouped by wall tag.
    pub wall_faces: [Vec<[usize; 4]>; N_WALLS],
}

/// Position of a point inside the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub element: usize,
    /// Element indices along each axis.
    pub cell: [usize; 3],
    /// Reference coordinates in `[-1, 1]^3`.
    pub local: [f64; 3],
}

pub const DEFAULT_NODE_BUDGET: usize = 4_000_000;

impl HexMesh {
    /// Grid with at least `elements_per_wavelength` elements per shortest
    /// wavelength `c / f_max` along every axis.
    pub fn build(room: &RoomSpec, elements_per_wavelength: f64, f_max: f64) -> Result<Self> {
        Self::build_with_budget(room, elements_per_wavelength, f_max, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        room: &RoomSpec,
        elements_per_wavelength: f64,
        f_max: f64,
        node_budget: usize,
    ) -> Result<Self> {
        room.validate()?;
        if !(elements_per_wavelength >= 4.0) || !elements_per_wavelength.is_finite() {
            return Err(Error::Validation(format!(
                "elements per wavelength must be >= 4, got {elements_per_wavelength}"
            )));
        }
        if !(f_max > 0.0) || !f_max.is_finite() {
            return Err(Error::Validation(format!("f_max must be positive, got {f_max}")));
        }
        let h_max = room.c / (f_max * elements_per_wavelength);
        let divisions = room.lengths().map(|l| ((l / h_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize);
        Self::from_divisions_with_budget(room.lengths(), divisions, node_budget)
    }

    pub fn from_divisions(lengths: [f64; 3], divisions: [usize; 3]) -> Result<Self> {
        Self::from_divisions_with_budget(lengths, divisions, DEFAULT_NODE_BUDGET)
    }

    pub fn from_divisions_with_budget(
        lengths: [f64; 3],
        divisions: [usize; 3],
        node_budget: usize,
    ) -> Result<Self> {
        if divisions.iter().any(|&n| n == 0) {
            return Err(Error::Validation("every axis needs at least one element".into()));
        }
        let [nx, ny, nz] = divisions;
        let n_nodes = (nx + 1) * (ny + 1) * (nz + 1);
        if n_nodes > node_budget {
            return Err(Error::Resource(format!(
                "mesh {nx}x{ny}x{nz} requires {n_nodes} nodes, budget is {node_budget}"
            )));
        }
        let coord = |axis: usize, i: usize| lengths[axis] * (i as f64 / divisions[axis] as f64);
        let mut nodes = Vec::with_capacity(n_nodes);
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    nodes.push([coord(0, i), coord(1, j), coord(2, k)]);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
        let mut elements = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    elements.push(std::array::from_fn(|c| id(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))));
                }
            }
        }
        let mut wall_faces: [Vec<[usize; 4]>; N_WALLS] = Default::default();
        for k in 0..nz {
            for j in 0..ny {
                wall_faces[0].push([id(0, j, k), id(0, j + 1, k), id(0, j + 1, k + 1), id(0, j, k + 1)]);
                wall_faces[1].push([id(nx, j, k), id(nx, j + 1, k), id(nx, j + 1, k + 1), id(nx, j, k + 1)]);
            }
        }
        for k in 0..nz {
            for i in 0..nx {
                wall_faces[2].push([id(i, 0, k), id(i + 1, 0, k), id(i + 1, 0, k + 1), id(i, 0, k + 1)]);
                wall_faces[3].push([id(i, ny, k), id(i + 1, ny, k), id(i + 1, ny, k + 1), id(i, ny, k + 1)]);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                wall_faces[4].push([id(i, j, 0), id(i + 1, j, 0), id(i + 1, j + 1, 0), id(i, j + 1, 0)]);
                wall_faces[5].push([id(i, j, nz), id(i + 1, j, nz), id(i + 1, j + 1, nz), id(i, j + 1, nz)]);
            }
        }
        Ok(HexMesh { lengths, divisions, nodes, elements, wall_faces })
    }

    /// Same box with every axis subdivided `factor` times more finely.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::from_divisions(self.lengths, self.divisions.map(|n| n * factor))
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Element edge lengths `(hx, hy, hz)`.
    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.lengths[a] / self.divisions[a] as f64)
    }

    /// Largest edge length.
    pub fn h(&self) -> f64 {
        self.spacing().into_iter().fold(0.0, f64::max)
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.divisions;
        i + (nx + 1) * (j + (ny + 1) * k)
    }

    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let [nx, ny, _] = self.divisions;
        let i = node % (nx + 1);
        let j = (node / (nx + 1)) % (ny + 1);
        let k = node / ((nx + 1) * (ny + 1));
        [i, j, k]
    }

    /// Nodes lying on wall `tag`.
    pub fn wall_nodes(&self, tag: usize) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.wall_faces[tag].iter().flatten().copied().collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn boundary_face_count(&self) -> usize {
        self.wall_faces.iter().map(Vec::len).sum()
    }

    pub fn wall_face_area(&self, tag: usize) -> f64 {
        self.wall_faces[tag].iter().map(|f| face_area(&self.nodes, f)).sum()
    }

    /// Element containing `x` and trilinear reference coordinates.
    pub fn locate_point(&self, x: &Point3) -> Result<PointLocation> {
        let tol = 1e-12 * self.lengths.iter().fold(0.0f64, |a, &b| a.max(b));
        if x.iter().any(|v| !v.is_finite()) || !x.iter().zip(self.lengths).all(|(&v, l)| v >= -tol && v <= l + tol) {
            return Err(Error::Domain(format!("point {x:?} lies outside the domain")));
        }
        let spacing = self.spacing();
        let mut cell = [0usize; 3];
        let mut local = [0.0; 3];
        for a in 0..3 {
            let v = x[a].clamp(0.0, self.lengths[a]);
            let c = ((v / spacing[a]).floor() as usize).min(self.divisions[a] - 1);
            let left = self.lengths[a] * (c as f64 / self.divisions[a] as f64);
            cell[a] = c;
            local[a] = (2.0 * (v - left) / spacing[a] - 1.0).clamp(-1.0, 1.0);
        }
        let [nx, ny, _] = self.divisions;
        Ok(PointLocation {
            element: cell[0] + nx * (cell[1] + ny * cell[2]),
            cell,
            local,
        })
    }

    /// Global position of reference coordinates within an element.
    pub fn map_local(&self, element: usize, local: &[f64; 3]) -> Point3 {
        let nodes = &self.elements[element];
        let w = trilinear_weights(local);
        let mut out = [0.0; 3];
        for (c, &n) in nodes.iter().enumerate() {
            for a in 0..3 {
                out[a] += w[c] * self.nodes[n][a];
            }
        }
        out
    }

    /// Nodes and shape-function weights whose combination interpolates a
    /// nodal field at `x`.
    pub fn interpolation_weights(&self, x: &Point3) -> Result<[(usize, f64); 8]> {
        let loc = self.locate_point(x)?;
        let w = trilinear_weights(&loc.local);
        let nodes = &self.elements[loc.element];
        Ok(std::array::from_fn(|c| (nodes[c], w[c])))
    }

    pub fn stats(&self) -> MeshStats {
        MeshStats {
            divisions: self.divisions,
            n_nodes: self.n_nodes(),
            n_elements: self.n_elements(),
            spacing: self.spacing(),
            boundary_faces: std::array::from_fn(|t| self.wall_faces[t].len()),
            wall_areas: std::array::from_fn(|t| self.wall_face_area(t)),
        }
    }
}

/// Trilinear shape functions at reference coordinates, corner order `a + 2b + 4c`.
pub fn trilinear_weights(local: &[f64; 3]) -> [f64; 8] {
    std::array::from_fn(|c| {
        let s = |bit: usize, v: f64| if bit == 0 { 0.5 * (1.0 - v) } else { 0.5 * (1.0 + v) };
        s(c & 1, local[0]) * s((c >> 1) & 1, local[1]) * s(c >> 2, local[2])
    })
}

fn face_area(nodes: &[Point3], f: &[usize; 4]) -> f64 {
    let (a, b, d) = (nodes[f[0]], nodes[f[1]], nodes[f[3]]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt()
}

/// Debug summary of a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub divisions: [usize; 3],
    pub n_nodes: usize,
    pub n_elements: usize,
    pub spacing: [f64; 3],
    pub boundary_faces: [usize; N_WALLS],
    pub wall_areas: [f64; N_WALLS],
}

/// Microphone positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub points: Vec<Point3>,
    pub min_dist: f64,
    pub margin: f64,
    pub seed: u64,
}

pub const DEFAULT_ATTEMPT_CAP: usize = 200_000;

/// Rejection-samples `n` points uniformly in the room, keeping `margin` from
/// walls and source and `min_dist` between accepted points.
pub fn select_observation_points(
    room: &RoomSpec,
    n: usize,
    min_dist: f64,
    margin: f64,
    seed: u64,
) -> Result<ObservationSet> {
    select_observation_points_capped(room, n, min_dist, margin, seed, DEFAULT_ATTEMPT_CAP)
}

pub fn select_observation_points_capped(
    room: &RoomSpec,
    n: usize,
    min_dist: f64,
    margin: f64,
    seed: u64,
    attempt_cap: usize,
) -> Result<ObservationSet> {
    room.validate()?;
    if n == 0 {
        return Err(Error::Validation("need at least one observation point".into()));
    }
    if !(min_dist >= 0.0) || !(margin >= 0.0) {
        return Err(Error::Validation(format!(
            "min_dist and margin must be non-negative, got {min_dist}, {margin}"
        )));
    }
    let inner = room.lengths().map(|l| l - 2.0 * margin);
    if inner.iter().any(|&l| l <= 0.0) {
        return Err(Error::Infeasible(format!("margin {margin} leaves no interior volume")));
    }
    // Packing bound: spheres of radius min_dist/2 centred in the shrunken box
    // stay within the box grown by that radius; densest packing fills 74%.
    let r = 0.5 * min_dist;
    let sphere = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let capacity = 0.7405 * inner.iter().map(|l| l + 2.0 * r).product::<f64>();
    if n as f64 * sphere > capacity {
        return Err(Error::Infeasible(format!(
            "{n} points with min_dist {min_dist} cannot fit (packing bound)"
        )));
    }

    let mut rng = rng::seeded(seed);
    let mut points: Vec<Point3> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        if attempts >= attempt_cap {
            return Err(Error::Infeasible(format!(
                "placed {} of {n} points with min_dist {min_dist} after {attempt_cap} attempts",
                points.len()
            )));
        }
        attempts += 1;
        let p: Point3 = std::array::from_fn(|a| margin + rng.random::<f64>() * inner[a]);
        if distance(&p, &room.source_position) < margin {
            continue;
        }
        if points.iter().all(|q| distance(&p, q) >= min_dist) {
            points.push(p);
        }
    }
    Ok(ObservationSet { points, min_dist, margin, seed })
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min(distance(a, b));
            }
        }
        best
    }

    /// Writes `x,y,z` rows with a header line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,z")?;
        for p in &self.points {
            writeln!(f, "{},{},{}", p[0], p[1], p[2])?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads points written by [`ObservationSet::write_csv`]; spacing metadata
    /// is recomputed from the points.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut points = Vec::new();
        for (ln, line) in f.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('x')) {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), ln + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Validation(format!("{}:{}: expected 3 columns", path.display(), ln + 1)));
            }
            points.push([vals[0], vals[1], vals[2]]);
        }
        let mut set = ObservationSet { points, min_dist: 0.0, margin: 0.0, seed: 0 };
        set.min_dist = if set.len() > 1 { set.min_pairwise_distance() } else { 0.0 };
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn training_mesh() -> HexMesh {
        HexMesh::build(&RoomSpec::default(), 10.0, 500.0).unwrap()
    }

    #[test]
    fn resolution_at_500hz() {
        let m = training_mesh();
        assert_eq!(m.divisions, [15, 15, 31]);
        assert!(m.spacing().iter().all(|&h| h <= 343.0 / 5000.0));
        assert_eq!(m.n_nodes(), 16 * 16 * 32);
        assert_eq!(m.n_elements(), 15 * 15 * 31);
        assert_eq!(m.boundary_face_count(), 2 * (15 * 15 + 15 * 31 + 15 * 31));
    }

    #[test]
    fn deterministic_build() {
        assert_eq!(training_mesh(), training_mesh());
    }

    #[test]
    fn tagged_area_matches_surface() {
        let room = RoomSpec::default();
        let m = training_mesh();
        let total: f64 = (0..N_WALLS).map(|t| m.wall_face_area(t)).sum();
        assert!((total - room.surface_area()).abs() <= 1e-12 * room.surface_area());
    }

    #[test]
    fn every_exterior_face_tagged_once() {
        let m = HexMesh::from_divisions([1.0, 2.0, 3.0], [2, 3, 4]).unwrap();
        let mut count = std::collections::HashMap::new();
        for e in &m.elements {
            // the six faces of a hexahedron in corner numbering a + 2b + 4c
            let faces = [[0, 2, 6, 4], [1, 3, 7, 5], [0, 1, 5, 4], [2, 3, 7, 6], [0, 1, 3, 2], [4, 5, 7, 6]];
            for f in faces {
                let mut key: Vec<usize> = f.iter().map(|&c| e[c]).collect();
                key.sort_unstable();
                *count.entry(key).or_insert(0) += 1;
            }
        }
        let mut tagged = std::collections::HashMap::new();
        for (t, faces) in m.wall_faces.iter().enumerate() {
            for f in faces {
                let mut key = f.to_vec();
                key.sort_unstable();
                assert!(tagged.insert(key, t).is_none());
            }
        }
        for (key, n) in count {
            assert_eq!(n == 1, tagged.contains_key(&key));
        }
    }

    #[test]
    fn node_budget_enforced() {
        let err = HexMesh::build_with_budget(&RoomSpec::default(), 10.0, 500.0, 1000).unwrap_err();
        match err {
            Error::Resource(msg) => assert!(msg.contains("8192")),
            e => panic!("unexpected {e}"),
        }
        assert!(HexMesh::build(&RoomSpec::default(), 3.0, 500.0).is_err());
    }

    #[test]
    fn refinement_nests() {
        let coarse = HexMesh::from_divisions([0.963, 0.975, 2.075], [3, 3, 6]).unwrap();
        let fine = coarse.refined(2).unwrap();
        let set: std::collections::HashSet<[u64; 3]> =
            fine.nodes.iter().map(|p| p.map(f64::to_bits)).collect();
        assert!(coarse.nodes.iter().all(|p| set.contains(&p.map(f64::to_bits))));
    }

    #[test]
    fn locate_center_and_corners() {
        let m = training_mesh();
        let e = 123;
        let center = m.map_local(e, &[0.0, 0.0, 0.0]);
        let loc = m.locate_point(&center).unwrap();
        assert_eq!(loc.element, e);
        assert!(loc.local.iter().all(|v| v.abs() < 1e-12));
        let node = m.nodes[m.node_index(4, 5, 6)];
        let loc = m.locate_point(&node).unwrap();
        assert!(loc.local.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
        assert!(matches!(m.locate_point(&[-0.1, 0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn locate_round_trip_random() {
        let m = training_mesh();
        let mut rng = rng::seeded(4);
        for _ in 0..1000 {
            let x: Point3 = std::array::from_fn(|a| rng.random::<f64>() * m.lengths[a]);
            let loc = m.locate_point(&x).unwrap();
            assert!(loc.local.iter().all(|v| v.abs() <= 1.0));
            let back = m.map_local(loc.element, &loc.local);
            for a in 0..3 {
                assert!((back[a] - x[a]).abs() <= 1e-10 * m.lengths[a]);
            }
        }
    }

    #[test]
    fn benchmark_observation_set() {
        let room = RoomSpec::default();
        for seed in [1, 2, 3] {
            let obs = select_observation_points(&room, 26, 0.3, 0.1, seed).unwrap();
            assert_eq!(obs.len(), 26);
            assert!(obs.min_pairwise_distance() >= 0.3);
            for p in &obs.points {
                for a in 0..3 {
                    assert!(p[a] >= 0.1 && p[a] <= room.lengths()[a] - 0.1);
                }
                assert!(distance(p, &room.source_position) >= 0.1);
            }
        }
    }

    #[test]
    fn observation_determinism() {
        let room = RoomSpec::default();
        let a = select_observation_points(&room, 26, 0.3, 0.1, 9).unwrap();
        assert_eq!(a, select_observation_points(&room, 26, 0.3, 0.1, 9).unwrap());
        let others = [10, 11, 12].map(|s| select_observation_points(&room, 26, 0.3, 0.1, s).unwrap());
        let differing = [(0, 1), (0, 2), (1, 2)].iter().filter(|(i, j)| others[*i] != others[*j]).count();
        assert!(differing >= 2);
    }

    #[test]
    fn single_point_and_infeasible() {
        let room = RoomSpec::default();
        let one = select_observation_points(&room, 1, 0.3, 0.1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            select_observation_points(&room, 500, 0.3, 0.1, 0),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            select_observation_points_capped(&room, 60, 0.3, 0.1, 0, 50),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let room = RoomSpec::default();
        let obs = select_observation_points(&room, 5, 0.3, 0.1, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        obs.write_csv(&path).unwrap();
        let back = ObservationSet::read_csv(&path).unwrap();
        assert_eq!(back.points, obs.points);
    }
}
