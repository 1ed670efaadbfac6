use impedance_sbi::fem::{analytic_rigid_box_response, rigid_box_eigenfrequencies, HelmholtzSolver};
use impedance_sbi::geometry::{distance, HexMesh, Point3, RoomSpec};
use impedance_sbi::C64;
use proptest::prelude::*;

const RIGID: f64 = 1e6;

fn rigid_walls() -> [C64; 6] {
    [C64::new(RIGID, 0.0); 6]
}

fn training_mesh(room: &RoomSpec) -> HexMesh {
    HexMesh::build(room, 10.0, 500.0).unwrap()
}

fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn fem_vs_modal(solver: &HelmholtzSolver, room: &RoomSpec, points: &[Point3], f: f64) -> f64 {
    let field = solver.solve_frequency(&rigid_walls(), f).unwrap();
    let fem = solver.interpolate(&field, points).unwrap();
    let exact: Vec<C64> = points.iter().map(|x| analytic_rigid_box_response(room, x, f, 120).unwrap()).collect();
    rel_l2(&fem, &exact)
}

/// Rigid-box resonance gaps at least `min_width` wide below `f_max`.
fn wide_gaps(room: &RoomSpec, f_max: f64, min_width: f64) -> Vec<(f64, f64)> {
    let f = rigid_box_eigenfrequencies(room, f_max + 50.0);
    f.windows(2).filter(|w| w[1] - w[0] >= min_width && w[1] <= f_max).map(|w| (w[0], w[1])).collect()
}

fn interior_point() -> impl Strategy<Value = Point3> {
    let room = RoomSpec::default();
    (0.1..room.lx - 0.1, 0.1..room.ly - 0.1, 0.1..room.lz - 0.1)
        .prop_map(|(x, y, z)| [x, y, z])
        .prop_filter("away from the source", move |p| distance(p, &room.source_position) >= 0.3)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn near_rigid_field_matches_modal_expansion(
        points in proptest::collection::vec(interior_point(), 10),
        gap in 0usize..3,
        pos in 0.4f64..0.6,
    ) {
        let room = RoomSpec::default();
        let gaps = wide_gaps(&room, 250.0, 40.0);
        prop_assert_eq!(gaps.len(), 3);
        let (lo, hi) = gaps[gap];
        let f = lo + pos * (hi - lo);
        let solver = HelmholtzSolver::new(&room, &training_mesh(&room)).unwrap();
        let err = fem_vs_modal(&solver, &room, &points, f);
        prop_assert!(err < 0.02, "{} Hz: relative L2 error {}", f, err);
    }
}

#[test]
fn first_response_peak_near_axial_mode() {
    let room = RoomSpec::default();
    let solver = HelmholtzSolver::new(&room, &training_mesh(&room)).unwrap();
    let walls = [C64::new(100.0, 0.0); 6];
    let probe = [[0.8, 0.2, 0.3]];
    let mut best = (0.0, 0.0);
    let mut f = 50.0;
    while f <= 120.0 {
        let field = solver.solve_frequency(&walls, f).unwrap();
        let p = solver.interpolate(&field, &probe).unwrap()[0].norm();
        if p > best.1 {
            best = (f, p);
        }
        f += 0.05;
    }
    let expected = room.c / (2.0 * room.lz);
    assert!((best.0 - expected).abs() < 0.02 * expected, "peak at {} Hz, expected {expected}", best.0);
}

#[test]
fn second_order_convergence_under_refinement() {
    let room = RoomSpec::default();
    let points: Vec<Point3> = vec![[0.3, 0.2, 0.4], [0.7, 0.5, 1.0], [0.5, 0.8, 0.7], [0.2, 0.6, 1.5], [0.8, 0.3, 1.2]];
    let coarse = training_mesh(&room);
    for f in [124.0, 218.9] {
        let errs: Vec<f64> = [1, 2]
            .iter()
            .map(|&r| {
                let solver = HelmholtzSolver::new(&room, &coarse.refined(r).unwrap()).unwrap();
                fem_vs_modal(&solver, &room, &points, f)
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.7, "{f} Hz: errors {errs:?}, observed order {order}");
    }
}
