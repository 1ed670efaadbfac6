//! Analytic response of a rigid-walled box to a monopole.
//!
//! The Neumann Green's function is expanded in cosine modes over x and y,
//! while the z dependence of each transverse mode is summed in closed form
//! by the 1D Neumann Green's function
//!
//! ```text
//! g(z, z0; kappa) = -cos(kappa z<) cos(kappa (Lz - z>)) / (kappa sin(kappa Lz)),
//! kappa^2 = k^2 - k_mn^2,
//! ```
//!
//! (hyperbolic form for evanescent terms). The transverse sum then
//! converges exponentially whenever `z != z0`. Normalization matches the
//! FEM solver: `p = -i w rho0 Q G(x, x0)` with `(-lap - k^2) G = delta`.

use std::f64::consts::PI;

use crate::geometry::{Point3, RoomSpec};
use crate::{Error, Result, C64};

/// Smallest admissible distance (Hz) to an eigenfrequency of an included mode.
pub const RESONANCE_GUARD_HZ: f64 = 0.5;

/// Eigenfrequencies `c/2 sqrt((l/Lx)^2 + (m/Ly)^2 + (n/Lz)^2)` below `f_max`, sorted.
pub fn rigid_box_eigenfrequencies(room: &RoomSpec, f_max: f64) -> Vec<f64> {
    let [lx, ly, lz] = room.lengths();
    let lim = |l: f64| (2.0 * f_max * l / room.c).ceil() as usize;
    let mut out = Vec::new();
    for l in 0..=lim(lx) {
        for m in 0..=lim(ly) {
            for n in 0..=lim(lz) {
                let f = 0.5 * room.c * ((l as f64 / lx).powi(2) + (m as f64 / ly).powi(2) + (n as f64 / lz).powi(2)).sqrt();
                if f <= f_max {
                    out.push(f);
                }
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Pressure at `x` for the room's source, transverse modes `m, n <= mode_cutoff`.
pub fn analytic_rigid_box_response(room: &RoomSpec, x: &Point3, freq_hz: f64, mode_cutoff: usize) -> Result<C64> {
    room.validate()?;
    if !room.contains(x, 1e-12 * room.max_dimension()) {
        return Err(Error::Domain(format!("point {x:?} outside the room")));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz}")));
    }
    let [lx, ly, lz] = room.lengths();
    let x0 = room.source_position;
    let k = 2.0 * PI * freq_hz / room.c;
    let two_pi_over_c = 2.0 * PI / room.c;

    let mut g = 0.0;
    for m in 0..=mode_cutoff {
        let kx = m as f64 * PI / lx;
        let ex = if m == 0 { 1.0 } else { 2.0 };
        let cx = ex * (kx * x[0]).cos() * (kx * x0[0]).cos() / lx;
        for n in 0..=mode_cutoff {
            let ky = n as f64 * PI / ly;
            let ey = if n == 0 { 1.0 } else { 2.0 };
            let cy = ey * (ky * x[1]).cos() * (ky * x0[1]).cos() / ly;
            let kappa2 = k * k - kx * kx - ky * ky;
            if kappa2 > 0.0 {
                // propagating in z: guard against axial resonances l pi / Lz
                let kappa = kappa2.sqrt();
                let l_near = (kappa * lz / PI).round();
                let f_res = ((kx * kx + ky * ky + (l_near * PI / lz).powi(2)).sqrt()) / two_pi_over_c;
                if (f_res - freq_hz).abs() < RESONANCE_GUARD_HZ {
                    return Err(Error::Conditioning(format!(
                        "{freq_hz} Hz lies within {RESONANCE_GUARD_HZ} Hz of eigenfrequency {f_res:.3} Hz"
                    )));
                }
            }
            g += cx * cy * neumann_green_1d(x[2], x0[2], lz, kappa2);
        }
    }
    let omega = 2.0 * PI * freq_hz;
    Ok(C64::new(0.0, -omega * room.rho0 * room.source_volume_flow) * g)
}

/// Solution of `-g'' - kappa2 g = delta(z - z0)` on `[0, L]` with `g' = 0` at both ends.
fn neumann_green_1d(z: f64, z0: f64, l: f64, kappa2: f64) -> f64 {
    let (lo, hi) = if z < z0 { (z, z0) } else { (z0, z) };
    if kappa2 > 0.0 {
        let kappa = kappa2.sqrt();
        -(kappa * lo).cos() * (kappa * (l - hi)).cos() / (kappa * (kappa * l).sin())
    } else if kappa2 < 0.0 {
        // cosh(a) cosh(b) / (mu sinh(c)) with a + b <= c, written with
        // non-positive exponents only
        let mu = (-kappa2).sqrt();
        let (a, b, c) = (mu * lo, mu * (l - hi), mu * l);
        let num = (a + b - c).exp() + (a - b - c).exp() + (b - a - c).exp() + (-a - b - c).exp();
        num / (2.0 * mu * (1.0 - (-2.0 * c).exp()))
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_axial_mode() {
        let room = RoomSpec::default();
        let f = rigid_box_eigenfrequencies(&room, 100.0);
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 343.0 / (2.0 * 2.075)).abs() < 1e-9);
    }

    #[test]
    fn reciprocity() {
        let room = RoomSpec::default();
        let x = [0.7, 0.2, 0.6];
        let a = analytic_rigid_box_response(&room, &x, 100.0, 60).unwrap();
        let mut swapped = room.clone();
        swapped.source_position = x;
        let b = analytic_rigid_box_response(&swapped, &room.source_position, 100.0, 60).unwrap();
        assert!((a - b).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn converged_under_cutoff_doubling() {
        let room = RoomSpec::default();
        for (x, f) in [([0.5, 0.5, 0.8], 100.0), ([0.3, 0.7, 1.5], 230.0), ([0.8, 0.1, 0.2], 410.0)] {
            let a = analytic_rigid_box_response(&room, &x, f, 40).unwrap();
            let b = analytic_rigid_box_response(&room, &x, f, 80).unwrap();
            assert!((a - b).norm() < 1e-3 * b.norm(), "{f}: {a} vs {b}");
        }
    }

    #[test]
    fn compliance_limit_far_below_first_mode() {
        // |p| -> rho0 c^2 Q / (w V) as the uniform mode dominates
        let room = RoomSpec::default();
        let f = 10.0;
        let omega = 2.0 * PI * f;
        let expect = room.rho0 * room.c * room.c * room.source_volume_flow / (omega * room.volume());
        for x in [[0.2, 0.2, 0.3], [0.8, 0.5, 0.9], [0.5, 0.9, 1.2], [0.9, 0.9, 0.1], [0.4, 0.1, 1.6]] {
            let p = analytic_rigid_box_response(&room, &x, f, 60).unwrap().norm();
            assert!((p - expect).abs() < 0.05 * expect, "{x:?}: {p} vs {expect}");
        }
    }

    #[test]
    fn resonance_guard() {
        let room = RoomSpec::default();
        let f1 = 343.0 / (2.0 * 2.075);
        assert!(matches!(
            analytic_rigid_box_response(&room, &[0.5, 0.5, 0.5], f1 + 0.2, 20),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn near_source_matches_free_field_magnitude() {
        let room = RoomSpec::default();
        let r = 0.01;
        let mut x = room.source_position;
        x[2] += r;
        let f = 100.0;
        let p = analytic_rigid_box_response(&room, &x, f, 400).unwrap();
        let free = room.rho0 * 2.0 * PI * f * room.source_volume_flow / (4.0 * PI * r);
        assert!((p.norm() - free).abs() < 0.05 * free, "{} vs {free}", p.norm());
    }
}
