//! Damped-least-squares inverse kinematics for the planar 3-link arm.

use crate::error::{Error, Result};
use crate::sim::world::fk;

/// 2x3 position Jacobian of the planar chain.
fn jacobian(joints: &[f64; 3], link_lengths: &[f64; 3]) -> [[f64; 3]; 2] {
    // dp/dq_j = sum over links i >= j of L_i * (-sin Theta_i, cos Theta_i)
    let mut thetas = [0.0f64; 3];
    let mut acc = 0.0;
    for i in 0..3 {
        acc += joints[i];
        thetas[i] = acc;
    }
    let mut jac = [[0.0; 3]; 2];
    for j in 0..3 {
        let mut dx = 0.0;
        let mut dy = 0.0;
        for i in j..3 {
            dx -= link_lengths[i] * thetas[i].sin();
            dy += link_lengths[i] * thetas[i].cos();
        }
        jac[0][j] = dx;
        jac[1][j] = dy;
    }
    jac
}

/// Solves joints reaching `target` starting from `init`, by damped
/// least-squares iteration. Fails if the target stays out of tolerance.
pub fn solve_ik(
    target: [f64; 2],
    base: [f64; 2],
    link_lengths: &[f64; 3],
    init: [f64; 3],
) -> Result<[f64; 3]> {
    let reach: f64 = link_lengths.iter().sum();
    if super::world::dist(target, base) > reach {
        return Err(Error::validation(format!(
            "ik target ({}, {}) beyond reach {reach}",
            target[0], target[1]
        )));
    }
    let mut q = init;
    let damping = 0.05f64;
    let tol = 1e-6;
    for _ in 0..500 {
        let p = fk(&q, base, link_lengths);
        let e = [target[0] - p[0], target[1] - p[1]];
        let err = (e[0] * e[0] + e[1] * e[1]).sqrt();
        if err < tol {
            return Ok(q);
        }
        let jac = jacobian(&q, link_lengths);
        // J J^T + damping^2 I (2x2), solved in closed form
        let a = jac[0][0] * jac[0][0] + jac[0][1] * jac[0][1] + jac[0][2] * jac[0][2]
            + damping * damping;
        let b = jac[0][0] * jac[1][0] + jac[0][1] * jac[1][1] + jac[0][2] * jac[1][2];
        let d = jac[1][0] * jac[1][0] + jac[1][1] * jac[1][1] + jac[1][2] * jac[1][2]
            + damping * damping;
        let det = a * d - b * b;
        if det.abs() < 1e-12 {
            return Err(Error::validation("ik jacobian singular"));
        }
        let y = [(d * e[0] - b * e[1]) / det, (-b * e[0] + a * e[1]) / det];
        for j in 0..3 {
            let step = jac[0][j] * y[0] + jac[1][j] * y[1];
            q[j] += step.clamp(-0.3, 0.3);
        }
    }
    let p = fk(&q, base, link_lengths);
    let err = super::world::dist(p, target);
    if err < 1e-4 {
        Ok(q)
    } else {
        Err(Error::validation(format!(
            "ik failed to converge: residual {err:.6} to ({}, {})",
            target[0], target[1]
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::dist;

    const LINKS: [f64; 3] = [0.25, 0.2, 0.15];

    #[test]
    fn reaches_targets_across_workspace() {
        let base = [0.5, 0.0];
        let mut q = [2.3, 0.4, -0.2];
        for target in [
            [0.3, 0.0],
            [0.22, 0.05],
            [0.0, 0.2],
            [0.0, 0.12],
            [0.2, 0.25],
            [0.38, 0.0],
        ] {
            q = solve_ik(target, base, &LINKS, q).unwrap();
            assert!(dist(fk(&q, base, &LINKS), target) < 1e-4);
        }
    }

    #[test]
    fn left_arm_mirror_workspace() {
        let base = [-0.5, 0.0];
        let mut q = [0.8, -0.4, 0.2];
        for target in [[-0.3, 0.0], [-0.22, 0.05], [0.0, 0.2], [-0.15, 0.18]] {
            q = solve_ik(target, base, &LINKS, q).unwrap();
            assert!(dist(fk(&q, base, &LINKS), target) < 1e-4);
        }
    }

    #[test]
    fn unreachable_target_rejected() {
        assert!(solve_ik([2.0, 0.0], [0.0, 0.0], &LINKS, [0.0, 0.0, 0.0]).is_err());
    }
}
