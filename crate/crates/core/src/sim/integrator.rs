//! Fixed-step Runge–Kutta–Munthe-Kaas integration of rigid-body kinematics.
//!
//! Each rotation is parametrized locally as `R = R_n·exp(θ)` with `θ(t_n) = 0`.
//! Positions, twists and `θ` advance by classical RK4 using
//! `θ̇ = J_r⁻¹(θ)·ω`, then `R_{n+1} = R_n·exp(θ_{n+1})`. The acceleration
//! field is supplied by the caller and evaluated at every stage.

use crate::se3::{project_so3, so3_exp, so3_right_jacobian_inv, Pose, Twist, Vec3, Vec6};

/// Rotations drifting further than this from SO(3) are re-projected.
pub const REPAIR_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub poses: Vec<Pose>,
    pub twists: Vec<Twist>,
}

/// Stage slope of one agent: `(ṗ, θ̇, v̇)`.
#[derive(Debug, Clone, Copy)]
struct Slope {
    p: Vec3,
    theta: Vec3,
    v: Vec6,
}

fn kinematics(pose: &Pose, twist: &Twist, theta: &Vec3, accel: &Vec6) -> Slope {
    Slope {
        p: pose.r.rotate(&twist.linear),
        theta: so3_right_jacobian_inv(theta) * twist.angular,
        v: *accel,
    }
}

/// Stage state `y_n + h·k` for every agent.
fn stage(base: &State, slopes: &[Slope], h: f64) -> (Vec<Pose>, Vec<Twist>, Vec<Vec3>) {
    let mut poses = Vec::with_capacity(slopes.len());
    let mut twists = Vec::with_capacity(slopes.len());
    let mut thetas = Vec::with_capacity(slopes.len());
    for ((pose, twist), k) in base.poses.iter().zip(&base.twists).zip(slopes) {
        let theta = k.theta * h;
        poses.push(Pose::new(
            pose.p + k.p * h,
            pose.r.compose(&so3_exp(&theta)),
        ));
        twists.push(Twist::from_vec6(&(twist.to_vec6() + k.v * h)));
        thetas.push(theta);
    }
    (poses, twists, thetas)
}

/// One RKMK4 step. `k1_accel` is the acceleration field already evaluated at
/// `state` (callers usually need it anyway for logging); `accel` is called
/// for the three remaining stages.
pub fn rkmk4_step<E>(
    state: &State,
    dt: f64,
    k1_accel: &[Vec6],
    mut accel: impl FnMut(f64, &[Pose], &[Twist]) -> Result<Vec<Vec6>, E>,
) -> Result<State, E> {
    let zero = Vec3::zeros();
    let k1: Vec<Slope> = state
        .poses
        .iter()
        .zip(&state.twists)
        .zip(k1_accel)
        .map(|((p, v), a)| kinematics(p, v, &zero, a))
        .collect();

    let mut next_slopes = |h: f64, prev: &[Slope]| -> Result<Vec<Slope>, E> {
        let (poses, twists, thetas) = stage(state, prev, h);
        let a = accel(state.t + h, &poses, &twists)?;
        Ok((0..poses.len())
            .map(|i| kinematics(&poses[i], &twists[i], &thetas[i], &a[i]))
            .collect())
    };
    let k2 = next_slopes(0.5 * dt, &k1)?;
    let k3 = next_slopes(0.5 * dt, &k2)?;
    let k4 = next_slopes(dt, &k3)?;

    let w = dt / 6.0;
    let mut poses = Vec::with_capacity(k1.len());
    let mut twists = Vec::with_capacity(k1.len());
    for i in 0..k1.len() {
        let comb =
            |f: fn(&Slope) -> Vec3| (f(&k1[i]) + f(&k2[i]) * 2.0 + f(&k3[i]) * 2.0 + f(&k4[i])) * w;
        let dp = comb(|s| s.p);
        let dtheta = comb(|s| s.theta);
        let dv = (k1[i].v + k2[i].v * 2.0 + k3[i].v * 2.0 + k4[i].v) * w;
        let pose = &state.poses[i];
        poses.push(Pose::new(pose.p + dp, pose.r.compose(&so3_exp(&dtheta))));
        twists.push(Twist::from_vec6(&(state.twists[i].to_vec6() + dv)));
    }
    Ok(State {
        t: state.t + dt,
        poses,
        twists,
    })
}

/// Re-projects rotations whose drift exceeds [`REPAIR_THRESHOLD`]; returns
/// how many were touched.
pub fn repair_rotations(poses: &mut [Pose]) -> usize {
    let mut repaired = 0;
    for pose in poses.iter_mut() {
        if pose.r.orthonormality_error() > REPAIR_THRESHOLD {
            if let Ok(r) = project_so3(pose.r.matrix()) {
                pose.r = r;
                repaired += 1;
            }
        }
    }
    repaired
}
