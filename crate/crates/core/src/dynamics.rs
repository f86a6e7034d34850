//! Quadrotor rigid-body dynamics and the geometric velocity-tracking
//! controller.
//!
//! State: position q, velocity v, body-to-world rotation R, body rates
//! omega. Dynamics under a wrench (collective thrust f along the body z
//! axis, body moment M):
//!
//! ```text
//! q' = v
//! v' = (f/m) R e3 - g e3
//! R' = R hat(omega)
//! omega' = I^-1 (M - omega x I omega)
//! ```
//!
//! Integration is classical RK4 with the wrench held constant across the
//! step (zero-order hold, matching discrete control), followed by
//! re-orthonormalization of the rotation.

use crate::error::{Error, Result};
use crate::geometry::{hat, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Mat3,
    pub angular_velocity: Vec3,
}

impl QuadrotorState {
    /// At rest at `position`, level attitude.
    pub fn at_rest(position: Vec3) -> Self {
        QuadrotorState {
            position,
            velocity: Vec3::ZERO,
            rotation: Mat3::IDENTITY,
            angular_velocity: Vec3::ZERO,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.rotation.is_finite()
            && self.angular_velocity.is_finite()
    }

    /// Third body axis (thrust direction) in world coordinates.
    pub fn body_z(&self) -> Vec3 {
        self.rotation.column(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub gravity: f64,
    /// Velocity-error gain of the force loop.
    pub k_v: f64,
    /// Attitude-error gain of the moment loop.
    pub k_r: f64,
    /// Body-rate damping gain of the moment loop.
    pub k_omega: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        QuadrotorParams {
            mass: 1.0,
            inertia: Mat3::from_diagonal(Vec3::new(0.01, 0.01, 0.02)),
            gravity: 9.80665,
            // Safety filtering happens on the commanded velocity, so the
            // plant must track that command with little lag or the real
            // velocity overshoots the filtered one near obstacle boundaries.
            // k_v = 10 puts the velocity pole a factor ~3 below the attitude
            // poles (~30 rad/s), the fastest the cascade tolerates.
            k_v: 10.0,
            k_r: 8.0,
            // The wrench is held constant over each 0.02 s step, so the
            // attitude loop is a sampled-data system: k_omega * dt / I must
            // stay below 2 or the discrete closed loop has a pole outside
            // the unit circle (k_omega = 2 here diverges). 0.5 places the
            // roll/pitch poles at 0.55 and 0.29, settling in ~0.1 s.
            k_omega: 0.5,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::invalid("mass must be positive"));
        }
        if !self.inertia.is_finite() || self.inertia.try_inverse().is_none() {
            return Err(Error::invalid("inertia must be invertible"));
        }
        // Symmetric positive definite: diagonal dominance is not required,
        // but the principal minors must all be positive.
        let d = &self.inertia.d;
        if (d[1] - d[3]).abs() > 1e-12 || (d[2] - d[6]).abs() > 1e-12 || (d[5] - d[7]).abs() > 1e-12 {
            return Err(Error::invalid("inertia must be symmetric"));
        }
        let m1 = d[0];
        let m2 = d[0] * d[4] - d[1] * d[3];
        if !(m1 > 0.0 && m2 > 0.0 && self.inertia.det() > 0.0) {
            return Err(Error::invalid("inertia must be positive definite"));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::invalid("gravity must be positive"));
        }
        if !(self.k_v > 0.0 && self.k_r > 0.0 && self.k_omega > 0.0) {
            return Err(Error::invalid("controller gains must be positive"));
        }
        Ok(())
    }
}

/// Collective thrust along body z plus a body-frame moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub thrust: f64,
    pub moment: Vec3,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench { thrust: 0.0, moment: Vec3::ZERO };
}

#[derive(Debug, Clone, Copy)]
struct Derivative {
    dq: Vec3,
    dv: Vec3,
    drot: Mat3,
    domega: Vec3,
}

/// Continuous-time state derivative under the wrench.
pub fn quadrotor_derivative(state: &QuadrotorState, wrench: &Wrench, params: &QuadrotorParams) -> (Vec3, Vec3, Mat3, Vec3) {
    let d = derivative(state, wrench, params);
    (d.dq, d.dv, d.drot, d.domega)
}

fn derivative(state: &QuadrotorState, wrench: &Wrench, params: &QuadrotorParams) -> Derivative {
    let e3 = Vec3::new(0.0, 0.0, 1.0);
    let dv = state.body_z() * (wrench.thrust / params.mass) - e3 * params.gravity;
    let drot = state.rotation.mul_mat(&hat(state.angular_velocity));
    let inertia_omega = params.inertia.mul_vec(state.angular_velocity);
    let torque = wrench.moment - state.angular_velocity.cross(inertia_omega);
    let inv = params
        .inertia
        .try_inverse()
        .expect("validated inertia is invertible");
    Derivative {
        dq: state.velocity,
        dv,
        drot,
        domega: inv.mul_vec(torque),
    }
}

fn add_scaled(state: &QuadrotorState, d: &Derivative, dt: f64) -> QuadrotorState {
    QuadrotorState {
        position: state.position + d.dq * dt,
        velocity: state.velocity + d.dv * dt,
        rotation: state.rotation.add_mat(&d.drot.scale(dt)),
        angular_velocity: state.angular_velocity + d.domega * dt,
    }
}

/// Nearest-rotation cleanup via Gram-Schmidt on the columns. Errors when
/// the frame has collapsed (determinant not positive).
pub fn renormalize(rotation: &Mat3) -> Result<Mat3> {
    if !(rotation.det() > 0.0) {
        return Err(Error::IntegrationFailure);
    }
    let c0 = rotation
        .column(0)
        .try_normalized()
        .ok_or(Error::IntegrationFailure)?;
    let c1_raw = rotation.column(1);
    let c1 = (c1_raw - c0 * c0.dot(c1_raw))
        .try_normalized()
        .ok_or(Error::IntegrationFailure)?;
    let c2 = c0.cross(c1);
    Ok(Mat3::from_columns(c0, c1, c2))
}

/// One RK4 step of length `dt` under a zero-order-hold wrench. The
/// resulting rotation is re-orthonormalized.
pub fn rk4_step(state: &QuadrotorState, wrench: &Wrench, dt: f64, params: &QuadrotorParams) -> Result<QuadrotorState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt must be positive and finite"));
    }
    let k1 = derivative(state, wrench, params);
    let s2 = add_scaled(state, &k1, dt / 2.0);
    let k2 = derivative(&s2, wrench, params);
    let s3 = add_scaled(state, &k2, dt / 2.0);
    let k3 = derivative(&s3, wrench, params);
    let s4 = add_scaled(state, &k3, dt);
    let k4 = derivative(&s4, wrench, params);

    let sixth = dt / 6.0;
    let position = state.position + (k1.dq + (k2.dq + k3.dq) * 2.0 + k4.dq) * sixth;
    let velocity = state.velocity + (k1.dv + (k2.dv + k3.dv) * 2.0 + k4.dv) * sixth;
    let rotation = state.rotation.add_mat(
        &k1.drot
            .add_mat(&k2.drot.scale(2.0))
            .add_mat(&k3.drot.scale(2.0))
            .add_mat(&k4.drot)
            .scale(sixth),
    );
    let angular_velocity = state.angular_velocity + (k1.domega + (k2.domega + k3.domega) * 2.0 + k4.domega) * sixth;

    Ok(QuadrotorState {
        position,
        velocity,
        rotation: renormalize(&rotation)?,
        angular_velocity,
    })
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m.get(2, 1), m.get(0, 2), m.get(1, 0))
}

/// Geometric velocity-tracking controller.
///
/// The force loop requests `F = m (g e3 + k_v (v_des - v))`; the thrust is
/// the component of F along the current body z axis (clamped nonnegative).
/// The attitude loop aligns body z with F at zero yaw through
/// `M = -k_r e_R - k_omega omega + omega x I omega`. A vanishing force
/// request holds the current attitude at zero thrust.
pub fn track_velocity(state: &QuadrotorState, v_des: Vec3, params: &QuadrotorParams) -> Wrench {
    let e3 = Vec3::new(0.0, 0.0, 1.0);
    let force = (e3 * params.gravity + (v_des - state.velocity) * params.k_v) * params.mass;

    let coriolis = state
        .angular_velocity
        .cross(params.inertia.mul_vec(state.angular_velocity));

    // Covers vanishing requests and any non-finite or overflowed norm.
    let force_norm = force.norm();
    if !force_norm.is_finite() || force_norm < 1e-9 {
        let moment = -(state.angular_velocity * params.k_omega) + coriolis;
        return Wrench { thrust: 0.0, moment };
    }
    let b3_des = force / force_norm;

    let thrust = force.dot(state.body_z()).max(0.0);

    // Desired frame: body z along the force, yaw fixed at zero. When the
    // force lines up with the x axis any perpendicular serves; y keeps the
    // frame right-handed.
    let x_ref = Vec3::new(1.0, 0.0, 0.0);
    let b2_des = match b3_des.cross(x_ref).try_normalized() {
        Some(v) => v,
        None => Vec3::new(0.0, 1.0, 0.0),
    };
    let b1_des = b2_des.cross(b3_des);
    let r_des = Mat3::from_columns(b1_des, b2_des, b3_des);

    let r = &state.rotation;
    let e_r = vee(&r_des.transpose().mul_mat(r).sub_mat(&r.transpose().mul_mat(&r_des))) * 0.5;
    let moment = -(e_r * params.k_r) - state.angular_velocity * params.k_omega + coriolis;

    Wrench { thrust, moment }
}

/// Translational mechanical energy, used by conservation checks.
pub fn mechanical_energy(state: &QuadrotorState, params: &QuadrotorParams) -> f64 {
    0.5 * params.mass * state.velocity.norm_squared() + params.mass * params.gravity * state.position.z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hover_wrench(params: &QuadrotorParams) -> Wrench {
        Wrench { thrust: params.mass * params.gravity, moment: Vec3::ZERO }
    }

    #[test]
    fn hover_derivative_vanishes() {
        let params = QuadrotorParams::default();
        let state = QuadrotorState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        let (dq, dv, drot, domega) = quadrotor_derivative(&state, &hover_wrench(&params), &params);
        assert_eq!(dq, Vec3::ZERO);
        assert!(dv.norm() < 1e-15);
        assert_eq!(drot, Mat3::ZERO);
        assert_eq!(domega, Vec3::ZERO);
    }

    #[test]
    fn free_fall_accelerates_downward() {
        let params = QuadrotorParams::default();
        let state = QuadrotorState::at_rest(Vec3::ZERO);
        let (_, dv, _, _) = quadrotor_derivative(&state, &Wrench::ZERO, &params);
        assert_eq!(dv, Vec3::new(0.0, 0.0, -params.gravity));
    }

    #[test]
    fn moment_spins_body() {
        let params = QuadrotorParams::default();
        let state = QuadrotorState::at_rest(Vec3::ZERO);
        let wrench = Wrench { thrust: 0.0, moment: Vec3::new(0.1, 0.0, 0.0) };
        let (_, _, _, domega) = quadrotor_derivative(&state, &wrench, &params);
        assert_relative_eq!(domega.x, 10.0, epsilon = 1e-12);
        assert_eq!(domega.y, 0.0);
        assert_eq!(domega.z, 0.0);
    }

    #[test]
    fn hover_is_an_integration_fixed_point() {
        let params = QuadrotorParams::default();
        let start = QuadrotorState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        let mut state = start;
        for _ in 0..400 {
            state = rk4_step(&state, &hover_wrench(&params), 0.02, &params).unwrap();
        }
        assert!((state.position - start.position).norm() <= 1e-9);
        assert!(state.velocity.norm() <= 1e-9);
    }

    #[test]
    fn free_fall_velocity_increment_is_exact() {
        let params = QuadrotorParams::default();
        let mut state = QuadrotorState::at_rest(Vec3::new(0.0, 0.0, 10.0));
        for step in 1..=50 {
            let prev_vz = state.velocity.z;
            state = rk4_step(&state, &Wrench::ZERO, 0.02, &params).unwrap();
            let dv = state.velocity.z - prev_vz;
            assert!((dv + params.gravity * 0.02).abs() <= 1e-10, "step {step}: dv {dv}");
        }
        assert_relative_eq!(state.velocity.z, -params.gravity, epsilon = 1e-9);
    }

    #[test]
    fn constant_yaw_rate_integrates_to_rotation() {
        let params = QuadrotorParams::default();
        let mut state = QuadrotorState::at_rest(Vec3::ZERO);
        state.angular_velocity = Vec3::new(0.0, 0.0, 1.0);
        // Spin about body z is torque-free for a diagonal inertia.
        for _ in 0..100 {
            state = rk4_step(&state, &hover_wrench(&params), 0.01, &params).unwrap();
        }
        let c = 1.0f64.cos();
        let s = 1.0f64.sin();
        let expect = Mat3::from_rows(
            Vec3::new(c, -s, 0.0),
            Vec3::new(s, c, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        );
        for (a, b) in state.rotation.d.iter().zip(expect.d.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn ballistic_energy_is_conserved() {
        let params = QuadrotorParams::default();
        let mut state = QuadrotorState::at_rest(Vec3::new(0.0, 0.0, 5.0));
        state.velocity = Vec3::new(0.5, -0.25, 0.75);
        state.angular_velocity = Vec3::new(0.3, 0.2, 0.1);
        let e0 = mechanical_energy(&state, &params);
        let mut worst: f64 = 0.0;
        for _ in 0..400 {
            state = rk4_step(&state, &Wrench::ZERO, 0.02, &params).unwrap();
            worst = worst.max((mechanical_energy(&state, &params) - e0).abs());
        }
        assert!(worst <= 1e-6, "energy drift {worst}");
    }

    /// Torque-free spin about the body x principal axis has the closed
    /// form R(t) = R0 exp(hat(omega) t); the rotational part is genuinely
    /// nonlinear, so the one-trajectory error must shrink like dt^4.
    #[test]
    fn rk4_exhibits_fourth_order_convergence() {
        let params = QuadrotorParams::default();
        let omega = 2.0;
        let horizon = 1.0;

        let angle_error = |dt: f64| -> f64 {
            let mut state = QuadrotorState::at_rest(Vec3::ZERO);
            state.angular_velocity = Vec3::new(omega, 0.0, 0.0);
            let steps = (horizon / dt).round() as usize;
            for _ in 0..steps {
                state = rk4_step(&state, &Wrench::ZERO, dt, &params).unwrap();
            }
            let a = omega * horizon;
            let (s, c) = (a.sin(), a.cos());
            let expect = Mat3::from_rows(
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, c, -s),
                Vec3::new(0.0, s, c),
            );
            let rel = expect.transpose().mul_mat(&state.rotation);
            ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
        };

        let e1 = angle_error(0.04);
        let e2 = angle_error(0.02);
        let e3 = angle_error(0.01);
        assert!(e1 / e2 >= 8.0, "halving 0.04 -> 0.02 only gained {}", e1 / e2);
        assert!(e2 / e3 >= 8.0, "halving 0.02 -> 0.01 only gained {}", e2 / e3);
    }

    #[test]
    fn renormalize_cleans_perturbed_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            // Random rotation from an axis-angle, then a small perturbation.
            let axis = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if let Some(u) = v.try_normalized() {
                    break u;
                }
            };
            let angle: f64 = rng.gen_range(-3.0..3.0);
            let k = hat(axis);
            let rot = Mat3::IDENTITY
                .add_mat(&k.scale(angle.sin()))
                .add_mat(&k.mul_mat(&k).scale(1.0 - angle.cos()));
            let mut noisy = rot;
            for v in &mut noisy.d {
                *v += rng.gen_range(-1e-4..1e-4);
            }
            let clean = renormalize(&noisy).unwrap();
            let gram = clean.transpose().mul_mat(&clean);
            for (a, b) in gram.d.iter().zip(Mat3::IDENTITY.d.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert!((clean.det() - 1.0).abs() <= 1e-12);
            // Idempotence.
            let again = renormalize(&clean).unwrap();
            for (a, b) in again.d.iter().zip(clean.d.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn renormalize_rejects_collapsed_frames() {
        let flipped = Mat3::from_diagonal(Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(renormalize(&flipped), Err(Error::IntegrationFailure)));
        assert!(renormalize(&Mat3::ZERO).is_err());
    }

    #[test]
    fn tracking_equilibrium_outputs_hover_wrench() {
        let params = QuadrotorParams::default();
        let mut state = QuadrotorState::at_rest(Vec3::ZERO);
        state.velocity = Vec3::new(0.7, 0.0, 0.0);
        let w = track_velocity(&state, state.velocity, &params);
        assert_relative_eq!(w.thrust, params.mass * params.gravity, epsilon = 1e-12);
        assert!(w.moment.norm() <= 1e-12);
    }

    #[test]
    fn tracking_vertical_step_raises_thrust() {
        let params = QuadrotorParams { k_v: 2.0, ..QuadrotorParams::default() };
        let state = QuadrotorState::at_rest(Vec3::ZERO);
        let w = track_velocity(&state, Vec3::new(0.0, 0.0, 1.0), &params);
        assert_relative_eq!(w.thrust, params.mass * (params.gravity + 2.0), epsilon = 1e-12);
        assert!(w.moment.norm() <= 1e-12);
    }

    #[test]
    fn tracking_horizontal_step_tilts() {
        let params = QuadrotorParams::default();
        let state = QuadrotorState::at_rest(Vec3::ZERO);
        let w = track_velocity(&state, Vec3::new(1.0, 0.0, 0.0), &params);
        assert!(w.moment.norm() > 1e-3, "attitude loop must act");
    }

    #[test]
    fn closed_loop_reaches_commanded_velocity() {
        let params = QuadrotorParams::default();
        for v_des in [
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, -2.0, 0.0),
            Vec3::new(1.2, 1.2, 0.0),
            Vec3::new(0.0, 0.0, 1.5),
            Vec3::new(-0.4, 0.3, 0.0),
        ] {
            let mut state = QuadrotorState::at_rest(Vec3::new(0.0, 0.0, 1.0));
            for _ in 0..50 {
                let w = track_velocity(&state, v_des, &params);
                state = rk4_step(&state, &w, 0.02, &params).unwrap();
            }
            let err = (state.velocity - v_des).norm();
            assert!(
                err <= 0.05 * v_des.norm(),
                "residual {err} for command {v_des:?}"
            );
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = QuadrotorParams::default();
        p.inertia = Mat3::ZERO;
        assert!(p.validate().is_err());
        let mut p = QuadrotorParams::default();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        assert!(QuadrotorParams::default().validate().is_ok());
    }
}
