//! Manifold arithmetic for rotations, rigid transforms and the 18-dimensional
//! error state.
//!
//! Rotation error is right-multiplicative throughout: a perturbed state is
//! `x ⊞ δx` with `R = R̂ · exp(δθ)`, and every Jacobian in the crate uses the
//! same convention. The error vector is ordered
//! `[δθ, δp, δv, δb_gyro, δb_accel, δg]`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

/// 18x18 covariance of the error state.
pub type Covariance18 = SMatrix<f64, 18, 18>;

/// Tangent-space deviation of the true state from a nominal estimate,
/// ordered `[δθ, δp, δv, δb_gyro, δb_accel, δg]`.
pub type ErrorState = SVector<f64, 18>;

/// Start indices of the error-state blocks.
pub mod blocks {
    pub const THETA: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const BGYRO: usize = 9;
    pub const BACCEL: usize = 12;
    pub const GRAV: usize = 15;
}

/// Skew-symmetric matrix such that `skew(a) * b = a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A rotation on SO(3), stored as an orthonormal 3x3 matrix with det +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wrap a matrix that is already orthonormal. Checked in debug builds.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(
            ((m.transpose() * m) - Matrix3::identity()).norm() < 1e-6,
            "matrix is not orthonormal"
        );
        Rotation(m)
    }

    /// Rotation of `angle` radians about the world z axis.
    pub fn from_yaw(angle: f64) -> Self {
        so3_exp(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Inverse rotation applied to `v`, i.e. `Rᵀ v`.
    pub fn unrotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transpose() * v
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Re-orthonormalize to absorb drift from long composition chains.
    pub fn renormalize(&mut self) {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        self.0 = r;
    }

    /// Unit quaternion `(qx, qy, qz, qw)` with non-negative `qw`.
    /// Used by trajectory serialization; not part of the manifold API.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (x, y, z, w);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        if w < 0.0 {
            [-x, -y, -z, -w]
        } else {
            [x, y, z, w]
        }
    }

    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let n = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        let (x, y, z, w) = (qx / n, qy / n, qz / n, qw / n);
        Rotation(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }
}

/// Exponential map of SO(3) via the Rodrigues formula. Falls back to the
/// second-order series below `‖phi‖ = 1e-8`.
pub fn so3_exp(phi: &Vector3<f64>) -> Rotation {
    let theta = phi.norm();
    let k = skew(phi);
    let m = if theta < 1e-8 {
        Matrix3::identity() + k + 0.5 * k * k
    } else {
        Matrix3::identity() + (theta.sin() / theta) * k
            + ((1.0 - theta.cos()) / (theta * theta)) * k * k
    };
    Rotation(m)
}

/// Principal logarithm of a rotation, `‖result‖ ≤ π`.
///
/// Rotations within `1e-6` of a half turn are resolved by extracting the axis
/// from `R + I`; the sign ambiguity at exactly π is broken by choosing the
/// axis whose largest-magnitude component is non-negative.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    // sinθ·axis from the skew part; θ via atan2, which stays accurate where
    // acos of the trace does not (near 0 and π).
    let s_vec = vee(&((m - m.transpose()) * 0.5));
    let sin_theta = s_vec.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-8 {
        return s_vec * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return s_vec * (theta / sin_theta);
    }
    // Near π: R + I ≈ 2 n nᵀ, so read the axis off the strongest column.
    let diag = Vector3::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]);
    let k = diag.imax();
    let nk = ((diag[k] + 1.0) * 0.5).max(0.0).sqrt();
    let mut n = Vector3::zeros();
    n[k] = nk;
    for i in 0..3 {
        if i != k {
            n[i] = (m[(i, k)] + m[(k, i)]) / (4.0 * nk);
        }
    }
    n.normalize_mut();
    // Tie-break: non-negative largest component.
    if n[n.iamax()] < 0.0 {
        n = -n;
    }
    // Away from exactly π the sign is still determined by the skew part.
    if s_vec.dot(&n) < 0.0 && sin_theta > 1e-12 {
        n = -n;
    }
    n * theta
}

/// Right Jacobian of SO(3): `exp(phi + d) ≈ exp(phi) exp(Jr(phi) d)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-12 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - ((1.0 - theta.cos()) / theta2) * k
        + ((theta - theta.sin()) / (theta2 * theta)) * k * k
}

/// Inverse of the right Jacobian of SO(3).
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-12 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let theta = theta2.sqrt();
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Rigid transform: rotation plus translation, composed as a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// `self ∘ other`, applying `other` first in the local frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -rt.rotate(&self.translation) }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Inverse transform of a point, `Rᵀ (p - t)`.
    pub fn untransform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.unrotate(&(p - self.translation))
    }
}

/// Full navigation state: attitude, position, velocity, IMU biases and the
/// gravity vector in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl NavState {
    /// Identity attitude at the origin with gravity `[0, 0, -9.81]`.
    pub fn default_init() -> Self {
        NavState {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

/// Manifold retraction: rotation updated multiplicatively on the right,
/// vector blocks added.
pub fn boxplus(x: &NavState, dx: &ErrorState) -> NavState {
    let dtheta = Vector3::new(dx[0], dx[1], dx[2]);
    NavState {
        rotation: x.rotation.compose(&so3_exp(&dtheta)),
        position: x.position + dx.fixed_rows::<3>(blocks::POS).into_owned(),
        velocity: x.velocity + dx.fixed_rows::<3>(blocks::VEL).into_owned(),
        gyro_bias: x.gyro_bias + dx.fixed_rows::<3>(blocks::BGYRO).into_owned(),
        accel_bias: x.accel_bias + dx.fixed_rows::<3>(blocks::BACCEL).into_owned(),
        gravity: x.gravity + dx.fixed_rows::<3>(blocks::GRAV).into_owned(),
    }
}

/// Manifold difference: `boxminus(boxplus(y, dx), y) = dx` for small `δθ`.
pub fn boxminus(x: &NavState, y: &NavState) -> ErrorState {
    let dtheta = so3_log(&y.rotation.transpose().compose(&x.rotation));
    let mut dx = ErrorState::zeros();
    dx.fixed_rows_mut::<3>(blocks::THETA).copy_from(&dtheta);
    dx.fixed_rows_mut::<3>(blocks::POS).copy_from(&(x.position - y.position));
    dx.fixed_rows_mut::<3>(blocks::VEL).copy_from(&(x.velocity - y.velocity));
    dx.fixed_rows_mut::<3>(blocks::BGYRO).copy_from(&(x.gyro_bias - y.gyro_bias));
    dx.fixed_rows_mut::<3>(blocks::BACCEL).copy_from(&(x.accel_bias - y.accel_bias));
    dx.fixed_rows_mut::<3>(blocks::GRAV).copy_from(&(x.gravity - y.gravity));
    dx
}

/// Force exact symmetry on a covariance matrix.
pub fn symmetrize(p: &mut Covariance18) {
    *p = (*p + p.transpose()) * 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> NavState {
        let phi = random_unit(rng) * rng.gen_range(0.0..3.0);
        NavState {
            rotation: so3_exp(&phi),
            position: Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 10.0,
            velocity: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            gyro_bias: Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 0.01,
            accel_bias: Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 0.1,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = so3_exp(&Vector3::zeros());
        assert_eq!(r.matrix(), &Matrix3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z_sends_x_to_y() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        let y = r.rotate(&Vector3::x());
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-12);
        // Rodrigues by hand: cos(π/2)=0, sin(π/2)=1 -> R = I + K + K².
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn log_inverts_exp_at_moderate_angle() {
        let phi = Vector3::new(0.2, -0.25, 0.12).normalize() * 0.37;
        let back = so3_log(&so3_exp(&phi));
        assert_relative_eq!(back, phi, epsilon = 1e-10);
    }

    #[test]
    fn exp_round_trip_against_quaternion_oracle() {
        // Independent path: axis-angle -> unit quaternion -> rotation matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let axis = random_unit(&mut rng);
            let angle: f64 = rng.gen_range(0.0..3.0);
            let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
            let q = Rotation::from_quaternion(axis.x * s, axis.y * s, axis.z * s, c);
            let r = so3_exp(&(axis * angle));
            assert_relative_eq!(*r.matrix(), *q.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(so3_log(&Rotation::identity()), Vector3::zeros());
    }

    #[test]
    fn log_quarter_turn() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_relative_eq!(so3_log(&r), Vector3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_log_round_trip_1000_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let phi = random_unit(&mut rng) * rng.gen_range(0.0..(PI - 1e-6));
            let back = so3_log(&so3_exp(&phi));
            assert!((back - phi).norm() < 1e-9, "phi={phi:?} back={back:?}");
        }
    }

    #[test]
    fn log_handles_rotations_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let angle = PI - 10f64.powf(rng.gen_range(-12.0..-2.0));
            let phi = random_unit(&mut rng) * angle;
            let back = so3_log(&so3_exp(&phi));
            // Either sign of the axis is acceptable only at exactly π;
            // below it the principal log must reproduce phi.
            assert!(
                (back - phi).norm() < 1e-6 || (back + phi).norm() < 1e-6,
                "angle={angle} phi={phi:?} back={back:?}"
            );
            let r2 = so3_exp(&back);
            assert!((r2.matrix() - so3_exp(&phi).matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn log_at_exactly_pi_uses_nonnegative_largest_axis_component() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::z(), -Vector3::x()] {
            let r = so3_exp(&(axis * PI));
            let phi = so3_log(&r);
            assert_relative_eq!(phi.norm(), PI, epsilon = 1e-9);
            assert!(phi[phi.iamax()] >= 0.0);
        }
    }

    #[test]
    fn exp_output_is_orthonormal_with_unit_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let phi = random_unit(&mut rng) * rng.gen_range(0.0..6.0);
            let r = so3_exp(&phi);
            let m = r.matrix();
            assert!(((m.transpose() * m) - Matrix3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boxplus_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_state(&mut rng);
        let y = boxplus(&x, &ErrorState::zeros());
        assert_eq!(x.position, y.position);
        assert_eq!(x.rotation.matrix(), y.rotation.matrix());
    }

    #[test]
    fn boxminus_of_self_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_state(&mut rng);
        assert_eq!(boxminus(&x, &x), ErrorState::zeros());
    }

    #[test]
    fn pure_position_increment_shifts_position_only() {
        let x = NavState::default_init();
        let mut dx = ErrorState::zeros();
        dx[blocks::POS] = 1.0;
        let y = boxplus(&x, &dx);
        assert_eq!(y.position, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(y.rotation.matrix(), x.rotation.matrix());
        assert_eq!(y.velocity, x.velocity);
    }

    #[test]
    fn boxplus_boxminus_round_trip_1000_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x = random_state(&mut rng);
            let mut dx = ErrorState::zeros();
            for i in 0..18 {
                dx[i] = rng.gen_range(-1.0..1.0);
            }
            let dtheta = Vector3::new(dx[0], dx[1], dx[2]);
            if dtheta.norm() > 0.5 {
                dx.fixed_rows_mut::<3>(0).copy_from(&(dtheta.normalize() * 0.49));
            }
            let back = boxminus(&boxplus(&x, &dx), &x);
            assert!((back - dx).norm() < 1e-9, "dx={dx:?} back={back:?}");
        }
    }

    #[test]
    fn pose_compose_associative_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                Pose::new(
                    so3_exp(&(random_unit(rng) * rng.gen_range(0.0..3.0))),
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 5.0,
                )
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            assert_relative_eq!(*lhs.rotation.matrix(), *rhs.rotation.matrix(), epsilon = 1e-9);
            assert_relative_eq!(lhs.translation, rhs.translation, epsilon = 1e-9);

            let id = a.inverse().compose(&a);
            assert_relative_eq!(*id.rotation.matrix(), Matrix3::identity(), epsilon = 1e-9);
            assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-9);
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..500 {
            let phi = random_unit(&mut rng) * rng.gen_range(0.0..PI);
            let r = so3_exp(&phi);
            let [qx, qy, qz, qw] = r.to_quaternion();
            assert!(qw >= 0.0);
            let back = Rotation::from_quaternion(qx, qy, qz, qw);
            assert!((back.matrix() - r.matrix()).norm() < 1e-12);
        }
    }
}
