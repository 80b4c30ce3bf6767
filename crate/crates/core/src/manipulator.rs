//! Homogeneous-transform chains and end-effector pose composition.
//!
//! A serial manipulator is described by a chain of 4×4 homogeneous
//! transforms, each taking coordinates in a link frame to the previous
//! frame; the chain composes by the left-to-right matrix product. The
//! resulting end-effector pose, expressed relative to the robot base, can
//! then be referred to the inertial frame in one of two modes:
//!
//! * [`FrameComposition::Rigorous`] (default) — the base attitude rotates
//!   the position offset and the orientation composes by rotation-matrix
//!   product, with z-y-x Euler angles extracted from the result.
//! * [`FrameComposition::VectorSum`] — position *and* Euler angles add
//!   component-wise, `[P; O]_I = [P; O]_R + [r; Θ]_base`. This is only
//!   meaningful for small or aligned attitudes but is retained as an
//!   explicit mode because downstream consumers may expect exactly that
//!   arithmetic.
//!
//! Rotation blocks here are active (frame-to-parent) rotations: the columns
//! of the block are the child-frame axes expressed in the parent frame. The
//! base transform therefore carries `H_B^I`, the transpose of the
//! inertial-to-body attitude matrix from [`crate::rigid_body`].

use crate::rigid_body::{rotation_inertial_to_body, BodyState, EulerAngles, GIMBAL_GUARD_RAD};
use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Errors from transform construction and pose composition.
#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    /// `compose_chain` was handed an empty list.
    #[error("cannot compose an empty transform chain")]
    EmptyChain,
    /// Rotation block failed the orthonormality/determinant check.
    #[error("rotation block is not a proper rotation (orthonormal, det +1)")]
    NonOrthonormal,
    /// Euler extraction hit the pitch ±90° singularity.
    #[error("composed orientation pitch is within the gimbal guard band")]
    GimbalLock,
}

/// How an end-effector pose in the base frame is referred to the inertial
/// frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameComposition {
    /// Rotate the offset by the base attitude and compose rotations.
    #[default]
    Rigorous,
    /// Add position and Euler-angle vectors component-wise.
    VectorSum,
}

/// A validated 4×4 homogeneous transform (proper rotation + translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomTransform {
    matrix: Matrix4<f64>,
}

impl HomTransform {
    /// Identity transform.
    pub fn identity() -> Self {
        Self { matrix: Matrix4::identity() }
    }

    /// Builds from a rotation block and translation, validating the block is
    /// a proper rotation (orthonormal within 10⁻⁹, determinant +1).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, KinematicsError> {
        if (rotation.transpose() * rotation - Matrix3::identity()).amax() > 1e-9
            || (rotation.determinant() - 1.0).abs() > 1e-9
            || rotation.iter().any(|x| !x.is_finite())
        {
            return Err(KinematicsError::NonOrthonormal);
        }
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Ok(Self { matrix })
    }

    /// Pure translation.
    pub fn translation(offset: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), offset).expect("identity block is orthonormal")
    }

    /// Active rotation about the x-axis (no translation).
    pub fn rotation_x(theta: f64) -> Self {
        Self::new(crate::rigid_body::rot_x(theta).transpose(), Vector3::zeros())
            .expect("rotation block is orthonormal")
    }

    /// Active rotation about the y-axis (no translation).
    pub fn rotation_y(theta: f64) -> Self {
        Self::new(crate::rigid_body::rot_y(theta).transpose(), Vector3::zeros())
            .expect("rotation block is orthonormal")
    }

    /// Active rotation about the z-axis (no translation).
    pub fn rotation_z(theta: f64) -> Self {
        Self::new(crate::rigid_body::rot_z(theta).transpose(), Vector3::zeros())
            .expect("rotation block is orthonormal")
    }

    /// The underlying 4×4 matrix.
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    /// Rotation block (child-to-parent).
    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Translation column.
    pub fn translation_part(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Composition `self · rhs` (apply `rhs` first in point coordinates).
    pub fn compose(&self, rhs: &HomTransform) -> HomTransform {
        HomTransform { matrix: self.matrix * rhs.matrix }
    }

    /// Maps a point given in the child frame into the parent frame.
    pub fn transform_point(&self, point: Vector3<f64>) -> Vector3<f64> {
        self.rotation() * point + self.translation_part()
    }
}

/// Left-to-right product of a transform chain: `T₁·T₂·…·Tₙ`.
pub fn compose_chain(chain: &[HomTransform]) -> Result<HomTransform, KinematicsError> {
    let (first, rest) = chain.split_first().ok_or(KinematicsError::EmptyChain)?;
    Ok(rest.iter().fold(*first, |acc, t| acc.compose(t)))
}

/// Position and z-y-x Euler orientation of the end effector in some frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffectorPose {
    pub position: Vector3<f64>,
    pub orientation: EulerAngles,
}

impl EndEffectorPose {
    pub fn new(position: Vector3<f64>, orientation: EulerAngles) -> Self {
        Self { position, orientation }
    }

    /// The homogeneous transform carrying this pose's frame to its parent.
    pub fn to_transform(&self) -> HomTransform {
        HomTransform::new(
            rotation_inertial_to_body(&self.orientation).transpose(),
            self.position,
        )
        .expect("Euler-angle rotation matrices are orthonormal")
    }
}

/// The base platform's transform from body frame to inertial frame.
pub fn base_transform(base: &BodyState) -> HomTransform {
    HomTransform::new(
        rotation_inertial_to_body(&base.angles).transpose(),
        base.position_inertial,
    )
    .expect("attitude matrices are orthonormal")
}

/// Extracts z-y-x Euler angles from a child-to-parent rotation block.
///
/// Fails with [`KinematicsError::GimbalLock`] when the pitch is within the
/// guard band of ±90°, where roll and yaw become indistinguishable.
pub fn euler_from_rotation(child_to_parent: &Matrix3<f64>) -> Result<EulerAngles, KinematicsError> {
    // The parent-to-child matrix has the H_I^B layout, whose (0,2) entry is
    // −sin θ_y.
    let h = child_to_parent.transpose();
    let sin_pitch = -h[(0, 2)];
    if sin_pitch.abs() >= (GIMBAL_GUARD_RAD).cos() {
        return Err(KinematicsError::GimbalLock);
    }
    Ok(EulerAngles {
        theta_x: h[(1, 2)].atan2(h[(2, 2)]),
        theta_y: sin_pitch.asin(),
        theta_z: h[(0, 1)].atan2(h[(0, 0)]),
    })
}

/// Refers an end-effector pose given in the base (robot) frame to the
/// inertial frame, using the requested composition mode.
pub fn end_effector_inertial(
    pose_in_base: &EndEffectorPose,
    base: &BodyState,
    mode: FrameComposition,
) -> Result<EndEffectorPose, KinematicsError> {
    match mode {
        FrameComposition::VectorSum => Ok(EndEffectorPose {
            position: base.position_inertial + pose_in_base.position,
            orientation: EulerAngles {
                theta_x: base.angles.theta_x + pose_in_base.orientation.theta_x,
                theta_y: base.angles.theta_y + pose_in_base.orientation.theta_y,
                theta_z: base.angles.theta_z + pose_in_base.orientation.theta_z,
            },
        }),
        FrameComposition::Rigorous => {
            let combined = base_transform(base).compose(&pose_in_base.to_transform());
            Ok(EndEffectorPose {
                position: combined.translation_part(),
                orientation: euler_from_rotation(&combined.rotation())?,
            })
        }
    }
}
