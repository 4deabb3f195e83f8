use glam::{DQuat, DVec3};

/// Rigid transform: rotation followed by translation.
///
/// The orientation is kept unit-length by every constructor; `debug_assert`s
/// guard the invariant on the hot paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    pub position: DVec3,
    pub orientation: DQuat,
}

impl Pose6D {
    pub const IDENTITY: Pose6D = Pose6D {
        position: DVec3::ZERO,
        orientation: DQuat::IDENTITY,
    };

    pub fn new(position: DVec3, orientation: DQuat) -> Self {
        Pose6D {
            position,
            orientation: orientation.normalize(),
        }
    }

    pub fn from_translation(position: DVec3) -> Self {
        Pose6D {
            position,
            orientation: DQuat::IDENTITY,
        }
    }

    pub fn from_axis_angle(axis: DVec3, angle: f64) -> Self {
        Pose6D {
            position: DVec3::ZERO,
            orientation: DQuat::from_axis_angle(axis.normalize(), angle),
        }
    }

    /// `self ∘ rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Pose6D) -> Pose6D {
        Pose6D {
            position: self.position + self.orientation * rhs.position,
            orientation: (self.orientation * rhs.orientation).normalize(),
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.orientation.conjugate();
        Pose6D {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: DVec3) -> DVec3 {
        debug_assert!((self.orientation.length() - 1.0).abs() < 1e-6);
        self.position + self.orientation * p
    }

    pub fn rotate(&self, v: DVec3) -> DVec3 {
        self.orientation * v
    }

    /// Shortest-arc rotation carrying `self`'s orientation onto `other`'s,
    /// as a scaled axis-angle vector. Used by the PD controller and the
    /// incremental pose parameterization.
    pub fn rotation_to(&self, other: &Pose6D) -> DVec3 {
        let mut delta = other.orientation * self.orientation.conjugate();
        if delta.w < 0.0 {
            delta = -delta;
        }
        let (axis, angle) = delta.to_axis_angle();
        if angle.abs() < 1e-12 {
            DVec3::ZERO
        } else {
            axis * angle
        }
    }

    /// Apply a position offset and an axis-angle rotation increment
    /// (left-multiplied, i.e. in the world frame) to this pose.
    pub fn with_increment(&self, dpos: DVec3, drot: DVec3) -> Pose6D {
        let angle = drot.length();
        let rot = if angle < 1e-12 {
            DQuat::IDENTITY
        } else {
            DQuat::from_axis_angle(drot / angle, angle)
        };
        Pose6D {
            position: self.position + dpos,
            orientation: (rot * self.orientation).normalize(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_pose(rng: &mut Rng) -> Pose6D {
        let axis = DVec3::new(rng.gauss(), rng.gauss(), rng.gauss()).normalize();
        Pose6D::new(
            DVec3::new(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            ),
            DQuat::from_axis_angle(axis, rng.uniform_in(-3.0, 3.0)),
        )
    }

    #[test]
    fn constructor_normalizes() {
        let p = Pose6D::new(DVec3::ZERO, DQuat::from_xyzw(0.5, 0.5, 0.5, 0.6));
        assert!((p.orientation.length() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compose_inverse_is_identity() {
        let mut rng = Rng::seed_from(1);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            assert!(id.position.length() < 1e-9);
            assert!(id.rotation_to(&Pose6D::IDENTITY).length() < 1e-9);
        }
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = Rng::seed_from(2);
        for _ in 0..100 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!((left.position - right.position).length() < 1e-9);
            let dq = (left.orientation - right.orientation).length().min(
                (left.orientation + right.orientation).length(),
            );
            assert!(dq < 1e-9);
        }
    }

    #[test]
    fn increment_roundtrip() {
        let mut rng = Rng::seed_from(3);
        for _ in 0..100 {
            let base = random_pose(&mut rng);
            let target = random_pose(&mut rng);
            let dpos = target.position - base.position;
            let drot = base.rotation_to(&target);
            let rebuilt = base.with_increment(dpos, drot);
            assert!((rebuilt.position - target.position).length() < 1e-9);
            assert!(rebuilt.rotation_to(&target).length() < 1e-9);
        }
    }
}
