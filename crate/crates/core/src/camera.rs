//! Pinhole projection.

use nalgebra::{Matrix2x3, Vector2};

use crate::lie::Vec3;

pub type Vec2 = Vector2<f64>;

/// Closest depth at which a point still counts as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 460.0, fy: 460.0, cx: 255.0, cy: 255.0, width: 640.0, height: 640.0 }
    }
}

impl CameraIntrinsics {
    /// Projects a camera-frame point; `None` when it is not in front.
    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Derivative of the projection with respect to the camera-frame point.
    pub fn project_jacobian(&self, p: &Vec3) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz, 0.0, -self.fx * p.x * iz * iz,
            0.0, self.fy * iz, -self.fy * p.y * iz * iz,
        )
    }

    pub fn contains(&self, u: &Vec2) -> bool {
        u.x >= 0.0 && u.x < self.width && u.y >= 0.0 && u.y < self.height
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0.0 && self.height > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_and_behind() {
        let k = CameraIntrinsics::default();
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, 2.0)), Some(Vec2::new(255.0, 255.0)));
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, -1.0)), None);
        assert!(k.contains(&Vec2::new(0.0, 639.9)));
        assert!(!k.contains(&Vec2::new(640.0, 10.0)));
    }

    #[test]
    fn jacobian_matches_differences() {
        let k = CameraIntrinsics::default();
        let p = Vec3::new(0.3, -0.7, 2.5);
        let j = k.project_jacobian(&p);
        let h = 1e-6;
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let fd = (k.project(&(p + e)).unwrap() - k.project(&(p - e)).unwrap()) / (2.0 * h);
            assert!((fd - j.column(c)).norm() < 1e-6);
        }
    }
}
