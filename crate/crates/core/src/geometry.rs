//! Small helpers over `N x 3` coordinate lists.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Vec3 = [f64; 3];
pub type Coords = Vec<Vec3>;

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub fn centroid(x: &[Vec3]) -> Vec3 {
    if x.is_empty() {
        return [0.0; 3];
    }
    let mut c = [0.0; 3];
    for p in x {
        c = add(c, *p);
    }
    scale(c, 1.0 / x.len() as f64)
}

pub fn translate(x: &[Vec3], t: Vec3) -> Coords {
    x.iter().map(|p| add(*p, t)).collect()
}

/// A rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            rotation: Matrix3::identity(),
            translation: [0.0; 3],
        }
    }

    /// Haar-uniform rotation and a Gaussian translation with the given scale.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation_scale: f64) -> Self {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let translation =
            std::array::from_fn(|_| translation_scale * rng.sample::<f64, _>(StandardNormal));
        RigidMotion {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let v = self.rotation * Vector3::from(p);
        [v[0], v[1], v[2]]
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(self.rotate(p), self.translation)
    }

    pub fn apply_all(&self, x: &[Vec3]) -> Coords {
        x.iter().map(|p| self.apply(*p)).collect()
    }
}

pub fn max_abs_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

pub fn all_finite(x: &[Vec3]) -> bool {
    x.iter().all(|p| p.iter().all(|v| v.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = RigidMotion::random(&mut rng, 3.0);
            assert!((m.rotation.determinant() - 1.0).abs() < 1e-12);
            let rtr = m.rotation.transpose() * m.rotation;
            assert!((rtr - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rigid_motion_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = RigidMotion::random(&mut rng, 5.0);
        let a = [1.0, 2.0, 3.0];
        let b = [-1.0, 0.5, 2.0];
        assert!((dist(a, b) - dist(m.apply(a), m.apply(b))).abs() < 1e-12);
    }
}
