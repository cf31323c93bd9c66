use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Pose, SceneModel};
use crate::error::{Error, Result};
use crate::real::Real;

const MAX_ATTEMPTS: usize = 100;

/// Parameters of the center-facing orbit sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePairSpec<T: Real> {
    pub count: usize,
    pub orbit_radius_range: (T, T),
    /// Elevation above the horizontal plane through the scene center, radians.
    pub elevation_range: (T, T),
    /// Largest translation between the two poses of a pair.
    pub baseline_max: T,
    pub rotation_jitter_max: T,
    pub seed: u64,
}

impl<T: Real> PosePairSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let (rmin, rmax) = self.orbit_radius_range;
        let (emin, emax) = self.elevation_range;
        if self.count == 0 {
            return Err(Error::Config("pose pair count must be >= 1".into()));
        }
        if !(rmin > T::zero() && rmin <= rmax) {
            return Err(Error::Config("orbit radius range must satisfy 0 < min <= max".into()));
        }
        if !(emin <= emax) || !emin.is_finite() || !emax.is_finite() {
            return Err(Error::Config("elevation range must satisfy min <= max".into()));
        }
        if !(self.baseline_max >= T::zero()) || !(self.rotation_jitter_max >= T::zero()) {
            return Err(Error::Config("baseline and rotation jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// Samples `spec.count` pose pairs around `center`.
///
/// The first pose of each pair sits on the orbit shell and looks at `center`.
/// The second is displaced by a uniform vector in the ball of radius
/// `baseline_max`, re-aimed at `center`, then rotated about a uniform random
/// axis by at most `rotation_jitter_max`. A pose inside geometry is redrawn;
/// after 100 failed draws for one pair the call fails.
pub fn sample_pose_pairs<T: Real>(spec: &PosePairSpec<T>, scene: &SceneModel<T>, center: Vector3<T>) -> Result<Vec<(Pose<T>, Pose<T>)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.count);
    for pair in 0..spec.count {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let candidate = draw_pair(spec, center, &mut rng)?;
            if !scene.inside_geometry(&candidate.0.center()) && !scene.inside_geometry(&candidate.1.center()) {
                found = Some(candidate);
                break;
            }
        }
        match found {
            Some(p) => pairs.push(p),
            None => {
                return Err(Error::PoseSampling {
                    pair,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }
    Ok(pairs)
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, (lo, hi): (T, T)) -> T {
    let u: f64 = rng.random();
    lo + (hi - lo) * T::lit(u)
}

fn unit_vector<T: Real>(rng: &mut ChaCha8Rng) -> Vector3<T> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0f64..=1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            let v = v / n2.sqrt();
            return Vector3::new(T::lit(v.x), T::lit(v.y), T::lit(v.z));
        }
    }
}

fn draw_pair<T: Real>(spec: &PosePairSpec<T>, center: Vector3<T>, rng: &mut ChaCha8Rng) -> Result<(Pose<T>, Pose<T>)> {
    let radius = uniform(rng, spec.orbit_radius_range);
    let elevation = uniform(rng, spec.elevation_range);
    let azimuth = uniform(rng, (T::zero(), T::TAU()));
    let eye = center + Vector3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos()) * radius;
    let first = Pose::look_at(eye, center)?;

    // Uniform in the ball: radius ~ b * u^(1/3).
    let dir = unit_vector::<T>(rng);
    let r = spec.baseline_max * T::lit(rng.random::<f64>().cbrt());
    let second = Pose::look_at(eye + dir * r, center)?;

    let axis = unit_vector::<T>(rng);
    let angle = uniform(rng, (T::zero(), spec.rotation_jitter_max));
    let second = if angle > T::zero() {
        second.rotated_locally(&axis, angle)
    } else {
        second
    };
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::testing::*;

    fn spec(count: usize) -> PosePairSpec<f64> {
        PosePairSpec {
            count,
            orbit_radius_range: (6.0, 9.0),
            elevation_range: (0.1, 0.6),
            baseline_max: 0.5,
            rotation_jitter_max: 0.05,
            seed: 1234,
        }
    }

    fn scene() -> SceneModel<f64> {
        SceneModel::<f64>::new(
            vec![sphere(v3(0.0, 0.0, 0.0), 1.5, 30.0, rgb(0.5, 0.5, 0.5))],
            bounds(20.0),
            rgb(0.0, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn first_pose_axes_pass_through_center() {
        let center = v3(0.3, -0.2, 0.1);
        let pairs = sample_pose_pairs(&spec(200), &scene(), center).unwrap();
        assert_eq!(pairs.len(), 200);
        for (a, b) in &pairs {
            let to_center = center - a.center();
            let off_axis = to_center.cross(&a.forward()).norm();
            assert!(off_axis < 1e-6, "axis misses center by {off_axis}");
            assert!((a.center() - b.center()).norm() <= 0.5 + 1e-12);
            for p in [a, b] {
                assert!(Pose::<f64>::new(*p.rotation(), *p.translation()).is_ok());
            }
        }
    }

    #[test]
    fn zero_baseline_gives_identical_poses() {
        let s = PosePairSpec {
            baseline_max: 0.0,
            rotation_jitter_max: 0.0,
            ..spec(20)
        };
        for (a, b) in sample_pose_pairs(&s, &scene(), v3(0.0, 0.0, 0.0)).unwrap() {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let a = sample_pose_pairs(&spec(30), &scene(), v3(0.0, 0.0, 0.0)).unwrap();
        let b = sample_pose_pairs(&spec(30), &scene(), v3(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(a, b);
        let c = sample_pose_pairs(&PosePairSpec { seed: 99, ..spec(30) }, &scene(), v3(0.0, 0.0, 0.0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cameras_inside_geometry_are_rejected() {
        let s = PosePairSpec {
            orbit_radius_range: (0.5, 1.0),
            ..spec(5)
        };
        let err = sample_pose_pairs(&s, &scene(), v3(0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::PoseSampling { pair: 0, .. }));
    }

    #[test]
    fn invalid_specs() {
        assert!(PosePairSpec { count: 0, ..spec(1) }.validate().is_err());
        assert!(PosePairSpec {
            orbit_radius_range: (3.0, 2.0),
            ..spec(1)
        }
        .validate()
        .is_err());
    }
}
