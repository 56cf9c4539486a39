//! Forward camera model: turns a world into bearing/elevation observations,
//! with optional angle noise and visibility masking.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, CameraRig, Dimension, ObservationSet, Scene};
use crate::sampling::seeded_rng;

/// Bearing and elevation of the ray from `camera` to `point`.
pub fn ray_angles(point: &Vector3<f64>, camera: &Vector3<f64>) -> (f64, f64) {
    let d = point - camera;
    let r = d.x.hypot(d.y);
    (d.y.atan2(d.x), d.z.atan2(r))
}

/// Photographs every point from every camera.
///
/// For non-oriented rigs the bearing is reported relative to the camera
/// heading. `mask` is `n × m`, row-major by point; hidden pairs are omitted.
pub fn project(scene: &Scene, rig: &CameraRig, mask: Option<&[bool]>) -> Result<ObservationSet> {
    if scene.dimension() != rig.dimension() {
        return Err(Error::DimensionMismatch {
            scene: scene.dimension().value(),
            rig: rig.dimension().value(),
        });
    }
    let (n, m) = (scene.len(), rig.len());
    if let Some(mask) = mask {
        if mask.len() != n * m {
            return Err(Error::LengthMismatch {
                what: "mask entries",
                expected: n * m,
                got: mask.len(),
            });
        }
    }
    let spatial = scene.dimension() == Dimension::Spatial;
    let mut bearings = vec![None; n * m];
    let mut elevations = vec![None; n * m];
    for i in 0..n {
        for j in 0..m {
            let t = rig.times()[j];
            let p = scene.position_at(i, t);
            let q = rig.position(j);
            if p == q {
                return Err(Error::CameraOnPoint {
                    camera: j,
                    point: i,
                });
            }
            if mask.is_some_and(|mk| !mk[i * m + j]) {
                continue;
            }
            if p.x == q.x && p.y == q.y {
                return Err(Error::VerticalRay {
                    camera: j,
                    point: i,
                });
            }
            let (mut theta, phi) = ray_angles(&p, &q);
            if let Some(h) = rig.headings() {
                theta = wrap_angle(theta - h[j]);
            }
            bearings[i * m + j] = Some(theta);
            if spatial {
                elevations[i * m + j] = Some(phi);
            }
        }
    }
    ObservationSet::new(
        n,
        m,
        bearings,
        spatial.then_some(elevations),
        rig.times().to_vec(),
        rig.is_oriented(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Independent shifts drawn from `[−δ, δ]`.
    Uniform,
    /// Independent normal shifts with standard deviation `δ`.
    Gaussian,
}

/// Shifts every visible angle by independent uniform noise in `[−δ, δ]`.
pub fn perturb(obs: &ObservationSet, delta: f64, seed: u64) -> Result<ObservationSet> {
    perturb_with(obs, delta, NoiseModel::Uniform, seed)
}

pub fn perturb_with(
    obs: &ObservationSet,
    delta: f64,
    model: NoiseModel,
    seed: u64,
) -> Result<ObservationSet> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise amplitude {delta}")));
    }
    if delta == 0.0 {
        return Ok(obs.clone());
    }
    let mut rng = seeded_rng(seed, &[0x0b5]);
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        match model {
            NoiseModel::Uniform => Uniform::new_inclusive(-delta, delta)
                .expect("finite bounds")
                .sample(rng),
            NoiseModel::Gaussian => Normal::new(0.0, delta).expect("finite sigma").sample(rng),
        }
    };
    let bearings = obs
        .raw_bearings()
        .iter()
        .map(|b| b.map(|a| wrap_angle(a + sample(&mut rng))))
        .collect();
    let elevations = obs.raw_elevations().map(|els| {
        els.iter()
            .map(|e| e.map(|a| a + sample(&mut rng)))
            .collect()
    });
    obs.with_angles(bearings, elevations, obs.is_oriented())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum VisibilityRule {
    Full,
    /// Each pair is visible independently with probability `fraction`.
    Random {
        fraction: f64,
        seed: u64,
    },
    /// A point is hidden from a camera when a nearer point lies within
    /// `epsilon` radians of its viewing direction.
    AngularProximity {
        epsilon: f64,
    },
}

pub fn occlusion_mask(scene: &Scene, rig: &CameraRig, rule: VisibilityRule) -> Result<Vec<bool>> {
    let (n, m) = (scene.len(), rig.len());
    match rule {
        VisibilityRule::Full => Ok(vec![true; n * m]),
        VisibilityRule::Random { fraction, seed } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InvalidParameter(format!(
                    "visible fraction {fraction}"
                )));
            }
            let mut rng = seeded_rng(seed, &[0x3a5c]);
            Ok((0..n * m).map(|_| rng.random::<f64>() < fraction).collect())
        }
        VisibilityRule::AngularProximity { epsilon } => {
            if !(epsilon >= 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon {epsilon}")));
            }
            let mut mask = vec![true; n * m];
            for j in 0..m {
                let t = rig.times()[j];
                let q = rig.position(j);
                let dirs: Vec<Vector3<f64>> = (0..n).map(|i| scene.position_at(i, t) - q).collect();
                for i in 0..n {
                    let hidden = (0..n).any(|k| {
                        k != i
                            && dirs[k].norm() < dirs[i].norm()
                            && angle_between(&dirs[k], &dirs[i]) < epsilon
                    });
                    mask[i * m + j] = !hidden;
                }
            }
            Ok(mask)
        }
    }
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
