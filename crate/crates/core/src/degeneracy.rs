//! Configurations on which reconstruction is ambiguous, each paired with a
//! nearby configuration that is not.
//!
//! Every fixture is drawn at random within its family and then moved by a
//! random rigid motion, so tests exercise the family rather than one
//! instance.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamic::reconstruct_dynamic;
use crate::error::{Error, Result};
use crate::model::{Axis, CameraRig, Dimension, MotionBasis, Scene, World};
use crate::projector::project;
use crate::reconstruct::{reconstruct, Configuration, ReconstructionReport};
use crate::sampling::seeded_rng;
use crate::solver::Gauge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Cameras on one line that also carries a point.
    CameraCollinear,
    /// Points on one line that also carries a camera.
    PointCollinear,
    /// Every point and camera on two intersecting lines.
    TwoLineI,
    /// Every point and camera on two parallel lines.
    TwoLineII,
    TwoCamera,
    TwoPoint,
    /// A moving point that stays on the ray from the camera through the
    /// static anchor point in every frame.
    HiddenPointDynamic,
    /// Two cameras and two points in a common plane in space.
    CoplanarTwoCamera,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::CameraCollinear,
        Family::PointCollinear,
        Family::TwoLineI,
        Family::TwoLineII,
        Family::TwoCamera,
        Family::TwoPoint,
        Family::HiddenPointDynamic,
        Family::CoplanarTwoCamera,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::CameraCollinear => "camera-collinear",
            Family::PointCollinear => "point-collinear",
            Family::TwoLineI => "two-line-i",
            Family::TwoLineII => "two-line-ii",
            Family::TwoCamera => "two-camera",
            Family::TwoPoint => "two-point",
            Family::HiddenPointDynamic => "hidden-point-dynamic",
            Family::CoplanarTwoCamera => "coplanar-two-camera",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
                Error::Parse(format!(
                    "family `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    /// Generic points added to the families that take them.
    pub generic_points: usize,
    /// Generic cameras added to the families that take them.
    pub generic_cameras: usize,
    /// Off-variety displacement of the perturbed variant.
    pub amplitude: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            generic_points: 3,
            generic_cameras: 3,
            amplitude: 0.1,
        }
    }
}

/// Index of a point or camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Point(usize),
    Camera(usize),
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub family: Family,
    pub degenerate: World,
    pub perturbed: World,
    pub gauge: Gauge,
    pub basis: MotionBasis,
    /// Elements the published picture lets move without changing the data.
    pub deformable: Vec<Element>,
}

impl Fixture {
    pub fn analyze_degenerate(&self) -> Result<ReconstructionReport> {
        analyze(&self.degenerate, &self.gauge, self.basis)
    }

    pub fn analyze_perturbed(&self) -> Result<ReconstructionReport> {
        analyze(&self.perturbed, &self.gauge, self.basis)
    }
}

/// Projects `world` without noise and reconstructs it.
pub fn analyze(world: &World, gauge: &Gauge, basis: MotionBasis) -> Result<ReconstructionReport> {
    let obs = project(&world.scene, &world.rig, None)?;
    let tol = crate::solver::DEFAULT_RANK_TOLERANCE;
    if basis.is_static() {
        reconstruct(&obs, gauge, tol)
    } else {
        reconstruct_dynamic(&obs, basis, gauge, tol)
    }
}

/// The primary solution of an ambiguous report moved `step` along its
/// first kernel direction.
pub fn kernel_witness(report: &ReconstructionReport, step: f64) -> Result<Configuration> {
    report.kernel_witness(step)
}

struct Sampler {
    rng: ChaCha8Rng,
    placed: Vec<Vector2<f64>>,
    separation: f64,
}

impl Sampler {
    fn far_enough(&self, p: &Vector2<f64>) -> bool {
        self.placed
            .iter()
            .all(|q| (p - q).norm() >= self.separation)
    }

    fn place(&mut self, p: Vector2<f64>) -> Vector2<f64> {
        self.placed.push(p);
        p
    }

    /// Uniform in `[−1, 1]²`, separated from everything placed so far and
    /// at least `clearance` from every given line.
    fn generic(&mut self, lines: &[Line], clearance: f64) -> Result<Vector2<f64>> {
        for _ in 0..10_000 {
            let p = Vector2::new(
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
            );
            if self.far_enough(&p) && lines.iter().all(|l| l.distance(&p) >= clearance) {
                return Ok(self.place(p));
            }
        }
        Err(Error::SamplingBudget(10_000))
    }

    /// Uniform along `line` within parameter range `[−1.2, 1.2]`.
    fn on_line(&mut self, line: &Line) -> Result<Vector2<f64>> {
        for _ in 0..10_000 {
            let p = line.at(self.rng.random_range(-1.2..1.2));
            if self.far_enough(&p) {
                return Ok(self.place(p));
            }
        }
        Err(Error::SamplingBudget(10_000))
    }

    fn unit(&mut self) -> Vector2<f64> {
        let a: f64 = self.rng.random_range(0.0..2.0 * PI);
        Vector2::new(a.cos(), a.sin())
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    origin: Vector2<f64>,
    direction: Vector2<f64>,
}

impl Line {
    fn at(&self, s: f64) -> Vector2<f64> {
        self.origin + self.direction * s
    }

    fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.direction.y, self.direction.x)
    }

    fn distance(&self, p: &Vector2<f64>) -> f64 {
        (p - self.origin).dot(&self.normal()).abs()
    }
}

fn lift(p: Vector2<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 0.0)
}

/// Random planar rigid motion applied to a whole fixture.
struct Motion {
    rotation: Rotation3<f64>,
    shift: Vector3<f64>,
}

impl Motion {
    fn planar(rng: &mut ChaCha8Rng) -> Self {
        Motion {
            rotation: Rotation3::from_axis_angle(
                &Vector3::z_axis(),
                rng.random_range(0.0..2.0 * PI),
            ),
            shift: Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            ),
        }
    }

    fn point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.shift
    }

    fn vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

fn scale_axis(a: &Vector3<f64>, b: &Vector3<f64>) -> Axis {
    if (b.x - a.x).abs() >= (b.y - a.y).abs() {
        Axis::X
    } else {
        Axis::Y
    }
}

fn static_world(
    dim: Dimension,
    points: &[Vector3<f64>],
    cameras: &[Vector3<f64>],
) -> Result<World> {
    World::new(
        Scene::from_vectors(dim, points.to_vec())?,
        CameraRig::oriented(dim, cameras.to_vec())?,
    )
}

struct Layout {
    points: Vec<Vector3<f64>>,
    cameras: Vec<Vector3<f64>>,
    perturbed_points: Vec<Vector3<f64>>,
    perturbed_cameras: Vec<Vector3<f64>>,
    deformable: Vec<Element>,
}

fn planar_layout(family: Family, params: &FixtureParams, s: &mut Sampler) -> Result<Layout> {
    let amp = params.amplitude;
    let random_line = |s: &mut Sampler| Line {
        origin: Vector2::new(s.rng.random_range(-0.3..0.3), s.rng.random_range(-0.3..0.3)),
        direction: s.unit(),
    };
    let layout = match family {
        Family::CameraCollinear => {
            let line = random_line(s);
            let mut points = Vec::new();
            for _ in 0..params.generic_points.max(2) {
                points.push(s.generic(&[line], 0.2)?);
            }
            let on_line = s.on_line(&line)?;
            points.push(on_line);
            let cameras = (0..params.generic_cameras.max(3))
                .map(|_| s.on_line(&line))
                .collect::<Result<Vec<_>>>()?;
            let mut moved = cameras.clone();
            moved[0] += line.normal() * amp;
            let last = points.len() - 1;
            Layout {
                perturbed_points: points.iter().map(|&p| lift(p)).collect(),
                points: points.into_iter().map(lift).collect(),
                perturbed_cameras: moved.into_iter().map(lift).collect(),
                deformable: vec![Element::Point(last)],
                cameras: cameras.into_iter().map(lift).collect(),
            }
        }
        Family::PointCollinear => {
            let line = random_line(s);
            let points = (0..params.generic_points.max(3))
                .map(|_| s.on_line(&line))
                .collect::<Result<Vec<_>>>()?;
            let mut cameras = Vec::new();
            for _ in 0..params.generic_cameras.max(2) {
                cameras.push(s.generic(&[line], 0.2)?);
            }
            cameras.push(s.on_line(&line)?);
            let mut moved = cameras.clone();
            let last = moved.len() - 1;
            moved[last] += line.normal() * amp;
            Layout {
                points: points.iter().map(|&p| lift(p)).collect(),
                perturbed_points: points.into_iter().map(lift).collect(),
                cameras: cameras.into_iter().map(lift).collect(),
                perturbed_cameras: moved.into_iter().map(lift).collect(),
                deformable: vec![Element::Camera(last)],
            }
        }
        Family::TwoLineI | Family::TwoLineII => {
            let l1 = random_line(s);
            let l2 = if family == Family::TwoLineI {
                // through a point of L1, at least 30° away from it
                let turn: f64 = s.rng.random_range(PI / 6.0..5.0 * PI / 6.0);
                let (sn, cs) = turn.sin_cos();
                let d = l1.direction;
                Line {
                    origin: l1.at(s.rng.random_range(-0.5..0.5)),
                    direction: Vector2::new(cs * d.x - sn * d.y, sn * d.x + cs * d.y),
                }
            } else {
                let gap: f64 = s.rng.random_range(0.5..1.2);
                Line {
                    origin: l1.origin + l1.normal() * gap,
                    direction: l1.direction,
                }
            };
            let p = vec![s.on_line(&l1)?, s.on_line(&l1)?, s.on_line(&l2)?];
            let q = vec![s.on_line(&l2)?, s.on_line(&l2)?, s.on_line(&l1)?];
            let mut moved = p.clone();
            moved[2] += l2.normal() * amp;
            Layout {
                points: p.into_iter().map(lift).collect(),
                perturbed_points: moved.into_iter().map(lift).collect(),
                perturbed_cameras: q.iter().map(|&c| lift(c)).collect(),
                cameras: q.into_iter().map(lift).collect(),
                deformable: vec![Element::Point(2), Element::Camera(2)],
            }
        }
        Family::TwoCamera => {
            let points = (0..params.generic_points.max(2))
                .map(|_| s.generic(&[], 0.0))
                .collect::<Result<Vec<_>>>()?;
            let cameras = vec![s.generic(&[], 0.0)?, s.generic(&[], 0.0)?];
            let u = (cameras[1] - cameras[0]).normalize();
            let extra = cameras[1] + Vector2::new(-u.y, u.x) * amp;
            let mut moved = cameras.clone();
            moved.push(extra);
            Layout {
                points: points.iter().map(|&p| lift(p)).collect(),
                perturbed_points: points.into_iter().map(lift).collect(),
                cameras: cameras.into_iter().map(lift).collect(),
                perturbed_cameras: moved.into_iter().map(lift).collect(),
                deformable: vec![Element::Camera(1)],
            }
        }
        Family::TwoPoint => {
            let points = vec![s.generic(&[], 0.0)?, s.generic(&[], 0.0)?];
            let cameras = (0..params.generic_cameras.max(3))
                .map(|_| s.generic(&[], 0.0))
                .collect::<Result<Vec<_>>>()?;
            let u = (points[1] - points[0]).normalize();
            let mut moved = points.clone();
            moved.push(points[1] + Vector2::new(-u.y, u.x) * amp);
            Layout {
                points: points.into_iter().map(lift).collect(),
                perturbed_points: moved.into_iter().map(lift).collect(),
                perturbed_cameras: cameras.iter().map(|&c| lift(c)).collect(),
                cameras: cameras.into_iter().map(lift).collect(),
                deformable: (0..params.generic_cameras.max(3))
                    .map(Element::Camera)
                    .collect(),
            }
        }
        Family::HiddenPointDynamic | Family::CoplanarTwoCamera => unreachable!(),
    };
    Ok(layout)
}

fn planar_fixture(family: Family, params: &FixtureParams, rng: ChaCha8Rng) -> Result<Fixture> {
    let mut s = Sampler {
        rng,
        placed: Vec::new(),
        separation: 0.25,
    };
    let layout = planar_layout(family, params, &mut s)?;
    let motion = Motion::planar(&mut s.rng);
    let tf = |v: &[Vector3<f64>]| v.iter().map(|p| motion.point(p)).collect::<Vec<_>>();
    let points = tf(&layout.points);
    let degenerate = static_world(Dimension::Planar, &points, &tf(&layout.cameras))?;
    let perturbed = static_world(
        Dimension::Planar,
        &tf(&layout.perturbed_points),
        &tf(&layout.perturbed_cameras),
    )?;
    let gauge = Gauge::new(0, 1, scale_axis(&points[0], &points[1]));
    Ok(Fixture {
        family,
        degenerate,
        perturbed,
        gauge,
        basis: MotionBasis::STATIC,
        deformable: layout.deformable,
    })
}

/// Linear motion, `n = 4`, `m = 8`. The anchor `P_1` is static and each
/// camera sits on the line through `P_1` and the current `P_2`, beyond
/// `P_1`, so `P_2` hides behind `P_1` in every frame.
///
/// In a linear basis the freedom is a shift of every non-anchor element by
/// `ε·(P_2(t) − P_1)`: the cameras slide along their rays through `P_1`,
/// which keeps the anchor's bearings. It depends only on the cameras lying
/// on those rays, so the perturbed variant moves each camera off its ray
/// (alternating sides) rather than moving `P_2`.
fn hidden_point_fixture(params: &FixtureParams, mut rng: ChaCha8Rng) -> Result<Fixture> {
    const FRAMES: usize = 8;
    let times: Vec<f64> = (0..FRAMES).map(|j| j as f64 * 0.25).collect();
    let v2 = |x: f64, y: f64| Vector3::new(x, y, 0.0);
    let mut sample = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let angle = sample(0.0, 2.0 * PI);
    let radius = sample(0.6, 1.0);
    let p2 = [
        v2(radius * angle.cos(), radius * angle.sin()),
        v2(sample(-0.3, 0.3), sample(-0.3, 0.3)),
    ];
    let mut others = Vec::new();
    for _ in 0..2 {
        others.push([
            v2(sample(-1.0, 1.0), sample(-1.0, 1.0)),
            v2(sample(-0.3, 0.3), sample(-0.3, 0.3)),
        ]);
    }
    let at = |c: &[Vector3<f64>; 2], t: f64| c[0] + c[1] * t;
    let cameras: Vec<Vector3<f64>> = times
        .iter()
        .map(|&t| at(&p2, t) * sample(-2.5, -0.8))
        .collect();
    let moved: Vec<Vector3<f64>> = cameras
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let d = q.normalize();
            let side = if j % 2 == 0 { 1.0 } else { -1.0 };
            q + v2(-d.y, d.x) * (side * params.amplitude)
        })
        .collect();
    let motion = Motion::planar(&mut rng);
    let coeffs: Vec<Vec<Vector3<f64>>> = [
        [Vector3::zeros(), Vector3::zeros()],
        p2,
        others[0],
        others[1],
    ]
    .iter()
    .map(|c| vec![motion.point(&c[0]), motion.vector(&c[1])])
    .collect();
    let build = |cams: &[Vector3<f64>]| -> Result<World> {
        let scene = Scene::moving(Dimension::Planar, MotionBasis::taylor(1), coeffs.clone())?;
        let rig = CameraRig::new(
            Dimension::Planar,
            cams.iter().map(|c| motion.point(c)).collect(),
            None,
            times.clone(),
        )?;
        World::new(scene, rig)
    };
    let degenerate = build(&cameras)?;
    let perturbed = build(&moved)?;
    let a = degenerate.scene.point(0);
    let gauge = Gauge::new(0, 2, scale_axis(&a, &degenerate.scene.point(2)));
    let deformable = (1..4)
        .map(Element::Point)
        .chain((0..FRAMES).map(Element::Camera))
        .collect();
    Ok(Fixture {
        family: Family::HiddenPointDynamic,
        degenerate,
        perturbed,
        gauge,
        basis: MotionBasis::taylor(1),
        deformable,
    })
}

/// Two points and two cameras on a random tilted plane; the perturbed
/// variant lifts the second camera off the plane.
fn coplanar_fixture(params: &FixtureParams, mut rng: ChaCha8Rng) -> Result<Fixture> {
    loop {
        let mut s = Sampler {
            rng: rng.clone(),
            placed: Vec::new(),
            separation: 0.3,
        };
        let flat: Vec<Vector2<f64>> = (0..4).map(|_| s.generic(&[], 0.0)).collect::<Result<_>>()?;
        rng = s.rng;
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        );
        let tilt = rng.random_range(0.3..1.2);
        let rotation = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), tilt);
        let normal = rotation * Vector3::z();
        let world: Vec<Vector3<f64>> = flat.iter().map(|p| rotation * lift(*p)).collect();
        let (points, cameras) = (world[..2].to_vec(), world[2..].to_vec());
        // The horizontal projections must stay distinct and the gauge
        // coordinate usable.
        let projected_ok =
            (0..4).all(|a| ((a + 1)..4).all(|b| (world[a] - world[b]).xy().norm() > 0.1));
        if !projected_ok {
            continue;
        }
        let mut lifted = cameras.clone();
        lifted[1] += normal * params.amplitude;
        let degenerate = static_world(Dimension::Spatial, &points, &cameras)?;
        let perturbed = static_world(Dimension::Spatial, &points, &lifted)?;
        let gauge = Gauge::new(0, 1, scale_axis(&points[0], &points[1]));
        return Ok(Fixture {
            family: Family::CoplanarTwoCamera,
            degenerate,
            perturbed,
            gauge,
            basis: MotionBasis::STATIC,
            deformable: vec![Element::Camera(0), Element::Camera(1)],
        });
    }
}

/// A random member of `family` and its off-variety perturbation.
pub fn make_fixture(family: Family, params: &FixtureParams, seed: u64) -> Result<Fixture> {
    if !(params.amplitude > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "amplitude {}",
            params.amplitude
        )));
    }
    let rng = seeded_rng(seed, &[0xde9, family as u64]);
    match family {
        Family::HiddenPointDynamic => hidden_point_fixture(params, rng),
        Family::CoplanarTwoCamera => coplanar_fixture(params, rng),
        _ => planar_fixture(family, params, rng),
    }
}
