//! Domain types shared by every stage of the pipeline, plus the counting
//! arithmetic that decides whether a problem has enough equations.
//!
//! Indexing is global: points are `i = 0..n` at `(x_i, y_i, z_i)`, cameras are
//! `j = 0..m` at `(a_j, b_j, c_j)`, and observation matrices are `n × m`,
//! row-major by point.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dimension {
    Planar,
    Spatial,
}

impl Dimension {
    pub fn value(self) -> usize {
        match self {
            Dimension::Planar => 2,
            Dimension::Spatial => 3,
        }
    }

    pub fn from_value(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dimension::Planar),
            3 => Ok(Dimension::Spatial),
            other => Err(Error::BadDimension(other)),
        }
    }
}

impl TryFrom<u8> for Dimension {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Dimension::from_value(v as usize)
    }
}

impl From<Dimension> for u8 {
    fn from(d: Dimension) -> u8 {
        d.value() as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn planar() -> [Axis; 2] {
        [Axis::X, Axis::Y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Static,
    Taylor,
    Fourier,
}

/// Expansion of a point trajectory in time.
///
/// Term layout: Taylor term `l` is `t^l`; Fourier term 0 is the constant,
/// term `2l - 1` is `cos(l t)` and term `2l` is `sin(l t)` for `l = 1..=k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionBasis {
    kind: BasisKind,
    order: usize,
}

impl MotionBasis {
    pub const STATIC: MotionBasis = MotionBasis {
        kind: BasisKind::Static,
        order: 0,
    };

    pub fn taylor(order: usize) -> Self {
        MotionBasis {
            kind: BasisKind::Taylor,
            order,
        }
    }

    pub fn fourier(order: usize) -> Self {
        MotionBasis {
            kind: BasisKind::Fourier,
            order,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_static(&self) -> bool {
        self.coefficient_count() == 1
    }

    /// Coefficients per point per coordinate.
    pub fn coefficient_count(&self) -> usize {
        match self.kind {
            BasisKind::Static => 1,
            BasisKind::Taylor => self.order + 1,
            BasisKind::Fourier => 2 * self.order + 1,
        }
    }

    /// Values of every basis function at time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self.kind {
            BasisKind::Static => vec![1.0],
            BasisKind::Taylor => {
                let mut out = Vec::with_capacity(self.order + 1);
                let mut p = 1.0;
                for _ in 0..=self.order {
                    out.push(p);
                    p *= t;
                }
                out
            }
            BasisKind::Fourier => {
                let mut out = Vec::with_capacity(2 * self.order + 1);
                out.push(1.0);
                for l in 1..=self.order {
                    let w = l as f64 * t;
                    out.push(w.cos());
                    out.push(w.sin());
                }
                out
            }
        }
    }
}

impl MotionBasis {
    /// Coefficients `q` with `Σ q_l f_l(s) = Σ p_l f_l(s + offset)`, i.e. the
    /// same trajectory expanded around time `offset`.
    pub fn shift_coefficients(&self, p: &[Vector3<f64>], offset: f64) -> Vec<Vector3<f64>> {
        match self.kind {
            BasisKind::Static => p.to_vec(),
            BasisKind::Taylor => {
                let k = p.len();
                let mut q = vec![Vector3::zeros(); k];
                for (l, ql) in q.iter_mut().enumerate() {
                    let mut binom = 1.0;
                    let mut pow = 1.0;
                    for (j, pj) in p.iter().enumerate().skip(l) {
                        if j > l {
                            binom = binom * j as f64 / (j - l) as f64;
                            pow *= offset;
                        }
                        *ql += pj * (binom * pow);
                    }
                }
                q
            }
            BasisKind::Fourier => {
                let mut q = p.to_vec();
                for l in 1..=self.order {
                    let (s, c) = (l as f64 * offset).sin_cos();
                    let (a, b) = (p[2 * l - 1], p[2 * l]);
                    q[2 * l - 1] = a * c + b * s;
                    q[2 * l] = b * c - a * s;
                }
                q
            }
        }
    }
}

impl Default for MotionBasis {
    fn default() -> Self {
        MotionBasis::STATIC
    }
}

impl fmt::Display for MotionBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BasisKind::Static => write!(f, "static"),
            BasisKind::Taylor => write!(f, "taylor:{}", self.order),
            BasisKind::Fourier => write!(f, "fourier:{}", self.order),
        }
    }
}

impl FromStr for MotionBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "static" {
            return Ok(MotionBasis::STATIC);
        }
        let (kind, order) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("motion basis `{s}`; expected kind:order")))?;
        let order: usize = order
            .parse()
            .map_err(|_| Error::Parse(format!("motion order `{order}`")))?;
        match kind {
            "taylor" => Ok(MotionBasis::taylor(order)),
            "fourier" => Ok(MotionBasis::fourier(order)),
            "static" if order == 0 => Ok(MotionBasis::STATIC),
            _ => Err(Error::Parse(format!("motion basis `{s}`"))),
        }
    }
}

fn to_vector(index: usize, coords: &[f64], dim: Dimension) -> Result<Vector3<f64>> {
    if coords.len() != dim.value() {
        return Err(Error::CoordinateLength {
            index,
            got: coords.len(),
            expected: dim.value(),
        });
    }
    Ok(Vector3::new(
        coords[0],
        coords[1],
        if dim == Dimension::Spatial {
            coords[2]
        } else {
            0.0
        },
    ))
}

pub(crate) fn to_coords(v: &Vector3<f64>, dim: Dimension) -> Vec<f64> {
    v.iter().take(dim.value()).copied().collect()
}

/// Scene points, each a trajectory in a [`MotionBasis`]. Static scenes use
/// the one-term basis and the constant term is the point position.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    dimension: Dimension,
    basis: MotionBasis,
    // coefficients[i][term]
    coefficients: Vec<Vec<Vector3<f64>>>,
}

impl Scene {
    pub fn new(dimension: Dimension, points: &[Vec<f64>]) -> Result<Self> {
        let points = points
            .iter()
            .enumerate()
            .map(|(i, p)| to_vector(i, p, dimension))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vectors(dimension, points)
    }

    pub fn planar(points: &[[f64; 2]]) -> Result<Self> {
        Self::from_vectors(
            Dimension::Planar,
            points
                .iter()
                .map(|p| Vector3::new(p[0], p[1], 0.0))
                .collect(),
        )
    }

    pub fn spatial(points: &[[f64; 3]]) -> Result<Self> {
        Self::from_vectors(
            Dimension::Spatial,
            points
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
        )
    }

    pub fn from_vectors(dimension: Dimension, points: Vec<Vector3<f64>>) -> Result<Self> {
        let coefficients = points
            .into_iter()
            .map(|p| vec![flatten(p, dimension)])
            .collect();
        let scene = Scene {
            dimension,
            basis: MotionBasis::STATIC,
            coefficients,
        };
        scene.check_distinct_static()?;
        Ok(scene)
    }

    /// A moving scene. `coefficients[i]` holds one vector per basis term.
    /// Distinctness is checked per frame when the scene is paired with a rig.
    pub fn moving(
        dimension: Dimension,
        basis: MotionBasis,
        coefficients: Vec<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        for c in &coefficients {
            if c.len() != basis.coefficient_count() {
                return Err(Error::LengthMismatch {
                    what: "basis coefficients",
                    expected: basis.coefficient_count(),
                    got: c.len(),
                });
            }
        }
        let coefficients = coefficients
            .into_iter()
            .map(|c| c.into_iter().map(|v| flatten(v, dimension)).collect())
            .collect();
        let scene = Scene {
            dimension,
            basis,
            coefficients,
        };
        if basis.is_static() {
            scene.check_distinct_static()?;
        }
        Ok(scene)
    }

    fn check_distinct_static(&self) -> Result<()> {
        for i in 0..self.len() {
            for k in (i + 1)..self.len() {
                if self.coefficients[i][0] == self.coefficients[k][0] {
                    return Err(Error::DuplicatePoint(i, k));
                }
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn basis(&self) -> MotionBasis {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Constant term of point `i`; the position itself for a static scene.
    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.coefficients[i][0]
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        self.coefficients.iter().map(|c| c[0]).collect()
    }

    pub fn coefficients(&self, i: usize) -> &[Vector3<f64>] {
        &self.coefficients[i]
    }

    pub fn position_at(&self, i: usize, t: f64) -> Vector3<f64> {
        if self.basis.is_static() {
            return self.coefficients[i][0];
        }
        self.basis
            .eval(t)
            .iter()
            .zip(&self.coefficients[i])
            .map(|(f, c)| c * *f)
            .sum()
    }
}

fn flatten(mut v: Vector3<f64>, dim: Dimension) -> Vector3<f64> {
    if dim == Dimension::Planar {
        v.z = 0.0;
    }
    v
}

/// Camera stations along the path, with optional per-frame headings for
/// non-oriented cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    dimension: Dimension,
    positions: Vec<Vector3<f64>>,
    headings: Option<Vec<f64>>,
    times: Vec<f64>,
}

impl CameraRig {
    /// Oriented rig with frames at `t = 0, 1, 2, …`.
    pub fn oriented(dimension: Dimension, positions: Vec<Vector3<f64>>) -> Result<Self> {
        let times = (0..positions.len()).map(|j| j as f64).collect();
        Self::new(dimension, positions, None, times)
    }

    pub fn new(
        dimension: Dimension,
        positions: Vec<Vector3<f64>>,
        headings: Option<Vec<f64>>,
        times: Vec<f64>,
    ) -> Result<Self> {
        let m = positions.len();
        if times.len() != m {
            return Err(Error::LengthMismatch {
                what: "timestamps",
                expected: m,
                got: times.len(),
            });
        }
        if let Some(h) = &headings {
            if h.len() != m {
                return Err(Error::HeadingsMismatch);
            }
        }
        for j in 1..m {
            if !(times[j] > times[j - 1]) {
                return Err(Error::NonIncreasingTimes(j));
            }
        }
        let positions: Vec<_> = positions
            .into_iter()
            .map(|p| flatten(p, dimension))
            .collect();
        for j in 0..m {
            for k in (j + 1)..m {
                if positions[j] == positions[k] {
                    return Err(Error::DuplicateCamera(j, k));
                }
            }
        }
        Ok(CameraRig {
            dimension,
            positions,
            headings,
            times,
        })
    }

    pub fn planar(positions: &[[f64; 2]]) -> Result<Self> {
        Self::oriented(
            Dimension::Planar,
            positions
                .iter()
                .map(|p| Vector3::new(p[0], p[1], 0.0))
                .collect(),
        )
    }

    pub fn spatial(positions: &[[f64; 3]]) -> Result<Self> {
        Self::oriented(
            Dimension::Spatial,
            positions
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
        )
    }

    pub fn with_times(self, times: Vec<f64>) -> Result<Self> {
        Self::new(self.dimension, self.positions, self.headings, times)
    }

    pub fn with_headings(self, headings: Vec<f64>) -> Result<Self> {
        Self::new(self.dimension, self.positions, Some(headings), self.times)
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, j: usize) -> Vector3<f64> {
        self.positions[j]
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn is_oriented(&self) -> bool {
        self.headings.is_none()
    }

    pub fn headings(&self) -> Option<&[f64]> {
        self.headings.as_deref()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// A scene paired with the rig that films it; the unit read from and
/// written to scene files.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scene: Scene,
    pub rig: CameraRig,
}

impl World {
    pub fn new(scene: Scene, rig: CameraRig) -> Result<Self> {
        if scene.dimension() != rig.dimension() {
            return Err(Error::DimensionMismatch {
                scene: scene.dimension().value(),
                rig: rig.dimension().value(),
            });
        }
        let moving = !scene.basis().is_static();
        for (j, &t) in rig.times().iter().enumerate() {
            let positions: Vec<_> = (0..scene.len()).map(|i| scene.position_at(i, t)).collect();
            for (i, p) in positions.iter().enumerate() {
                if *p == rig.position(j) {
                    return Err(Error::CameraOnPoint {
                        camera: j,
                        point: i,
                    });
                }
                if moving {
                    for (k, q) in positions.iter().enumerate().skip(i + 1) {
                        if p == q {
                            return Err(Error::DuplicatePoint(i, k));
                        }
                    }
                }
            }
        }
        Ok(World { scene, rig })
    }

    pub fn dimension(&self) -> Dimension {
        self.scene.dimension()
    }

    pub fn n(&self) -> usize {
        self.scene.len()
    }

    pub fn m(&self) -> usize {
        self.rig.len()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text)?;
        file.into_world()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WorldFile::from_world(self))?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldFile {
    dimension: Dimension,
    points: Vec<Vec<f64>>,
    cameras: RigFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion: Option<MotionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RigFile {
    positions: Vec<Vec<f64>>,
    oriented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orientations: Option<Vec<f64>>,
    #[serde(default)]
    times: Vec<f64>,
}

/// Higher-order trajectory terms; `terms[i]` lists terms `1..count` of point
/// `i`, whose constant term is `points[i]`.
#[derive(Debug, Serialize, Deserialize)]
struct MotionFile {
    basis: String,
    terms: Vec<Vec<Vec<f64>>>,
}

impl WorldFile {
    fn into_world(self) -> Result<World> {
        let dim = self.dimension;
        let constants = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| to_vector(i, p, dim))
            .collect::<Result<Vec<_>>>()?;
        let scene = match self.motion {
            None => Scene::from_vectors(dim, constants)?,
            Some(motion) => {
                let basis: MotionBasis = motion.basis.parse()?;
                if motion.terms.len() != constants.len() {
                    return Err(Error::LengthMismatch {
                        what: "motion term lists",
                        expected: constants.len(),
                        got: motion.terms.len(),
                    });
                }
                let mut coefficients = Vec::with_capacity(constants.len());
                for (i, (c, terms)) in constants.into_iter().zip(motion.terms).enumerate() {
                    let mut all = vec![c];
                    for t in terms {
                        all.push(to_vector(i, &t, dim)?);
                    }
                    coefficients.push(all);
                }
                Scene::moving(dim, basis, coefficients)?
            }
        };
        let positions = self
            .cameras
            .positions
            .iter()
            .enumerate()
            .map(|(j, p)| to_vector(j, p, dim))
            .collect::<Result<Vec<_>>>()?;
        let times = if self.cameras.times.is_empty() {
            (0..positions.len()).map(|j| j as f64).collect()
        } else {
            self.cameras.times
        };
        let headings = match (self.cameras.oriented, self.cameras.orientations) {
            (true, None) => None,
            (false, Some(h)) => Some(h),
            _ => return Err(Error::HeadingsMismatch),
        };
        let rig = CameraRig::new(dim, positions, headings, times)?;
        World::new(scene, rig)
    }

    fn from_world(world: &World) -> Self {
        let dim = world.dimension();
        let scene = &world.scene;
        let motion = (!scene.basis().is_static()).then(|| MotionFile {
            basis: scene.basis().to_string(),
            terms: (0..scene.len())
                .map(|i| {
                    scene.coefficients(i)[1..]
                        .iter()
                        .map(|v| to_coords(v, dim))
                        .collect()
                })
                .collect(),
        });
        WorldFile {
            dimension: dim,
            points: scene.points().iter().map(|p| to_coords(p, dim)).collect(),
            cameras: RigFile {
                positions: world
                    .rig
                    .positions()
                    .iter()
                    .map(|p| to_coords(p, dim))
                    .collect(),
                oriented: world.rig.is_oriented(),
                orientations: world.rig.headings().map(|h| h.to_vec()),
                times: world.rig.times().to_vec(),
            },
            motion,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationFile {
    n: usize,
    m: usize,
    times: Vec<f64>,
    oriented: bool,
    bearings: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elevations: Option<Vec<Vec<Option<f64>>>>,
}

/// Angles observed from every camera to every point, with a visibility mask.
/// Hidden entries carry no angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n: usize,
    m: usize,
    bearings: Vec<Option<f64>>,
    elevations: Option<Vec<Option<f64>>>,
    times: Vec<f64>,
    oriented: bool,
}

impl ObservationSet {
    pub fn new(
        n: usize,
        m: usize,
        bearings: Vec<Option<f64>>,
        elevations: Option<Vec<Option<f64>>>,
        times: Vec<f64>,
        oriented: bool,
    ) -> Result<Self> {
        if bearings.len() != n * m {
            return Err(Error::LengthMismatch {
                what: "bearing entries",
                expected: n * m,
                got: bearings.len(),
            });
        }
        if times.len() != m {
            return Err(Error::LengthMismatch {
                what: "timestamps",
                expected: m,
                got: times.len(),
            });
        }
        if let Some(el) = &elevations {
            if el.len() != n * m {
                return Err(Error::LengthMismatch {
                    what: "elevation entries",
                    expected: n * m,
                    got: el.len(),
                });
            }
            if el
                .iter()
                .zip(&bearings)
                .any(|(e, b)| e.is_some() != b.is_some())
            {
                return Err(Error::Parse(
                    "elevation and bearing visibility disagree".into(),
                ));
            }
        }
        Ok(ObservationSet {
            n,
            m,
            bearings,
            elevations,
            times,
            oriented,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dimension(&self) -> Dimension {
        if self.elevations.is_some() {
            Dimension::Spatial
        } else {
            Dimension::Planar
        }
    }

    pub fn is_oriented(&self) -> bool {
        self.oriented
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn has_elevations(&self) -> bool {
        self.elevations.is_some()
    }

    pub fn bearing(&self, i: usize, j: usize) -> Option<f64> {
        self.bearings[i * self.m + j]
    }

    pub fn elevation(&self, i: usize, j: usize) -> Option<f64> {
        self.elevations.as_ref().and_then(|e| e[i * self.m + j])
    }

    pub fn is_visible(&self, i: usize, j: usize) -> bool {
        self.bearings[i * self.m + j].is_some()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.bearings.iter().map(Option::is_some).collect()
    }

    pub fn visible_count(&self) -> usize {
        self.bearings.iter().filter(|b| b.is_some()).count()
    }

    /// Visible `(i, j)` pairs in row-major order.
    pub fn visible_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n)
            .flat_map(move |i| (0..self.m).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.is_visible(i, j))
    }

    pub(crate) fn raw_bearings(&self) -> &[Option<f64>] {
        &self.bearings
    }

    pub(crate) fn raw_elevations(&self) -> Option<&[Option<f64>]> {
        self.elevations.as_deref()
    }

    /// Same mask and times with new angle values.
    pub fn with_angles(
        &self,
        bearings: Vec<Option<f64>>,
        elevations: Option<Vec<Option<f64>>>,
        oriented: bool,
    ) -> Result<Self> {
        Self::new(
            self.n,
            self.m,
            bearings,
            elevations,
            self.times.clone(),
            oriented,
        )
    }

    /// Copy with entries outside `mask` dropped.
    pub fn restricted(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.n * self.m {
            return Err(Error::LengthMismatch {
                what: "mask entries",
                expected: self.n * self.m,
                got: mask.len(),
            });
        }
        let keep = |v: &[Option<f64>]| -> Vec<Option<f64>> {
            v.iter()
                .zip(mask)
                .map(|(a, &k)| if k { *a } else { None })
                .collect()
        };
        let elevations = self.elevations.as_deref().map(keep);
        self.with_angles(keep(&self.bearings), elevations, self.oriented)
    }

    /// JSON form: `n × m` angle matrices with `null` for hidden pairs.
    pub fn to_json(&self) -> Result<String> {
        let rows = |v: &[Option<f64>]| v.chunks(self.m.max(1)).map(<[_]>::to_vec).collect();
        let file = ObservationFile {
            n: self.n,
            m: self.m,
            times: self.times.clone(),
            oriented: self.oriented,
            bearings: rows(&self.bearings),
            elevations: self.elevations.as_deref().map(rows),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ObservationFile = serde_json::from_str(text)?;
        let flat = |rows: Vec<Vec<Option<f64>>>| -> Result<Vec<Option<f64>>> {
            if rows.len() != file.n || rows.iter().any(|r| r.len() != file.m) {
                return Err(Error::Parse(format!(
                    "angle matrix is not {} × {}",
                    file.n, file.m
                )));
            }
            Ok(rows.into_iter().flatten().collect())
        };
        let bearings = flat(file.bearings)?;
        let elevations = file.elevations.map(flat).transpose()?;
        Self::new(
            file.n,
            file.m,
            bearings,
            elevations,
            file.times,
            file.oriented,
        )
    }

    /// Writes the `i,j,theta,phi,visible` table.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "theta", "phi", "visible"])?;
        for i in 0..self.n {
            for j in 0..self.m {
                let theta = self.bearing(i, j).map(fmt_angle).unwrap_or_default();
                let phi = self.elevation(i, j).map(fmt_angle).unwrap_or_default();
                let visible = if self.is_visible(i, j) { "1" } else { "0" };
                w.write_record([i.to_string(), j.to_string(), theta, phi, visible.into()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the table written by [`write_csv`](Self::write_csv). Sizes are
    /// inferred from the largest indices; `times` defaults to `0..m`.
    pub fn read_csv<R: std::io::Read>(
        reader: R,
        times: Option<Vec<f64>>,
        oriented: bool,
    ) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["i", "j", "theta", "phi", "visible"] {
            return Err(Error::Parse(format!("observation header {headers:?}")));
        }
        let mut rows = Vec::new();
        let (mut n, mut m) = (0, 0);
        let mut spatial = false;
        for rec in r.records() {
            let rec = rec?;
            let i: usize = parse_field(&rec[0])?;
            let j: usize = parse_field(&rec[1])?;
            let visible = matches!(rec[4].trim(), "1" | "true");
            let theta = opt_field(&rec[2])?;
            let phi = opt_field(&rec[3])?;
            spatial |= phi.is_some();
            n = n.max(i + 1);
            m = m.max(j + 1);
            rows.push((i, j, visible, theta, phi));
        }
        let mut bearings = vec![None; n * m];
        let mut elevations = vec![None; n * m];
        for (i, j, visible, theta, phi) in rows {
            if visible {
                bearings[i * m + j] =
                    Some(theta.ok_or_else(|| Error::Parse(format!("row ({i},{j}) lacks theta")))?);
                if spatial {
                    elevations[i * m + j] =
                        Some(phi.ok_or_else(|| Error::Parse(format!("row ({i},{j}) lacks phi")))?);
                }
            }
        }
        let times = times.unwrap_or_else(|| (0..m).map(|j| j as f64).collect());
        Self::new(
            n,
            m,
            bearings,
            spatial.then_some(elevations),
            times,
            oriented,
        )
    }
}

fn fmt_angle(a: f64) -> String {
    format!("{a:.17e}")
}

fn parse_field<T: FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("field `{s}`")))
}

fn opt_field(s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(s).map(Some)
    }
}

/// Dimension counts of a camera model: spatial dimension `d`, internal
/// parameters `f`, symmetry-group dimension `g` and global parameters `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraClass {
    pub d: i64,
    pub f: i64,
    pub g: i64,
    pub h: i64,
}

impl CameraClass {
    pub const ORIENTED_PLANAR: CameraClass = CameraClass {
        d: 2,
        f: 2,
        g: 3,
        h: 0,
    };
    pub const ORIENTED_SPATIAL: CameraClass = CameraClass {
        d: 3,
        f: 3,
        g: 4,
        h: 0,
    };
    /// Planar cameras with an unknown turn angle each: `2n + 2m − 3 + m`
    /// unknowns after the similarity gauge.
    pub const TURNING_PLANAR: CameraClass = CameraClass {
        d: 2,
        f: 3,
        g: 3,
        h: 0,
    };

    pub fn oriented(dim: Dimension) -> Self {
        match dim {
            Dimension::Planar => Self::ORIENTED_PLANAR,
            Dimension::Spatial => Self::ORIENTED_SPATIAL,
        }
    }
}

/// `(d−1)·n·m + g − (d·n·c + f·m + h)` where `c` is the basis coefficient
/// count. Non-negative means at least as many equations as unknowns.
pub fn feasibility_margin(n: usize, m: usize, class: CameraClass, basis: MotionBasis) -> i64 {
    let (n, m) = (n as i64, m as i64);
    let c = basis.coefficient_count() as i64;
    (class.d - 1) * n * m + class.g - (class.d * n * c + class.f * m + class.h)
}

/// Average fraction of frames in which each point must be visible for the
/// planar system to have enough equations: `2(n+m)/(nm+3)`.
pub fn required_visibility_fraction(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    2.0 * (n + m) / (n * m + 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Equations minus gauge-reduced unknowns for the oriented planar static
    /// problem, counted entity by entity.
    fn counted_margin(n: usize, m: usize) -> i64 {
        let equations = n * m;
        let mut unknowns = 0i64;
        for _ in 0..n {
            unknowns += 2;
        }
        for _ in 0..m {
            unknowns += 2;
        }
        // translation (2) and scale (1)
        equations as i64 - (unknowns - 3)
    }

    #[test]
    fn margin_matches_counting() {
        let cls = CameraClass::ORIENTED_PLANAR;
        assert_eq!(feasibility_margin(3, 3, cls, MotionBasis::STATIC), 0);
        assert_eq!(feasibility_margin(2, 3, cls, MotionBasis::STATIC), -1);
        assert_eq!(
            feasibility_margin(1, 1, cls, MotionBasis::STATIC),
            counted_margin(1, 1)
        );
        assert_eq!(feasibility_margin(1, 1, cls, MotionBasis::STATIC), 0);
        for n in 1..30 {
            for m in 1..30 {
                assert_eq!(
                    feasibility_margin(n, m, cls, MotionBasis::STATIC),
                    counted_margin(n, m)
                );
            }
        }
    }

    #[test]
    fn margin_positive_outside_borderline() {
        let cls = CameraClass::ORIENTED_PLANAR;
        for n in 3..40 {
            for m in 3..40 {
                let margin = feasibility_margin(n, m, cls, MotionBasis::STATIC);
                if n + m > 6 {
                    assert!(margin > 0, "n={n} m={m}");
                }
            }
        }
        // spatial borderline is (2, 2)
        assert_eq!(
            feasibility_margin(2, 2, CameraClass::ORIENTED_SPATIAL, MotionBasis::STATIC),
            0
        );
    }

    #[test]
    fn dynamic_margin_counts() {
        let cls = CameraClass::ORIENTED_PLANAR;
        // nm ≥ 2n·2 + 2m − 3
        let (n, m) = (4, 8);
        assert_eq!(
            feasibility_margin(n, m, cls, MotionBasis::taylor(1)),
            (n * m) as i64 - (4 * n + 2 * m) as i64 + 3
        );
        // fourier counts the constant term too
        assert_eq!(MotionBasis::fourier(2).coefficient_count(), 5);
        assert_eq!(
            feasibility_margin(n, m, cls, MotionBasis::fourier(1)),
            (n * m) as i64 - (2 * n * 3 + 2 * m) as i64 + 3
        );
    }

    #[test]
    fn visibility_fraction_values() {
        assert!((required_visibility_fraction(10, 10) - 40.0 / 103.0).abs() < 1e-15);
        assert!((required_visibility_fraction(1000, 100) - 2200.0 / 100003.0).abs() < 1e-15);
        assert_eq!(required_visibility_fraction(1, 1), 1.0);
    }

    #[test]
    fn visibility_fraction_decreasing() {
        for n in 2..60 {
            for m in 2..60 {
                let r = required_visibility_fraction(n, m);
                assert!(required_visibility_fraction(n + 1, m) < r);
                assert!(required_visibility_fraction(n, m + 1) < r);
            }
        }
        assert!(required_visibility_fraction(100_000, 100_000) < 1e-4);
    }

    #[test]
    fn basis_eval_and_parse() {
        assert_eq!(MotionBasis::taylor(2).eval(3.0), vec![1.0, 3.0, 9.0]);
        let f = MotionBasis::fourier(1).eval(0.0);
        assert_eq!(f, vec![1.0, 1.0, 0.0]);
        assert_eq!(
            "taylor:3".parse::<MotionBasis>().unwrap(),
            MotionBasis::taylor(3)
        );
        assert_eq!(
            "fourier:1".parse::<MotionBasis>().unwrap(),
            MotionBasis::fourier(1)
        );
        assert_eq!(
            "static".parse::<MotionBasis>().unwrap(),
            MotionBasis::STATIC
        );
        assert!("spline:2".parse::<MotionBasis>().is_err());
        assert_eq!(MotionBasis::taylor(0).coefficient_count(), 1);
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.1 - 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(matches!(
            Scene::planar(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]),
            Err(Error::DuplicatePoint(0, 2))
        ));
        assert!(matches!(
            CameraRig::planar(&[[0.0, 1.0], [0.0, 1.0]]),
            Err(Error::DuplicateCamera(0, 1))
        ));
        let scene = Scene::planar(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let rig = CameraRig::planar(&[[1.0, 0.0], [2.0, 2.0]]).unwrap();
        assert!(matches!(
            World::new(scene, rig),
            Err(Error::CameraOnPoint {
                camera: 0,
                point: 1
            })
        ));
    }

    #[test]
    fn rig_invariants() {
        let pos = vec![Vector3::new(0.0, 1.0, 0.0), Vector3::new(1.0, 1.0, 0.0)];
        assert!(matches!(
            CameraRig::new(Dimension::Planar, pos.clone(), None, vec![1.0, 1.0]),
            Err(Error::NonIncreasingTimes(1))
        ));
        assert!(matches!(
            CameraRig::new(Dimension::Planar, pos, Some(vec![0.0]), vec![0.0, 1.0]),
            Err(Error::HeadingsMismatch)
        ));
    }

    #[test]
    fn scene_file_round_trip() {
        let text = r#"{"dimension": 2, "points": [[0,0],[1,0],[0,1]],
            "cameras": {"positions": [[2,2],[-1,2],[2,-1]], "oriented": false,
                        "orientations": [0.1, 0.2, 0.3], "times": [0, 0.5, 1]}}"#;
        let world = World::from_json(text).unwrap();
        assert_eq!(world.n(), 3);
        assert_eq!(world.rig.headings(), Some(&[0.1, 0.2, 0.3][..]));
        let again = World::from_json(&world.to_json().unwrap()).unwrap();
        assert_eq!(world, again);

        let bad = r#"{"dimension": 4, "points": [], "cameras": {"positions": [], "oriented": true, "times": []}}"#;
        assert!(World::from_json(bad).is_err());
        let mismatch = r#"{"dimension": 3, "points": [[0,0]], "cameras": {"positions": [], "oriented": true, "times": []}}"#;
        assert!(matches!(
            World::from_json(mismatch),
            Err(Error::CoordinateLength { .. })
        ));
    }

    #[test]
    fn moving_scene_file_round_trip() {
        let text = r#"{"dimension": 2, "points": [[0,0],[1,0]],
            "cameras": {"positions": [[2,2],[-1,2]], "oriented": true, "times": [0, 1]},
            "motion": {"basis": "taylor:1", "terms": [[[0,0]], [[0.5,0.25]]]}}"#;
        let world = World::from_json(text).unwrap();
        assert_eq!(world.scene.position_at(1, 2.0), Vector3::new(2.0, 0.5, 0.0));
        let again = World::from_json(&world.to_json().unwrap()).unwrap();
        assert_eq!(world, again);
    }
}
