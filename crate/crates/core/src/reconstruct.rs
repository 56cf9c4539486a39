//! Static reconstruction: the planar solve, the two-stage spatial solve, and
//! registration of a result against a known world.

use std::collections::HashMap;

use nalgebra::{DVector, Vector3};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{to_coords, Axis, Dimension, ObservationSet, World};
use crate::solver::{
    assemble_heights, assemble_planar, assemble_spatial, kernel_witness, solve, Gauge, GaugeRecord,
    LinearSystem, SolveDiagnostics, Unknown, Verdict,
};

/// Recovered coordinates of every point and camera. Points of a moving
/// scene are given by their constant trajectory term.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub dimension: Dimension,
    pub points: Vec<Vector3<f64>>,
    pub cameras: Vec<Vector3<f64>>,
}

impl Configuration {
    /// Points followed by cameras.
    pub fn entities(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().chain(&self.cameras)
    }

    pub(crate) fn from_values(
        values: &HashMap<Unknown, f64>,
        dimension: Dimension,
        n: usize,
        m: usize,
    ) -> Self {
        let get = |u: Unknown| values.get(&u).copied().unwrap_or(0.0);
        let point = |i| {
            Vector3::new(
                get(Unknown::Point {
                    index: i,
                    axis: Axis::X,
                    term: 0,
                }),
                get(Unknown::Point {
                    index: i,
                    axis: Axis::Y,
                    term: 0,
                }),
                get(Unknown::Point {
                    index: i,
                    axis: Axis::Z,
                    term: 0,
                }),
            )
        };
        let camera = |j| {
            Vector3::new(
                get(Unknown::Camera {
                    index: j,
                    axis: Axis::X,
                }),
                get(Unknown::Camera {
                    index: j,
                    axis: Axis::Y,
                }),
                get(Unknown::Camera {
                    index: j,
                    axis: Axis::Z,
                }),
            )
        };
        Configuration {
            dimension,
            points: (0..n).map(point).collect(),
            cameras: (0..m).map(camera).collect(),
        }
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dimension;
        let mut st = s.serialize_struct("Configuration", 2)?;
        let pts: Vec<_> = self.points.iter().map(|p| to_coords(p, d)).collect();
        let cams: Vec<_> = self.cameras.iter().map(|p| to_coords(p, d)).collect();
        st.serialize_field("points", &pts)?;
        st.serialize_field("cameras", &cams)?;
        st.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Planar,
    /// Planar solve for `x, y`, then a height solve for `z`.
    TwoStage,
    /// Single spatial system, used when the horizontal projection is
    /// ambiguous on its own.
    Joint,
}

/// Per-point trajectories recovered by a dynamic reconstruction.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectories {
    pub basis: String,
    /// `coefficients[i][term]` as coordinate lists.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// `positions[i][j]`: point `i` evaluated at observation time `t_j`.
    pub positions: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub configuration: Configuration,
    pub method: Method,
    pub verdict: Verdict,
    pub gauge: Gauge,
    pub gauge_record: GaugeRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planar: Option<SolveDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heights: Option<SolveDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SolveDiagnostics>,
    pub warnings: Vec<String>,
    /// Per-entity distances to the gauge-fixed ground truth, points first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Trajectories>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub headings: Option<Vec<f64>>,
    #[serde(skip)]
    pub(crate) primary_columns: Vec<Unknown>,
}

impl ReconstructionReport {
    /// Diagnostics of the stage that decides the horizontal layout: the
    /// joint solve when it ran, the planar solve otherwise.
    pub fn primary(&self) -> &SolveDiagnostics {
        self.spatial
            .as_ref()
            .or(self.planar.as_ref())
            .expect("every report carries a primary stage")
    }

    /// Residual norm of the stages that produced the configuration.
    pub fn residual(&self) -> f64 {
        let stages: &[&Option<SolveDiagnostics>] = match self.method {
            Method::Joint => &[&self.spatial],
            _ => &[&self.planar, &self.heights],
        };
        stages
            .iter()
            .filter_map(|d| d.as_ref())
            .map(|d| d.residual * d.residual)
            .sum::<f64>()
            .sqrt()
    }

    /// Fills `errors` with distances to `truth` under the report's gauge.
    pub fn with_ground_truth(mut self, truth: &World) -> Result<Self> {
        self.errors = Some(register_to_ground_truth(&self, truth)?);
        Ok(self)
    }

    /// Moves the primary solution `step` along its first kernel direction.
    /// Only the layout of the primary stage changes; heights are kept.
    pub fn kernel_witness(&self, step: f64) -> Result<Configuration> {
        let diag = self.primary();
        let moved = kernel_witness(diag, step)?;
        let mut values: HashMap<Unknown, f64> = self.gauge_record.fixed.iter().copied().collect();
        values.extend(self.primary_columns.iter().copied().zip(moved));
        let mut moved_cfg = Configuration::from_values(
            &values,
            self.configuration.dimension,
            self.configuration.points.len(),
            self.configuration.cameras.len(),
        );
        if self.spatial.is_none() {
            for (dst, src) in moved_cfg
                .points
                .iter_mut()
                .chain(moved_cfg.cameras.iter_mut())
                .zip(self.configuration.entities())
            {
                dst.z = src.z;
            }
        }
        Ok(moved_cfg)
    }
}

fn ray_direction(obs: &ObservationSet, i: usize, j: usize, spatial: bool) -> Vector3<f64> {
    let (st, ct) = obs.bearing(i, j).expect("visible").sin_cos();
    if spatial {
        let (sp, cp) = obs.elevation(i, j).expect("visible").sin_cos();
        Vector3::new(cp * ct, cp * st, sp)
    } else {
        Vector3::new(ct, st, 0.0)
    }
}

/// Counts visible rays whose reconstructed displacement points against the
/// observed direction. `position(i, j)` is point `i` at frame `j`.
pub(crate) fn flipped_rays(
    obs: &ObservationSet,
    position: impl Fn(usize, usize) -> Vector3<f64>,
    cameras: &[Vector3<f64>],
    spatial: bool,
) -> usize {
    obs.visible_pairs()
        .filter(|&(i, j)| {
            let mut d = position(i, j) - cameras[j];
            if !spatial {
                d.z = 0.0;
            }
            d.dot(&ray_direction(obs, i, j, spatial)) <= 0.0
        })
        .count()
}

pub(crate) fn mark_rays(diag: &mut SolveDiagnostics, flipped: usize) {
    diag.flipped_rays = Some(flipped);
    diag.reflection = Some(flipped > 0);
}

pub(crate) fn count_warning(sys: &LinearSystem, what: &str) -> Option<String> {
    (sys.rows() < sys.cols()).then(|| {
        format!(
            "{what}: {} equations for {} unknowns; the system is underdetermined",
            sys.rows(),
            sys.cols()
        )
    })
}

struct PlanarStage {
    system: LinearSystem,
    diag: SolveDiagnostics,
    config: Configuration,
}

fn planar_stage(obs: &ObservationSet, gauge: &Gauge, rank_tolerance: f64) -> Result<PlanarStage> {
    let system = assemble_planar(obs, gauge)?;
    let mut diag = solve(&system, rank_tolerance);
    let config = Configuration::from_values(
        &system.unpack(&diag.solution),
        obs.dimension(),
        obs.n(),
        obs.m(),
    );
    let flipped = flipped_rays(obs, |i, _| config.points[i], &config.cameras, false);
    mark_rays(&mut diag, flipped);
    Ok(PlanarStage {
        system,
        diag,
        config,
    })
}

/// Planar reconstruction from bearings.
pub fn reconstruct_2d(
    obs: &ObservationSet,
    gauge: &Gauge,
    rank_tolerance: f64,
) -> Result<ReconstructionReport> {
    let stage = planar_stage(obs, gauge, rank_tolerance)?;
    let warnings = count_warning(&stage.system, "planar stage")
        .into_iter()
        .collect();
    let mut config = stage.config;
    config.dimension = Dimension::Planar;
    Ok(ReconstructionReport {
        configuration: config,
        method: Method::Planar,
        verdict: stage.diag.verdict,
        gauge: gauge.clone(),
        gauge_record: stage.system.gauge().clone(),
        planar: Some(stage.diag),
        heights: None,
        spatial: None,
        warnings,
        errors: None,
        coefficients: None,
        headings: None,
        primary_columns: stage.system.columns().to_vec(),
    })
}

/// Spatial reconstruction: planar layout from bearings, then heights from
/// elevations with the anchor at height zero. When the horizontal layout
/// is ambiguous on its own the joint spatial system is solved instead.
pub fn reconstruct_3d(
    obs: &ObservationSet,
    gauge: &Gauge,
    rank_tolerance: f64,
) -> Result<ReconstructionReport> {
    if !obs.has_elevations() {
        return Err(Error::MissingElevations);
    }
    let stage = planar_stage(obs, gauge, rank_tolerance)?;
    let mut warnings: Vec<String> = count_warning(&stage.system, "planar stage")
        .into_iter()
        .collect();

    if stage.diag.verdict == Verdict::Unique {
        let heights_sys =
            assemble_heights(obs, &stage.config.points, &stage.config.cameras, gauge)?;
        let heights = solve(&heights_sys, rank_tolerance);
        let mut values = stage.system.unpack(&stage.diag.solution);
        values.extend(heights_sys.unpack(&heights.solution));
        let config = Configuration::from_values(&values, Dimension::Spatial, obs.n(), obs.m());
        let mut record = stage.system.gauge().clone();
        record
            .fixed
            .extend(heights_sys.gauge().fixed.iter().copied());
        warnings.extend(count_warning(&heights_sys, "height stage"));
        return Ok(ReconstructionReport {
            configuration: config,
            method: Method::TwoStage,
            verdict: stage.diag.verdict.and(heights.verdict),
            gauge: gauge.clone(),
            gauge_record: record,
            planar: Some(stage.diag),
            heights: Some(heights),
            spatial: None,
            warnings,
            errors: None,
            coefficients: None,
            headings: None,
            primary_columns: stage.system.columns().to_vec(),
        });
    }

    warnings.push(format!(
        "planar stage is {:?} (kernel dimension {}); height stage skipped, solving the joint spatial system",
        stage.diag.verdict,
        stage.diag.kernel_dimension()
    ));
    let joint_sys = assemble_spatial(obs, gauge)?;
    let mut joint = solve(&joint_sys, rank_tolerance);
    let config = Configuration::from_values(
        &joint_sys.unpack(&joint.solution),
        Dimension::Spatial,
        obs.n(),
        obs.m(),
    );
    let flipped = flipped_rays(obs, |i, _| config.points[i], &config.cameras, true);
    mark_rays(&mut joint, flipped);
    warnings.extend(count_warning(&joint_sys, "joint stage"));
    Ok(ReconstructionReport {
        configuration: config,
        method: Method::Joint,
        verdict: joint.verdict,
        gauge: gauge.clone(),
        gauge_record: joint_sys.gauge().clone(),
        planar: Some(stage.diag),
        heights: None,
        spatial: Some(joint),
        warnings,
        errors: None,
        coefficients: None,
        headings: None,
        primary_columns: joint_sys.columns().to_vec(),
    })
}

/// Dispatches on the observation dimension.
pub fn reconstruct(
    obs: &ObservationSet,
    gauge: &Gauge,
    rank_tolerance: f64,
) -> Result<ReconstructionReport> {
    if obs.has_elevations() {
        reconstruct_3d(obs, gauge, rank_tolerance)
    } else {
        reconstruct_2d(obs, gauge, rank_tolerance)
    }
}

/// Similarity that maps a world into the gauge frame: subtract the anchor,
/// then scale so the pinned coordinate takes its pinned value.
#[derive(Debug, Clone, Copy)]
pub struct GaugeTransform {
    pub origin: Vector3<f64>,
    pub scale: f64,
}

impl GaugeTransform {
    pub fn for_world(truth: &World, gauge: &Gauge) -> Result<Self> {
        let n = truth.n();
        if gauge.anchor >= n || gauge.scale_point >= n {
            return Err(Error::BadGauge(format!("gauge indices with {n} points")));
        }
        let origin = truth.scene.point(gauge.anchor);
        let span = (truth.scene.point(gauge.scale_point) - origin)[gauge.scale_axis.index()];
        if span == 0.0 {
            return Err(Error::BadGauge(
                "scale coordinate of the truth coincides with the anchor".into(),
            ));
        }
        Ok(GaugeTransform {
            origin,
            scale: gauge.scale_value / span,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.origin) * self.scale
    }
}

/// Truth mapped into the reconstruction's gauge frame.
pub fn gauge_fixed_truth(truth: &World, gauge: &Gauge) -> Result<Configuration> {
    let tf = GaugeTransform::for_world(truth, gauge)?;
    Ok(Configuration {
        dimension: truth.dimension(),
        points: truth.scene.points().iter().map(|p| tf.apply(p)).collect(),
        cameras: truth.rig.positions().iter().map(|p| tf.apply(p)).collect(),
    })
}

/// Per-entity displacement between a reconstruction and the gauge-fixed
/// truth, points first.
pub fn registration_residuals(
    config: &Configuration,
    truth: &World,
    gauge: &Gauge,
) -> Result<Vec<Vector3<f64>>> {
    if config.points.len() != truth.n() || config.cameras.len() != truth.m() {
        return Err(Error::LengthMismatch {
            what: "entities in report vs truth",
            expected: truth.n() + truth.m(),
            got: config.points.len() + config.cameras.len(),
        });
    }
    let fixed = gauge_fixed_truth(truth, gauge)?;
    Ok(config
        .entities()
        .zip(fixed.entities())
        .map(|(r, t)| r - t)
        .collect())
}

/// Euclidean distance of every point and camera from its gauge-fixed truth.
pub fn register_to_ground_truth(report: &ReconstructionReport, truth: &World) -> Result<Vec<f64>> {
    Ok(
        registration_residuals(&report.configuration, truth, &report.gauge)?
            .iter()
            .map(|d| d.norm())
            .collect(),
    )
}

/// Re-projects a configuration: bearings (and elevations in 3D) of every
/// visible pair of `obs`, as a flat row-major vector with `None` for hidden
/// pairs.
pub fn reproject(config: &Configuration, obs: &ObservationSet) -> Vec<Option<(f64, f64)>> {
    let m = obs.m();
    (0..obs.n() * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            obs.is_visible(i, j)
                .then(|| crate::projector::ray_angles(&config.points[i], &config.cameras[j]))
        })
        .collect()
}

/// Residual vector of `sys` at `x` (for checks that kernel moves keep it).
pub fn equation_residuals(sys: &LinearSystem, x: &[f64]) -> DVector<f64> {
    sys.matrix() * DVector::from_column_slice(x) - sys.rhs()
}
