//! Reconstruction of moving scene points whose trajectories are expanded in
//! a Taylor or Fourier basis. Camera positions stay free per frame.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::{to_coords, Axis, BasisKind, Dimension, MotionBasis, ObservationSet, World};
use crate::reconstruct::{
    count_warning, flipped_rays, mark_rays, reconstruct, Configuration, Method,
    ReconstructionReport, Trajectories,
};
use crate::solver::{
    assemble_bearing_rows, assemble_height_rows, solve, Gauge, LinearSystem, Unknown,
};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DynamicOptions {
    /// Expand around the mean timestamp instead of `t = 0`. Recorded as the
    /// gauge record's `time_offset`.
    pub center_times: bool,
}

fn check_times(obs: &ObservationSet, basis: MotionBasis) -> Result<()> {
    let t = obs.times();
    let duplicate = (0..t.len())
        .flat_map(|a| ((a + 1)..t.len()).map(move |b| (a, b)))
        .find(|&(a, b)| t[a] == t[b]);
    if let Some((a, b)) = duplicate {
        if basis.kind() == BasisKind::Taylor && basis.order() >= t.len() - 1 {
            return Err(Error::DuplicateTimes(a, b));
        }
    }
    Ok(())
}

fn time_offset(obs: &ObservationSet, opts: DynamicOptions) -> Option<f64> {
    let t = obs.times();
    opts.center_times
        .then(|| t.iter().sum::<f64>() / t.len() as f64)
}

/// Planar line-of-sight system with every point coordinate expanded in
/// `basis` at the frame time. The anchor's whole trajectory is pinned to the
/// origin and the scale point's constant term along the scale axis to the
/// gauge value.
pub fn assemble_dynamic(
    obs: &ObservationSet,
    basis: MotionBasis,
    gauge: &Gauge,
    opts: DynamicOptions,
) -> Result<LinearSystem> {
    check_times(obs, basis)?;
    assemble_bearing_rows(obs, basis, gauge, time_offset(obs, opts))
}

pub(crate) struct TrajectorySet {
    basis: MotionBasis,
    offset: f64,
    // coefficients[i][term]
    coefficients: Vec<Vec<Vector3<f64>>>,
}

impl TrajectorySet {
    fn from_values(
        values: &HashMap<Unknown, f64>,
        basis: MotionBasis,
        n: usize,
        offset: f64,
    ) -> Self {
        let get = |u| values.get(&u).copied().unwrap_or(0.0);
        let coefficients = (0..n)
            .map(|i| {
                (0..basis.coefficient_count())
                    .map(|term| {
                        Vector3::new(
                            get(Unknown::Point {
                                index: i,
                                axis: Axis::X,
                                term,
                            }),
                            get(Unknown::Point {
                                index: i,
                                axis: Axis::Y,
                                term,
                            }),
                            get(Unknown::Point {
                                index: i,
                                axis: Axis::Z,
                                term,
                            }),
                        )
                    })
                    .collect()
            })
            .collect();
        TrajectorySet {
            basis,
            offset,
            coefficients,
        }
    }

    fn at(&self, i: usize, t: f64) -> Vector3<f64> {
        self.basis
            .eval(t - self.offset)
            .iter()
            .zip(&self.coefficients[i])
            .map(|(f, c)| c * *f)
            .sum()
    }

    fn per_frame(&self, times: &[f64]) -> Vec<Vec<Vector3<f64>>> {
        (0..self.coefficients.len())
            .map(|i| times.iter().map(|&t| self.at(i, t)).collect())
            .collect()
    }

    fn export(&self, dim: Dimension, times: &[f64]) -> Trajectories {
        Trajectories {
            basis: self.basis.to_string(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| c.iter().map(|v| to_coords(v, dim)).collect())
                .collect(),
            positions: self
                .per_frame(times)
                .iter()
                .map(|row| row.iter().map(|v| to_coords(v, dim)).collect())
                .collect(),
        }
    }
}

/// Dynamic reconstruction with default options.
pub fn reconstruct_dynamic(
    obs: &ObservationSet,
    basis: MotionBasis,
    gauge: &Gauge,
    rank_tolerance: f64,
) -> Result<ReconstructionReport> {
    reconstruct_dynamic_with(obs, basis, gauge, rank_tolerance, DynamicOptions::default())
}

/// Planar dynamic solve, then (with elevations) a height solve whose
/// height coordinate is expanded in the same basis. A static basis without
/// time centering runs the static reconstructor.
pub fn reconstruct_dynamic_with(
    obs: &ObservationSet,
    basis: MotionBasis,
    gauge: &Gauge,
    rank_tolerance: f64,
    opts: DynamicOptions,
) -> Result<ReconstructionReport> {
    if basis.is_static() && !opts.center_times {
        return reconstruct(obs, gauge, rank_tolerance);
    }
    let (n, m) = (obs.n(), obs.m());
    let planar_sys = assemble_dynamic(obs, basis, gauge, opts)?;
    let offset = planar_sys.gauge().time_offset;
    let mut planar = solve(&planar_sys, rank_tolerance);
    let mut values = planar_sys.unpack(&planar.solution);
    let mut record = planar_sys.gauge().clone();
    let mut warnings: Vec<String> = count_warning(&planar_sys, "planar stage")
        .into_iter()
        .collect();

    let xy_cfg = Configuration::from_values(&values, Dimension::Planar, n, m);
    let xy_traj = TrajectorySet::from_values(&values, basis, n, offset.unwrap_or(0.0));
    let xy_frames = xy_traj.per_frame(obs.times());
    mark_rays(
        &mut planar,
        flipped_rays(obs, |i, j| xy_frames[i][j], &xy_cfg.cameras, false),
    );

    let mut verdict = planar.verdict;
    let mut heights = None;
    if obs.has_elevations() {
        if planar.verdict == crate::solver::Verdict::Unique {
            let hsys = assemble_height_rows(
                obs,
                basis,
                &xy_frames,
                &xy_cfg.cameras,
                gauge.anchor,
                offset,
            )?;
            let hdiag = solve(&hsys, rank_tolerance);
            values.extend(hsys.unpack(&hdiag.solution));
            record.fixed.extend(hsys.gauge().fixed.iter().copied());
            warnings.extend(count_warning(&hsys, "height stage"));
            verdict = verdict.and(hdiag.verdict);
            heights = Some(hdiag);
        } else {
            warnings.push(format!(
                "planar stage is {:?} (kernel dimension {}); height stage skipped",
                planar.verdict,
                planar.kernel_dimension()
            ));
        }
    }

    let dim = obs.dimension();
    let traj = TrajectorySet::from_values(&values, basis, n, offset.unwrap_or(0.0));
    Ok(ReconstructionReport {
        configuration: Configuration::from_values(&values, dim, n, m),
        method: if dim == Dimension::Spatial {
            Method::TwoStage
        } else {
            Method::Planar
        },
        verdict,
        gauge: gauge.clone(),
        gauge_record: record,
        planar: Some(planar),
        heights,
        spatial: None,
        warnings,
        errors: None,
        coefficients: Some(traj.export(dim, obs.times())),
        headings: None,
        primary_columns: planar_sys.columns().to_vec(),
    })
}

/// Ground-truth comparison for a dynamic report.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryErrors {
    /// Largest absolute coefficient difference over every point, term and
    /// coordinate.
    pub max_coefficient: f64,
    /// Per point: largest distance between recovered and true positions over
    /// the observation times. Then per camera: distance.
    pub entity: Vec<f64>,
}

/// Maps `truth` into the report's gauge (per-frame subtraction of the
/// anchor trajectory, expansion around the recorded time offset, scaling of
/// the pinned coefficient) and compares.
pub fn trajectory_errors(report: &ReconstructionReport, truth: &World) -> Result<TrajectoryErrors> {
    let traj = report
        .coefficients
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("report has no trajectories".into()))?;
    let basis: MotionBasis = traj.basis.parse()?;
    let (n, m) = (truth.n(), truth.m());
    if traj.coefficients.len() != n || report.configuration.cameras.len() != m {
        return Err(Error::LengthMismatch {
            what: "entities in report vs truth",
            expected: n + m,
            got: traj.coefficients.len() + report.configuration.cameras.len(),
        });
    }
    let truth_basis = truth.scene.basis();
    let count = basis.coefficient_count();
    // Embed the truth in the report basis; lower-order truths pad with zeros.
    let embed = |i: usize| -> Result<Vec<Vector3<f64>>> {
        let c = truth.scene.coefficients(i);
        let compatible = truth_basis.is_static() || truth_basis.kind() == basis.kind();
        if !compatible || c.len() > count {
            return Err(Error::InvalidParameter(format!(
                "truth basis {truth_basis} does not embed in {basis}"
            )));
        }
        let mut v = c.to_vec();
        v.resize(count, Vector3::zeros());
        Ok(v)
    };
    let offset = report.gauge_record.time_offset.unwrap_or(0.0);
    let gauge = &report.gauge;
    let shifted: Vec<Vec<Vector3<f64>>> = (0..n)
        .map(|i| Ok(basis.shift_coefficients(&embed(i)?, offset)))
        .collect::<Result<_>>()?;
    let anchor = &shifted[gauge.anchor];
    let relative: Vec<Vec<Vector3<f64>>> = shifted
        .iter()
        .map(|c| c.iter().zip(anchor).map(|(a, b)| a - b).collect())
        .collect();
    let span = relative[gauge.scale_point][0][gauge.scale_axis.index()];
    if span == 0.0 {
        return Err(Error::BadGauge("truth scale coordinate is zero".into()));
    }
    let scale = gauge.scale_value / span;
    let dim = truth.dimension();

    let mut max_coefficient = 0.0f64;
    for (rec, tru) in traj.coefficients.iter().zip(&relative) {
        for (r, t) in rec.iter().zip(tru) {
            for (a, b) in r.iter().zip(to_coords(&(t * scale), dim)) {
                max_coefficient = max_coefficient.max((a - b).abs());
            }
        }
    }

    let times = truth.rig.times();
    let recovered = TrajectorySet {
        basis,
        offset,
        coefficients: traj
            .coefficients
            .iter()
            .map(|c| c.iter().map(|v| coords_to_vec(v)).collect())
            .collect(),
    };
    let true_set = TrajectorySet {
        basis,
        offset,
        coefficients: relative
            .iter()
            .map(|c| c.iter().map(|v| v * scale).collect())
            .collect(),
    };
    let mut entity: Vec<f64> = (0..n)
        .map(|i| {
            times
                .iter()
                .map(|&t| (recovered.at(i, t) - true_set.at(i, t)).norm())
                .fold(0.0, f64::max)
        })
        .collect();
    for (j, &t) in times.iter().enumerate().take(m) {
        let anchor_t = truth.scene.position_at(gauge.anchor, t);
        let cam = (truth.rig.position(j) - anchor_t) * scale;
        entity.push((report.configuration.cameras[j] - cam).norm());
    }
    Ok(TrajectoryErrors {
        max_coefficient,
        entity,
    })
}

fn coords_to_vec(c: &[f64]) -> Vector3<f64> {
    Vector3::new(c[0], c[1], c.get(2).copied().unwrap_or(0.0))
}
