//! Gauge-fixed linear systems and the least-squares kernel every
//! reconstruction stage runs through.
//!
//! Each visible observation contributes rows that are linear in the unknown
//! coordinates. The similarity gauge (anchor point at the origin, one scale
//! coordinate pinned) is applied by substitution: fixed unknowns never become
//! columns, their contributions move to the right-hand side.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Axis, MotionBasis, ObservationSet};

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Unknown {
    /// Basis coefficient `term` of coordinate `axis` of point `index`.
    Point {
        index: usize,
        axis: Axis,
        term: usize,
    },
    Camera {
        index: usize,
        axis: Axis,
    },
}

/// Which coordinates are pinned to remove translation and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    /// Point placed at the origin.
    pub anchor: usize,
    /// Point whose `scale_axis` coordinate is pinned to `scale_value`.
    pub scale_point: usize,
    pub scale_axis: Axis,
    pub scale_value: f64,
    /// Also pin the higher-order terms of the scale coordinate to zero
    /// (dynamic systems only). Removes the time-varying rescaling freedom
    /// when the scale point is known not to move along `scale_axis`.
    #[serde(default)]
    pub pin_scale_motion: bool,
}

impl Default for Gauge {
    fn default() -> Self {
        Gauge {
            anchor: 0,
            scale_point: 1,
            scale_axis: Axis::X,
            scale_value: 1.0,
            pin_scale_motion: false,
        }
    }
}

impl Gauge {
    pub fn new(anchor: usize, scale_point: usize, scale_axis: Axis) -> Self {
        Gauge {
            anchor,
            scale_point,
            scale_axis,
            ..Gauge::default()
        }
    }

    fn validate(&self, n: usize, allow_z: bool) -> Result<()> {
        if self.anchor >= n || self.scale_point >= n {
            return Err(Error::BadGauge(format!(
                "anchor {} / scale point {} with {n} points",
                self.anchor, self.scale_point
            )));
        }
        if self.anchor == self.scale_point {
            return Err(Error::BadGauge("anchor and scale point coincide".into()));
        }
        if !allow_z && self.scale_axis == Axis::Z {
            return Err(Error::BadGauge(
                "planar systems need an x or y scale axis".into(),
            ));
        }
        if !(self.scale_value.is_finite() && self.scale_value != 0.0) {
            return Err(Error::BadGauge(format!("scale value {}", self.scale_value)));
        }
        Ok(())
    }
}

/// Unknowns removed by the gauge and the values they were pinned to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub fixed: Vec<(Unknown, f64)>,
    /// Subtracted from every timestamp before evaluating motion bases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_offset: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    columns: Vec<Unknown>,
    gauge: GaugeRecord,
    row_sources: Vec<(usize, usize)>,
}

impl LinearSystem {
    pub fn new(
        matrix: DMatrix<f64>,
        rhs: DVector<f64>,
        columns: Vec<Unknown>,
        gauge: GaugeRecord,
    ) -> Result<Self> {
        if rhs.len() != matrix.nrows() || columns.len() != matrix.ncols() {
            return Err(Error::LengthMismatch {
                what: "system rows/columns",
                expected: matrix.nrows(),
                got: rhs.len(),
            });
        }
        let rows = matrix.nrows();
        Ok(LinearSystem {
            matrix,
            rhs,
            columns,
            gauge,
            row_sources: vec![(usize::MAX, usize::MAX); rows],
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn columns(&self) -> &[Unknown] {
        &self.columns
    }

    pub fn gauge(&self) -> &GaugeRecord {
        &self.gauge
    }

    /// The `(point, camera)` observation behind each row.
    pub fn row_sources(&self) -> &[(usize, usize)] {
        &self.row_sources
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Every unknown's value: solved columns plus gauge-fixed entries.
    pub fn unpack(&self, solution: &[f64]) -> HashMap<Unknown, f64> {
        let mut out: HashMap<Unknown, f64> = self.gauge.fixed.iter().copied().collect();
        out.extend(self.columns.iter().copied().zip(solution.iter().copied()));
        out
    }
}

/// Collects sparse rows over a full unknown list and eliminates the fixed
/// unknowns as rows arrive.
pub(crate) struct SystemBuilder {
    col_of: HashMap<Unknown, usize>,
    fixed: HashMap<Unknown, f64>,
    fixed_order: Vec<(Unknown, f64)>,
    columns: Vec<Unknown>,
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    sources: Vec<(usize, usize)>,
}

impl SystemBuilder {
    pub(crate) fn new(
        unknowns: impl IntoIterator<Item = Unknown>,
        fixed: Vec<(Unknown, f64)>,
    ) -> Self {
        let fixed_map: HashMap<_, _> = fixed.iter().copied().collect();
        let mut columns = Vec::new();
        let mut col_of = HashMap::new();
        for u in unknowns {
            if fixed_map.contains_key(&u) || col_of.contains_key(&u) {
                continue;
            }
            col_of.insert(u, columns.len());
            columns.push(u);
        }
        SystemBuilder {
            col_of,
            fixed: fixed_map,
            fixed_order: fixed,
            columns,
            entries: Vec::new(),
            rhs: Vec::new(),
            sources: Vec::new(),
        }
    }

    /// Adds `Σ coeff · unknown = constant`.
    pub(crate) fn add_row(
        &mut self,
        source: (usize, usize),
        terms: &[(Unknown, f64)],
        constant: f64,
    ) {
        let row = self.rhs.len();
        let mut b = constant;
        for &(u, coeff) in terms {
            if let Some(v) = self.fixed.get(&u) {
                b -= coeff * v;
            } else {
                let col = self.col_of[&u];
                self.entries.push((row, col, coeff));
            }
        }
        self.rhs.push(b);
        self.sources.push(source);
    }

    pub(crate) fn build(self, time_offset: Option<f64>) -> LinearSystem {
        let mut matrix = DMatrix::zeros(self.rhs.len(), self.columns.len());
        for (r, c, v) in self.entries {
            matrix[(r, c)] += v;
        }
        LinearSystem {
            matrix,
            rhs: DVector::from_vec(self.rhs),
            columns: self.columns,
            gauge: GaugeRecord {
                fixed: self.fixed_order,
                time_offset,
            },
            row_sources: self.sources,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unique,
    Ambiguous,
    /// The system could not be decomposed (non-finite input).
    Infeasible,
}

impl Verdict {
    /// Combined verdict of two stages: the worse of the two.
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Infeasible, _) | (_, Infeasible) => Infeasible,
            (Ambiguous, _) | (_, Ambiguous) => Ambiguous,
            _ => Unique,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub solution: Vec<f64>,
    pub residual: f64,
    /// Descending; one value per column (zeros for missing rows).
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub verdict: Verdict,
    /// Orthonormal basis of the numerical kernel, smallest singular value
    /// first.
    pub kernel: Vec<Vec<f64>>,
    /// Set by the reconstructor: true when some reconstructed ray points away
    /// from its observed direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipped_rays: Option<usize>,
}

impl SolveDiagnostics {
    pub fn kernel_dimension(&self) -> usize {
        self.kernel.len()
    }

    /// Smallest over largest singular value.
    pub fn condition_ratio(&self) -> f64 {
        match (self.singular_values.first(), self.singular_values.last()) {
            (Some(&max), Some(&min)) if max > 0.0 => min / max,
            _ => 0.0,
        }
    }
}

/// Plain Householder least squares without rank diagnostics, for callers
/// that have already established full column rank. `None` if the system is
/// underdetermined or the triangular factor is singular.
pub(crate) fn least_squares(sys: &LinearSystem) -> Option<Vec<f64>> {
    let (rows, cols) = sys.matrix.shape();
    if rows < cols {
        return None;
    }
    let qr = sys.matrix.clone().qr();
    let mut qtb = sys.rhs.clone();
    qr.q_tr_mul(&mut qtb);
    let x = qr
        .r()
        .solve_upper_triangular(&qtb.rows(0, cols).into_owned())?;
    x.iter()
        .all(|v| v.is_finite())
        .then(|| x.iter().copied().collect())
}

/// Minimum-norm least-squares solution with rank diagnostics.
///
/// Uses faer's thin SVD; nalgebra's bidiagonal SVD returns inaccurate
/// factors for some of these matrices. Wide systems are padded with zero
/// rows so every column gets a singular value.
pub fn solve(sys: &LinearSystem, rank_tolerance: f64) -> SolveDiagnostics {
    let a = &sys.matrix;
    let b = &sys.rhs;
    let (rows, cols) = a.shape();
    let failed = |cols: usize| SolveDiagnostics {
        solution: vec![f64::NAN; cols],
        residual: f64::NAN,
        singular_values: vec![f64::NAN; cols],
        rank: 0,
        verdict: Verdict::Infeasible,
        kernel: Vec::new(),
        reflection: None,
        flipped_rays: None,
    };
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return failed(cols);
    }
    if cols == 0 {
        return SolveDiagnostics {
            solution: Vec::new(),
            residual: b.norm(),
            singular_values: Vec::new(),
            rank: 0,
            verdict: Verdict::Unique,
            kernel: Vec::new(),
            reflection: None,
            flipped_rays: None,
        };
    }

    let padded_rows = rows.max(cols);
    let square =
        faer::Mat::<f64>::from_fn(
            padded_rows,
            cols,
            |r, c| if r < rows { a[(r, c)] } else { 0.0 },
        );
    let Ok(svd) = square.thin_svd() else {
        return failed(cols);
    };
    let (u, v) = (svd.U(), svd.V());
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let threshold = rank_tolerance * sigma_max;

    let mut x = DVector::zeros(cols);
    let mut kernel_idx = Vec::new();
    for k in 0..cols {
        if sigma[k] > threshold && sigma[k] > 0.0 {
            let coeff = (0..rows).map(|r| u[(r, k)] * b[r]).sum::<f64>() / sigma[k];
            for c in 0..cols {
                x[c] += v[(c, k)] * coeff;
            }
        } else {
            kernel_idx.push(k);
        }
    }
    kernel_idx.sort_by(|&p, &q| sigma[p].total_cmp(&sigma[q]));
    let kernel = kernel_idx
        .iter()
        .map(|&k| (0..cols).map(|c| v[(c, k)]).collect())
        .collect();
    let rank = cols - kernel_idx.len();
    let mut singular_values: Vec<f64> = sigma.clone();
    singular_values.sort_by(|p, q| q.total_cmp(p));

    SolveDiagnostics {
        residual: (a * &x - b).norm(),
        solution: x.iter().copied().collect(),
        singular_values,
        rank,
        verdict: if rank < cols {
            Verdict::Ambiguous
        } else {
            Verdict::Unique
        },
        kernel,
        reflection: None,
        flipped_rays: None,
    }
}

/// The solution moved `step` along the first kernel direction. Every
/// equation residual is unchanged by construction.
pub fn kernel_witness(diag: &SolveDiagnostics, step: f64) -> Result<Vec<f64>> {
    if diag.verdict != Verdict::Ambiguous || diag.kernel.is_empty() {
        return Err(Error::NotAmbiguous);
    }
    Ok(diag
        .solution
        .iter()
        .zip(&diag.kernel[0])
        .map(|(x, k)| x + step * k)
        .collect())
}

fn check_orientation(obs: &ObservationSet) -> Result<()> {
    if !obs.is_oriented() {
        return Err(Error::Unoriented);
    }
    if obs.visible_count() == 0 {
        return Err(Error::NoObservations);
    }
    Ok(())
}

/// One row per visible `(i, j)`:
/// `sin θ_ij · (x_i(t_j) − a_j) − cos θ_ij · (y_i(t_j) − b_j) = 0`, where the
/// point coordinates are expanded in `basis` at `t_j − time_offset`.
pub(crate) fn assemble_bearing_rows(
    obs: &ObservationSet,
    basis: MotionBasis,
    gauge: &Gauge,
    time_offset: Option<f64>,
) -> Result<LinearSystem> {
    let (n, m) = (obs.n(), obs.m());
    if n < 2 {
        return Err(Error::TooFewPoints);
    }
    check_orientation(obs)?;
    gauge.validate(n, false)?;
    let terms = basis.coefficient_count();

    let mut unknowns = Vec::with_capacity(2 * n * terms + 2 * m);
    for i in 0..n {
        for axis in Axis::planar() {
            for term in 0..terms {
                unknowns.push(Unknown::Point {
                    index: i,
                    axis,
                    term,
                });
            }
        }
    }
    for j in 0..m {
        for axis in Axis::planar() {
            unknowns.push(Unknown::Camera { index: j, axis });
        }
    }

    let mut fixed = Vec::new();
    for axis in Axis::planar() {
        for term in 0..terms {
            fixed.push((
                Unknown::Point {
                    index: gauge.anchor,
                    axis,
                    term,
                },
                0.0,
            ));
        }
    }
    fixed.push((
        Unknown::Point {
            index: gauge.scale_point,
            axis: gauge.scale_axis,
            term: 0,
        },
        gauge.scale_value,
    ));
    if gauge.pin_scale_motion {
        for term in 1..terms {
            fixed.push((
                Unknown::Point {
                    index: gauge.scale_point,
                    axis: gauge.scale_axis,
                    term,
                },
                0.0,
            ));
        }
    }

    let mut builder = SystemBuilder::new(unknowns, fixed);
    let offset = time_offset.unwrap_or(0.0);
    let mut row = Vec::with_capacity(2 * terms + 2);
    for (i, j) in obs.visible_pairs() {
        let theta = obs.bearing(i, j).expect("visible");
        let (s, c) = theta.sin_cos();
        let f = basis.eval(obs.times()[j] - offset);
        row.clear();
        for (term, fl) in f.iter().enumerate() {
            row.push((
                Unknown::Point {
                    index: i,
                    axis: Axis::X,
                    term,
                },
                s * fl,
            ));
            row.push((
                Unknown::Point {
                    index: i,
                    axis: Axis::Y,
                    term,
                },
                -c * fl,
            ));
        }
        row.push((
            Unknown::Camera {
                index: j,
                axis: Axis::X,
            },
            -s,
        ));
        row.push((
            Unknown::Camera {
                index: j,
                axis: Axis::Y,
            },
            c,
        ));
        builder.add_row((i, j), &row, 0.0);
    }
    Ok(builder.build(time_offset))
}

/// Planar line-of-sight system for a static scene.
pub fn assemble_planar(obs: &ObservationSet, gauge: &Gauge) -> Result<LinearSystem> {
    assemble_bearing_rows(obs, MotionBasis::STATIC, gauge, None)
}

/// Signed horizontal distance from camera to point along the observed
/// bearing. Equals the Euclidean horizontal distance whenever the planar
/// reconstruction points the ray the right way.
pub(crate) fn horizontal_range(theta: f64, point: &Vector3<f64>, camera: &Vector3<f64>) -> f64 {
    let (s, c) = theta.sin_cos();
    c * (point.x - camera.x) + s * (point.y - camera.y)
}

/// Height rows `cos φ_ij · (z_i(t_j) − c_j) = sin φ_ij · r_ij`, with `r_ij`
/// taken from the planar solution. `point_xy[i][j]` is point `i` at frame `j`.
pub(crate) fn assemble_height_rows(
    obs: &ObservationSet,
    basis: MotionBasis,
    point_xy: &[Vec<Vector3<f64>>],
    camera_xy: &[Vector3<f64>],
    anchor: usize,
    time_offset: Option<f64>,
) -> Result<LinearSystem> {
    let (n, m) = (obs.n(), obs.m());
    if !obs.has_elevations() {
        return Err(Error::MissingElevations);
    }
    check_orientation(obs)?;
    if anchor >= n {
        return Err(Error::BadGauge(format!("anchor {anchor} with {n} points")));
    }
    if point_xy.len() != n || camera_xy.len() != m {
        return Err(Error::LengthMismatch {
            what: "planar coordinates",
            expected: n + m,
            got: point_xy.len() + camera_xy.len(),
        });
    }
    let terms = basis.coefficient_count();
    let unknowns = (0..n)
        .flat_map(|i| {
            (0..terms).map(move |term| Unknown::Point {
                index: i,
                axis: Axis::Z,
                term,
            })
        })
        .chain((0..m).map(|j| Unknown::Camera {
            index: j,
            axis: Axis::Z,
        }));
    let fixed = (0..terms)
        .map(|term| {
            (
                Unknown::Point {
                    index: anchor,
                    axis: Axis::Z,
                    term,
                },
                0.0,
            )
        })
        .collect();
    let mut builder = SystemBuilder::new(unknowns, fixed);
    let offset = time_offset.unwrap_or(0.0);
    let mut row = Vec::with_capacity(terms + 1);
    for (i, j) in obs.visible_pairs() {
        let theta = obs.bearing(i, j).expect("visible");
        let phi = obs.elevation(i, j).expect("visible");
        let r = horizontal_range(theta, &point_xy[i][j], &camera_xy[j]);
        let (s, c) = phi.sin_cos();
        let f = basis.eval(obs.times()[j] - offset);
        row.clear();
        for (term, fl) in f.iter().enumerate() {
            row.push((
                Unknown::Point {
                    index: i,
                    axis: Axis::Z,
                    term,
                },
                c * fl,
            ));
        }
        row.push((
            Unknown::Camera {
                index: j,
                axis: Axis::Z,
            },
            -c,
        ));
        builder.add_row((i, j), &row, s * r);
    }
    Ok(builder.build(time_offset))
}

/// Height system for a static scene given its planar reconstruction; the
/// anchor point's height is pinned to zero.
pub fn assemble_heights(
    obs: &ObservationSet,
    points_xy: &[Vector3<f64>],
    cameras_xy: &[Vector3<f64>],
    gauge: &Gauge,
) -> Result<LinearSystem> {
    let per_frame: Vec<Vec<Vector3<f64>>> = points_xy.iter().map(|p| vec![*p; obs.m()]).collect();
    assemble_height_rows(
        obs,
        MotionBasis::STATIC,
        &per_frame,
        cameras_xy,
        gauge.anchor,
        None,
    )
}

/// Joint spatial system: for every ray, the displacement `P_i − Q_j` is
/// orthogonal to the two unit vectors perpendicular to the observed
/// direction `(cos φ cos θ, cos φ sin θ, sin φ)`:
///
/// * `−sin θ · Δx + cos θ · Δy = 0`
/// * `−sin φ cos θ · Δx − sin φ sin θ · Δy + cos φ · Δz = 0`
///
/// Unlike the two-stage route this does not need the horizontal projection
/// to be determined on its own, so two cameras suffice off a common plane.
pub fn assemble_spatial(obs: &ObservationSet, gauge: &Gauge) -> Result<LinearSystem> {
    let (n, m) = (obs.n(), obs.m());
    if n < 2 {
        return Err(Error::TooFewPoints);
    }
    if !obs.has_elevations() {
        return Err(Error::MissingElevations);
    }
    check_orientation(obs)?;
    gauge.validate(n, true)?;
    const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
    let unknowns = (0..n)
        .flat_map(|i| {
            AXES.map(|axis| Unknown::Point {
                index: i,
                axis,
                term: 0,
            })
        })
        .chain((0..m).flat_map(|j| AXES.map(|axis| Unknown::Camera { index: j, axis })));
    let mut fixed: Vec<_> = AXES
        .iter()
        .map(|&axis| {
            (
                Unknown::Point {
                    index: gauge.anchor,
                    axis,
                    term: 0,
                },
                0.0,
            )
        })
        .collect();
    fixed.push((
        Unknown::Point {
            index: gauge.scale_point,
            axis: gauge.scale_axis,
            term: 0,
        },
        gauge.scale_value,
    ));
    let mut builder = SystemBuilder::new(unknowns, fixed);
    for (i, j) in obs.visible_pairs() {
        let (st, ct) = obs.bearing(i, j).expect("visible").sin_cos();
        let (sp, cp) = obs.elevation(i, j).expect("visible").sin_cos();
        for normal in [[-st, ct, 0.0], [-sp * ct, -sp * st, cp]] {
            let mut row = Vec::with_capacity(6);
            for (k, &axis) in AXES.iter().enumerate() {
                row.push((
                    Unknown::Point {
                        index: i,
                        axis,
                        term: 0,
                    },
                    normal[k],
                ));
                row.push((Unknown::Camera { index: j, axis }, -normal[k]));
            }
            builder.add_row((i, j), &row, 0.0);
        }
    }
    Ok(builder.build(None))
}
