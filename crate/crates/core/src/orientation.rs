//! Heading recovery for cameras that turn about the vertical axis by an
//! unknown angle per frame.
//!
//! Relative bearings are `θ_abs − heading`. When the scene is far away
//! compared to the camera path, every bearing drifts by roughly minus the
//! heading rate, so averaging the per-point angular velocities and
//! integrating gives the heading track. A coordinate-descent pass over the
//! individual headings then minimizes the smallest singular value of the
//! scale-free bearing system.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{wrap_angle, ObservationSet};
use crate::reconstruct::{reconstruct, reproject, Configuration, ReconstructionReport};
use crate::solver::{
    assemble_heights, assemble_planar, least_squares, Gauge, LinearSystem, Verdict,
    DEFAULT_RANK_TOLERANCE,
};

/// Per-point angular velocities between consecutive frames. Entry `[i][j]`
/// covers the interval from frame `j` to `j + 1` and is `None` unless point
/// `i` is visible in both frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub omega: Vec<Vec<Option<f64>>>,
    pub eta: Option<Vec<Vec<Option<f64>>>>,
    /// Elevation at the start of each interval, for the elevation weighting.
    elevation: Option<Vec<Vec<Option<f64>>>>,
}

impl MotionField {
    pub fn intervals(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }
}

pub fn motion_field(obs: &ObservationSet) -> Result<MotionField> {
    let (n, m) = (obs.n(), obs.m());
    let t = obs.times();
    if let Some(j) = (1..t.len()).find(|&j| t[j] <= t[j - 1]) {
        return Err(Error::DuplicateTimes(j - 1, j));
    }
    let intervals = m.saturating_sub(1);
    let mut omega = vec![vec![None; intervals]; n];
    let spatial = obs.has_elevations();
    let mut eta = vec![vec![None; intervals]; n];
    let mut elevation = vec![vec![None; intervals]; n];
    for i in 0..n {
        for j in 0..intervals {
            let (Some(a), Some(b)) = (obs.bearing(i, j), obs.bearing(i, j + 1)) else {
                continue;
            };
            let dt = t[j + 1] - t[j];
            omega[i][j] = Some(wrap_angle(b - a) / dt);
            if spatial {
                let (pa, pb) = (
                    obs.elevation(i, j).unwrap(),
                    obs.elevation(i, j + 1).unwrap(),
                );
                eta[i][j] = Some((pb - pa) / dt);
                elevation[i][j] = Some(pa);
            }
        }
    }
    Ok(MotionField {
        omega,
        eta: spatial.then_some(eta),
        elevation: spatial.then_some(elevation),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum EtaWeight {
    /// `cos ω_i(t_j)`.
    #[default]
    AngularVelocity,
    /// `cos φ_ij`.
    Elevation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanMotionOptions {
    pub eta_weight: EtaWeight,
    /// Fraction of the fastest points (by `|ω_i|`) dropped per interval
    /// before averaging. Zero keeps everything.
    pub outlier_quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanMotion {
    pub omega: Vec<f64>,
    pub eta: Option<Vec<f64>>,
}

pub fn mean_motion(field: &MotionField, opts: MeanMotionOptions) -> Result<MeanMotion> {
    if !(0.0..1.0).contains(&opts.outlier_quantile) {
        return Err(Error::InvalidParameter(format!(
            "outlier quantile {}",
            opts.outlier_quantile
        )));
    }
    let n = field.omega.len();
    let mut omega = Vec::with_capacity(field.intervals());
    let mut eta = Vec::with_capacity(field.intervals());
    for j in 0..field.intervals() {
        let mut members: Vec<usize> = (0..n).filter(|&i| field.omega[i][j].is_some()).collect();
        if members.is_empty() {
            return Err(Error::EmptyInterval(j));
        }
        let drop = (opts.outlier_quantile * members.len() as f64).floor() as usize;
        if drop > 0 {
            let speed = |i: usize| field.omega[i][j].unwrap().abs();
            members.sort_by(|&a, &b| speed(a).total_cmp(&speed(b)));
            members.truncate((members.len() - drop).max(1));
        }
        let count = members.len() as f64;
        omega.push(
            members
                .iter()
                .map(|&i| field.omega[i][j].unwrap())
                .sum::<f64>()
                / count,
        );
        if let (Some(e), Some(phi)) = (&field.eta, &field.elevation) {
            let sum: f64 = members
                .iter()
                .map(|&i| {
                    let w = match opts.eta_weight {
                        EtaWeight::AngularVelocity => field.omega[i][j].unwrap().cos(),
                        EtaWeight::Elevation => phi[i][j].unwrap().cos(),
                    };
                    w * e[i][j].unwrap()
                })
                .sum();
            eta.push(sum / count);
        }
    }
    Ok(MeanMotion {
        omega,
        eta: field.eta.is_some().then_some(eta),
    })
}

/// Accumulated mean motion per frame, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub theta: Vec<f64>,
    pub phi: Option<Vec<f64>>,
}

/// Integrates the mean motion over the frame intervals. Frame 1 is zero.
pub fn integrate_orientation(means: &MeanMotion, times: &[f64]) -> Track {
    let integrate = |rates: &[f64]| {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (j, r) in rates.iter().enumerate().take(times.len().saturating_sub(1)) {
            acc += r * (times[j + 1] - times[j]);
            out.push(acc);
        }
        out
    };
    Track {
        theta: integrate(&means.omega),
        phi: means.eta.as_deref().map(integrate),
    }
}

/// Steps one to three: camera headings relative to frame 1. A turn of the
/// camera by `h` moves every relative bearing by `−h`, so the headings are
/// the negated bearing track.
pub fn estimate_headings(obs: &ObservationSet, opts: MeanMotionOptions) -> Result<Vec<f64>> {
    let field = motion_field(obs)?;
    let means = mean_motion(&field, opts)?;
    Ok(integrate_orientation(&means, obs.times())
        .theta
        .into_iter()
        .map(|t| -t)
        .collect())
}

/// Absolute bearings from relative ones and per-frame headings.
pub fn derotate(obs: &ObservationSet, headings: &[f64]) -> Result<ObservationSet> {
    let m = obs.m();
    if headings.len() != m {
        return Err(Error::LengthMismatch {
            what: "headings",
            expected: m,
            got: headings.len(),
        });
    }
    let bearings = obs
        .raw_bearings()
        .iter()
        .enumerate()
        .map(|(k, b)| b.map(|a| wrap_angle(a + headings[k % m])))
        .collect();
    obs.with_angles(bearings, obs.raw_elevations().map(<[_]>::to_vec), true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_sweeps: usize,
    /// Stop when a sweep lowers the objective by less than this.
    pub tolerance: f64,
    /// Stop when a sweep lowers the objective by less than this fraction.
    pub relative_tolerance: f64,
    /// Bracket half-width as a multiple of the frame's heading increment.
    pub bracket_scale: f64,
    /// Smallest half-width of the line-search bracket.
    pub bracket_floor: f64,
    /// Golden-section termination width.
    pub search_tolerance: f64,
    pub rank_tolerance: f64,
    pub objective: RefineObjective,
}

/// What the coordinate descent minimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineObjective {
    /// Root-mean-square angle between observed and reconstructed rays.
    Reprojection,
    /// Smallest singular value of the scale-free bearing system.
    #[default]
    Homogeneous,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            max_sweeps: 200,
            tolerance: 1e-13,
            relative_tolerance: 1e-10,
            bracket_scale: 3.0,
            bracket_floor: 0.05,
            search_tolerance: 1e-8,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            objective: RefineObjective::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub headings: Vec<f64>,
    pub report: ReconstructionReport,
    /// Objective before the first sweep and after every sweep.
    pub residual_history: Vec<f64>,
    pub sweeps: usize,
}

/// Root-mean-square angle between each observed ray and the ray of the
/// reconstructed configuration, with bearings compared modulo `π` so a
/// point-reflected solution scores like its mirror. Unlike the linear
/// residual, it does not shrink when the reconstruction collapses towards
/// the anchor.
pub fn reprojection_error(config: &Configuration, obs: &ObservationSet) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, r) in reproject(config, obs).into_iter().enumerate() {
        let Some((theta, phi)) = r else { continue };
        let (i, j) = (k / obs.m(), k % obs.m());
        let diff = wrap_angle(theta - obs.bearing(i, j).unwrap_or(theta));
        let db = if diff.abs() > FRAC_PI_2 {
            diff - PI.copysign(diff)
        } else {
            diff
        };
        sum += db * db;
        if let Some(e) = obs.elevation(i, j) {
            sum += (phi - e).powi(2);
        }
        count += 1;
    }
    if count == 0 || !sum.is_finite() {
        return f64::INFINITY;
    }
    (sum / count as f64).sqrt()
}

fn golden_section(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Normal equations of the planar bearing system split by frame, so one
/// heading can change without reassembling. A bearing row at `θ + δ` is
/// `cos δ` times the row at `θ` plus `sin δ` times the row at `θ + π/2`,
/// which makes each frame's share of `AᵀA` and `Aᵀb` a quadratic form in
/// `(cos δ, sin δ)`.
struct FrameNormals<'a> {
    obs: &'a ObservationSet,
    gauge: &'a Gauge,
    base: Vec<f64>,
    system: LinearSystem,
    /// Per frame: the `cos²`, `cos·sin` and `sin²` parts of `AᵀA`, `Aᵀb`
    /// and `bᵀb`.
    mats: Vec<[DMatrix<f64>; 3]>,
    vecs: Vec<[DVector<f64>; 3]>,
    sums: Vec<[f64; 3]>,
}

/// One frame's (or all frames') share of the normal equations.
struct Normal {
    ata: DMatrix<f64>,
    atb: DVector<f64>,
    btb: f64,
}

impl Normal {
    fn plus(&self, other: &Normal) -> Normal {
        Normal {
            ata: &self.ata + &other.ata,
            atb: &self.atb + &other.atb,
            btb: self.btb + other.btb,
        }
    }

    fn minus(&self, other: &Normal) -> Normal {
        Normal {
            ata: &self.ata - &other.ata,
            atb: &self.atb - &other.atb,
            btb: self.btb - other.btb,
        }
    }
}

impl<'a> FrameNormals<'a> {
    fn new(obs: &'a ObservationSet, gauge: &'a Gauge, base: &[f64]) -> Result<Self> {
        let system = assemble_planar(&derotate(obs, base)?, gauge)?;
        let quarter: Vec<f64> = base.iter().map(|h| h + FRAC_PI_2).collect();
        let turned = assemble_planar(&derotate(obs, &quarter)?, gauge)?;
        let cols = system.cols();
        let zero_m = || DMatrix::zeros(cols, cols);
        let zero_v = || DVector::zeros(cols);
        let mut mats: Vec<_> = (0..obs.m())
            .map(|_| [zero_m(), zero_m(), zero_m()])
            .collect();
        let mut vecs: Vec<_> = (0..obs.m())
            .map(|_| [zero_v(), zero_v(), zero_v()])
            .collect();
        let mut sums = vec![[0.0; 3]; obs.m()];
        for (r, &(_, j)) in system.row_sources().iter().enumerate() {
            let a0 = system.matrix().row(r).transpose();
            let a9 = turned.matrix().row(r).transpose();
            let (b0, b9) = (system.rhs()[r], turned.rhs()[r]);
            let [cc, cs, ss] = &mut mats[j];
            cc.ger(1.0, &a0, &a0, 1.0);
            cs.ger(1.0, &a0, &a9, 1.0);
            cs.ger(1.0, &a9, &a0, 1.0);
            ss.ger(1.0, &a9, &a9, 1.0);
            let [vc, vcs, vs] = &mut vecs[j];
            vc.axpy(b0, &a0, 1.0);
            vcs.axpy(b9, &a0, 1.0);
            vcs.axpy(b0, &a9, 1.0);
            vs.axpy(b9, &a9, 1.0);
            sums[j][0] += b0 * b0;
            sums[j][1] += 2.0 * b0 * b9;
            sums[j][2] += b9 * b9;
        }
        Ok(FrameNormals {
            obs,
            gauge,
            base: base.to_vec(),
            system,
            mats,
            vecs,
            sums,
        })
    }

    /// Frame `j`'s share of the normal equations at heading `h`.
    fn frame(&self, j: usize, h: f64) -> Normal {
        let (s, c) = (h - self.base[j]).sin_cos();
        let w = [c * c, c * s, s * s];
        let [cc, cs, ss] = &self.mats[j];
        let [vc, vcs, vs] = &self.vecs[j];
        let sums = &self.sums[j];
        Normal {
            ata: cc * w[0] + cs * w[1] + ss * w[2],
            atb: vc * w[0] + vcs * w[1] + vs * w[2],
            btb: sums[0] * w[0] + sums[1] * w[1] + sums[2] * w[2],
        }
    }

    fn total(&self, headings: &[f64]) -> Normal {
        let cols = self.system.cols();
        let mut acc = Normal {
            ata: DMatrix::zeros(cols, cols),
            atb: DVector::zeros(cols),
            btb: 0.0,
        };
        for (j, &h) in headings.iter().enumerate() {
            acc = acc.plus(&self.frame(j, h));
        }
        acc
    }

    fn score(&self, normal: Normal, headings: &[f64], objective: RefineObjective) -> f64 {
        match objective {
            RefineObjective::Reprojection => self.reprojection(normal, headings),
            RefineObjective::Homogeneous => self.homogeneous(&normal),
        }
    }

    /// Smallest singular value of the bearing system with the scale
    /// unknown restored as a column, i.e. the least-squares residual over
    /// unit-norm configurations.
    fn homogeneous(&self, normal: &Normal) -> f64 {
        let cols = self.system.cols();
        let s = self.gauge.scale_value;
        let mut full = DMatrix::zeros(cols + 1, cols + 1);
        full.view_mut((0, 0), (cols, cols)).copy_from(&normal.ata);
        for k in 0..cols {
            full[(k, cols)] = -normal.atb[k] / s;
            full[(cols, k)] = -normal.atb[k] / s;
        }
        full[(cols, cols)] = normal.btb / (s * s);
        // Inverse iteration from the scale-pinned solution, which is already
        // close to the smallest eigenvector.
        let Some(chol) = full.clone().cholesky() else {
            // Numerically singular: fall back to a full eigendecomposition.
            return full.symmetric_eigenvalues().min().max(0.0).sqrt();
        };
        let Some(start) = normal.ata.clone().cholesky().map(|c| c.solve(&normal.atb)) else {
            return f64::INFINITY;
        };
        let mut v = DVector::zeros(cols + 1);
        v.rows_mut(0, cols).copy_from(&start);
        v[cols] = s;
        let mut rayleigh = f64::INFINITY;
        for _ in 0..50 {
            v /= v.norm();
            let next = (&full * &v).dot(&v);
            v = chol.solve(&v);
            if !next.is_finite() {
                return f64::INFINITY;
            }
            let settled = (rayleigh - next).abs() <= 1e-14 * next.abs();
            rayleigh = next;
            if settled {
                break;
            }
        }
        rayleigh.max(0.0).sqrt()
    }

    /// Reprojection error of the least-squares configuration.
    fn reprojection(&self, normal: Normal, headings: &[f64]) -> f64 {
        let Some(chol) = normal.ata.cholesky() else {
            return f64::INFINITY;
        };
        let x = chol.solve(&normal.atb);
        let oriented = match derotate(self.obs, headings) {
            Ok(o) => o,
            Err(_) => return f64::INFINITY,
        };
        let (n, m) = (self.obs.n(), self.obs.m());
        let mut values = self.system.unpack(x.as_slice());
        let mut config = Configuration::from_values(&values, self.obs.dimension(), n, m);
        if self.obs.has_elevations() {
            let Ok(heights) =
                assemble_heights(&oriented, &config.points, &config.cameras, self.gauge)
            else {
                return f64::INFINITY;
            };
            let Some(z) = least_squares(&heights) else {
                return f64::INFINITY;
            };
            values.extend(heights.unpack(&z));
            config = Configuration::from_values(&values, self.obs.dimension(), n, m);
        }
        reprojection_error(&config, &oriented)
    }
}

/// Golden-section search over `center ± half`, widened up to three times
/// when the minimum sits on the bracket edge and narrowed by tenths while it
/// does not beat `current`, since a wide bracket can skip a narrow basin.
fn bracketed_search(
    eval: &mut impl FnMut(f64) -> f64,
    center: f64,
    mut half: f64,
    current: f64,
    tol: f64,
) -> (f64, f64) {
    let (mut best, mut best_f) = golden_section(eval, center - half, center + half, tol);
    for _ in 0..3 {
        if (best - center).abs() < half - 2.0 * tol {
            break;
        }
        half *= 4.0;
        (best, best_f) = golden_section(eval, center - half, center + half, tol);
    }
    let mut narrow = half;
    while best_f > current && narrow > 1e3 * tol {
        narrow /= 10.0;
        (best, best_f) = golden_section(eval, center - narrow, center + narrow, tol);
    }
    (best, best_f)
}

/// Step four: direction-set descent on the per-frame headings. Frame 1
/// stays fixed since a common rotation of all headings is unobservable.
/// Sweeps start along the single headings; after each sweep its net move
/// replaces the direction that gained most (Powell's rule), which follows
/// narrow valleys that plain coordinate descent zig-zags along. A move is
/// kept only when it does not raise the objective.
pub fn refine_orientation(
    obs: &ObservationSet,
    initial: &[f64],
    gauge: &Gauge,
    opts: RefineOptions,
) -> Result<Refinement> {
    let m = obs.m();
    let first = reconstruct(&derotate(obs, initial)?, gauge, opts.rank_tolerance)?;
    if first.verdict != Verdict::Unique {
        return Err(Error::Ambiguous(first.primary().kernel_dimension()));
    }
    let normals = FrameNormals::new(obs, gauge, initial)?;
    let mut headings = initial.to_vec();
    let score = |h: &[f64]| normals.score(normals.total(h), h, opts.objective);
    let mut current = score(&headings);
    let mut history = vec![current];
    // `None` is a single heading; `Some` a unit vector over all headings.
    let mut directions: Vec<(usize, Option<Vec<f64>>)> = (1..m).map(|j| (j, None)).collect();
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let start = current;
        let before = headings.clone();
        let (mut biggest, mut biggest_at) = (0.0, 0);
        for (k, (j, dir)) in directions.iter().enumerate() {
            let was = current;
            match dir {
                None => {
                    let j = *j;
                    let rest = normals
                        .total(&headings)
                        .minus(&normals.frame(j, headings[j]));
                    let mut trial = headings.clone();
                    let mut eval = |x: f64| {
                        trial[j] = x;
                        normals.score(rest.plus(&normals.frame(j, x)), &trial, opts.objective)
                    };
                    let half = (opts.bracket_scale * (headings[j] - headings[j - 1]).abs())
                        .max(opts.bracket_floor);
                    let (best, best_f) = bracketed_search(
                        &mut eval,
                        headings[j],
                        half,
                        current,
                        opts.search_tolerance,
                    );
                    if best_f <= current {
                        headings[j] = best;
                        current = best_f;
                    }
                }
                Some(d) => {
                    let base = headings.clone();
                    let along = |t: f64| -> Vec<f64> {
                        base.iter().zip(d).map(|(h, v)| h + t * v).collect()
                    };
                    let mut eval = |t: f64| score(&along(t));
                    let (best, best_f) = bracketed_search(
                        &mut eval,
                        0.0,
                        opts.bracket_floor,
                        current,
                        opts.search_tolerance,
                    );
                    if best_f <= current {
                        headings = along(best);
                        current = best_f;
                    }
                }
            }
            if was - current > biggest {
                biggest = was - current;
                biggest_at = k;
            }
        }
        let step: Vec<f64> = headings.iter().zip(&before).map(|(h, b)| h - b).collect();
        let length = step.iter().map(|d| d * d).sum::<f64>().sqrt();
        if length > 0.0 {
            let extrapolated: Vec<f64> = headings.iter().zip(&step).map(|(h, d)| h + d).collect();
            let far = score(&extrapolated);
            let gain = start - current;
            // Powell's test against building a degenerate direction set.
            let keep = far < start
                && 2.0 * (start - 2.0 * current + far) * (gain - biggest).powi(2)
                    < biggest * (start - far).powi(2);
            if keep {
                let unit: Vec<f64> = step.iter().map(|d| d / length).collect();
                let base = headings.clone();
                let along = |t: f64| -> Vec<f64> {
                    base.iter().zip(&unit).map(|(h, v)| h + t * v).collect()
                };
                let mut eval = |t: f64| score(&along(t));
                let (best, best_f) = bracketed_search(
                    &mut eval,
                    0.0,
                    opts.bracket_floor,
                    current,
                    opts.search_tolerance,
                );
                if best_f <= current {
                    headings = along(best);
                    current = best_f;
                }
                directions.remove(biggest_at);
                directions.push((0, Some(unit)));
            }
        }
        history.push(current);
        let gain = start - current;
        if gain < opts.tolerance || gain < opts.relative_tolerance * start {
            break;
        }
    }
    let mut report = reconstruct(&derotate(obs, &headings)?, gauge, opts.rank_tolerance)?;
    report.headings = Some(headings.clone());
    Ok(Refinement {
        headings,
        report,
        residual_history: history,
        sweeps,
    })
}

/// Full pipeline for turning cameras: mean-motion headings, refinement,
/// then the oriented reconstruction.
pub fn reconstruct_unoriented(
    obs: &ObservationSet,
    gauge: &Gauge,
    mean_opts: MeanMotionOptions,
    refine_opts: RefineOptions,
) -> Result<Refinement> {
    let initial = estimate_headings(obs, mean_opts)?;
    refine_orientation(obs, &initial, gauge, refine_opts)
}
