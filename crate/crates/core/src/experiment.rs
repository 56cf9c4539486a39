//! Synthetic accuracy experiments: random worlds, noise sweeps and
//! camera/point-count grids, with CSV and JSON output.

use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Axis, CameraRig, Dimension, Scene, World};
use crate::projector::{perturb, project};
use crate::reconstruct::{reconstruct, registration_residuals, Configuration};
use crate::sampling::{derive_seed, seeded_rng};
use crate::solver::{Gauge, Verdict, DEFAULT_RANK_TOLERANCE};

/// Error statistics of one reconstruction against its gauge-fixed truth.
/// `ε_i` is the Euclidean distance of entity `i` (points, then cameras).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Mean over entities of each entity's average signed coordinate
    /// deviation.
    pub mean: f64,
    pub rms: f64,
    /// Largest absolute deviation in any single coordinate.
    pub max_coord: f64,
}

impl ErrorStats {
    pub fn from_residuals(residuals: &[Vector3<f64>], dim: Dimension) -> Self {
        let d = dim.value();
        let count = residuals.len().max(1) as f64;
        let dist: Vec<f64> = residuals.iter().map(|r| r.norm()).collect();
        let coords = |r: &Vector3<f64>| r.iter().take(d).copied().collect::<Vec<_>>();
        ErrorStats {
            max_abs: dist.iter().copied().fold(0.0, f64::max),
            mean_abs: dist.iter().sum::<f64>() / count,
            mean: residuals
                .iter()
                .map(|r| coords(r).iter().sum::<f64>() / d as f64)
                .sum::<f64>()
                / count,
            rms: (dist.iter().map(|e| e * e).sum::<f64>() / count).sqrt(),
            max_coord: residuals
                .iter()
                .flat_map(coords)
                .map(f64::abs)
                .fold(0.0, f64::max),
        }
    }
}

/// Default separation and non-collinearity margin for random worlds.
pub const DEFAULT_MARGIN: f64 = 0.05;

const ELEMENT_BUDGET: usize = 10_000;
const WORLD_BUDGET: usize = 1_000;

fn sample_cube(rng: &mut ChaCha8Rng, dim: Dimension) -> Vector3<f64> {
    let mut c = || rng.random_range(-1.0..=1.0);
    let (x, y) = (c(), c());
    let z = if dim == Dimension::Spatial { c() } else { 0.0 };
    Vector3::new(x, y, z)
}

/// Smallest singular value of the centered horizontal coordinates.
fn spread(points: &[Vector3<f64>]) -> f64 {
    let k = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / k;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / k;
    let m = DMatrix::from_fn(points.len(), 2, |r, c| {
        if c == 0 {
            points[r].x - cx
        } else {
            points[r].y - cy
        }
    });
    m.singular_values().min()
}

/// Points and cameras uniform in `[−1, 1]^d`, each drawn until it keeps
/// `margin` from everything drawn before (horizontally too, in 3D). The
/// point set and camera set must each have horizontal spread `≥ margin`,
/// and `|x_2 − x_1| ≥ margin` so the default gauge is usable.
pub fn random_world(m: usize, n: usize, dim: Dimension, seed: u64, margin: f64) -> Result<World> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "random worlds need n, m ≥ 1".into(),
        ));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin {margin}")));
    }
    let mut rng = seeded_rng(seed, &[0x3041d]);
    'world: for _ in 0..WORLD_BUDGET {
        let mut placed: Vec<Vector3<f64>> = Vec::with_capacity(n + m);
        for k in 0..n + m {
            let mut accepted = None;
            for _ in 0..ELEMENT_BUDGET {
                let p = sample_cube(&mut rng, dim);
                let clear = placed
                    .iter()
                    .all(|q| (p - q).norm() >= margin && (p - q).xy().norm() >= margin);
                let gauge_ok = k != 1 || (p.x - placed[0].x).abs() >= margin;
                if clear && gauge_ok {
                    accepted = Some(p);
                    break;
                }
            }
            match accepted {
                Some(p) => placed.push(p),
                None => continue 'world,
            }
        }
        let (points, cameras) = placed.split_at(n);
        if (n >= 3 && spread(points) < margin) || (m >= 3 && spread(cameras) < margin) {
            continue;
        }
        return World::new(
            Scene::from_vectors(dim, points.to_vec())?,
            CameraRig::oriented(dim, cameras.to_vec())?,
        );
    }
    Err(Error::SamplingBudget(WORLD_BUDGET))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Uniform noise in `[−δ, δ]` on every observed angle.
    #[default]
    Angle,
    /// Every point and camera displaced uniformly in `[−δ, δ]` per
    /// coordinate before exact projection; errors are measured against the
    /// undisplaced world.
    Coordinate,
}

/// Outcome of one noisy reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trial {
    /// `None` when the reconstruction was ambiguous or failed.
    pub stats: Option<ErrorStats>,
    pub ambiguous: bool,
}

fn displaced(world: &World, delta: f64, seed: u64) -> Result<World> {
    let mut rng = seeded_rng(seed, &[0xd15]);
    let dim = world.dimension();
    let mut shift = |p: &Vector3<f64>| {
        let mut q = *p;
        for c in 0..dim.value() {
            q[c] += rng.random_range(-delta..=delta);
        }
        q
    };
    let points: Vec<_> = world.scene.points().iter().map(&mut shift).collect();
    let cameras: Vec<_> = world.rig.positions().iter().map(&mut shift).collect();
    World::new(
        Scene::from_vectors(dim, points)?,
        CameraRig::oriented(dim, cameras)?,
    )
}

/// Projects, adds noise, reconstructs under [`widest_gauge`] and compares
/// with the truth.
pub fn run_trial(world: &World, delta: f64, mode: NoiseMode, noise_seed: u64) -> Trial {
    let gauge = widest_gauge(world);
    let attempt = || -> Result<Option<Configuration>> {
        let obs = match mode {
            NoiseMode::Angle => {
                let exact = project(&world.scene, &world.rig, None)?;
                perturb(&exact, delta, noise_seed)?
            }
            NoiseMode::Coordinate => {
                let moved = if delta > 0.0 {
                    displaced(world, delta, noise_seed)?
                } else {
                    world.clone()
                };
                project(&moved.scene, &moved.rig, None)?
            }
        };
        let report = reconstruct(&obs, &gauge, DEFAULT_RANK_TOLERANCE)?;
        Ok((report.verdict == Verdict::Unique).then_some(report.configuration))
    };
    match attempt() {
        Ok(Some(config)) => match registration_residuals(&config, world, &gauge) {
            Ok(res) => Trial {
                stats: Some(ErrorStats::from_residuals(&res, world.dimension())),
                ambiguous: false,
            },
            Err(_) => Trial {
                stats: None,
                ambiguous: true,
            },
        },
        _ => Trial {
            stats: None,
            ambiguous: true,
        },
    }
}

/// Anchor at `P_1`, scale pinned on the point whose `x` lies farthest from
/// `x_1`, so the pinned span is as large as the world allows.
pub fn widest_gauge(world: &World) -> Gauge {
    let x0 = world.scene.point(0).x;
    let scale_point = (1..world.n())
        .max_by(|&a, &b| {
            let da = (world.scene.point(a).x - x0).abs();
            let db = (world.scene.point(b).x - x0).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(1);
    Gauge::new(0, scale_point, Axis::X)
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub m: usize,
    pub n: usize,
    pub dimension: Dimension,
    pub deltas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub margin: f64,
    pub noise: NoiseMode,
}

impl SweepConfig {
    /// Thirty noise levels in `[0, 0.1]`, ten worlds each.
    pub fn standard(m: usize, n: usize, seed: u64) -> Self {
        SweepConfig {
            m,
            n,
            dimension: Dimension::Planar,
            deltas: linspace(0.0, 0.1, 30),
            trials: 10,
            seed,
            margin: DEFAULT_MARGIN,
            noise: NoiseMode::Angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub trial: usize,
    #[serde(flatten)]
    pub outcome: Trial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

/// Trial `t` uses the same world at every noise level; only the noise
/// draw changes with the level.
pub fn noise_sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidParameter("noise levels must be ≥ 0".into()));
    }
    let worlds: Vec<World> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            random_world(
                config.m,
                config.n,
                config.dimension,
                derive_seed(config.seed, &[1, t as u64]),
                config.margin,
            )
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..config.deltas.len())
        .flat_map(|d| (0..config.trials).map(move |t| (d, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(d, t)| SweepRow {
            delta: config.deltas[d],
            trial: t,
            outcome: run_trial(
                &worlds[t],
                config.deltas[d],
                config.noise,
                derive_seed(config.seed, &[2, d as u64, t as u64]),
            ),
        })
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        rows,
    })
}

impl SweepResult {
    /// `(delta, max_abs)` of every non-ambiguous trial.
    pub fn max_abs_points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.stats.map(|s| (r.delta, s.max_abs)))
            .collect()
    }

    /// `(delta, mean max_abs)` over the non-ambiguous trials of each level.
    pub fn mean_max_abs_curve(&self) -> Vec<(f64, f64)> {
        self.config
            .deltas
            .iter()
            .filter_map(|&d| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.delta == d)
                    .filter_map(|r| r.outcome.stats.map(|s| s.max_abs))
                    .collect();
                (!v.is_empty()).then(|| (d, v.iter().sum::<f64>() / v.len() as f64))
            })
            .collect()
    }

    pub fn ambiguous_count(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.ambiguous).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "delta",
            "trial",
            "max_abs",
            "mean_abs",
            "mean",
            "rms",
            "ambiguous",
        ])?;
        for r in &self.rows {
            let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
            let s = r.outcome.stats;
            w.write_record([
                format!("{}", r.delta),
                r.trial.to_string(),
                f(s.map(|s| s.max_abs)),
                f(s.map(|s| s.mean_abs)),
                f(s.map(|s| s.mean)),
                f(s.map(|s| s.rms)),
                r.outcome.ambiguous.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub m_range: RangeInclusive<usize>,
    pub n_range: RangeInclusive<usize>,
    pub dimension: Dimension,
    pub delta: f64,
    pub worlds_per_cell: usize,
    pub seed: u64,
    pub margin: f64,
    pub noise: NoiseMode,
}

impl GridConfig {
    /// Up to `size` cameras and points, 10 worlds per cell, `δ = 0.01`.
    pub fn reduced(size: usize, seed: u64) -> Self {
        GridConfig {
            m_range: 1..=size,
            n_range: 1..=size,
            dimension: Dimension::Planar,
            delta: 0.01,
            worlds_per_cell: 10,
            seed,
            margin: DEFAULT_MARGIN,
            noise: NoiseMode::Angle,
        }
    }

    /// The full published grid: `1 ≤ m, n ≤ 50`, 30 worlds per cell.
    pub fn full(seed: u64) -> Self {
        GridConfig {
            m_range: 1..=50,
            n_range: 1..=50,
            worlds_per_cell: 30,
            ..Self::reduced(50, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub m: usize,
    pub n: usize,
    /// Mean of `max_abs` over the worlds that reconstructed uniquely.
    pub avg_max_abs: Option<f64>,
    /// Fraction of worlds that were ambiguous or could not be solved.
    pub ambiguous_fraction: f64,
    pub worlds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub config: GridConfig,
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn cell(&self, m: usize, n: usize) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.m == m && c.n == n)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "n", "avg_max_abs", "ambiguous_fraction"])?;
        for c in &self.cells {
            w.write_record([
                c.m.to_string(),
                c.n.to_string(),
                c.avg_max_abs.map_or(String::new(), |x| format!("{x:e}")),
                c.ambiguous_fraction.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn grid_experiment(config: &GridConfig) -> Result<GridResult> {
    if config.m_range.is_empty() || config.n_range.is_empty() {
        return Err(Error::InvalidParameter("empty grid range".into()));
    }
    if !(config.delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level {}",
            config.delta
        )));
    }
    let cells: Vec<(usize, usize)> = config
        .m_range
        .clone()
        .flat_map(|m| config.n_range.clone().map(move |n| (m, n)))
        .collect();
    let jobs: Vec<(usize, usize, usize)> = cells
        .iter()
        .flat_map(|&(m, n)| (0..config.worlds_per_cell).map(move |w| (m, n, w)))
        .collect();
    let trials: Vec<Trial> = jobs
        .par_iter()
        .map(|&(m, n, w)| {
            let path = [m as u64, n as u64, w as u64];
            match random_world(
                m,
                n,
                config.dimension,
                derive_seed(config.seed, &path),
                config.margin,
            ) {
                Ok(world) => run_trial(
                    &world,
                    config.delta,
                    config.noise,
                    derive_seed(config.seed ^ 0x6e6f6973, &path),
                ),
                Err(_) => Trial {
                    stats: None,
                    ambiguous: true,
                },
            }
        })
        .collect();
    let per = config.worlds_per_cell;
    let cells = cells
        .iter()
        .enumerate()
        .map(|(k, &(m, n))| {
            let chunk = &trials[k * per..(k + 1) * per];
            let good: Vec<f64> = chunk
                .iter()
                .filter_map(|t| t.stats.map(|s| s.max_abs))
                .collect();
            GridCell {
                m,
                n,
                avg_max_abs: (!good.is_empty())
                    .then(|| good.iter().sum::<f64>() / good.len() as f64),
                ambiguous_fraction: chunk.iter().filter(|t| t.ambiguous).count() as f64
                    / per.max(1) as f64,
                worlds: per,
            }
        })
        .collect();
    Ok(GridResult {
        config: config.clone(),
        cells,
    })
}

/// Least-squares line `y = intercept + slope · x` and its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let k = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Exponent `b` of the best power law `y ≈ a·x^b` (fit in log-log space).
pub fn power_law_exponent(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    linear_fit(&logs).map(|f| f.slope)
}
