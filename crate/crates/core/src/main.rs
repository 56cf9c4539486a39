use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use omnisfm::degeneracy::{kernel_witness, make_fixture, Family, FixtureParams};
use omnisfm::dynamic::reconstruct_dynamic;
use omnisfm::experiment::{
    grid_experiment, linear_fit, linspace, noise_sweep, random_world, GridConfig, NoiseMode,
    SweepConfig, DEFAULT_MARGIN,
};
use omnisfm::orientation::{
    derotate, estimate_headings, reconstruct_unoriented, MeanMotionOptions, RefineOptions,
};
use omnisfm::projector::{perturb_with, project, NoiseModel};
use omnisfm::reconstruct::Configuration;
use omnisfm::{
    reconstruct, Axis, CameraRig, Dimension, Gauge, MotionBasis, ObservationSet, Result, World,
    DEFAULT_RANK_TOLERANCE,
};

#[derive(Parser)]
#[command(
    name = "omnisfm",
    version,
    about = "Linear structure from motion for omnidirectional cameras"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random world of points and cameras.
    Generate {
        #[arg(long, short = 'n', default_value_t = 10)]
        points: usize,
        #[arg(long, short = 'm', default_value_t = 10)]
        cameras: usize,
        #[arg(long, default_value_t = 2)]
        dimension: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        /// Give the cameras unknown headings turning by this much per frame.
        #[arg(long)]
        turn_rate: Option<f64>,
    },
    /// Photograph a world, optionally adding angle noise.
    Project {
        #[arg(long)]
        world: PathBuf,
        /// Noise amplitude in radians.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Normal noise with standard deviation `delta` instead of uniform.
        #[arg(long)]
        gaussian: bool,
    },
    /// Reconstruct points and cameras from observations.
    Reconstruct {
        /// Observation table (CSV) or observation JSON.
        #[arg(long)]
        observations: PathBuf,
        /// Point motion model, `taylor:k` or `fourier:k`.
        #[arg(long)]
        motion: Option<MotionBasis>,
        /// Recover the camera headings first.
        #[arg(long)]
        unoriented: bool,
        /// World file whose truth is compared with the reconstruction.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        gauge: GaugeArgs,
    },
    /// Noise sweep: reconstruction error against noise amplitude.
    Sweep {
        #[arg(long, short = 'm', default_value_t = 10)]
        cameras: usize,
        #[arg(long, short = 'n', default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 30)]
        levels: usize,
        #[arg(long, default_value_t = 0.1)]
        max_delta: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = Noise::Angle)]
        noise: Noise,
        #[arg(long, default_value_t = 2)]
        dimension: usize,
    },
    /// Error over a grid of camera and point counts.
    Grid {
        /// Largest camera and point count.
        #[arg(long, default_value_t = 20)]
        size: usize,
        /// The full 50 × 50 grid with 30 worlds per cell.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long)]
        worlds: Option<usize>,
        #[arg(long, value_enum, default_value_t = Noise::Angle)]
        noise: Noise,
    },
    /// Build a degenerate configuration and show its ambiguity.
    Ambiguity {
        #[arg(long)]
        family: Family,
        /// Displacement of the perturbed variant.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        /// Size of the kernel-witness deformation.
        #[arg(long, default_value_t = 0.1)]
        step: f64,
    },
}

#[derive(Args)]
struct GaugeArgs {
    /// Point placed at the origin.
    #[arg(long, default_value_t = 0)]
    anchor: usize,
    /// Point whose coordinate fixes the scale.
    #[arg(long, default_value_t = 1)]
    scale_point: usize,
    #[arg(long, default_value_t = 1.0)]
    scale_value: f64,
    /// Pin the scale point's motion along the scale axis.
    #[arg(long)]
    pin_scale_motion: bool,
}

impl GaugeArgs {
    fn gauge(&self) -> Gauge {
        Gauge {
            scale_value: self.scale_value,
            pin_scale_motion: self.pin_scale_motion,
            ..Gauge::new(self.anchor, self.scale_point, Axis::X)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Angle,
    Coordinate,
}

impl From<Noise> for NoiseMode {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Angle => NoiseMode::Angle,
            Noise::Coordinate => NoiseMode::Coordinate,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    Ok(text)
}

fn write_json(w: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn configuration_csv(w: &mut dyn Write, config: &Configuration) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["kind", "index", "x", "y", "z"])?;
    let rows = config
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| ("point", i, p))
        .chain(
            config
                .cameras
                .iter()
                .enumerate()
                .map(|(j, q)| ("camera", j, q)),
        );
    for (kind, k, v) in rows {
        csv.write_record([
            kind.to_string(),
            k.to_string(),
            v.x.to_string(),
            v.y.to_string(),
            v.z.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn load_observations(path: &Path, oriented: bool) -> Result<ObservationSet> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('{') {
        ObservationSet::from_json(&text)
    } else {
        ObservationSet::read_csv(text.as_bytes(), None, oriented)
    }
}

fn run(cli: Cli) -> Result<()> {
    let Common { seed, out, format } = cli.common;
    let mut w = output(out.as_deref())?;
    let w = &mut *w;
    match cli.command {
        Command::Generate {
            points,
            cameras,
            dimension,
            margin,
            turn_rate,
        } => {
            let dim = Dimension::from_value(dimension)?;
            let mut world = random_world(cameras, points, dim, seed, margin)?;
            if let Some(rate) = turn_rate {
                let headings = (0..cameras).map(|j| rate * j as f64).collect();
                world.rig = CameraRig::new(
                    dim,
                    world.rig.positions().to_vec(),
                    Some(headings),
                    world.rig.times().to_vec(),
                )?;
            }
            match format.unwrap_or(Format::Json) {
                Format::Json => writeln!(w, "{}", world.to_json()?)?,
                Format::Csv => {
                    let config = Configuration {
                        dimension: dim,
                        points: world.scene.points(),
                        cameras: world.rig.positions().to_vec(),
                    };
                    configuration_csv(w, &config)?;
                }
            }
        }
        Command::Project {
            world,
            delta,
            gaussian,
        } => {
            let world = World::from_json(&read_text(&world)?)?;
            let exact = project(&world.scene, &world.rig, None)?;
            let model = if gaussian {
                NoiseModel::Gaussian
            } else {
                NoiseModel::Uniform
            };
            let obs = if delta > 0.0 {
                perturb_with(&exact, delta, model, seed)?
            } else {
                exact
            };
            match format.unwrap_or(Format::Csv) {
                Format::Csv => obs.write_csv(&mut *w)?,
                Format::Json => writeln!(w, "{}", obs.to_json()?)?,
            }
        }
        Command::Reconstruct {
            observations,
            motion,
            unoriented,
            truth,
            gauge,
        } => {
            let gauge = gauge.gauge();
            let obs = load_observations(&observations, !unoriented)?;
            let basis = motion.unwrap_or(MotionBasis::STATIC);
            let mut report = if unoriented || !obs.is_oriented() {
                if basis.is_static() {
                    let refined = reconstruct_unoriented(
                        &obs,
                        &gauge,
                        MeanMotionOptions::default(),
                        RefineOptions::default(),
                    )?;
                    refined.report
                } else {
                    // Refinement scores static reconstructions, so moving
                    // scenes keep the mean-motion headings.
                    let headings = estimate_headings(&obs, MeanMotionOptions::default())?;
                    let mut report = reconstruct_dynamic(
                        &derotate(&obs, &headings)?,
                        basis,
                        &gauge,
                        DEFAULT_RANK_TOLERANCE,
                    )?;
                    report.warnings.push(
                        "headings from mean motion only; refinement needs a static scene".into(),
                    );
                    report.headings = Some(headings);
                    report
                }
            } else if basis.is_static() {
                reconstruct(&obs, &gauge, DEFAULT_RANK_TOLERANCE)?
            } else {
                reconstruct_dynamic(&obs, basis, &gauge, DEFAULT_RANK_TOLERANCE)?
            };
            if let Some(path) = truth {
                let world = World::from_json(&read_text(&path)?)?;
                report = report.with_ground_truth(&world)?;
            }
            match format.unwrap_or(Format::Json) {
                Format::Json => write_json(w, &serde_json::to_value(&report)?)?,
                Format::Csv => configuration_csv(w, &report.configuration)?,
            }
        }
        Command::Sweep {
            cameras,
            points,
            levels,
            max_delta,
            trials,
            noise,
            dimension,
        } => {
            let config = SweepConfig {
                dimension: Dimension::from_value(dimension)?,
                deltas: linspace(0.0, max_delta, levels),
                trials,
                noise: noise.into(),
                ..SweepConfig::standard(cameras, points, seed)
            };
            let result = noise_sweep(&config)?;
            match format.unwrap_or(Format::Csv) {
                Format::Csv => result.write_csv(&mut *w)?,
                Format::Json => write_json(
                    w,
                    &json!({
                        "result": result,
                        "mean_max_abs": result.mean_max_abs_curve(),
                        "fit": linear_fit(&result.mean_max_abs_curve()),
                    }),
                )?,
            }
        }
        Command::Grid {
            size,
            full,
            delta,
            worlds,
            noise,
        } => {
            let base = if full {
                GridConfig::full(seed)
            } else {
                GridConfig::reduced(size, seed)
            };
            let config = GridConfig {
                delta,
                worlds_per_cell: worlds.unwrap_or(base.worlds_per_cell),
                noise: noise.into(),
                ..base
            };
            let result = grid_experiment(&config)?;
            match format.unwrap_or(Format::Csv) {
                Format::Csv => result.write_csv(&mut *w)?,
                Format::Json => write_json(w, &serde_json::to_value(&result)?)?,
            }
        }
        Command::Ambiguity {
            family,
            amplitude,
            step,
        } => {
            let params = FixtureParams {
                amplitude,
                ..FixtureParams::default()
            };
            let fixture = make_fixture(family, &params, seed)?;
            let degenerate = fixture.analyze_degenerate()?;
            let perturbed = fixture.analyze_perturbed()?;
            let witness = kernel_witness(&degenerate, step)?;
            match format.unwrap_or(Format::Json) {
                Format::Json => {
                    let world: serde_json::Value =
                        serde_json::from_str(&fixture.degenerate.to_json()?)?;
                    write_json(
                        w,
                        &json!({
                            "family": family.name(),
                            "world": world,
                            "deformable": fixture.deformable,
                            "verdict": degenerate.verdict,
                            "kernel_dimension": degenerate.primary().kernel_dimension(),
                            "reconstruction": degenerate.configuration,
                            "witness": witness,
                            "perturbed_verdict": perturbed.verdict,
                        }),
                    )?
                }
                Format::Csv => {
                    writeln!(
                        w,
                        "# {}: {:?}, kernel dimension {}; perturbed: {:?}",
                        family.name(),
                        degenerate.verdict,
                        degenerate.primary().kernel_dimension(),
                        perturbed.verdict
                    )?;
                    configuration_csv(w, &witness)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
