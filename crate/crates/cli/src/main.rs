//! `pansharp`: pansharpening, evaluation, co-registration, tile selection,
//! adaptation, gradient checks and synthetic scenes from the command line.
//!
//! Exit codes: 0 success, 1 numeric failure, 2 input or configuration error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pansharp_core::adapt::{fuse, select_tiles, target_adapt, write_log, AdaptOutcome, TileSet, TuningSet};
use pansharp_core::coreg::{estimate_band_shifts_with, shift_grid, AlignmentVector, CoregistrationProduct};
use pansharp_core::diagnostics::gradient_suite;
use pansharp_core::model::{init_model, load_checkpoint, save_checkpoint, ModelWeights};
use pansharp_core::raster::{
    load_raster, make_synthetic_scene, save_raster, upsample_poly23, PanRaster, Raster, SceneConfig, SceneLayout, SensorSpec,
};
use pansharp_core::report::quality_report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::{split_overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] pansharp_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 1,
            CliError::Core(e) if e.is_numeric() => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "pansharp", version, about = "Unsupervised full-resolution pansharpening")]
#[command(after_help = "Any config key can be overridden as --section.key=value, e.g. --loss.gamma=0.1")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). `--threads 1` makes every artifact
    /// byte-reproducible and zeroes wall-clock fields.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Panchromatic raster (JSON header or PGM).
    #[arg(long)]
    pan: PathBuf,
    /// Multispectral raster (JSON header).
    #[arg(long)]
    ms: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse PAN and MS, optionally adapting the network first.
    Pansharpen {
        #[command(flatten)]
        inputs: Inputs,
        /// Checkpoint manifest; a seeded initialisation when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Target-adaptation iterations before fusing.
        #[arg(long, default_value_t = 0)]
        adapt: usize,
        /// Adapt on the whole image instead of the selected tiles.
        #[arg(long)]
        full_ta: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality indices of an existing fused product.
    Metrics {
        #[arg(long)]
        fused: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        /// Report D_λ without re-applying band shifts only.
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-band shift search against the PAN.
    Align {
        #[command(flatten)]
        inputs: Inputs,
        /// Also write the reference correlation field as a raster.
        #[arg(long)]
        save_rho_max: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Representative-tile selection for fast adaptation.
    SelectTiles {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Target adaptation; writes adapted weights and the iteration log.
    Adapt {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        full_ta: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes freshly initialised weights.
    Init {
        #[arg(long)]
        bands: usize,
        /// Zero every trunk parameter: the network then returns the
        /// interpolated MS exactly.
        #[arg(long)]
        zero_trunk: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and the loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic scene with ground truth and a construction manifest.
    Synth {
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        bands: usize,
        /// Band shifts as `dx,dy;dx,dy;…` in PAN pixels (half-pixel grid).
        #[arg(long, conflicts_with = "random_shifts")]
        shifts: Option<String>,
        /// Draw every band's shift uniformly from the search grid.
        #[arg(long)]
        random_shifts: bool,
        #[arg(long, value_enum, default_value_t = Layout::Regions)]
        layout: Layout,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Regions,
    Quadrants,
}

struct Ctx {
    cfg: RunConfig,
    deterministic: bool,
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(pansharp_core::Error::from)?;
    write_text(path, &(text + "\n"))
}

impl Ctx {
    fn echo_config(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("config.toml"), &self.cfg.to_toml())
    }

    fn load_inputs(&self, inputs: &Inputs) -> Result<(PanRaster, Raster, SensorSpec)> {
        let pan = PanRaster::from_raster(load_raster(&inputs.pan)?)?;
        let ms = load_raster(&inputs.ms)?;
        let spec = self.cfg.sensor.spec(ms.bands())?;
        let r = spec.ratio;
        if pan.dims() != (ms.height() * r, ms.width() * r) {
            return Err(CliError::Input(format!(
                "PAN {:?} is not {r}× the MS size {}x{}",
                pan.dims(),
                ms.height(),
                ms.width()
            )));
        }
        Ok((pan, ms, spec))
    }

    fn product(&self, pan: &PanRaster, ms: &Raster, spec: &SensorSpec) -> Result<CoregistrationProduct> {
        Ok(estimate_band_shifts_with(pan, ms, spec, &self.cfg.coreg)?)
    }

    fn weights(&self, path: Option<&Path>, bands: usize) -> Result<ModelWeights> {
        let w = match path {
            Some(p) => load_checkpoint(p)?,
            None => init_model(&self.cfg.model.config(bands), self.cfg.seed)?,
        };
        if w.bands() != bands {
            return Err(CliError::Input(format!("weights expect {} bands, the MS has {bands}", w.bands())));
        }
        Ok(w)
    }

    /// Adapts `w0` and writes the log, the adapted weights and (fast TA) the
    /// tiles into `dir`. A numeric abort still writes everything, then fails.
    #[allow(clippy::too_many_arguments)]
    fn adapt(
        &self,
        w0: &ModelWeights,
        pan: &PanRaster,
        ms: &Raster,
        spec: &SensorSpec,
        product: &CoregistrationProduct,
        iterations: usize,
        full_ta: bool,
        dir: &Path,
    ) -> Result<ModelWeights> {
        let mut cfg = self.cfg.adapt.clone();
        cfg.iterations = iterations;
        cfg.record_wall_time &= !self.deterministic;
        let (h, w) = pan.dims();
        let whole = full_ta || h < cfg.tile_size || w < cfg.tile_size;
        if whole && !full_ta {
            log::warn!("image {h}x{w} is smaller than one {} tile: adapting on the whole image", cfg.tile_size);
        }
        let data = if whole {
            TuningSet::whole(pan, ms, product, spec, &self.cfg.loss)?
        } else {
            let mt = upsample_poly23(ms, spec.ratio)?;
            let tiles: TileSet = select_tiles(pan, &mt, &cfg)?;
            write_json(&dir.join("tiles.json"), &tiles)?;
            TuningSet::from_tiles(pan, ms, &mt, product, spec, &self.cfg.loss, &tiles)?
        };
        let AdaptOutcome {
            weights,
            trajectory,
            abort,
        } = target_adapt(w0, &data, &cfg)?;
        write_log(&dir.join("log.jsonl"), &trajectory)?;
        save_checkpoint(&weights, &dir.join("weights.json"))?;
        if let Some(a) = abort {
            return Err(CliError::Numeric(format!(
                "adaptation aborted at iteration {}: {} (last finite weights saved)",
                a.iteration, a.reason
            )));
        }
        Ok(weights)
    }
}

fn parse_shifts(text: &str, bands: usize) -> Result<AlignmentVector> {
    let shifts = text
        .split(';')
        .map(|pair| {
            let v: Vec<f64> = pair
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::Input(format!("shift '{pair}': {e}")))?;
            match v[..] {
                [dx, dy] => Ok([dx, dy]),
                _ => Err(CliError::Input(format!("shift '{pair}' needs two components"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if shifts.len() != bands {
        return Err(CliError::Input(format!("{} shifts given for {bands} bands", shifts.len())));
    }
    AlignmentVector::new(shifts).map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Serialize)]
struct BandShift {
    band: usize,
    shift: [f64; 2],
    score: Option<f64>,
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Ctx {
        cfg,
        deterministic: cli.threads == 1,
    };
    match cli.command {
        Command::Pansharpen {
            inputs,
            weights,
            adapt,
            full_ta,
            out,
        } => {
            let (pan, ms, spec) = ctx.load_inputs(&inputs)?;
            let mut w = ctx.weights(weights.as_deref(), ms.bands())?;
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            let product = ctx.product(&pan, &ms, &spec)?;
            if adapt > 0 {
                w = ctx.adapt(&w, &pan, &ms, &spec, &product, adapt, full_ta, &out)?;
            }
            let fused = fuse(&w, &pan, &ms, &spec)?;
            save_raster(&fused, &out.join("fused.json"))?;
            let report = quality_report(&fused, &pan, &ms, &product, &spec, &ctx.cfg.metrics, ctx.cfg.loss.alignment)?;
            write_json(&out.join("report.json"), &report)?;
        }
        Command::Metrics {
            fused,
            inputs,
            no_align,
            out,
        } => {
            let (pan, ms, spec) = ctx.load_inputs(&inputs)?;
            let fused = load_raster(&fused)?;
            if fused.bands() != ms.bands() || fused.dims() != pan.dims() {
                return Err(CliError::Input(format!(
                    "fused {}x{}x{} does not match PAN {:?} with {} MS bands",
                    fused.bands(),
                    fused.height(),
                    fused.width(),
                    pan.dims(),
                    ms.bands()
                )));
            }
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            let product = ctx.product(&pan, &ms, &spec)?;
            let report = quality_report(&fused, &pan, &ms, &product, &spec, &ctx.cfg.metrics, !no_align)?;
            write_json(&out.join("report.json"), &report)?;
            println!("{}", serde_json::to_string(&report).map_err(pansharp_core::Error::from)?);
        }
        Command::Align {
            inputs,
            save_rho_max,
            out,
        } => {
            let (pan, ms, spec) = ctx.load_inputs(&inputs)?;
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            let product = ctx.product(&pan, &ms, &spec)?;
            let bands: Vec<BandShift> = (0..product.bands())
                .map(|b| {
                    let (dx, dy) = product.shifts.get(b);
                    BandShift {
                        band: b,
                        shift: [dx, dy],
                        score: product.scores[b],
                    }
                })
                .collect();
            write_json(&out.join("align.json"), &bands)?;
            if save_rho_max {
                save_raster(&product.rho_max.to_raster()?, &out.join("rho_max.json"))?;
            }
        }
        Command::SelectTiles { inputs, out } => {
            let (pan, ms, spec) = ctx.load_inputs(&inputs)?;
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            let mt = upsample_poly23(&ms, spec.ratio)?;
            let tiles = select_tiles(&pan, &mt, &ctx.cfg.adapt)?;
            write_json(&out.join("tiles.json"), &tiles)?;
        }
        Command::Adapt {
            inputs,
            weights,
            full_ta,
            out,
        } => {
            let (pan, ms, spec) = ctx.load_inputs(&inputs)?;
            let w = ctx.weights(weights.as_deref(), ms.bands())?;
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            let product = ctx.product(&pan, &ms, &spec)?;
            ctx.adapt(&w, &pan, &ms, &spec, &product, ctx.cfg.adapt.iterations, full_ta, &out)?;
        }
        Command::Init { bands, zero_trunk, out } => {
            if bands == 0 {
                return Err(CliError::Input("--bands must be positive".into()));
            }
            let w = init_model(&ctx.cfg.model.config(bands), ctx.cfg.seed)?;
            let w = if zero_trunk { w.zero_trunk() } else { w };
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            save_checkpoint(&w, &out.join("weights.json"))?;
        }
        Command::Gradcheck { step, tolerance, out } => {
            let cases = gradient_suite(step, tolerance)?;
            for c in &cases {
                println!(
                    "{:<28} {} max_rel_error={:.3e} checked={} excluded={}",
                    c.name,
                    if c.passed { "ok  " } else { "FAIL" },
                    c.max_rel_error,
                    c.checked,
                    c.excluded
                );
            }
            if let Some(dir) = out {
                out_dir(&dir)?;
                write_json(&dir.join("gradcheck.json"), &cases)?;
            }
            let failed = cases.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Numeric(format!("{failed} gradient checks failed")));
            }
        }
        Command::Synth {
            size,
            bands,
            shifts,
            random_shifts,
            layout,
            out,
        } => {
            let spec = ctx.cfg.sensor.spec(bands)?;
            let shifts = match (shifts, random_shifts) {
                (Some(text), _) => parse_shifts(&text, bands)?,
                (None, true) => {
                    let grid = shift_grid();
                    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x5eed);
                    let picks = (0..bands).map(|_| grid[rng.gen_range(0..grid.len())]).map(|(dx, dy)| [dx, dy]).collect();
                    AlignmentVector::new(picks)?
                }
                (None, false) => AlignmentVector::zeros(bands),
            };
            let layout = match layout {
                Layout::Regions => SceneLayout::Regions,
                Layout::Quadrants => SceneLayout::Quadrants,
            };
            let scene_cfg = SceneConfig {
                spec,
                ..SceneConfig::new(ctx.cfg.seed, size, bands)
            }
            .with_shifts(shifts)
            .with_layout(layout);
            let scene = make_synthetic_scene(&scene_cfg).map_err(|e| CliError::Input(e.to_string()))?;
            out_dir(&out)?;
            ctx.echo_config(&out)?;
            save_raster(scene.pan.as_raster(), &out.join("pan.json"))?;
            save_raster(&scene.ms, &out.join("ms.json"))?;
            save_raster(&scene.ground_truth, &out.join("gt.json"))?;
            write_json(&out.join("manifest.json"), &scene.record)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
