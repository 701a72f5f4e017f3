//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use super::config::{read_config, ConfigDoc};
use super::export::{export_slice, ExportFormat};
use super::fieldfile::{read_plane_data, write_plane_data, write_real, FieldKind, RawField};
use super::intensity_csv::{read_intensity_file, write_intensity_file};
use super::summary::{IterationLog, Overrides, RunSummary, ITERATIONS_FILE};
use crate::error::{Error, Result};
use crate::forward::oracle::{born_oracle, mie_oracle};
use crate::forward::{analytic_bound, simulate};
use crate::phase::{add_noise, retrieve_phased, synthesize_intensity, ComplexPlaneData, IntensityData};
use crate::propagate::propagate_to_boundary;
use crate::reconstruct::{run_phased, IterRecord, ReconstructionResult, DEFAULT_K_EPSILON};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

pub const DEFAULT_OUT: &str = "phaseless-out";
pub const BOUND_K: f64 = 119.6;

#[derive(Debug, Parser)]
#[command(
    name = "phaseless",
    version,
    about = "Phaseless inverse scattering for microsphere media"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration; defaults to the one-sphere reference setup.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Relative noise level applied to synthesized intensity.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Multiplies the wavenumber band, in (0, 1].
    #[arg(long = "k-scale", global = true)]
    pub k_scale: Option<f64>,
    /// Worker threads for the compute stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize intensity on the measurement plane from the phantom.
    Simulate,
    /// Recover complex plane data from an intensity table.
    Retrieve {
        /// Intensity CSV; defaults to `<out>/intensity.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Propagate phased plane data down to the data boundary.
    Propagate {
        /// Plane data file; defaults to `<out>/retrieved.psf`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Reconstruct the coefficient from phased plane data.
    Reconstruct {
        /// Plane data file; defaults to `<out>/retrieved.psf`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate, retrieve, propagate and reconstruct in one run.
    Pipeline,
    /// Compare the volume solver against Born and Mie references.
    Oracle,
    /// Print the analytic bounds for one and two spheres.
    Bound {
        #[arg(long, default_value_t = BOUND_K)]
        k: f64,
        /// Distance of the measurement plane.
        #[arg(long, default_value_t = crate::phantom::MEASUREMENT_Z)]
        r: f64,
    },
    /// Render one slice of a field file as CSV or 16-bit PGM.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        axis: usize,
        #[arg(long)]
        index: usize,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, value_enum, default_value_t = Component::Abs)]
        component: Component,
    },
}

/// Scalar taken from complex files before export.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Abs,
    Re,
    Im,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::ResourceRefused { .. } => EXIT_RESOURCE,
        Error::NonConvergence { .. } | Error::NonFinite(_) | Error::Resolution(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Configuration after command-line overrides.
struct Context {
    raw: Option<Value>,
    doc: ConfigDoc,
    overrides: Overrides,
    out: Option<PathBuf>,
}

impl Context {
    fn load(g: &GlobalArgs) -> Result<Self> {
        let (raw, mut doc) = match &g.config {
            Some(p) => {
                let c = read_config(p)?;
                (Some(c.raw), c.doc)
            }
            None => (None, ConfigDoc::default()),
        };
        let overrides = Overrides {
            noise: g.noise,
            seed: g.seed,
            k_scale: g.k_scale,
        };
        if let Some(v) = g.noise {
            doc.pipeline.noise = v;
        }
        if let Some(v) = g.seed {
            doc.pipeline.seed = v;
        }
        if let Some(v) = g.k_scale {
            doc.band.k_scale = v;
        }
        let errors = doc.semantic_errors();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(Self {
            raw,
            doc,
            overrides,
            out: g.out.clone(),
        })
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn summary(&self, command: &str) -> RunSummary {
        let mut s = RunSummary::new(command);
        s.config_echo = self.raw.clone();
        s.resolved_config = Some(self.doc.to_value());
        s.overrides = self.overrides.clone();
        s
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Error::InvalidInput("--threads must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    let ctx = Context::load(&cli.global)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Retrieve { input } => cmd_retrieve(&ctx, input.as_deref()),
        Command::Propagate { input } => cmd_propagate(&ctx, input.as_deref()),
        Command::Reconstruct { input } => cmd_reconstruct(&ctx, input.as_deref()),
        Command::Pipeline => cmd_pipeline(&ctx),
        Command::Oracle => cmd_oracle(&ctx),
        Command::Bound { k, r } => cmd_bound(&ctx, *k, *r),
        Command::Export {
            input,
            axis,
            index,
            format,
            component,
        } => {
            let format: ExportFormat = format.parse().map_err(Error::InvalidInput)?;
            cmd_export(&ctx, input, *axis, *index, format, *component)
        }
    }
}

fn simulate_intensity(ctx: &Context, summary: &mut RunSummary) -> Result<(ComplexPlaneData, IntensityData)> {
    let doc = &ctx.doc;
    let geometry = doc.geometry()?;
    let band = doc.partition()?;
    let sim = simulate(
        &doc.phantom,
        &geometry.measurement,
        band.values(),
        &doc.solver_settings(),
    )
    .map_err(|e| e.in_stage("simulate"))?;
    let f = add_noise(&synthesize_intensity(&sim.data), doc.pipeline.noise, doc.pipeline.seed)?;
    summary.result("simulation", &sim.rows);
    summary.result("simulation_grid", sim.grid.as_ref().map(|g| g.counts()));
    Ok((sim.data, f))
}

fn cmd_simulate(ctx: &Context) -> Result<()> {
    let mut summary = ctx.summary("simulate");
    let (data, f) = simulate_intensity(ctx, &mut summary)?;
    let dir = ctx.out_dir()?;
    write_intensity_file(&dir.join("intensity.csv"), &f)?;
    write_plane_data(&dir.join("measured_field.psf"), &data)?;
    summary.outputs = vec!["intensity.csv".into(), "measured_field.psf".into()];
    summary.write(&dir)
}

fn retrieval_results(summary: &mut RunSummary, f: &IntensityData, fractions: &[f64], mean: f64) {
    let per_k: Vec<Value> = f
        .ks()
        .iter()
        .zip(fractions)
        .map(|(k, c)| json!({"k": k, "clamp_fraction": c}))
        .collect();
    summary.result("clamp_fraction", mean);
    summary.result("clamp_by_k", per_k);
}

fn cmd_retrieve(ctx: &Context, input: Option<&Path>) -> Result<()> {
    let dir = ctx.out_dir()?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("intensity.csv"));
    let f = read_intensity_file(&input, ctx.doc.geometry.plane_z)?;
    let r = retrieve_phased(&f).map_err(|e| e.in_stage("retrieve"))?;
    log::info!("phase retrieval clamp fraction {:.4}", r.clamp_fraction());
    let mut summary = ctx.summary("retrieve");
    retrieval_results(&mut summary, &f, &r.clamp_fractions, r.clamp_fraction());
    write_plane_data(&dir.join("retrieved.psf"), &r.data)?;
    summary.outputs = vec!["retrieved.psf".into()];
    summary.write(&dir)
}

fn cmd_propagate(ctx: &Context, input: Option<&Path>) -> Result<()> {
    let dir = ctx.out_dir()?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("retrieved.psf"));
    let data = read_plane_data(&input)?;
    let geometry = ctx.doc.geometry()?;
    let settings = ctx.doc.algorithm_settings();
    let k_top = data.ks().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eps = settings.epsilon.unwrap_or(DEFAULT_K_EPSILON / k_top);
    let b = propagate_to_boundary(&data, geometry.gamma_z(), eps, &settings.propagation)
        .map_err(|e| e.in_stage("propagate"))?;
    write_plane_data(&dir.join("boundary.psf"), &b.p)?;
    let dz = ComplexPlaneData::single(*b.p.plane(), b.k_top, b.p1.clone())?;
    write_plane_data(&dir.join("boundary_dz.psf"), &dz)?;
    let mut summary = ctx.summary("propagate");
    summary.result("target_z", geometry.gamma_z());
    summary.result("epsilon", eps);
    summary.outputs = vec!["boundary.psf".into(), "boundary_dz.psf".into()];
    summary.write(&dir)
}

/// Runs the reconstruction, streaming records to `iterations.jsonl`.
fn reconstruct_into(
    ctx: &Context,
    phased: &ComplexPlaneData,
    dir: &Path,
    summary: &mut RunSummary,
) -> Result<ReconstructionResult> {
    let geometry = ctx.doc.geometry()?;
    let domain = ctx.doc.domain_grid()?;
    let settings = ctx.doc.algorithm_settings();
    let mut log = IterationLog::new(BufWriter::new(fs::File::create(dir.join(ITERATIONS_FILE))?));
    let mut log_err: Option<Error> = None;
    let mut observer = |r: &IterRecord| {
        log::info!(
            "n = {} i = {} c_peak = {:.4} ls {} its, q {} its",
            r.n,
            r.i,
            r.c_peak,
            r.ls_iterations,
            r.q_solve.iterations
        );
        if log_err.is_none() {
            if let Err(e) = log.record(r) {
                log_err = Some(e);
            }
        }
    };
    let result = run_phased(phased, &geometry, &domain, &settings, &mut observer)?;
    if let Some(e) = log_err {
        return Err(e);
    }
    use std::io::Write;
    log.into_inner().flush()?;
    write_real(&dir.join("c.psf"), &result.c)?;
    write_real(&dir.join("n_rel.psf"), &result.n_rel)?;
    let (c_lo, c_hi) = (result.c.min(), result.c.max());
    summary.result("domain_grid", domain.counts());
    summary.result("n_star", result.n_star);
    summary.result("n_comp", result.n_comp);
    summary.result("n_rel_max", result.n_rel.max());
    summary.result("c_min", c_lo);
    summary.result("c_max", c_hi);
    summary.result("c_deviation_inf", (c_hi - 1.0).max(1.0 - c_lo));
    summary.result("peak_location", result.peak_location);
    summary.result("history", &result.history);
    summary.result("halted_at", result.halted_at);
    summary.result("tail_solves", result.tail_reports);
    summary
        .outputs
        .extend(["c.psf".to_string(), "n_rel.psf".into(), ITERATIONS_FILE.into()]);
    Ok(result)
}

fn cmd_reconstruct(ctx: &Context, input: Option<&Path>) -> Result<()> {
    let dir = ctx.out_dir()?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("retrieved.psf"));
    let phased = read_plane_data(&input)?;
    let mut summary = ctx.summary("reconstruct");
    reconstruct_into(ctx, &phased, &dir, &mut summary)?;
    summary.write(&dir)
}

fn cmd_pipeline(ctx: &Context) -> Result<()> {
    let dir = ctx.out_dir()?;
    let mut summary = ctx.summary("pipeline");
    let (_, f) = simulate_intensity(ctx, &mut summary)?;
    write_intensity_file(&dir.join("intensity.csv"), &f)?;
    let r = retrieve_phased(&f).map_err(|e| e.in_stage("retrieve"))?;
    log::info!("phase retrieval clamp fraction {:.4}", r.clamp_fraction());
    retrieval_results(&mut summary, &f, &r.clamp_fractions, r.clamp_fraction());
    write_plane_data(&dir.join("retrieved.psf"), &r.data)?;
    summary.outputs = vec!["intensity.csv".into(), "retrieved.psf".into()];
    reconstruct_into(ctx, &r.data, &dir, &mut summary)?;
    summary.write(&dir)
}

fn cmd_oracle(ctx: &Context) -> Result<()> {
    let born: Vec<_> = [10.0, 20.0].into_iter().map(born_oracle).collect::<Result<_>>()?;
    println!("born  ppw  spacing   rel_error   iterations");
    for r in &born {
        println!(
            "      {:>4} {:>8.5} {:>11.4e} {:>6}",
            r.points_per_wavelength, r.spacing, r.error, r.iterations
        );
    }
    let ratio = born[0].error / born[1].error;
    println!("born refinement ratio {ratio:.3}");
    let mie: Vec<_> = [12.0, 24.0].into_iter().map(mie_oracle).collect::<Result<_>>()?;
    println!("mie   ppw  spacing   rel_error   iterations");
    for (r, _) in &mie {
        println!(
            "      {:>4} {:>8.5} {:>11.4e} {:>6}",
            r.points_per_wavelength, r.spacing, r.error, r.iterations
        );
    }
    if ctx.out.is_some() {
        let mut s = ctx.summary("oracle");
        s.result("born", &born);
        s.result("born_refinement_ratio", ratio);
        s.result("mie", mie.iter().map(|(r, _)| r).collect::<Vec<_>>());
        s.write(&ctx.out_dir()?)?;
    }
    Ok(())
}

fn cmd_bound(ctx: &Context, k: f64, r: f64) -> Result<()> {
    let one = analytic_bound(k, r, 1)?;
    let two = analytic_bound(k, r, 2)?;
    println!("{one:.4}");
    println!("{two:.4}");
    if ctx.out.is_some() {
        let mut s = ctx.summary("bound");
        s.result("k", k);
        s.result("r", r);
        s.result("one_sphere", one);
        s.result("two_spheres", two);
        s.write(&ctx.out_dir()?)?;
    }
    Ok(())
}

fn cmd_export(
    ctx: &Context,
    input: &Path,
    axis: usize,
    index: usize,
    format: ExportFormat,
    component: Component,
) -> Result<()> {
    let raw = RawField::read(input)?;
    let values: Vec<f64> = match raw.kind {
        FieldKind::Real => raw.payload.clone(),
        FieldKind::Complex => raw
            .values_complex()
            .into_iter()
            .map(|v| match component {
                Component::Abs => v.norm(),
                Component::Re => v.re,
                Component::Im => v.im,
            })
            .collect(),
    };
    let dims = raw.dims.map(|d| d as usize);
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".into());
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Pgm => "pgm",
    };
    let dir = ctx.out_dir()?;
    let name = format!("{stem}_axis{axis}_{index}.{ext}");
    let slice = export_slice(&values, dims, axis, index, format, &dir.join(&name))?;
    let (lo, hi) = slice.min_max();
    let mut s = ctx.summary("export");
    s.result("input", input.display().to_string());
    s.result("axis", axis);
    s.result("index", index);
    s.result("min", lo);
    s.result("max", hi);
    s.outputs = vec![name];
    s.write(&dir)
}
