//! Command implementations behind the `flexframe` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::compare::{compare_files, CompareSpec};
use crate::config::{ModelSource, SimulationConfig};
use crate::error::{Error, Result};
use crate::model::{build_modal_system, compute_modes, ModalBasis, StructuralModel};
use crate::modelfile::LoadedModel;
use crate::output::TrajectoryWriter;
use crate::par::Execution;
use crate::rigid::simulate_rigid_streaming;
use crate::synthesis::{simulate_streaming, SimParams, SynthesisOptions};

#[derive(Debug, Parser)]
#[command(name = "flexframe", version, about = "Flexible-body dynamics in reconfigured inertial frames")]
pub struct Cli {
    /// Suppress the run summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report modal frequencies of a model.
    Modes(ModesArgs),
    /// Run a flexible simulation.
    Simulate(RunArgs),
    /// Run the rigid-body reference simulation.
    Rigid(RunArgs),
    /// Compare two trajectory CSV files column by column.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct ModelArgs {
    /// Model file.
    #[arg(long, conflicts_with = "recipe")]
    pub model: Option<PathBuf>,
    /// Factory recipe, `name` or `name:key=value,...`.
    #[arg(long)]
    pub recipe: Option<String>,
}

impl ModelArgs {
    fn source(&self) -> Option<ModelSource> {
        if self.model.is_none() && self.recipe.is_none() {
            return None;
        }
        Some(ModelSource {
            path: self.model.clone(),
            recipe: self.recipe.clone(),
            factory: None,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of flexible modes.
    #[arg(long, default_value_t = 10)]
    pub n_flex: usize,
    /// Directory for `modes.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `solver.dt`.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Overrides `solver.t_end`.
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub first: PathBuf,
    /// Reference file.
    pub second: PathBuf,
    /// Comma-separated column names; all columns by default.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    #[arg(long)]
    pub max_abs: Option<f64>,
    #[arg(long)]
    pub rel_rms: Option<f64>,
    #[arg(long)]
    pub t_start: Option<f64>,
    #[arg(long)]
    pub t_stop: Option<f64>,
    /// Directory for `compare.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Text for stdout and the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, exit_code: 0 }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut out = match &cli.command {
        Command::Modes(a) => cmd_modes(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Rigid(a) => cmd_rigid(a),
        Command::Compare(a) => cmd_compare(a),
    }?;
    if cli.quiet {
        out.text.clear();
    }
    Ok(out)
}

fn basis_for(loaded: &LoadedModel, n_flex: usize) -> Result<ModalBasis> {
    match &loaded.basis {
        Some(b) => Ok(b.clone()),
        None => {
            let available = loaded.model.n_dofs() - loaded.model.stiffness_null_dim(crate::factory::NULL_SPACE_TOL);
            if n_flex > available {
                log::warn!("only {available} flexible modes available, {n_flex} requested");
            }
            compute_modes(&loaded.model, n_flex.min(available))
        }
    }
}

pub fn cmd_modes(args: &ModesArgs) -> Result<Outcome> {
    let source = args
        .model
        .source()
        .ok_or_else(|| Error::config("model", "give --model or --recipe"))?;
    let loaded = source.resolve(Path::new("."))?;
    let basis = basis_for(&loaded, args.n_flex)?;
    let mut text = String::new();
    let _ = writeln!(text, "{:>4}  {:>16}  kind", "mode", "frequency_hz");
    let mut csv_rows = Vec::new();
    for (i, f) in basis.frequencies().iter().enumerate() {
        let kind = if basis.is_rigid(i) { "rigid" } else { "flexible" };
        let _ = writeln!(text, "{:>4}  {:>16.8}  {kind}", i + 1, f);
        csv_rows.push((i + 1, *f, kind));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("modes.csv"))?;
        w.write_record(["mode", "frequency_hz", "kind"])?;
        for (i, f, k) in csv_rows {
            w.write_record([i.to_string(), crate::output::fmt(f), k.to_string()])?;
        }
        w.flush()?;
    }
    Ok(Outcome::ok(text))
}

fn load_config(args: &RunArgs) -> Result<SimulationConfig> {
    let mut cfg = SimulationConfig::from_file(&args.config)?;
    if let Some(dt) = args.dt {
        cfg.solver.dt = dt;
    }
    if let Some(t) = args.t_end {
        cfg.solver.t_end = t;
    }
    if let Some(src) = args.model.source() {
        cfg.model = src;
        cfg.base_dir = PathBuf::from(".");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stream_to_writer<F>(mut writer: TrajectoryWriter, run: F) -> Result<usize>
where
    F: FnOnce(&mut dyn FnMut(crate::trajectory::Record) -> Result<()>) -> Result<()>,
{
    let mut write_err = None;
    let result = run(&mut |r| {
        writer.write(&r).map_err(|e| {
            write_err = Some(e.to_string());
            e
        })
    });
    let rows = writer.rows();
    match result {
        Ok(()) => {
            writer.finish()?;
            Ok(rows)
        }
        Err(e) => {
            if write_err.is_none() {
                writer.abort(&e.to_string())?;
            }
            Err(e)
        }
    }
}

/// Flexible run described by `cfg`, writing CSVs into `out`.
pub fn run_flexible(cfg: &SimulationConfig, out: &Path) -> Result<String> {
    let loaded = cfg.model.resolve(&cfg.base_dir)?;
    let model = &loaded.model;
    let basis = basis_for(&loaded, cfg.solver.n_flex_modes)?;
    let system = build_modal_system(model, &basis, &cfg.damping_ratios())?;
    let (x0, xd0) = cfg.initial_fields(model, &basis)?;
    let params = SimParams {
        triad: cfg.triad(model)?,
        loads: cfg.load_spec(model)?,
        dt: cfg.solver.dt,
        t_end: cfg.solver.t_end,
        x0: Some(x0),
        x_dot0: Some(xd0),
        output_nodes: cfg.output_nodes(Some(model))?,
        record_every: cfg.output.record_every,
        options: SynthesisOptions {
            marker_velocities: cfg.solver.marker_velocities,
            velocity_transport: cfg.solver.velocity_transport,
            execution: Execution::Sequential,
            ..Default::default()
        },
    };
    let writer = TrajectoryWriter::create(out, "flexible", &params.output_nodes, system.n_modes())?;
    let rows = stream_to_writer(writer, |sink| simulate_streaming(model, &system, &params, sink))?;
    Ok(summary("flexible", model, Some(&basis), rows, out))
}

fn summary(kind: &str, model: &StructuralModel, basis: Option<&ModalBasis>, rows: usize, out: &Path) -> String {
    let mut s = format!("{kind} run: {} nodes", model.n_nodes());
    if let Some(b) = basis {
        let _ = write!(s, ", {} modes ({} rigid)", b.n_modes(), b.n_rigid());
    }
    let _ = writeln!(s, ", {rows} records written to {}", out.display());
    s
}

pub fn cmd_simulate(args: &RunArgs) -> Result<Outcome> {
    let cfg = load_config(args)?;
    Ok(Outcome::ok(run_flexible(&cfg, &args.out)?))
}

/// Rigid run described by `cfg`, writing CSVs into `out`.
pub fn run_rigid(cfg: &SimulationConfig, out: &Path) -> Result<String> {
    let loaded = if cfg.model.is_empty() {
        None
    } else {
        Some(cfg.model.resolve(&cfg.base_dir)?)
    };
    let model = loaded.as_ref().map(|l| &l.model);
    let props = cfg.rigid_props(model)?;
    let loads = cfg.rigid_loads(model)?;
    let nodes = cfg.output_nodes(model)?;
    let points: Vec<_> = match model {
        Some(m) => nodes.iter().map(|&n| (n, m.node_coords()[n])).collect(),
        None => Vec::new(),
    };
    let initial = cfg.rigid_initial(&props);
    let writer = TrajectoryWriter::create(out, "rigid", &nodes, 0)?;
    let rows = stream_to_writer(writer, |sink| {
        simulate_rigid_streaming(
            &props,
            &loads,
            cfg.solver.dt,
            cfg.solver.t_end,
            &initial,
            &points,
            cfg.output.record_every,
            sink,
        )
    })?;
    let mut s = format!(
        "rigid run: mass {} Mg, principal moments [{}, {}, {}] Mg*mm^2",
        props.mass, props.inertia_principal[0], props.inertia_principal[1], props.inertia_principal[2]
    );
    let _ = writeln!(s, ", {rows} records written to {}", out.display());
    Ok(s)
}

pub fn cmd_rigid(args: &RunArgs) -> Result<Outcome> {
    let cfg = load_config(args)?;
    Ok(Outcome::ok(run_rigid(&cfg, &args.out)?))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Outcome> {
    let window = match (args.t_start, args.t_stop) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::INFINITY))),
    };
    let spec = CompareSpec {
        columns: args.columns.clone(),
        max_abs: args.max_abs,
        rel_rms: args.rel_rms,
        window,
    };
    let report = compare_files(&args.first, &args.second, &spec, Execution::Parallel)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("compare.json"), report.to_json())?;
    }
    Ok(Outcome {
        text: report.table(),
        exit_code: if report.pass { 0 } else { 1 },
    })
}
