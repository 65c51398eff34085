use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anosov_forge::extension::InstanceKind;
use anosov_forge::extension::IntegratorSpec;
use anosov_forge_cli::{
    cmd_build, cmd_curvature, cmd_flow, cmd_glue, cmd_lens, cmd_report, cmd_verify, flow_geometry,
    hash_json, instance_spec, load_config, with_workers, BandName, CliResult, CsvTable, FlowArgs,
    LensArgs, LensSpec, Outcome, RunConfig,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "anosov-forge",
    version,
    about = "Build and verify extension metrics with constant negative curvature ends"
)]
struct Cli {
    /// Worker threads for sampling (default: all logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    CoshCylinder,
    FlatStrip,
    SphereCapControl,
    CustomProfile,
}

impl From<KindArg> for InstanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::CoshCylinder => InstanceKind::CoshCylinder,
            KindArg::FlatStrip => InstanceKind::FlatStrip,
            KindArg::SphereCapControl => InstanceKind::SphereCapControl,
            KindArg::CustomProfile => InstanceKind::CustomProfile,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the gluing equations for κ and r.
    #[command(allow_negative_numbers = true)]
    Glue {
        #[arg(long)]
        ell: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
    /// Build and certify the extension metric of a configuration.
    Build {
        config: PathBuf,
        /// Output directory (overrides the environment and the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every stage and write the consolidated report.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trace one geodesic with its Jacobi field as CSV.
    #[command(allow_negative_numbers = true)]
    Flow {
        #[arg(long, value_enum, default_value = "cosh-cylinder")]
        instance: KindArg,
        /// Use the extended surface of this configuration instead of the bare profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 0.0)]
        theta0: f64,
        /// Clairaut constant.
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        /// Initial radial direction: 1 or -1.
        #[arg(long, default_value_t = 1.0)]
        direction: f64,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        /// Arc-length spacing of rows.
        #[arg(long, default_value_t = 0.1)]
        every: f64,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Boundary scattering table of an instance core.
    Lens {
        #[arg(long, value_enum, default_value = "cosh-cylinder")]
        instance: KindArg,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value_t = 64)]
        angles: usize,
        #[arg(long, default_value_t = 1)]
        thetas: usize,
        #[arg(long, default_value_t = 1e3)]
        cutoff: f64,
        /// Enter from both boundary components.
        #[arg(long)]
        both_sides: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sampled sectional curvatures of one band of the built extension.
    Curvature {
        #[arg(long, value_enum)]
        band: BandName,
        /// Configuration (default: the cosh cylinder with default settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize the report in an output directory.
    Report { dir: PathBuf },
}

fn emit(table: &CsvTable, output: Option<&PathBuf>) -> CliResult<()> {
    match output {
        Some(p) => table.save(p),
        None => table.write_to(&mut std::io::stdout().lock()),
    }
}

fn print(outcome: &Outcome, to_stderr: bool) {
    // a closed pipe (e.g. `| head`) is not an error worth panicking over
    for l in &outcome.lines {
        let _ = if to_stderr {
            writeln!(std::io::stderr().lock(), "{l}")
        } else {
            writeln!(std::io::stdout().lock(), "{l}")
        };
    }
}

fn with_seed(mut cfg: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        cfg.scan.seed = s;
    }
    cfg
}

fn run(cli: Cli) -> CliResult<i32> {
    let workers = cli.workers;
    match cli.command {
        Command::Glue { ell, tau, a, b } => {
            let o = cmd_glue(ell, tau, a, b)?;
            print(&o, false);
            Ok(o.exit_code())
        }
        Command::Build { config, out, seed } => {
            let cfg = with_seed(load_config(&config)?, seed);
            let dir = cfg.output_dir(out.as_deref());
            let o = with_workers(workers, || cmd_build(&cfg, &dir))??;
            print(&o, false);
            Ok(o.exit_code())
        }
        Command::Verify { config, out, seed } => {
            let cfg = with_seed(load_config(&config)?, seed);
            let dir = cfg.output_dir(out.as_deref());
            let o = with_workers(workers, || cmd_verify(&cfg, &dir))??;
            print(&o, false);
            Ok(o.exit_code())
        }
        Command::Flow {
            instance,
            config,
            t0,
            theta0,
            c,
            direction,
            horizon,
            every,
            output,
        } => {
            let cfg = config.as_deref().map(load_config).transpose()?;
            let spec = instance_spec(instance.into(), None, None, None);
            let args = FlowArgs {
                t0,
                theta0,
                c,
                direction,
                horizon,
                every,
            };
            let hash = match &cfg {
                Some(cfg) => hash_json(&(cfg.hash(), &args)),
                None => hash_json(&(&spec, &args)),
            };
            let integ = cfg
                .as_ref()
                .map(|c| c.integrator.clone())
                .unwrap_or_default();
            let table = with_workers(workers, || -> CliResult<CsvTable> {
                let geo = flow_geometry(cfg.as_ref(), &spec)?;
                cmd_flow(geo.as_ref(), &args, &hash, &integ)
            })??;
            emit(&table, output.as_ref())?;
            Ok(0)
        }
        Command::Lens {
            instance,
            b,
            radius,
            rate,
            angles,
            thetas,
            cutoff,
            both_sides,
            output,
        } => {
            let args = LensArgs {
                instance: instance_spec(instance.into(), b, radius, rate),
                lens: LensSpec {
                    cutoff,
                    angles,
                    thetas,
                },
                both_sides,
            };
            let hash = hash_json(&args);
            let (table, o) = with_workers(workers, || {
                cmd_lens(&args, &hash, &IntegratorSpec::default())
            })??;
            emit(&table, output.as_ref())?;
            print(&o, output.is_none());
            Ok(o.exit_code())
        }
        Command::Curvature {
            band,
            config,
            output,
        } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => RunConfig::for_instance(InstanceKind::CoshCylinder),
            };
            let (table, o) = with_workers(workers, || cmd_curvature(&cfg, band))??;
            emit(&table, output.as_ref())?;
            print(&o, output.is_none());
            Ok(o.exit_code())
        }
        Command::Report { dir } => {
            let o = cmd_report(&dir)?;
            print(&o, false);
            Ok(o.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
