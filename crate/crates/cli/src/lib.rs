//! Run configurations, output writers and the subcommands of the `anosov-forge` binary.
//!
//! Configurations are TOML documents with a `schema_version` key and one table per pipeline
//! section. Every CSV starts with `#` comment lines naming the command and the SHA-256 of the
//! resolved configuration; floats are written with 17 significant digits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anosov_forge::curvature::{band_samples, BoundKind, GridSpec};
use anosov_forge::dynamics::{
    integrate_track, Channel, ChannelInit, FlowGeometry, GeodesicStart, ScaleGeometry, TrackOptions,
};
use anosov_forge::extension::{
    run_pipeline_scoped, EstimateSpec, ExtensionSpec, Instance, InstanceKind, InstanceSpec,
    IntegratorSpec, PipelineConfig, PipelineReport, PipelineScope, ScanSpec, StageStatus, Tagged,
};
use anosov_forge::lens::{FanSpec, Lens, Side, TravelLength};
use anosov_forge::metrics::LevelScale;
use anosov_forge::profiles::{glue_to_hyperbolic, Interval};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version of the configuration and report layout.
pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable overriding the output directory of a configuration.
pub const OUT_ENV: &str = "ANOSOV_FORGE_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Config { origin: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] anosov_forge::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Core(anosov_forge::Error::ParameterDomain(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Settings of the lens table of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensSpec {
    pub cutoff: f64,
    pub angles: usize,
    pub thetas: usize,
}

impl Default for LensSpec {
    fn default() -> Self {
        Self {
            cutoff: 1e3,
            angles: 64,
            thetas: 32,
        }
    }
}

/// A run configuration as read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub instance: InstanceSpec,
    #[serde(default)]
    pub extension: ExtensionSpec,
    #[serde(default)]
    pub estimate: EstimateSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub scan: ScanSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub lens: LensSpec,
}

/// The hashed part of a configuration (everything except the output directory).
#[derive(Serialize)]
struct HashedConfig<'a> {
    schema_version: u32,
    pipeline: &'a PipelineConfig,
    lens: &'a LensSpec,
}

impl RunConfig {
    pub fn for_instance(kind: InstanceKind) -> Self {
        let p = PipelineConfig::for_instance(kind);
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: None,
            instance: p.instance,
            extension: p.extension,
            estimate: p.estimate,
            grid: p.grid,
            scan: p.scan,
            integrator: p.integrator,
            lens: LensSpec::default(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            instance: self.instance.clone(),
            extension: self.extension.clone(),
            estimate: self.estimate.clone(),
            grid: self.grid.clone(),
            scan: self.scan.clone(),
            integrator: self.integrator.clone(),
        }
    }

    /// Range checks of every section.
    pub fn validate(&self, origin: &str) -> CliResult<()> {
        let config_err = |message: String| CliError::Config {
            origin: origin.to_string(),
            message,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.pipeline()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if !(self.lens.cutoff > 0.0) || self.lens.angles == 0 || self.lens.thetas == 0 {
            return Err(config_err(
                "lens needs a positive cutoff and non-empty angle and θ grids".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration, without the output directory.
    pub fn hash(&self) -> String {
        let p = self.pipeline();
        hash_json(&HashedConfig {
            schema_version: self.schema_version,
            pipeline: &p,
            lens: &self.lens,
        })
    }

    /// Command-line flag, then the environment variable, then the config, then `out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Hex SHA-256 of the compact JSON form of a value.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Parse and validate a configuration; errors carry the line and column from the parser.
pub fn parse_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    cfg.validate(origin)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, &path.display().to_string())
}

/// Run `f` on a pool of `workers` threads (all logical cores when None).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// 17 significant digits; non-finite values as nan, inf, -inf.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV document with `#` header lines, written to any sink.
pub struct CsvTable {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(command: &str, config_hash: &str, header: &[&str]) -> Self {
        Self {
            comments: vec![
                format!("anosov-forge {command}"),
                format!("config_sha256={config_hash}"),
            ],
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut out = Vec::new();
        for c in &self.comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| CliError::Csv(e.into()))?;
        }
        Ok(out)
    }

    pub fn write_to(&self, sink: &mut dyn Write) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        sink.write_all(&bytes)
            .map_err(io_err(Path::new("<stdout>")))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }
}

/// Result of a subcommand: pass/fail plus the lines printed to stdout.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// `glue`: κ and r of the matching problem.
pub fn cmd_glue(ell: f64, tau: f64, a: f64, b: f64) -> CliResult<Outcome> {
    let s = glue_to_hyperbolic(ell, tau, a, b)?;
    let branch = match s.branch {
        anosov_forge::profiles::GluingBranch::EqualSquares => "equal-squares",
        anosov_forge::profiles::GluingBranch::Generic => "generic",
    };
    let pass = s.residual_value <= 1e-10 && s.residual_deriv <= 1e-10;
    Ok(Outcome {
        pass,
        lines: vec![
            format!("kappa = {}", fmt_f64(s.kappa)),
            format!("r = {}", fmt_f64(s.r)),
            format!("residual_value = {}", fmt_f64(s.residual_value)),
            format!("residual_derivative = {}", fmt_f64(s.residual_deriv)),
            format!("branch = {branch}"),
        ],
    })
}

fn tagged_rows(p: &anosov_forge::extension::ExtensionParams) -> Vec<(&'static str, Tagged)> {
    let mut v = vec![
        ("Q0", p.q0),
        ("C0", p.c0),
        ("M1", p.m1),
        ("M0", p.m0),
        ("eps", p.eps),
        ("delta", p.delta),
        ("delta0", p.delta0),
        ("K_g", p.k_g),
        ("K0", p.k0),
        ("lambda_min", p.lambda_min),
        ("lambda_max", p.lambda_max),
        ("R", p.r),
    ];
    for (name, t) in [
        ("ell", p.ell),
        ("kappa", p.kappa),
        ("r_tilde", p.r_tilde),
        ("eta", p.eta),
    ] {
        if let Some(t) = t {
            v.push((name, t));
        }
    }
    v
}

fn provenance_label(t: &Tagged) -> String {
    serde_json::to_value(t.provenance)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Tables shared by `build` and `verify`.
fn write_common_tables(
    rep: &PipelineReport,
    hash: &str,
    command: &str,
    dir: &Path,
) -> CliResult<()> {
    let mut stages = CsvTable::new(command, hash, &["stage", "status", "message"]);
    for s in &rep.stages {
        let status = match s.status {
            StageStatus::Pass => "pass",
            StageStatus::Fail => "fail",
            StageStatus::Skipped => "skipped",
        };
        stages.row(vec![s.name.to_string(), status.into(), s.message.clone()]);
    }
    stages.save(&dir.join("stages.csv"))?;

    let mut params = CsvTable::new(command, hash, &["name", "value", "provenance"]);
    if let Some(p) = &rep.params {
        for (name, t) in tagged_rows(p) {
            params.row(vec![name.into(), fmt_f64(t.value), provenance_label(&t)]);
        }
    }
    params.save(&dir.join("params.csv"))?;

    let mut cond = CsvTable::new(command, hash, &["condition", "value", "reference", "pass"]);
    for c in &rep.conditions {
        cond.row(vec![
            c.name.into(),
            fmt_f64(c.value),
            fmt_f64(c.reference),
            c.pass.to_string(),
        ]);
    }
    cond.save(&dir.join("conditions.csv"))?;

    let mut junctions = CsvTable::new(
        command,
        hash,
        &["junction", "t", "value", "d1", "d2", "smoothed"],
    );
    for j in &rep.junctions {
        junctions.row(vec![
            j.label.clone(),
            fmt_f64(j.t),
            fmt_f64(j.value),
            fmt_f64(j.d1),
            fmt_f64(j.d2),
            "false".into(),
        ]);
    }
    if let Some(sm) = &rep.smoothing {
        for j in &sm.junctions {
            junctions.row(vec![
                j.label.clone(),
                fmt_f64(j.t),
                fmt_f64(j.value),
                fmt_f64(j.d1),
                fmt_f64(j.d2),
                "true".into(),
            ]);
        }
    }
    junctions.save(&dir.join("junctions.csv"))?;
    Ok(())
}

/// Consolidated report: configuration hash plus the pipeline report.
#[derive(Serialize)]
struct ReportDocument<'a> {
    schema_version: u32,
    command: &'a str,
    config_sha256: &'a str,
    report: &'a PipelineReport,
}

fn write_report(rep: &PipelineReport, hash: &str, command: &str, path: &Path) -> CliResult<()> {
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        command,
        config_sha256: hash,
        report: rep,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn stage_lines(rep: &PipelineReport) -> Vec<String> {
    rep.stages
        .iter()
        .map(|s| {
            let status = match s.status {
                StageStatus::Pass => "PASS",
                StageStatus::Fail => "FAIL",
                StageStatus::Skipped => "SKIP",
            };
            format!("{status:<4} {:<17} {}", s.name, s.message)
        })
        .collect()
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// `build`: estimate, ledger, ℓ search, extension and smoothing; writes the tables, the
/// sampled warp of the smoothed extension and `build.json`.
pub fn cmd_build(cfg: &RunConfig, dir: &Path) -> CliResult<Outcome> {
    if !cfg.extension.enabled {
        return Err(CliError::Usage(
            "build needs extension.enabled = true".into(),
        ));
    }
    let hash = cfg.hash();
    let rep = run_pipeline_scoped(&cfg.pipeline(), PipelineScope::Build)?;
    prepare_dir(dir)?;
    write_common_tables(&rep, &hash, "build", dir)?;
    if let (Some(sm), Some(ext)) = (&rep.artifacts.smoothed, &rep.artifacts.extension) {
        let mut prof = CsvTable::new(
            "build",
            &hash,
            &["t", "piece", "c", "dc", "d2c", "k_radial", "shape"],
        );
        let lo = ext.collar.t_domain().lo;
        let hi = ext.tau() + 2.0;
        let n = 4001;
        for k in 0..n {
            let t = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let j = LevelScale::jet(sm.as_ref(), t);
            let r = sm.sample(t);
            let piece = serde_json::to_value(ext.piece(t))?
                .as_str()
                .unwrap_or_default()
                .to_string();
            prof.row(vec![
                fmt_f64(t),
                piece,
                fmt_f64(j.value),
                fmt_f64(j.d1),
                fmt_f64(j.d2),
                fmt_f64(r.k_radial),
                fmt_f64(r.shape),
            ]);
        }
        prof.save(&dir.join("profile.csv"))?;
    }
    write_report(&rep, &hash, "build", &dir.join("build.json"))?;
    let mut lines = stage_lines(&rep);
    lines.push(format!("output: {}", dir.display()));
    Ok(Outcome {
        pass: rep.pass,
        lines,
    })
}

/// `verify`: the full pipeline; exit status reflects every stage.
pub fn cmd_verify(cfg: &RunConfig, dir: &Path) -> CliResult<Outcome> {
    let hash = cfg.hash();
    let rep = run_pipeline_scoped(&cfg.pipeline(), PipelineScope::Full)?;
    prepare_dir(dir)?;
    write_common_tables(&rep, &hash, "verify", dir)?;

    let mut cx = CsvTable::new(
        "verify",
        &hash,
        &[
            "sample", "t0", "theta0", "v0", "c", "rule", "channel", "s", "value", "bound",
        ],
    );
    if let Some(l) = &rep.ledger {
        for v in &l.violations {
            cx.row(vec![
                v.sample.to_string(),
                fmt_f64(v.start.t),
                fmt_f64(v.start.theta),
                fmt_f64(v.start.v),
                fmt_f64(v.start.c),
                v.check.rule.to_string(),
                v.check.channel.to_string(),
                fmt_f64(v.check.s),
                fmt_f64(v.check.value),
                fmt_f64(v.check.bound),
            ]);
        }
    }
    let cx_path = dir.join("counterexamples.csv");
    cx.save(&cx_path)?;

    let mut conj = CsvTable::new(
        "verify",
        &hash,
        &["sample", "t0", "theta0", "v0", "c", "first_zero"],
    );
    if let Some(c) = &rep.conjugate {
        for (index, s) in &c.examples {
            let st = rep
                .artifacts
                .starts
                .get(*index)
                .copied()
                .unwrap_or(GeodesicStart {
                    t: f64::NAN,
                    theta: f64::NAN,
                    v: f64::NAN,
                    c: f64::NAN,
                });
            conj.row(vec![
                index.to_string(),
                fmt_f64(st.t),
                fmt_f64(st.theta),
                fmt_f64(st.v),
                fmt_f64(st.c),
                fmt_f64(*s),
            ]);
        }
    }
    let conj_path = dir.join("conjugate_points.csv");
    conj.save(&conj_path)?;
    write_report(&rep, &hash, "verify", &dir.join("report.json"))?;

    let mut lines = stage_lines(&rep);
    if !rep.pass {
        if !cx.is_empty() {
            lines.push(format!("counterexamples: {}", cx_path.display()));
        }
        if !conj.is_empty() {
            lines.push(format!("conjugate points: {}", conj_path.display()));
        }
    }
    lines.push(format!(
        "{}: {}",
        if rep.pass { "PASS" } else { "FAIL" },
        dir.join("report.json").display()
    ));
    Ok(Outcome {
        pass: rep.pass,
        lines,
    })
}

/// Geometry for `flow`: the extended surface of a configuration, or the instance profile on
/// the whole line.
pub fn flow_geometry(
    cfg: Option<&RunConfig>,
    instance: &InstanceSpec,
) -> CliResult<Arc<ScaleGeometry>> {
    match cfg {
        Some(cfg) => {
            let rep = run_pipeline_scoped(&cfg.pipeline(), PipelineScope::Build)?;
            if !rep.pass {
                return Err(CliError::Usage(
                    "the configuration does not build; run `build` for details".into(),
                ));
            }
            Ok(rep.artifacts.geometry.expect("built geometry"))
        }
        None => Ok(Arc::new(Instance::resolve(instance)?.completion())),
    }
}

/// Arguments of `flow`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowArgs {
    pub t0: f64,
    pub theta0: f64,
    /// Clairaut constant
    pub c: f64,
    /// sign of the initial radial speed
    pub direction: f64,
    pub horizon: f64,
    /// spacing of output rows
    pub every: f64,
}

/// `flow`: one geodesic with the Jacobi field J(0) = 0, J'(0) = 1, sampled every `every`.
pub fn cmd_flow(
    geo: &dyn FlowGeometry,
    args: &FlowArgs,
    hash: &str,
    opts: &IntegratorSpec,
) -> CliResult<CsvTable> {
    if !(args.horizon > 0.0) || !(args.every > 0.0) {
        return Err(CliError::Usage(
            "--horizon and --every must be positive".into(),
        ));
    }
    let w2 = 1.0 / geo.radial(args.t0).inv_c;
    let v2 = 1.0 - args.c * args.c / w2;
    if !(v2 >= 0.0) {
        return Err(CliError::Usage(format!(
            "|c| = {} exceeds the radius {} at t0",
            args.c.abs(),
            w2.sqrt()
        )));
    }
    let start = GeodesicStart {
        t: args.t0,
        theta: args.theta0,
        v: args.direction.signum() * v2.sqrt(),
        c: args.c,
    };
    let n = (args.horizon / args.every).floor() as usize;
    let o = TrackOptions {
        horizon: args.horizon,
        marks: (1..=n)
            .map(|k| k as f64 * args.every)
            .filter(|s| *s < args.horizon)
            .collect(),
        ..opts.options()
    };
    let tr = integrate_track(
        geo,
        start,
        &[(Channel::InPlane, ChannelInit::Field { j: 0.0, jp: 1.0 })],
        &o,
    )?;
    let mut t = CsvTable::new(
        "flow",
        hash,
        &["s", "t", "v", "theta", "j", "jp", "mu", "log_scale"],
    );
    let mut push = |s: &anosov_forge::dynamics::TrackSample| {
        let ch = &s.channels[0];
        t.row(vec![
            fmt_f64(s.s),
            fmt_f64(s.t),
            fmt_f64(s.v),
            fmt_f64(s.theta),
            fmt_f64(ch.j),
            fmt_f64(ch.jp),
            fmt_f64(ch.mu),
            fmt_f64(ch.log_scale),
        ]);
    };
    for s in &tr.samples {
        push(s);
    }
    if tr.samples.last().map_or(true, |s| s.s < tr.last.s) {
        push(&tr.last);
    }
    t.comment(format!("zeros={}", tr.zeros.len()));
    Ok(t)
}

/// Arguments of `lens`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LensArgs {
    pub instance: InstanceSpec,
    pub lens: LensSpec,
    pub both_sides: bool,
}

/// `lens`: the scattering table of an instance core with a reciprocity column.
pub fn cmd_lens(
    args: &LensArgs,
    hash: &str,
    opts: &IntegratorSpec,
) -> CliResult<(CsvTable, Outcome)> {
    let inst = Instance::resolve(&args.instance)?;
    let lens = Lens::new(
        inst.completion(),
        inst.b,
        inst.waist,
        args.lens.cutoff,
        &opts.options(),
    )?;
    let fan = FanSpec {
        sides: if args.both_sides {
            vec![Side::Upper, Side::Lower]
        } else {
            vec![Side::Upper]
        },
        thetas: args.lens.thetas,
        angles: args.lens.angles,
        reciprocity: true,
    };
    let table = lens.lens_table(&fan)?;
    let mut t = CsvTable::new(
        "lens",
        hash,
        &[
            "side",
            "theta_entry",
            "angle",
            "c",
            "l_g",
            "side_exit",
            "theta_exit",
            "angle_exit",
            "reciprocity",
        ],
    );
    for row in &table.rows {
        let r = &row.record;
        let l = match r.length {
            TravelLength::Finite(l) => fmt_f64(l),
            TravelLength::Trapped { .. } => "TRAPPED".into(),
        };
        let (side, th, an) = match r.exit {
            Some(e) => (
                e.side.label().to_string(),
                fmt_f64(e.theta),
                fmt_f64(e.angle),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        t.row(vec![
            r.entry.side.label().into(),
            fmt_f64(r.entry.theta),
            fmt_f64(r.entry.angle),
            fmt_f64(r.clairaut),
            l,
            side,
            th,
            an,
            row.reciprocity.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    t.comment(format!(
        "trapped_fraction={}",
        fmt_f64(table.trapped_fraction)
    ));
    let pass = table.max_reciprocity_error <= 1e-6
        && table.symmetry.rotation <= 1e-6
        && table.symmetry.reflection.map_or(true, |d| d <= 1e-6);
    let lines = vec![
        format!("rows = {}", table.rows.len()),
        format!("trapped_fraction = {}", fmt_f64(table.trapped_fraction)),
        format!(
            "max_reciprocity_error = {}",
            fmt_f64(table.max_reciprocity_error)
        ),
        format!("rotation_defect = {}", fmt_f64(table.symmetry.rotation)),
        format!(
            "reflection_defect = {}",
            table
                .symmetry
                .reflection
                .map(fmt_f64)
                .unwrap_or_else(|| "n/a".into())
        ),
    ];
    Ok((t, Outcome { pass, lines }))
}

/// Bands for `curvature`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BandName {
    /// the input collar, t ∈ [−width, 0]
    Collar,
    /// [0, ε], bound K_g
    NearBoundary,
    /// [ε, 1+ε], bound −M₁²
    Deformation,
    /// [1+ε, 2+2ε], bound −M₁²
    Rounding,
    /// [2+2ε, 2+2ε+5], equal to −κ²
    Funnel,
    /// (−δ, δ) after smoothing, bound K₀
    CollarSmoothing,
    /// (2+2ε−δ, 2+2ε+δ) after smoothing, bound −(M₁−1)²
    FunnelSmoothing,
}

/// `curvature`: every sampled sectional curvature of a band with its pass/fail against the
/// band's bound.
pub fn cmd_curvature(cfg: &RunConfig, band: BandName) -> CliResult<(CsvTable, Outcome)> {
    let hash = cfg.hash();
    let rep = run_pipeline_scoped(&cfg.pipeline(), PipelineScope::Build)?;
    let (Some(ext), Some(sm), Some(p)) = (
        &rep.artifacts.extension,
        &rep.artifacts.smoothed,
        &rep.params,
    ) else {
        return Err(CliError::Usage(
            "the configuration does not build; run `build` for details".into(),
        ));
    };
    let eps = ext.eps;
    let tau = ext.tau();
    let delta = sm.delta;
    let kappa = ext.kappa();
    let m1 = p.m1.value;
    let inner = |c: f64| Interval::new(c - delta * (1.0 - 1e-9), c + delta * (1.0 - 1e-9));
    // (metric, interval, check(value) -> ok, description)
    let (metric, interval, bound_text, check): (_, _, String, Box<dyn Fn(f64) -> bool>) = match band
    {
        BandName::Collar => (
            ext.collar.clone(),
            ext.collar.t_domain(),
            "none".into(),
            Box::new(|_| true),
        ),
        BandName::NearBoundary => {
            let k = p.k_g.value;
            (
                ext.metric(),
                Interval::new(0.0, eps),
                format!("<= {}", fmt_f64(k)),
                Box::new(move |v| v <= k),
            )
        }
        BandName::Deformation | BandName::Rounding => {
            let iv = if band == BandName::Deformation {
                Interval::new(eps, 1.0 + eps)
            } else {
                Interval::new(1.0 + eps, tau)
            };
            let b = -m1 * m1;
            (
                ext.metric(),
                iv,
                format!("<= {}", fmt_f64(b)),
                Box::new(move |v| v <= b),
            )
        }
        BandName::Funnel => {
            let k2 = kappa * kappa;
            (
                ext.metric(),
                Interval::new(tau, tau + 5.0),
                format!("= {} within 1e-6", fmt_f64(-k2)),
                Box::new(move |v| (v + k2).abs() <= 1e-6),
            )
        }
        BandName::CollarSmoothing => {
            let k0 = p.k0.value;
            (
                sm.metric(),
                inner(0.0),
                format!("<= {}", fmt_f64(k0)),
                Box::new(move |v| v <= k0),
            )
        }
        BandName::FunnelSmoothing => {
            let b = -(m1 - 1.0).powi(2);
            (
                sm.metric(),
                inner(tau),
                format!("<= {}", fmt_f64(b)),
                Box::new(move |v| v <= b),
            )
        }
    };
    let samples = band_samples(&metric, interval, BoundKind::CurvatureAtMost, &cfg.grid)?;
    let mut t = CsvTable::new(
        "curvature",
        &hash,
        &["t", "theta_index", "plane", "value", "pass"],
    );
    let mut failures = 0;
    for s in &samples {
        let ok = check(s.value);
        failures += usize::from(!ok);
        t.row(vec![
            fmt_f64(s.t),
            s.theta_index.to_string(),
            s.plane.clone(),
            fmt_f64(s.value),
            ok.to_string(),
        ]);
    }
    let band_label = serde_json::to_value(band)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    t.comment(format!("band={band_label} bound {bound_text}"));
    Ok((
        t,
        Outcome {
            pass: failures == 0,
            lines: vec![
                format!(
                    "band = {band_label} [{}, {}]",
                    fmt_f64(interval.lo),
                    fmt_f64(interval.hi)
                ),
                format!("bound {bound_text}"),
                format!("samples = {}, failures = {failures}", samples.len()),
            ],
        },
    ))
}

/// `report`: summary of a `report.json` (or `build.json`) in a directory.
pub fn cmd_report(dir: &Path) -> CliResult<Outcome> {
    let path = ["report.json", "build.json"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| {
            CliError::Usage(format!("no report.json or build.json in {}", dir.display()))
        })?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let rep = &doc["report"];
    let mut lines = vec![
        format!("report: {}", path.display()),
        format!(
            "config_sha256 = {}",
            doc["config_sha256"].as_str().unwrap_or("?")
        ),
        format!("instance = {}", rep["instance"].as_str().unwrap_or("?")),
    ];
    if let Some(stages) = rep["stages"].as_array() {
        for s in stages {
            lines.push(format!(
                "{:<8} {:<17} {}",
                s["status"].as_str().unwrap_or("?"),
                s["name"].as_str().unwrap_or("?"),
                s["message"].as_str().unwrap_or("")
            ));
        }
    }
    if let Some(params) = rep["params"].as_object() {
        for (name, v) in params {
            if let (Some(x), Some(p)) = (v["value"].as_f64(), v["provenance"].as_str()) {
                lines.push(format!("{name:<12} {:<24} {p}", fmt_f64(x)));
            }
        }
    }
    let pass = rep["pass"].as_bool().unwrap_or(false);
    lines.push(if pass { "PASS".into() } else { "FAIL".into() });
    Ok(Outcome { pass, lines })
}

/// Resolve an instance for commands that take `--instance` and optional geometry overrides.
pub fn instance_spec(
    kind: InstanceKind,
    b: Option<f64>,
    radius: Option<f64>,
    rate: Option<f64>,
) -> InstanceSpec {
    InstanceSpec {
        b,
        radius,
        rate,
        ..InstanceSpec::named(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse_config(
            "schema_version = 1\n[instance]\nkind = \"cosh-cylinder\"\nbogus = 3\n",
            "inline",
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn schema_version_is_checked() {
        let err = parse_config(
            "schema_version = 2\n[instance]\nkind = \"flat-strip\"\n",
            "inline",
        )
        .unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = RunConfig::for_instance(InstanceKind::CoshCylinder);
        let h = a.hash();
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.scan.seed = 7;
        assert_ne!(a.hash(), h);
    }
}
