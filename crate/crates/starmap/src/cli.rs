//! Command-line surface: reproducible runs over the library pipeline.
//!
//! Every command takes `--seed` and records its fully resolved
//! configuration next to each output file (`<output>.meta.json`, and a
//! `metadata` member inside GeoJSON), so a run is a pure function of its
//! arguments and input files. Outputs are byte-identical across reruns,
//! except the bench CSV's time column.
//!
//! Exit codes: 0 success; 2 usage or input parsing (ingest); 3 ingest
//! matched nothing; 4 field, render, or bench failure; 5 logic program
//! error; 6 a program needs a field the map does not have.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::export::{read_raster_csv, render_ppm, write_raster_csv, write_raster_geojson};
use crate::fields::{raster_mae, FieldError, GpBuildOptions, RasterGrid, StarMap};
use crate::geometry::{BBox, GeoOrigin, Map, Point, Tag};
use crate::ingest::{
    build_map, load_map, load_source, save_map, IngestError, SourceFormat, TagMapping,
};
use crate::logic::{ground_program, query_field, Atom, InferenceMode, LogicError, Program};
use crate::relations::{RelationKind, ThresholdOp};
use crate::uam::{AnnotationConfig, UamError, UncertaintyAnnotatedMap};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_MATCHES: i32 = 3;
pub const EXIT_FIELD: i32 = 4;
pub const EXIT_PROGRAM: i32 = 5;
pub const EXIT_MISSING_FIELD: i32 = 6;

/// Set to a positive integer to cap the worker thread count.
pub const THREADS_ENV: &str = "STARMAP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "starmap",
    version,
    about = "Probabilistic spatial relations over uncertainty-annotated vector maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// One fully resolved run configuration. Serialized verbatim into output
/// metadata.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Parse a source extract into a map file in the local meter frame
    Ingest(IngestArgs),
    /// Sample map realizations and fit relation fields into an archive
    Field(FieldArgs),
    /// Answer a logic program query, at one point or over a grid
    Query(QueryArgs),
    /// Render a raster CSV as a portable-pixmap heatmap
    Render(RenderArgs),
    /// Time the grid and refinement sweeps against a shared reference
    Bench(BenchArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Source extract (OSM XML or Overpass JSON)
    pub input: PathBuf,
    /// Source format: osm_xml or overpass_json
    #[arg(long, default_value = "osm_xml")]
    pub format: String,
    /// WGS84 anchor of the local frame, as "lat,lon"
    #[arg(long)]
    pub origin: String,
    /// Keep only features touching this box, as "minx,miny,maxx,maxy"
    /// in meters (default: hull of the kept features)
    #[arg(long)]
    pub bbox: Option<String>,
    /// Tag mapping TOML (default: primary/building/park rules)
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Map file to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// Recorded in metadata; ingest itself is deterministic
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FieldArgs {
    /// Map file from `ingest`
    pub map: PathBuf,
    /// Relation to fit, as "relation:tag" (repeatable), e.g. distance:road
    #[arg(long = "relation", value_name = "REL:TAG", required = true)]
    pub relations: Vec<String>,
    /// Field backend: raster or gp
    #[arg(long, default_value = "raster")]
    pub backend: String,
    /// Grid nodes per axis for raster fields and exports
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Initial random training locations (gp backend)
    #[arg(long, default_value_t = 256)]
    pub seed_points: usize,
    /// Locations added per refinement round (gp backend)
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Confidence-guided refinement rounds (gp backend)
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    /// Map realizations behind every estimate
    #[arg(long, default_value_t = 50)]
    pub n_samples: usize,
    /// Master seed for map sampling and gp seeding
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Translation noise per axis in meters, applied to every feature
    #[arg(long, default_value_t = 10.0)]
    pub uniform_stddev: f64,
    /// Annotation config (TOML/JSON) instead of uniform noise
    #[arg(long, conflicts_with = "uniform_stddev")]
    pub uam: Option<PathBuf>,
    /// Polyline width in meters for the over relation
    #[arg(long)]
    pub line_width: Option<f64>,
    /// Archive to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// Field to export, as "relation:tag:param" with param a name
    /// (p, mean, variance) or index (default: first relation, param 0)
    #[arg(long)]
    pub export_field: Option<String>,
    /// Also export the selected field as raster CSV
    #[arg(long)]
    pub export_csv: Option<PathBuf>,
    /// Also export the selected field as GeoJSON cells (WGS84)
    #[arg(long)]
    pub export_geojson: Option<PathBuf>,
    /// Also export a probability raster, e.g. "distance:road>30"
    #[arg(long, requires = "threshold_csv")]
    pub threshold: Option<String>,
    /// CSV path for the --threshold raster
    #[arg(long, requires = "threshold")]
    pub threshold_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct QueryArgs {
    /// Archive from `field`
    pub starmap: PathBuf,
    /// Logic program file
    pub program: PathBuf,
    /// Query atom, e.g. "landing(x)"
    #[arg(long)]
    pub query: String,
    /// Evaluate at one point "x,y" and print JSON instead of rasterizing
    #[arg(long)]
    pub at: Option<String>,
    /// Grid nodes per axis in raster mode
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Inference: auto, exact, or monte_carlo
    #[arg(long, default_value = "auto")]
    pub mode: String,
    /// Monte-Carlo samples (default: 10000 per raster node, 1000000 at a point)
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Seed for Monte-Carlo inference
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability raster CSV to write
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Probability raster GeoJSON to write
    #[arg(long)]
    pub geojson: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    /// Raster CSV from `field` or `query`
    pub raster: PathBuf,
    /// Portable pixmap (P6) to write, one pixel per node, north up
    #[arg(long, short)]
    pub output: PathBuf,
    /// Recorded in metadata; rendering itself is deterministic
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Map file from `ingest`
    pub map: PathBuf,
    /// Relation to sweep, as "relation:tag"
    #[arg(long, default_value = "distance:road")]
    pub relation: String,
    /// Map realizations behind every estimate
    #[arg(long, default_value_t = 50)]
    pub n_samples: usize,
    /// Master seed for map sampling and gp seeding
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Translation noise per axis in meters
    #[arg(long, default_value_t = 10.0)]
    pub uniform_stddev: f64,
    /// Annotation config (TOML/JSON) instead of uniform noise
    #[arg(long, conflicts_with = "uniform_stddev")]
    pub uam: Option<PathBuf>,
    /// Initial random training locations for the refinement sweep
    #[arg(long, default_value_t = 256)]
    pub seed_points: usize,
    /// Locations added per refinement round
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Refinement rounds
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    /// Use a 512x512 reference instead of the default 256x256
    #[arg(long)]
    pub reference_512: bool,
    /// Results CSV to write
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Parses `args` (including the program name) and runs the selected
/// command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    init_thread_pool();
    let config = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": &cli.command,
    });
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &config),
        Command::Field(a) => cmd_field(a, &config),
        Command::Query(a) => cmd_query(a, &config),
        Command::Render(a) => cmd_render(a, &config),
        Command::Bench(a) => cmd_bench(a, &config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

fn init_thread_pool() {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails if a pool already exists (e.g. repeated calls in one
            // process); the existing pool then stays in charge.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring {THREADS_ENV}={value}, expected a positive integer"),
    }
}

struct CmdError {
    code: i32,
    message: String,
}

fn fail<E: std::fmt::Display>(code: i32) -> impl Fn(E) -> CmdError {
    move |e| CmdError {
        code,
        message: e.to_string(),
    }
}

fn logic_fail(e: LogicError) -> CmdError {
    CmdError {
        code: logic_exit_code(&e),
        message: e.to_string(),
    }
}

fn logic_exit_code(e: &LogicError) -> i32 {
    match e {
        LogicError::AtNode { source, .. } => logic_exit_code(source),
        LogicError::Field(f) => field_exit_code(f),
        LogicError::Relation(_) => EXIT_FIELD,
        _ => EXIT_PROGRAM,
    }
}

fn field_exit_code(f: &FieldError) -> i32 {
    match f {
        FieldError::MissingField { .. } | FieldError::TagAbsent(_) => EXIT_MISSING_FIELD,
        _ => EXIT_FIELD,
    }
}

fn cmd_ingest(a: &IngestArgs, config: &Value) -> Result<(), CmdError> {
    let format: SourceFormat = a.format.parse().map_err(fail(EXIT_USAGE))?;
    let origin = parse_origin(&a.origin).map_err(fail(EXIT_USAGE))?;
    let bbox = a.bbox.as_deref().map(parse_bbox).transpose().map_err(fail(EXIT_USAGE))?;
    let mapping = match &a.mapping {
        Some(path) => TagMapping::load(path).map_err(fail(EXIT_USAGE))?,
        None => TagMapping::default_mapping(),
    };
    let raw = load_source(&a.input, format).map_err(fail(EXIT_USAGE))?;
    let (map, report) = build_map(&raw, &mapping, origin, bbox).map_err(|e| match e {
        IngestError::NoFeaturesMatched => fail(EXIT_NO_MATCHES)(e),
        other => fail(EXIT_USAGE)(other),
    })?;
    save_map(&map, &a.output).map_err(fail(EXIT_USAGE))?;
    write_sidecar(&a.output, config).map_err(fail(EXIT_USAGE))?;
    println!("{report}");
    println!("wrote {}", a.output.display());
    Ok(())
}

fn annotate(
    map: Map,
    uam_path: &Option<PathBuf>,
    uniform_stddev: f64,
) -> Result<UncertaintyAnnotatedMap, UamError> {
    match uam_path {
        Some(path) => {
            let config = AnnotationConfig::load(path)?;
            UncertaintyAnnotatedMap::from_config(map, &config)
        }
        None => UncertaintyAnnotatedMap::uniform(map, uniform_stddev),
    }
}

fn cmd_field(a: &FieldArgs, config: &Value) -> Result<(), CmdError> {
    let relations: Vec<(RelationKind, Tag)> = a
        .relations
        .iter()
        .map(|spec| parse_relation_spec(spec))
        .collect::<Result<_, _>>()
        .map_err(fail(EXIT_USAGE))?;

    let map = load_map(&a.map).map_err(fail(EXIT_FIELD))?;
    let extent = map.bbox();
    let uam = annotate(map, &a.uam, a.uniform_stddev).map_err(fail(EXIT_FIELD))?;
    let mut sm =
        StarMap::new(Arc::new(uam), extent, a.n_samples, a.seed).map_err(fail(EXIT_FIELD))?;
    if let Some(width) = a.line_width {
        sm = sm.with_line_width(width).map_err(fail(EXIT_FIELD))?;
    }

    for (relation, tag) in &relations {
        match a.backend.as_str() {
            "raster" => sm
                .build_raster(*relation, tag, a.resolution, a.resolution)
                .map_err(fail(EXIT_FIELD))?,
            "gp" => {
                let options = GpBuildOptions {
                    seed_points: a.seed_points,
                    batch: a.batch,
                    rounds: a.rounds,
                    seed: a.seed,
                    ..GpBuildOptions::default()
                };
                sm.build_gp(*relation, tag, &options).map_err(fail(EXIT_FIELD))?;
            }
            other => {
                return Err(CmdError {
                    code: EXIT_USAGE,
                    message: format!("unknown backend `{other}`, expected raster or gp"),
                })
            }
        }
        println!("built {}:{} ({} backend)", relation.name(), tag, a.backend);
    }
    println!("{} relation samples recorded", sm.relation_sample_count());

    sm.save(&a.output).map_err(fail(EXIT_FIELD))?;
    write_sidecar(&a.output, config).map_err(fail(EXIT_FIELD))?;
    println!("wrote {}", a.output.display());

    if a.export_csv.is_some() || a.export_geojson.is_some() {
        let (relation, tag, param) = match &a.export_field {
            Some(spec) => parse_field_spec(spec).map_err(fail(EXIT_USAGE))?,
            None => {
                let (relation, tag) = relations[0].clone();
                (relation, tag, 0)
            }
        };
        let field = sm.field(relation, &tag, param).ok_or_else(|| CmdError {
            code: EXIT_FIELD,
            message: format!(
                "field {}:{}:{param} was not built by this run",
                relation.name(),
                tag
            ),
        })?;
        let raster = field
            .to_raster(sm.extent(), a.resolution, a.resolution)
            .map_err(fail(EXIT_FIELD))?;
        if let Some(path) = &a.export_csv {
            write_csv_output(&raster, path, config).map_err(fail(EXIT_FIELD))?;
            println!("wrote {}", path.display());
        }
        if let Some(path) = &a.export_geojson {
            write_geojson_output(&raster, sm.origin(), path, config).map_err(fail(EXIT_FIELD))?;
            println!("wrote {}", path.display());
        }
    }

    if let (Some(spec), Some(path)) = (&a.threshold, &a.threshold_csv) {
        let (relation, tag, op, value) = parse_threshold_spec(spec).map_err(fail(EXIT_USAGE))?;
        let raster = sm
            .threshold_raster(relation, &tag, op, value, a.resolution, a.resolution)
            .map_err(fail(EXIT_FIELD))?;
        write_csv_output(&raster, path, config).map_err(fail(EXIT_FIELD))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_query(a: &QueryArgs, config: &Value) -> Result<(), CmdError> {
    let sm = StarMap::load(&a.starmap).map_err(fail(EXIT_FIELD))?;
    let text = std::fs::read_to_string(&a.program).map_err(fail(EXIT_PROGRAM))?;
    let program = Program::parse(&text).map_err(fail(EXIT_PROGRAM))?;
    let atom: Atom = a.query.parse().map_err(fail(EXIT_PROGRAM))?;
    let mode: InferenceMode = a.mode.parse().map_err(fail(EXIT_PROGRAM))?;

    if let Some(at) = &a.at {
        let point = parse_point(at).map_err(fail(EXIT_USAGE))?;
        let grounded = ground_program(&program, &sm, point).map_err(logic_fail)?;
        let samples = a.mc_samples.unwrap_or(1_000_000);
        let result = grounded.query(&atom, mode, samples, a.seed).map_err(logic_fail)?;
        let mut doc = config.clone();
        doc["result"] = serde_json::to_value(&result).map_err(fail(EXIT_PROGRAM))?;
        println!(
            "{}",
            serde_json::to_string_pretty(&doc).map_err(fail(EXIT_PROGRAM))?
        );
        return Ok(());
    }

    if a.csv.is_none() && a.geojson.is_none() {
        return Err(CmdError {
            code: EXIT_USAGE,
            message: "raster queries need --csv or --geojson (or use --at x,y)".to_string(),
        });
    }
    let samples = a.mc_samples.unwrap_or(10_000);
    let (raster, method) = query_field(
        &program,
        &sm,
        &atom,
        a.resolution,
        a.resolution,
        mode,
        samples,
        a.seed,
    )
    .map_err(logic_fail)?;
    if let Some(path) = &a.csv {
        write_csv_output(&raster, path, config).map_err(fail(EXIT_FIELD))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &a.geojson {
        write_geojson_output(&raster, sm.origin(), path, config).map_err(fail(EXIT_FIELD))?;
        println!("wrote {}", path.display());
    }
    println!("method: {method}");
    println!("values in [{}, {}]", raster.min(), raster.max());
    Ok(())
}

fn cmd_render(a: &RenderArgs, config: &Value) -> Result<(), CmdError> {
    let file = File::open(&a.raster).map_err(fail(EXIT_FIELD))?;
    let raster = read_raster_csv(BufReader::new(file)).map_err(fail(EXIT_FIELD))?;
    let mut out = BufWriter::new(File::create(&a.output).map_err(fail(EXIT_FIELD))?);
    let legend = render_ppm(&raster, &mut out).map_err(fail(EXIT_FIELD))?;
    out.flush().map_err(fail(EXIT_FIELD))?;
    write_sidecar(&a.output, config).map_err(fail(EXIT_FIELD))?;
    println!("legend: blue = {}, red = {}", legend.min, legend.max);
    println!("wrote {}", a.output.display());
    Ok(())
}

fn cmd_bench(a: &BenchArgs, config: &Value) -> Result<(), CmdError> {
    let (relation, tag) = parse_relation_spec(&a.relation).map_err(fail(EXIT_USAGE))?;
    let map = load_map(&a.map).map_err(fail(EXIT_FIELD))?;
    let extent = map.bbox();
    let uam = annotate(map, &a.uam, a.uniform_stddev).map_err(fail(EXIT_FIELD))?;
    let mut sm =
        StarMap::new(Arc::new(uam), extent, a.n_samples, a.seed).map_err(fail(EXIT_FIELD))?;

    let gp = GpBuildOptions {
        seed_points: a.seed_points,
        batch: a.batch,
        rounds: a.rounds,
        seed: a.seed,
        ..GpBuildOptions::default()
    };
    let reference = if a.reference_512 { 512 } else { 256 };
    let rows = bench_sweeps(&mut sm, relation, &tag, &[8, 16, 32, 64, 128], &gp, reference)
        .map_err(fail(EXIT_FIELD))?;

    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(BufWriter::new(File::create(&a.output).map_err(fail(EXIT_FIELD))?));
    for row in &rows {
        writer.serialize(row).map_err(fail(EXIT_FIELD))?;
        println!(
            "{} {}: mae {:.6} ({:.3} s, {} samples)",
            row.method, row.setting, row.mae, row.seconds, row.relation_samples
        );
    }
    writer.flush().map_err(fail(EXIT_FIELD))?;
    write_sidecar(&a.output, config).map_err(fail(EXIT_FIELD))?;
    println!("wrote {}", a.output.display());
    Ok(())
}

/// One benchmarked configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// "grid" or "gp".
    pub method: &'static str,
    /// Grid nodes per axis, or refinement round (0 = initial fit).
    pub setting: usize,
    /// Relation sample evaluations behind the configuration.
    pub relation_samples: usize,
    /// Wall time to build the configuration from the shared collection.
    pub seconds: f64,
    /// Mean absolute error of the mean field against the reference.
    pub mae: f64,
}

/// Runs the resolution sweep and the refinement sweep for one relation,
/// all against one shared `reference_resolution`² raster built from the
/// same map collection. The reference appears as the final grid row (its
/// error against itself is zero). Rebuilds fields in `sm` repeatedly;
/// afterwards `sm` holds the last refinement configuration.
pub fn bench_sweeps(
    sm: &mut StarMap,
    relation: RelationKind,
    tag: &Tag,
    resolutions: &[usize],
    gp: &GpBuildOptions,
    reference_resolution: usize,
) -> Result<Vec<BenchRow>, FieldError> {
    let n = sm.n_samples();
    let start = Instant::now();
    sm.build_raster(relation, tag, reference_resolution, reference_resolution)?;
    let reference_seconds = start.elapsed().as_secs_f64();
    let reference = sm
        .field(relation, tag, 0)
        .expect("reference was just built")
        .clone();

    let mut rows = Vec::with_capacity(resolutions.len() + gp.rounds + 2);
    for &k in resolutions {
        let start = Instant::now();
        sm.build_raster(relation, tag, k, k)?;
        let seconds = start.elapsed().as_secs_f64();
        let field = sm.field(relation, tag, 0).expect("field was just built");
        rows.push(BenchRow {
            method: "grid",
            setting: k,
            relation_samples: k * k * n,
            seconds,
            mae: raster_mae(field, &reference)?,
        });
    }
    rows.push(BenchRow {
        method: "grid",
        setting: reference_resolution,
        relation_samples: reference_resolution * reference_resolution * n,
        seconds: reference_seconds,
        mae: 0.0,
    });

    for round in 0..=gp.rounds {
        let options = GpBuildOptions {
            rounds: round,
            ..gp.clone()
        };
        let start = Instant::now();
        sm.build_gp(relation, tag, &options)?;
        let seconds = start.elapsed().as_secs_f64();
        let field = sm.field(relation, tag, 0).expect("field was just built");
        rows.push(BenchRow {
            method: "gp",
            setting: round,
            relation_samples: (gp.seed_points + round * gp.batch) * n,
            seconds,
            mae: raster_mae(field, &reference)?,
        });
    }
    Ok(rows)
}

fn parse_relation_kind(s: &str) -> Result<RelationKind, String> {
    match s {
        "over" => Ok(RelationKind::Over),
        "distance" => Ok(RelationKind::Distance),
        other => Err(format!("unknown relation `{other}`, expected over or distance")),
    }
}

fn parse_relation_spec(spec: &str) -> Result<(RelationKind, Tag), String> {
    let (relation, tag) = spec
        .split_once(':')
        .ok_or_else(|| format!("`{spec}` is not of the form relation:tag"))?;
    if tag.is_empty() || tag.contains(':') {
        return Err(format!("`{spec}` is not of the form relation:tag"));
    }
    Ok((parse_relation_kind(relation)?, Tag::from(tag)))
}

fn parse_field_spec(spec: &str) -> Result<(RelationKind, Tag, usize), String> {
    let (head, param) = spec
        .rsplit_once(':')
        .ok_or_else(|| format!("`{spec}` is not of the form relation:tag:param"))?;
    let (relation, tag) = parse_relation_spec(head)?;
    if let Ok(index) = param.parse::<usize>() {
        if index < relation.param_count() {
            return Ok((relation, tag, index));
        }
    }
    for index in 0..relation.param_count() {
        if relation.param_name(index) == Some(param) {
            return Ok((relation, tag, index));
        }
    }
    let names: Vec<&str> = (0..relation.param_count())
        .filter_map(|i| relation.param_name(i))
        .collect();
    Err(format!(
        "`{param}` is not a parameter of {}; expected one of {}",
        relation.name(),
        names.join(", ")
    ))
}

fn parse_threshold_spec(spec: &str) -> Result<(RelationKind, Tag, ThresholdOp, f64), String> {
    let (head, op, rest) = if let Some((head, rest)) = spec.split_once('>') {
        (head, ThresholdOp::Greater, rest)
    } else if let Some((head, rest)) = spec.split_once('<') {
        (head, ThresholdOp::Less, rest)
    } else {
        return Err(format!("`{spec}` is not of the form relation:tag>value"));
    };
    let (relation, tag) = parse_relation_spec(head)?;
    let value: f64 = rest
        .trim()
        .parse()
        .map_err(|_| format!("`{rest}` is not a threshold value"))?;
    Ok((relation, tag, op, value))
}

fn parse_numbers<const N: usize>(text: &str, what: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != N {
        return Err(format!("`{text}` is not of the form {what}"));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("`{part}` in `{text}` is not a number"))?;
    }
    Ok(out)
}

fn parse_origin(text: &str) -> Result<GeoOrigin, String> {
    let [lat, lon] = parse_numbers(text, "lat,lon")?;
    GeoOrigin::new(lat, lon).map_err(|e| e.to_string())
}

fn parse_bbox(text: &str) -> Result<BBox, String> {
    let [min_x, min_y, max_x, max_y] = parse_numbers(text, "minx,miny,maxx,maxy")?;
    BBox::new(min_x, min_y, max_x, max_y).map_err(|e| e.to_string())
}

fn parse_point(text: &str) -> Result<Point, String> {
    let [x, y] = parse_numbers(text, "x,y")?;
    Ok(Point::new(x, y))
}

fn write_csv_output(
    raster: &RasterGrid,
    path: &Path,
    config: &Value,
) -> Result<(), crate::export::ExportError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_raster_csv(raster, &mut out)?;
    out.flush()?;
    write_sidecar(path, config)?;
    Ok(())
}

fn write_geojson_output(
    raster: &RasterGrid,
    origin: GeoOrigin,
    path: &Path,
    config: &Value,
) -> Result<(), crate::export::ExportError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_raster_geojson(raster, origin, Some(config.clone()), &mut out)?;
    out.flush()?;
    write_sidecar(path, config)?;
    Ok(())
}

/// Writes the resolved run configuration next to an output file, as
/// `<output>.meta.json`.
fn write_sidecar(output: &Path, config: &Value) -> std::io::Result<()> {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    let mut text = serde_json::to_string_pretty(config).expect("config serializes");
    text.push('\n');
    std::fs::write(PathBuf::from(name), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_and_field_specs_parse() {
        assert_eq!(
            parse_relation_spec("distance:road").unwrap(),
            (RelationKind::Distance, Tag::from("road"))
        );
        assert!(parse_relation_spec("distance").is_err());
        assert!(parse_relation_spec("near:road").is_err());
        assert!(parse_relation_spec("distance:a:b").is_err());

        assert_eq!(
            parse_field_spec("distance:road:variance").unwrap(),
            (RelationKind::Distance, Tag::from("road"), 1)
        );
        assert_eq!(
            parse_field_spec("over:park:p").unwrap(),
            (RelationKind::Over, Tag::from("park"), 0)
        );
        assert_eq!(
            parse_field_spec("distance:road:0").unwrap(),
            (RelationKind::Distance, Tag::from("road"), 0)
        );
        assert!(parse_field_spec("over:park:mean").is_err());
        assert!(parse_field_spec("distance:road:7").is_err());
    }

    #[test]
    fn threshold_specs_parse() {
        let (relation, tag, op, value) = parse_threshold_spec("distance:road>30").unwrap();
        assert_eq!(
            (relation, tag, op, value),
            (RelationKind::Distance, Tag::from("road"), ThresholdOp::Greater, 30.0)
        );
        let (_, _, op, value) = parse_threshold_spec("distance:road< 12.5").unwrap();
        assert_eq!((op, value), (ThresholdOp::Less, 12.5));
        assert!(parse_threshold_spec("distance:road=30").is_err());
        assert!(parse_threshold_spec("distance:road>abc").is_err());
    }

    #[test]
    fn coordinate_flags_parse() {
        assert_eq!(parse_point("1.5, -2").unwrap(), Point::new(1.5, -2.0));
        assert!(parse_point("1.5").is_err());
        assert!(parse_point("a,b").is_err());
        assert!(parse_origin("91,0").is_err());
        let bbox = parse_bbox("0,0,10,20").unwrap();
        assert_eq!((bbox.max_x, bbox.max_y), (10.0, 20.0));
        assert!(parse_bbox("10,0,0,20").is_err());
    }

    #[test]
    fn resolved_configs_serialize_round_trip() {
        let cli = Cli::try_parse_from([
            "starmap",
            "field",
            "map.json",
            "--relation",
            "distance:road",
            "--relation",
            "over:park",
            "--backend",
            "gp",
            "--seed",
            "7",
            "--output",
            "out.json",
        ])
        .unwrap();
        let json = serde_json::to_value(&cli.command).unwrap();
        assert_eq!(json["command"], "field");
        assert_eq!(json["seed"], 7);
        assert_eq!(json["resolution"], 64, "defaults are resolved");
        let back: Command = serde_json::from_value(json).unwrap();
        assert_eq!(back, cli.command);
    }

    #[test]
    fn logic_errors_map_to_the_specified_exit_codes() {
        let undefined = LogicError::UndefinedAtom("goal(x)".parse().unwrap());
        assert_eq!(logic_exit_code(&undefined), EXIT_PROGRAM);

        let missing = LogicError::Field(FieldError::MissingField {
            relation: RelationKind::Distance,
            tag: Tag::from("water"),
            param_index: 0,
        });
        assert_eq!(logic_exit_code(&missing), EXIT_MISSING_FIELD);

        let wrapped = LogicError::AtNode {
            point: Point::new(0.0, 0.0),
            source: Box::new(missing),
        };
        assert_eq!(logic_exit_code(&wrapped), EXIT_MISSING_FIELD);

        let out_of_extent = LogicError::Field(FieldError::OutOfExtent {
            point: Point::new(0.0, 0.0),
            extent: BBox::new(1.0, 1.0, 2.0, 2.0).unwrap(),
        });
        assert_eq!(logic_exit_code(&out_of_extent), EXIT_FIELD);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_from(["starmap", "no-such-command"]), EXIT_USAGE);
        // Conflicting uncertainty flags are rejected by the parser.
        assert_eq!(
            run_from([
                "starmap", "field", "m.json", "--relation", "distance:road", "--output", "o.json",
                "--uniform-stddev", "5", "--uam", "u.toml",
            ]),
            EXIT_USAGE
        );
    }
}
