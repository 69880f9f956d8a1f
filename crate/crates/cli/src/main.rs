use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rangefusion_core::detector::{
    dedupe_boundary, late_fuse, run_expert_labeled, BoxClassOracle, ClassOracle, ClusterConfig,
    Connectivity, DetectionSet, DEFAULT_BOUNDARY,
};
use rangefusion_core::eval::{
    format_report_table, range_breakdown, recall_grid_100, recall_grid_21, EvalConfig,
    MatchDistance, RangeMetric,
};
use rangefusion_core::geom::{Box3D, CameraModel};
use rangefusion_core::io;
use rangefusion_core::mvp::{fuse_clouds, generate_virtual_points, InstanceMask, MvpConfig};
use rangefusion_core::range::{
    compute_range_weights, count_labels_per_bin, format_weights_table, ExpertSpec,
    OutOfRangePolicy, RangeBinning, DEFAULT_EDGES,
};
use rangefusion_core::sim::{self, generate_scene, SceneConfig};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "rangefusion",
    version,
    about = "Long-range LiDAR detection toolkit"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Simulate(SimulateArgs),
    /// Add virtual points from the scene's instance masks.
    Upsample(UpsampleArgs),
    /// Run the clustering detector as a range expert.
    Detect(DetectArgs),
    /// Late-fuse mid- and long-range expert detections.
    Fuse(FuseArgs),
    /// Range-binned AP evaluation.
    Eval(EvalArgs),
    /// Range weights per bin for one or more experts.
    Weights(WeightsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_objects: Option<usize>,
    #[arg(long)]
    density_k: Option<f64>,
    #[arg(long)]
    min_pts_floor: Option<usize>,
    #[arg(long)]
    ground_points: Option<usize>,
}

#[derive(Args)]
struct UpsampleArgs {
    /// Scene directory with cloud.bin, masks.json and cameras.json.
    #[arg(long)]
    scene: PathBuf,
    /// Fused cloud; the provenance sidecar goes next to it with extension `.prov`.
    #[arg(long)]
    out: PathBuf,
    /// Pixels sampled per mask.
    #[arg(long, default_value_t = 50)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    #[value(name = "6")]
    Six,
    #[value(name = "26")]
    TwentySix,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    voxel_size: f64,
    #[arg(long, default_value_t = 1)]
    min_points: usize,
    #[arg(long, value_enum, default_value = "26")]
    connectivity: ConnectivityArg,
    #[arg(long, default_value_t = 0.0)]
    r1: f64,
    #[arg(long, default_value_t = 250.0)]
    r2: f64,
    /// Mark the expert as range-weighted (labels only; clustering is unaffected).
    #[arg(long)]
    weighted: bool,
    /// Label clusters with the class of the ground-truth box they fall in.
    #[arg(long)]
    classes_from: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    mid: PathBuf,
    #[arg(long)]
    long: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BOUNDARY)]
    boundary: f64,
    /// Suppress same-class detections closer than this many meters.
    #[arg(long)]
    dedupe: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    EuclideanXy,
    Linf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Center3d,
    Bev,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    #[value(name = "100")]
    Hundred,
    #[value(name = "21")]
    TwentyOne,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EDGES)]
    bins: Vec<f64>,
    #[arg(long, value_enum, default_value = "euclidean-xy")]
    range_metric: MetricArg,
    #[arg(long, value_enum, default_value = "100")]
    recall_grid: GridArg,
    /// Overall column as `lo,hi`; defaults to the outer bin edges.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    eval_range: Option<Vec<f64>>,
    #[arg(long = "match", value_enum, default_value = "center3d")]
    match_distance: MatchArg,
    /// Row label in the printed table; defaults to the detections' source.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("labels").required(true).args(["counts", "gt"])))]
struct WeightsArgs {
    /// Label counts per bin.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<u64>>,
    /// Ground-truth boxes to count per bin by center L-infinity range.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EDGES)]
    bins: Vec<f64>,
    /// Expert lower bounds, one per row.
    #[arg(long, default_values_t = [0.0])]
    r1: Vec<f64>,
    /// Expert upper bounds, one per row.
    #[arg(long, default_values_t = [250.0])]
    r2: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config: Value,
    inputs: Vec<&'a Path>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    duration_secs: f64,
}

struct Run {
    subcommand: &'static str,
    started: Instant,
}

impl Run {
    fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
        }
    }

    fn finish(
        self,
        manifest_path: &Path,
        config: Value,
        inputs: Vec<&Path>,
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            config,
            inputs,
            outputs,
            seed,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        io::write_json(manifest_path, &manifest)?;
        Ok(())
    }
}

/// `dir/stem.manifest.json` next to a single-file output.
fn manifest_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(ErrorKind::ArgumentConflict, msg)
        .exit()
}

fn binning_from(edges: &[f64]) -> RangeBinning {
    RangeBinning::new(edges.to_vec()).unwrap_or_else(|e| usage_error(format!("--bins: {e}")))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let run = Run::new("simulate");
    let mut config: SceneConfig = match &args.config {
        Some(p) => io::read_json(p)?,
        None => SceneConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n_objects {
        config.n_objects = v;
    }
    if let Some(v) = args.density_k {
        config.density_k = v;
    }
    if let Some(v) = args.min_pts_floor {
        config.min_pts_floor = v;
    }
    if let Some(v) = args.ground_points {
        config.ground_points = v;
    }
    let scene = generate_scene(&config)?;
    sim::write_scene_dir(&args.out, &scene)?;
    let outputs = [
        sim::CLOUD_FILE,
        sim::GT_FILE,
        sim::MASKS_FILE,
        sim::CAMERAS_FILE,
    ]
    .iter()
    .map(|f| args.out.join(f))
    .collect();
    let inputs = args.config.as_deref().into_iter().collect();
    eprintln!(
        "simulate: {} objects, {} points, {} masks",
        scene.gt.len(),
        scene.cloud.len(),
        scene.masks.len()
    );
    run.finish(
        &args.out.join("manifest.json"),
        serde_json::to_value(&config)?,
        inputs,
        outputs,
        Some(config.seed),
    )
}

fn upsample(args: &UpsampleArgs) -> Result<()> {
    if args.s == 0 {
        usage_error("--s must be at least 1");
    }
    let run = Run::new("upsample");
    let cloud_path = args.scene.join(sim::CLOUD_FILE);
    let masks_path = args.scene.join(sim::MASKS_FILE);
    let cameras_path = args.scene.join(sim::CAMERAS_FILE);
    let cloud = io::read_cloud(&cloud_path)?;
    let masks: Vec<InstanceMask> = io::read_json(&masks_path)?;
    let cameras: Vec<CameraModel> = io::read_json(&cameras_path)?;
    for (i, m) in masks.iter().enumerate() {
        let cam = cameras
            .get(m.camera_id)
            .with_context(|| format!("mask {i}: unknown camera {}", m.camera_id))?;
        m.validate(cam).with_context(|| format!("mask {i}"))?;
    }
    let config = MvpConfig {
        s: args.s,
        rng_seed: args.seed,
    };
    let virt = generate_virtual_points(&cameras, &cloud, &masks, &config)?;
    let mut fused = fuse_clouds(&cloud, &virt);
    io::quantize_cloud(&mut fused);
    let sidecar = args.out.with_extension("prov");
    io::write_cloud(&args.out, &fused)?;
    io::write_provenance(&sidecar, &fused)?;
    eprintln!(
        "upsample: {} real + {} virtual points",
        cloud.len(),
        virt.len()
    );
    run.finish(
        &manifest_for(&args.out),
        serde_json::to_value(config)?,
        vec![&cloud_path, &masks_path, &cameras_path],
        vec![args.out.clone(), sidecar],
        Some(args.seed),
    )
}

fn detect(args: &DetectArgs) -> Result<()> {
    let run = Run::new("detect");
    let config = ClusterConfig {
        voxel_size: args.voxel_size,
        min_points: args.min_points,
        connectivity: match args.connectivity {
            ConnectivityArg::Six => Connectivity::Six,
            ConnectivityArg::TwentySix => Connectivity::TwentySix,
        },
    };
    if let Err(e) = config.validate() {
        usage_error(e);
    }
    let spec = ExpertSpec::new(args.r1, args.r2, args.weighted);
    if let Err(e) = spec.validate(&RangeBinning::default()) {
        usage_error(e);
    }
    let cloud = io::read_cloud(&args.cloud)?;
    let gt: Option<Vec<Box3D>> = args
        .classes_from
        .as_deref()
        .map(io::read_json)
        .transpose()?;
    let oracle = gt.as_deref().map(BoxClassOracle::new);
    let set = run_expert_labeled(
        &cloud,
        &spec,
        &config,
        oracle.as_ref().map(|o| o as &dyn ClassOracle),
    )?;
    io::write_json(&args.out, &set)?;
    eprintln!("detect {}: {} detections", spec.label(), set.len());
    let mut inputs = vec![args.cloud.as_path()];
    inputs.extend(args.classes_from.as_deref());
    run.finish(
        &manifest_for(&args.out),
        json!({ "cluster": config, "expert": spec }),
        inputs,
        vec![args.out.clone()],
        None,
    )
}

fn fuse(args: &FuseArgs) -> Result<()> {
    if !args.boundary.is_finite() {
        usage_error("--boundary must be finite");
    }
    if args.dedupe.is_some_and(|d| d.is_nan() || d <= 0.0) {
        usage_error("--dedupe must be > 0");
    }
    let run = Run::new("fuse");
    let mid: DetectionSet = io::read_json(&args.mid)?;
    let long: DetectionSet = io::read_json(&args.long)?;
    let mut fused = late_fuse(&mid, &long, args.boundary);
    if let Some(d) = args.dedupe {
        fused = dedupe_boundary(&fused, d);
    }
    io::write_json(&args.out, &fused)?;
    eprintln!(
        "fuse: {} mid + {} long -> {}",
        mid.len(),
        long.len(),
        fused.len()
    );
    run.finish(
        &manifest_for(&args.out),
        json!({ "boundary": args.boundary, "dedupe": args.dedupe }),
        vec![&args.mid, &args.long],
        vec![args.out.clone()],
        None,
    )
}

fn eval(args: &EvalArgs) -> Result<()> {
    let run = Run::new("eval");
    let binning = binning_from(&args.bins);
    let config = EvalConfig {
        recall_grid: match args.recall_grid {
            GridArg::Hundred => recall_grid_100(),
            GridArg::TwentyOne => recall_grid_21(),
        },
        eval_range: match args.eval_range.as_deref() {
            Some([lo, hi]) => (*lo, *hi),
            _ => (binning.lo(), binning.hi()),
        },
        range_metric: match args.range_metric {
            MetricArg::EuclideanXy => RangeMetric::EuclideanXy,
            MetricArg::Linf => RangeMetric::Linf,
        },
        match_distance: match args.match_distance {
            MatchArg::Center3d => MatchDistance::Center3d,
            MatchArg::Bev => MatchDistance::CenterBev,
        },
        ..EvalConfig::default()
    };
    if let Err(e) = config.validate() {
        usage_error(e);
    }
    let gt: Vec<Box3D> = io::read_json(&args.gt)?;
    let dets: DetectionSet = io::read_json(&args.detections)?;
    let report = range_breakdown(&gt, &dets.detections, &config, &binning);
    let method = args.method.clone().unwrap_or_else(|| {
        if dets.source.is_empty() {
            "detections".to_string()
        } else {
            dets.source.clone()
        }
    });
    print!("{}", format_report_table(&report, &method));
    io::write_json(&args.out, &report)?;
    run.finish(
        &manifest_for(&args.out),
        json!({ "eval": config, "bins": binning }),
        vec![&args.gt, &args.detections],
        vec![args.out.clone()],
        None,
    )
}

fn weights(args: &WeightsArgs) -> Result<()> {
    let run = Run::new("weights");
    let binning = binning_from(&args.bins);
    if args.r1.len() != args.r2.len() {
        usage_error("--r1 and --r2 must be given the same number of times");
    }
    let counts = match (&args.counts, &args.gt) {
        (Some(c), _) if c.len() == binning.num_bins() => c.clone(),
        (Some(c), _) => {
            // Counts for just the bins the experts cover, when all agree on them.
            let active: Vec<Vec<usize>> = args
                .r1
                .iter()
                .zip(&args.r2)
                .map(|(&r1, &r2)| binning.active_bins(r1, r2))
                .collect();
            if active.iter().any(|a| a.len() != c.len() || *a != active[0]) {
                usage_error(format!(
                    "--counts has {} values; expected {} or one per bin in [--r1, --r2]",
                    c.len(),
                    binning.num_bins()
                ));
            }
            let mut full = vec![0; binning.num_bins()];
            for (&b, &n) in active[0].iter().zip(c) {
                full[b] = n;
            }
            full
        }
        (None, Some(path)) => {
            let gt: Vec<Box3D> = io::read_json(path)?;
            count_labels_per_bin(&gt, &binning, OutOfRangePolicy::Skip)?
        }
        (None, None) => unreachable!("clap requires one of --counts/--gt"),
    };
    let rows = args
        .r1
        .iter()
        .zip(&args.r2)
        .map(|(&r1, &r2)| compute_range_weights(&counts, r1, r2, &binning))
        .collect::<Result<Vec<_>, _>>()?;
    print!("{}", format_weights_table(&rows, &binning));
    if let Some(out) = &args.out {
        let keyed: Vec<Value> = rows
            .iter()
            .map(|w| json!({ "r1": w.active_range.0, "r2": w.active_range.1, "weights": w.keyed(&binning) }))
            .collect();
        io::write_json(out, &json!({ "counts": counts, "experts": keyed }))?;
        let inputs = args.gt.as_deref().into_iter().collect();
        run.finish(
            &manifest_for(out),
            json!({ "bins": binning, "r1": args.r1, "r2": args.r2, "counts": counts }),
            inputs,
            vec![out.clone()],
            None,
        )?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Upsample(a) => upsample(a),
        Command::Detect(a) => detect(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Weights(a) => weights(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            usage_error("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is configured once");
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
