use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use fresco::config::Config;
use fresco::dataset::{Dataset, Format, FrameSource};
use fresco::index::KeyframeIndex;
use fresco::{eval, pointcloud, pose, selftest, Error};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fresco", version, about = "Frequency-domain LiDAR place recognition")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sectors=60`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Kitti,
    Generic,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Kitti => Format::Kitti,
            FormatArg::Generic => Format::Generic,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Describe every frame of a dataset and write a keyframe index.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "kitti")]
        format: FormatArg,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Match one scan against an index and print the result as JSON.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Dataset the index was built from; needed for the stage-one pose.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "kitti")]
        format: FormatArg,
        /// Scan to look up (.bin or ASCII).
        cloud: PathBuf,
    },
    /// Run the loop-closure evaluation over a posed dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "kitti")]
        format: FormatArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured stage-two setting.
        #[arg(long, value_enum)]
        stage2: Option<Toggle>,
        /// Also write trajectory.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run the built-in property suite.
    Selftest,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter { .. } => 1,
        Error::Degenerate(_) | Error::InsufficientStructure { .. } => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    Config::load_with_overrides(cli.config.as_deref(), &cli.set)
}

fn build(config: &Config, dataset: &Path, format: Format, out: &Path) -> Result<(), Error> {
    let ds = Dataset::open(dataset, format)?;
    let ids = ds.ids();
    if ids.is_empty() {
        eprintln!("warning: no frames found in {}", dataset.display());
    }
    let params = config.descriptor_params();
    let start = Instant::now();
    let descriptors = ids
        .par_iter()
        .map(|&id| ds.load(id).map(|c| (id, fresco::describe(&c, &params))))
        .collect::<Result<Vec<_>, _>>()?;
    let elapsed = start.elapsed();

    let mut index = KeyframeIndex::new(config.exclusion_horizon);
    let mut skipped = 0;
    for (id, d) in descriptors {
        let inserted = d.and_then(|d| index.insert(id, d));
        match inserted {
            Ok(()) => {}
            Err(Error::Degenerate(msg)) => {
                eprintln!("warning: frame {id} skipped: {msg}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    index.save(out)?;
    let per_frame = if ids.is_empty() {
        0.0
    } else {
        elapsed.as_secs_f64() * 1e3 / ids.len() as f64
    };
    println!(
        "indexed {} of {} frames ({} skipped) in {:.2} s, {:.1} ms/frame",
        index.len(),
        ids.len(),
        skipped,
        elapsed.as_secs_f64(),
        per_frame
    );
    Ok(())
}

fn query(
    config: &Config,
    index_path: &Path,
    dataset: Option<(&Path, Format)>,
    cloud_path: &Path,
) -> Result<serde_json::Value, Error> {
    let index = KeyframeIndex::load(index_path, config.exclusion_horizon)?;
    let params = config.descriptor_params();
    let cloud = pointcloud::load_cloud(cloud_path)?.cloud;
    let cleaned = pointcloud::preprocess(&cloud, params.window, &params.ground);
    let descriptor = fresco::describe_preprocessed(&cleaned, &params)?;
    let best = index.match_query(&descriptor, &config.match_params())?;
    let Some(m) = best.filter(|m| m.accepted) else {
        return Ok(json!({ "match": null, "best_rejected": best }));
    };

    let pose = match dataset {
        Some((root, format)) => {
            let ds = Dataset::open(root, format)?;
            let cand = pointcloud::preprocess(&ds.load(m.id)?, params.window, &params.ground);
            let compact = config.compact_params();
            let q = pose::extract_compact_2d(&cleaned, &compact)?;
            let c = pose::extract_compact_2d(&cand, &compact)?;
            let s1 = pose::stage1_compact(&q, &c, m.rotation_deg, &config.nicp_params())?;
            let rejected = config.stage1_mse_gate.is_some_and(|g| s1.pose.mse > g);
            json!({
                "tx": s1.pose.tx,
                "ty": s1.pose.ty,
                "yaw": s1.pose.yaw,
                "yaw_deg": s1.pose.yaw.to_degrees(),
                "mse": s1.pose.mse,
                "converged": s1.pose.converged,
                "branch": s1.branch,
                "rejected_by_mse_gate": rejected,
            })
        }
        None => serde_json::Value::Null,
    };
    Ok(json!({
        "match": {
            "id": m.id,
            "d_l1": m.d_l1,
            "d_r": m.d_r,
            "best_shift": m.best_shift,
            "rotation_deg": m.rotation_deg,
        },
        "pose": pose,
    }))
}

fn evaluate(config: &Config, dataset: &Path, format: Format, out: &Path, svg: bool) -> Result<(), Error> {
    let ds = Dataset::open(dataset, format)?;
    // fail on an unwritable output directory before the long run
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let result = eval::run(&ds, config)?;
    eval::write_outputs(&result, out, svg)?;
    let r = &result.report;
    match (r.max_f1, r.threshold_l1) {
        (Some(f1), Some(t)) => println!("max F1 {f1:.4} at d_l1 <= {t:.4} over {} keyframes", r.keyframes),
        _ => println!("max F1 undefined: no query has a loop-closure positive ({} keyframes)", r.keyframes),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let mut config = load_config(cli)?;
    match &cli.command {
        Command::Build { dataset, format, out } => {
            build(&config, dataset, (*format).into(), out)?;
        }
        Command::Query {
            index,
            dataset,
            format,
            cloud,
        } => {
            let ds = dataset.as_deref().map(|d| (d, Format::from(*format)));
            let report = query(&config, index, ds, cloud)?;
            println!("{report}");
        }
        Command::Eval {
            dataset,
            format,
            out,
            stage2,
            svg,
        } => {
            if let Some(t) = stage2 {
                config.stage2 = *t == Toggle::On;
            }
            evaluate(&config, dataset, (*format).into(), out, *svg)?;
        }
        Command::Selftest => {
            let results = selftest::run();
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Ok(n) = std::env::var("FRESCO_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: FRESCO_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(1);
            }
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
