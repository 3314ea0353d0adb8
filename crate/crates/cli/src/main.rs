use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use gatesynth::config::GenerationConfig;
use gatesynth::dataset::{crop_to_bbox, load_backgrounds, load_rgb, write_png, DatasetManifest, Generator, PixelRect};
use gatesynth::guidance::{
    crossing_stats, protocol_gate, run_protocol, stats_table, write_runs_csv, write_stats_csv,
    write_trajectories_csv, Protocol, SimConfig, StartLabel,
};
use gatesynth::metrics::{
    class_table, distance_pairs, distance_report, distance_table, evaluate_detections, precision_recall_table,
    DEFAULT_DISTANCE_THRESHOLDS, DEFAULT_IOU_THRESHOLDS,
};
use gatesynth::scene::Category;

#[derive(Parser)]
#[command(name = "gatesynth", version, about = "Semi-synthetic gate dataset generator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render gates into pose-annotated backgrounds and write a dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        backgrounds: PathBuf,
        /// CSV pose log: image,x,y,z,qw,qx,qy,qz
        #[arg(long)]
        poses: PathBuf,
        /// Directory the config's mesh paths are resolved against.
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        count: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Train/validation sizes, e.g. 40000:4000; writes train/ and val/.
        #[arg(long)]
        split: Option<String>,
    },
    /// Black out everything outside a bounding box.
    Crop {
        #[arg(long)]
        image: PathBuf,
        /// x,y,w,h in pixels
        #[arg(long)]
        bbox: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a ground-truth manifest.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_IOU_THRESHOLDS)]
        iou: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DISTANCE_THRESHOLDS)]
        distance_thresholds: Vec<f64>,
    },
    /// Run the gate-crossing protocol in simulation.
    Simulate {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        speeds: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "left,centre,right")]
        starts: Vec<String>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Disable perception noise.
        #[arg(long)]
        noise_free: bool,
    },
}

/// Maps failures onto the documented exit codes.
enum Failure {
    Config(anyhow::Error),
    Generation(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Generation(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Generation(e) => e,
        }
    }
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn generation(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn generation(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Generation(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate {
            config,
            backgrounds,
            poses,
            meshes,
            count,
            seed,
            out,
            split,
        } => generate(&config, &backgrounds, &poses, &meshes, count, seed, &out, split.as_deref()),
        Command::Crop { image, bbox, out } => crop(&image, &bbox, &out),
        Command::Evaluate {
            gt,
            pred,
            iou,
            distance_thresholds,
        } => evaluate(&gt, &pred, &iou, &distance_thresholds),
        Command::Simulate {
            speeds,
            starts,
            runs,
            seed,
            out,
            noise_free,
        } => simulate(speeds, &starts, runs, seed, &out, noise_free),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn parse_split(s: &str) -> anyhow::Result<(u64, u64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("--split expects TRAIN:VAL, got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

#[allow(clippy::too_many_arguments)]
fn generate(
    config_path: &Path,
    background_dir: &Path,
    poses: &Path,
    meshes: &Path,
    count: Option<u64>,
    seed: u64,
    out: &Path,
    split: Option<&str>,
) -> Result<(), Failure> {
    let parts: Vec<(Option<&str>, u64, u64)> = match (split.map(parse_split).transpose().config()?, count) {
        (Some((train, val)), c) => {
            if c.is_some_and(|c| c != train + val) {
                return Err(Failure::Config(anyhow!("--count {} disagrees with --split {train}:{val}", c.unwrap())));
            }
            vec![(Some("train"), train, 0), (Some("val"), val, train)]
        }
        (None, Some(c)) => vec![(None, c, 0)],
        (None, None) => return Err(Failure::Config(anyhow!("either --count or --split is required"))),
    };
    let config = GenerationConfig::load(config_path).config()?;
    let backgrounds = load_backgrounds(poses, background_dir).config()?;
    let generator = Generator::from_config(&config, backgrounds, meshes).config()?;
    let snapshot = serde_json::to_value(&config).config()?;
    log::info!("{} backgrounds, seed {seed}", generator.backgrounds().len());
    for (sub, n, first) in parts {
        let dir = sub.map_or_else(|| out.to_path_buf(), |s| out.join(s));
        let start = Instant::now();
        let manifest = generator
            .generate_to_dir(&dir, n, seed, first, snapshot.clone())
            .with_context(|| format!("generating into {}", dir.display()))
            .generation()?;
        let secs = start.elapsed().as_secs_f64();
        log::info!(
            "{}: {} images, {} annotations in {:.1} s ({:.1} samples/s)",
            dir.display(),
            manifest.info.sample_count,
            manifest.annotations.len(),
            secs,
            manifest.info.sample_count as f64 / secs.max(1e-9)
        );
    }
    Ok(())
}

fn parse_bbox(s: &str) -> anyhow::Result<PixelRect> {
    let v: Vec<&str> = s.split(',').map(str::trim).collect();
    if v.len() != 4 {
        bail!("--bbox expects x,y,w,h, got {s:?}");
    }
    Ok(PixelRect::new(v[0].parse()?, v[1].parse()?, v[2].parse()?, v[3].parse()?))
}

fn crop(image: &Path, bbox: &str, out: &Path) -> Result<(), Failure> {
    let rect = parse_bbox(bbox).config()?;
    let img = load_rgb(image).config()?;
    let cropped = crop_to_bbox(&img, rect).config()?;
    write_png(out, &cropped).generation()
}

fn evaluate(gt: &Path, pred: &Path, iou: &[f64], distance_thresholds: &[f64]) -> Result<(), Failure> {
    let gt = DatasetManifest::load(gt).config()?.ground_truth().config()?;
    let dets = DatasetManifest::load(pred).config()?.detections().config()?;
    let report = evaluate_detections(&dets, &gt, iou).config()?;
    for c in Category::ALL {
        println!("{}", precision_recall_table(&report, c));
    }
    println!("{}", class_table(&report));
    let (p, t) = distance_pairs(&dets, &gt, Category::Target);
    if !p.is_empty() {
        let d = distance_report(&p, &t, distance_thresholds).generation()?;
        println!("Distance estimation ({} target gates)", d.count);
        println!("{}", distance_table(&d));
    }
    Ok(())
}

fn simulate(speeds: Vec<f64>, starts: &[String], runs: usize, seed: u64, out: &Path, noise_free: bool) -> Result<(), Failure> {
    let starts = starts
        .iter()
        .map(|s| StartLabel::parse(s).ok_or_else(|| anyhow!("unknown start {s:?}; use left, centre or right")))
        .collect::<anyhow::Result<Vec<_>>>()
        .config()?;
    if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0)) || runs == 0 {
        return Err(Failure::Config(anyhow!("speeds must be positive and --runs at least 1")));
    }
    let cfg = if noise_free { SimConfig::noise_free() } else { SimConfig::default() };
    let protocol = Protocol {
        speeds,
        starts,
        runs_per_cell: runs,
        seed,
    };
    let start = Instant::now();
    let results = run_protocol(&protocol_gate(), &protocol, &cfg).generation()?;
    log::info!("{} runs in {:.1} s", results.len(), start.elapsed().as_secs_f64());
    let stats = crossing_stats(&results).generation()?;
    print!("{}", stats_table(&stats));
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).generation()?;
    write_stats_csv(&stats, &out.join("stats.csv")).generation()?;
    write_runs_csv(&results, &out.join("runs.csv")).generation()?;
    write_trajectories_csv(&results, &out.join("trajectories.csv")).generation()?;
    Ok(())
}
