use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitstereo::pipeline::{
    ablation_table, confidence_bins_pipeline, evaluate_pipeline, run_ablation, train_pipeline, write_synthetic_dataset,
    PipelineConfig,
};
use splitstereo::{Error, Result};

#[derive(Parser)]
#[command(name = "splitstereo", version, about = "Stereo 3D detection pipeline on synthetic or KITTI-layout data")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the synthetic dataset in KITTI layout with train/val split files.
    Synth {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Destination directory [default: <output-dir>/dataset]
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Train the matcher and detectors, write checkpoints and loss curves.
    Train {
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Evaluate trained checkpoints on the validation split.
    Eval {
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Train and score the four ablation rows.
    Ablate {
        #[command(flatten)]
        opts: ConfigOpts,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Median disparity error per confidence bin for the trained matcher.
    Bins {
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        opts: ConfigOpts,
    },
}

/// Command-line overrides applied on top of the config file (or defaults).
#[derive(Args, Clone, Default)]
struct ConfigOpts {
    /// TOML config file; flags below override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed_scene: Option<u64>,
    #[arg(long)]
    seed_matcher_init: Option<u64>,
    #[arg(long)]
    seed_detector_init: Option<u64>,
    #[arg(long)]
    seed_sampling: Option<u64>,
    /// Single shared decoder instead of the foreground/background pair.
    #[arg(long)]
    no_split_depth: bool,
    #[arg(long)]
    no_pc_loss: bool,
    /// Drop the confidence point channel from the detectors.
    #[arg(long)]
    no_confidence_feature: bool,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    /// Read a KITTI-layout directory instead of generating scenes.
    #[arg(long)]
    kitti_root: Option<PathBuf>,
    #[arg(long, requires = "val_split")]
    train_split: Option<PathBuf>,
    #[arg(long, requires = "train_split")]
    val_split: Option<PathBuf>,
    #[arg(long)]
    matcher_steps: Option<usize>,
    #[arg(long)]
    matcher_batch_size: Option<usize>,
    #[arg(long)]
    rpn_steps: Option<usize>,
    #[arg(long)]
    rcnn_steps: Option<usize>,
    #[arg(long)]
    n_input_points: Option<usize>,
    /// Skip the pedestrian/cyclist detector.
    #[arg(long)]
    no_ped_cyc: bool,
    #[arg(long)]
    min_fg_depth: Option<f64>,
    #[arg(long)]
    bin_width: Option<f64>,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        let seeds = &mut cfg.seeds;
        seeds.scene = self.seed_scene.unwrap_or(seeds.scene);
        seeds.matcher_init = self.seed_matcher_init.unwrap_or(seeds.matcher_init);
        seeds.detector_init = self.seed_detector_init.unwrap_or(seeds.detector_init);
        seeds.sampling = self.seed_sampling.unwrap_or(seeds.sampling);
        cfg.flags.split_depth &= !self.no_split_depth;
        cfg.flags.pc_loss &= !self.no_pc_loss;
        cfg.flags.confidence_feature &= !self.no_confidence_feature;
        cfg.dataset.n_train = self.n_train.unwrap_or(cfg.dataset.n_train);
        cfg.dataset.n_val = self.n_val.unwrap_or(cfg.dataset.n_val);
        if self.kitti_root.is_some() {
            cfg.dataset.kitti_root = self.kitti_root.clone();
        }
        if self.train_split.is_some() {
            cfg.dataset.train_split = self.train_split.clone();
            cfg.dataset.val_split = self.val_split.clone();
        }
        cfg.matcher.steps = self.matcher_steps.unwrap_or(cfg.matcher.steps);
        cfg.matcher.batch_size = self.matcher_batch_size.unwrap_or(cfg.matcher.batch_size);
        for d in [&mut cfg.detector, &mut cfg.detector_ped_cyc] {
            d.rpn_steps = self.rpn_steps.unwrap_or(d.rpn_steps);
            d.rcnn_steps = self.rcnn_steps.unwrap_or(d.rcnn_steps);
            d.n_input_points = self.n_input_points.unwrap_or(d.n_input_points);
        }
        cfg.train_ped_cyc &= !self.no_ped_cyc;
        cfg.eval.min_fg_depth = self.min_fg_depth.unwrap_or(cfg.eval.min_fg_depth);
        cfg.eval.bin_width = self.bin_width.unwrap_or(cfg.eval.bin_width);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Synth { opts, dest } => {
            let cfg = opts.resolve()?;
            let dest = dest.unwrap_or_else(|| cfg.output_dir.join("dataset"));
            let n = write_synthetic_dataset(&cfg, &dest)?;
            println!("wrote {n} frames to {}", dest.display());
        }
        Verb::Train { opts } => print_paths(&train_pipeline(&opts.resolve()?)?),
        Verb::Eval { opts } => {
            let (rep, paths) = evaluate_pipeline(&opts.resolve()?)?;
            if let Some(d) = rep.depth {
                println!("foreground {}: absRel {:.4} SILog {:.4} over {} px", d.slice, d.abs_rel, d.si_log, d.pixel_count);
            }
            print_paths(&paths);
        }
        Verb::Ablate { opts, repeats } => {
            if repeats == 0 {
                return Err(Error::Config("--repeats must be at least 1".into()));
            }
            let (table, paths) = run_ablation(&opts.resolve()?, repeats)?;
            print!("{}", ablation_table(&table));
            print_paths(&paths);
        }
        Verb::Bins { opts } => {
            let (eval, paths) = confidence_bins_pipeline(&opts.resolve()?)?;
            print!("{}", eval.bins.to_csv());
            print_paths(&paths);
        }
        Verb::Config { opts } => print!("{}", opts.resolve()?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    splitstereo::runtime::keep_heap_resident();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
