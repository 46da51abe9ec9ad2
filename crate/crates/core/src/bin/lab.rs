#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use orbit_lab::codec::{KEPLER_HALF_RANGE, SINE_HALF_RANGE};
use orbit_lab::datagen::{build_dataset, read_dataset, write_csv, write_dataset, DatasetKind};
use orbit_lab::eval::{rollout_batch, summarize, write_rollout_csv, ModelPredictor};
use orbit_lab::experiments::{
    default_jobs, fit_scaling_law, read_results, report, run_sweep, scaling_records, SweepSpec,
};
use orbit_lab::model::{load_checkpoint, ModelConfig};
use orbit_lab::probing::{probe_sweep, spatial_map_r2, ProbeOptions, SweepOptions, TargetSet};
use orbit_lab::training::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "lab", version, about = "Transformer world models on sine and Kepler trajectories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Head {
    Cls,
    Reg,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset of trajectories.
    GenData {
        #[arg(long, value_parser = parse_kind)]
        kind: DatasetKind,
        #[arg(long)]
        traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "bin")]
        format: Format,
    },
    /// Train one model on a dataset file.
    Train(TrainArgs),
    /// Autoregressive rollouts from a checkpoint.
    Rollout {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        condition: usize,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probes on a checkpoint's embeddings or activations.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_targets)]
        targets: TargetSet,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        probe_intercept: bool,
    },
    /// Run a sweep spec (resumable).
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Concurrent cells; defaults to LAB_THREADS or 1.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the vocabulary/data power law to a results table.
    FitScaling {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-figure plot-data CSVs from sweep directories.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags of `lab train`; `--config` reads the same keys from JSON, and flags
/// given on the command line take precedence.
#[derive(clap::Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    head: Option<Head>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    ctx: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn merge(self, file: TrainArgs) -> TrainArgs {
        TrainArgs {
            config: None,
            data: self.data.or(file.data),
            head: self.head.or(file.head),
            vocab: self.vocab.or(file.vocab),
            noise: self.noise.or(file.noise),
            ctx: self.ctx.or(file.ctx),
            layers: self.layers.or(file.layers),
            heads: self.heads.or(file.heads),
            width: self.width.or(file.width),
            steps: self.steps.or(file.steps),
            seed: self.seed.or(file.seed),
            batch: self.batch.or(file.batch),
            log_every: self.log_every.or(file.log_every),
            out: self.out.or(file.out),
        }
    }
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

fn parse_targets(s: &str) -> Result<TargetSet, String> {
    s.parse()
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.cmd {
        Cmd::GenData {
            kind,
            traj,
            seed,
            out,
            format,
        } => {
            let ds = build_dataset(kind, traj, seed)?;
            match format {
                Format::Bin => write_dataset(&ds, &out)?,
                Format::Csv => write_csv(&ds, &out)?,
            }
            println!("{} trajectories ({} tokens) -> {}", ds.d_traj(), ds.token_count(), out.display());
        }
        Cmd::Train(args) => cmd_train(args)?,
        Cmd::Rollout {
            ckpt,
            data,
            condition,
            horizon,
            out,
        } => {
            let (config, weights, _) = load_checkpoint(&ckpt)?;
            let ds = read_dataset(&data)?;
            let predictor = ModelPredictor::new(config, weights);
            let trajs: Vec<&[f64]> = ds.trajectories.iter().map(|t| t.positions.as_slice()).collect();
            let mut results = Vec::with_capacity(trajs.len());
            for chunk in trajs.chunks(64) {
                results.extend(rollout_batch(&predictor, chunk, condition, horizon)?);
            }
            write_rollout_csv(&out, &results)?;
            let s = summarize(&results);
            println!(
                "mean distance error {:.6} over {} rollouts ({} truncated)",
                s.mean_distance_error, s.completed, s.truncated
            );
        }
        Cmd::Probe {
            ckpt,
            data,
            targets,
            out,
            probe_intercept,
        } => {
            let (config, weights, _) = load_checkpoint(&ckpt)?;
            let probe = ProbeOptions {
                intercept: probe_intercept,
                ..Default::default()
            };
            if targets == TargetSet::Spatial && config.is_classification() {
                let r2 = spatial_map_r2(&config, &weights, probe)?;
                let mut w = csv::Writer::from_path(&out)?;
                w.write_record(["target", "site", "layer", "r2"])?;
                for (axis, r) in r2.iter().enumerate() {
                    let name = ["x", "y"][axis.min(1)];
                    w.write_record([name.to_string(), format!("wte.{axis}"), String::new(), r.to_string()])?;
                    println!("spatial map {name}: R² = {r:.6}");
                }
                w.flush()?;
            } else {
                let ds = read_dataset(&data)?;
                let mut wanted = targets.targets();
                if ds.dim() == 1 {
                    wanted.retain(|t| *t == orbit_lab::probing::Target::X);
                }
                let opts = SweepOptions {
                    probe,
                    ..Default::default()
                };
                let rep = probe_sweep(&config, &weights, &ds.trajectories, &wanted, &opts)?;
                rep.write_csv(&out)?;
                for (t, (site, r2)) in rep.best_all() {
                    println!("{:<8} best {:<28} R² = {r2:.6}", t.name(), site.to_string());
                }
                if let (Some(n), Some(k)) = (rep.newtonian_score(), rep.keplerian_score()) {
                    println!("newtonian score {n:.6}, keplerian score {k:.6}");
                }
            }
        }
        Cmd::Sweep { spec, jobs, out } => {
            let spec: SweepSpec = serde_json::from_str(&fs::read_to_string(&spec)?)?;
            let rows = run_sweep(&spec, &out, jobs.unwrap_or_else(default_jobs))?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {failed} failed -> {}", rows.len(), out.join("results.csv").display());
        }
        Cmd::FitScaling { input, out } => {
            let rows = read_results(&input)?;
            let fit = fit_scaling_law(&scaling_records(&rows))?;
            fs::write(&out, serde_json::to_string_pretty(&fit)?)?;
            println!(
                "A = {:.4}, alpha_D = {}, alpha_V = {}, R²_fit = {:.4}",
                fit.a,
                fmt_opt(fit.alpha_d),
                fmt_opt(fit.alpha_v),
                fit.r2_fit
            );
        }
        Cmd::Report { input, out } => {
            for p in report(&input, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("unidentifiable".into(), |v| format!("{v:.4}"))
}

fn cmd_train(args: TrainArgs) -> Result<(), Box<dyn Error>> {
    let args = match &args.config {
        Some(p) => {
            let file: TrainArgs = serde_json::from_str(&fs::read_to_string(p)?)?;
            args.merge(file)
        }
        None => args,
    };
    let data = args.data.ok_or("--data is required")?;
    let out = args.out.ok_or("--out is required")?;
    let ds = read_dataset(&data)?;
    let width = args.width.unwrap_or(match ds.kind {
        DatasetKind::Sine => 32,
        DatasetKind::Kepler => 64,
    });
    let ctx = args.ctx.unwrap_or(100);
    let mut model = match args.head.unwrap_or(Head::Cls) {
        Head::Cls => {
            let half = match ds.kind {
                DatasetKind::Sine => SINE_HALF_RANGE,
                DatasetKind::Kepler => KEPLER_HALF_RANGE,
            };
            ModelConfig::classification(ds.dim(), args.vocab.unwrap_or(128), half, width, ctx)
        }
        Head::Reg => ModelConfig::regression(ds.dim(), width, ctx),
    };
    model.n_layer = args.layers.unwrap_or(2);
    model.n_head = args.heads.unwrap_or(1);
    let mut cfg = TrainConfig::new(args.steps.unwrap_or(20_000), args.seed.unwrap_or(0));
    cfg.noise = args.noise.unwrap_or(0.0);
    cfg.batch = args.batch.unwrap_or(64);
    cfg.log_every = args.log_every.unwrap_or(500);
    cfg.checkpoints = true;
    let outcome = train(&ds, &model, &cfg, Some(&out))?;
    write_run_config(&out, &model, &cfg)?;
    if let Some(r) = outcome.log.last() {
        println!(
            "step {}: train {:.6}, test {:.6}{}{}",
            r.step,
            r.train_loss,
            r.test_loss,
            r.spatial_r2.map_or(String::new(), |v| format!(", spatial R² {v:.4}")),
            r.rollout_mde.map_or(String::new(), |v| format!(", rollout MDE {v:.4}")),
        );
    }
    if let Some(best) = outcome.best_spatial_r2() {
        println!("best spatial R² {best:.6}");
    }
    println!("checkpoints and train_log.csv in {}", out.display());
    Ok(())
}

fn write_run_config(out: &Path, model: &ModelConfig, cfg: &TrainConfig) -> Result<(), Box<dyn Error>> {
    let json = serde_json::json!({ "model": model, "train": cfg });
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}
