use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use swarmgraph::env::trajectory::read_trajectory;
use swarmgraph::harness::metrics::open_stream;
use swarmgraph::harness::render::render_trajectory;
use swarmgraph::harness::{cmd_curriculum, cmd_eval, cmd_train, cmd_zeroshot, load_run, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "swarmgraph", version, about = "Train and evaluate graph-attention swarm policies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for rollout collection (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single thread and zero wall times, so reruns give identical files.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one team size.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Team size (default: the size in the configuration).
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Sample actions instead of taking the argmax.
        #[arg(long)]
        sampled: bool,
    },
    /// Train through increasing team sizes.
    Curriculum,
    /// Evaluate a checkpoint at neighbouring team sizes without updates.
    Zeroshot {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Team size the checkpoint was trained at (default: from the checkpoint).
        #[arg(long)]
        trained_agents: Option<usize>,
    },
    /// Draw an exported trajectory as SVG files, one per episode.
    Render {
        #[arg(long)]
        trajectory: PathBuf,
        /// Arena half width (default: from the configuration).
        #[arg(long)]
        half_width: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<Option<RunConfig>> {
    match &common.config {
        Some(path) => {
            let cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
            Ok(Some(cfg))
        }
        None => Ok(None),
    }
}

fn apply_overrides(mut cfg: RunConfig, common: &Common) -> Result<RunConfig> {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(label: &str, s: &swarmgraph::harness::EvalSummary) {
    let dist = s.avg_min_distance.map_or("-".to_string(), |d| format!("{d:.4}"));
    println!(
        "{label}: episodes {} success {:.1}% steps {:.2} avg_min_distance {dist} final_reward {:.4} episode_reward {:.4}",
        s.episodes.len(),
        s.success_rate,
        s.mean_steps,
        s.mean_final_reward,
        s.mean_episode_reward
    );
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = if cli.common.deterministic { Some(1) } else { cli.common.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let opts = RunOptions {
        deterministic: cli.common.deterministic,
    };
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Train => {
            let cfg = apply_overrides(cfg.unwrap_or_default(), &cli.common)?;
            let r = cmd_train(&cfg, &cfg.output_dir, opts)?;
            println!("trained {} updates at M={}", r.updates, r.agents);
            if let Some(s) = &r.last_eval {
                print_summary("final evaluation", s);
            }
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Curriculum => {
            let cfg = apply_overrides(cfg.unwrap_or_default(), &cli.common)?;
            let reports = cmd_curriculum(&cfg, &cfg.output_dir, opts)
                .with_context(|| format!("see {}", cfg.output_dir.join("curriculum.csv").display()))?;
            for r in reports {
                println!(
                    "M={}: threshold after {} updates",
                    r.agents,
                    r.updates_to_threshold.map_or("-".into(), |u| u.to_string())
                );
            }
        }
        Command::Eval {
            checkpoint,
            agents,
            episodes,
            sampled,
        } => {
            let (ckpt, cfg, policy) = load_run(&checkpoint, cfg.as_ref())?;
            let mut cfg = apply_overrides(cfg, &cli.common)?;
            if let Some(e) = episodes {
                if e == 0 {
                    bail!("--episodes must be at least 1");
                }
                cfg.train.eval_episodes = e;
            }
            let m = agents.unwrap_or(cfg.world.agents);
            let s = cmd_eval(&ckpt, &cfg, &policy, m, !sampled)?;
            print_summary(&format!("M={m}"), &s);
        }
        Command::Zeroshot {
            checkpoint,
            trained_agents,
        } => {
            let (ckpt, cfg, policy) = load_run(&checkpoint, cfg.as_ref())?;
            let cfg = apply_overrides(cfg, &cli.common)?;
            let base = match trained_agents {
                Some(m) => m,
                None => RunConfig::from_toml(&ckpt.config_toml)?.world.agents,
            };
            let (rows, notes) = cmd_zeroshot(&ckpt, &cfg, &policy, base)?;
            for n in &notes {
                println!("note: {n}");
            }
            println!("{:>6} {:>6} {:>9} {:>7} {:>9} {:>10}", "delta", "agents", "success%", "steps", "dist", "reward");
            for r in &rows {
                let dist = r.avg_min_distance.map_or("-".to_string(), |d| format!("{d:.4}"));
                println!(
                    "{:>6} {:>6} {:>9.1} {:>7.2} {:>9} {:>10.3}",
                    r.delta, r.agents, r.success_rate, r.mean_steps, dist, r.mean_episode_reward
                );
            }
            if let Some(out) = &cli.common.out {
                std::fs::create_dir_all(out)?;
                let mut w = open_stream(
                    &out.join("zeroshot.csv"),
                    &["delta", "agents", "success_rate", "mean_steps", "avg_min_distance", "mean_episode_reward"],
                )?;
                for r in &rows {
                    w.write(r)?;
                }
            }
        }
        Command::Render { trajectory, half_width } => {
            let hw = match half_width {
                Some(h) => h,
                None => cfg.clone().unwrap_or_default().arena_half_width(),
            };
            let file = std::fs::File::open(&trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            let records = read_trajectory(file)?;
            let out: &Path = match &cli.common.out {
                Some(o) => o,
                None => trajectory.parent().unwrap_or(Path::new(".")),
            };
            std::fs::create_dir_all(out)?;
            for (episode, svg) in render_trajectory(&records, hw)? {
                let path = out.join(format!("episode-{episode:03}.svg"));
                std::fs::write(&path, svg)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
