use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use voxelforge::env::{replay, EpisodeRecord};
use voxelforge::grid::VoxelGrid;
use voxelforge::harness::{
    self, compare_policies, critic_eval, grid_metrics_row, robustness_sweep, welch_t_test, Domain, ExperimentConfig,
    PolicySample, Summary, TrialSummary, GRID_METRICS_HEADER,
};
use voxelforge::nn::{Checkpoint, PolicyParams};
use voxelforge::par;
use voxelforge::ppo::{train, TrainSink};

#[derive(Parser)]
#[command(name = "voxelforge", version, about = "Learn to design voxel soft robots with PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output directory; a manifest.txt is always written here.
    #[arg(long, default_value = "voxelforge-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train policies; one trial per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed, directly into --out.
        #[arg(long)]
        seed: Option<u64>,
        /// Override ppo.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Sample episodes from a checkpoint, optionally testing it against another.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
        /// Episodes per policy; defaults to eval.episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Re-run a recorded episode and check its reward.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        /// Record index within the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Write the simulated trajectory (locomotion only).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep every n-th physics step in the trace.
        #[arg(long, default_value_t = 100)]
        every: usize,
        /// Write the final design grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Reward of every design prefix t = 0..T.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Relative band used to report the convergence step.
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Critic predictions on recorded terminal designs.
    CriticEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trial id the critic was trained on; other trials are out-of-domain.
        #[arg(long)]
        trial: u64,
        /// Baseline critic, usually the epoch-0 checkpoint of the same trial.
        #[arg(long)]
        untrained: Option<PathBuf>,
        /// VXE1 files.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Morphometrics of VXG1 grids or the final designs of VXE1 records.
    Metrics {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Per-epoch mean and 99% CI across trials' metrics.csv.
    ExportPlots {
        /// Comma-separated trial directories or metrics files.
        #[arg(long, value_delimiter = ',', required = true)]
        trials: Vec<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn load_params(path: &Path) -> Result<PolicyParams<f32>> {
    Ok(Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?.params)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn in_pool<R: Send>(cfg_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    par::with_workers(par::workers_from_env(cfg_workers), f)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, epochs, quiet, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(e) = epochs {
                cfg.ppo.epochs = e;
            }
            let out = out.out;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            let mut args = vec![("config", show(&config))];
            if let Some(s) = seed {
                args.push(("seed", s.to_string()));
            }
            harness::write_manifest(&out, "train", &args, Some(&cfg))?;
            for &s in &seeds {
                let dir = if seed.is_some() { out.clone() } else { out.join(format!("seed_{s}")) };
                let sink = TrainSink::new(&dir)?;
                if seed.is_none() {
                    harness::write_manifest(&dir, "train", &[("config", show(&config)), ("seed", s.to_string())], Some(&cfg))?;
                }
                in_pool(cfg.workers, || {
                    train(&cfg.task, &cfg.ppo, s, s, Some(&sink), |m| {
                        if !quiet {
                            eprintln!(
                                "seed {s} epoch {:>4} reward {:.3} ± {:.3} sigma {:.3} kl {:.4}",
                                m.epoch, m.reward_mean, m.reward_std, m.sigma_mean, m.loss.approx_kl
                            );
                        }
                    })
                })?;
            }
        }
        Command::Evaluate { config, checkpoint, against, episodes, seed, alpha, out } => {
            let cfg = load_config(&config)?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let out = out.out;
            let mut args =
                vec![("config", show(&config)), ("checkpoint", show(&checkpoint)), ("seed", seed.to_string()), ("episodes", n.to_string())];
            if let Some(b) = &against {
                args.push(("against", show(b)));
                args.push(("alpha", alpha.to_string()));
            }
            harness::write_manifest(&out, "evaluate", &args, Some(&cfg))?;
            let a = load_params(&checkpoint)?;
            match against {
                Some(path) => {
                    let b = load_params(&path)?;
                    let c = in_pool(cfg.workers, || compare_policies(&a, &b, &cfg.task, n, seed, alpha))?;
                    write(&out.join("comparison.csv"), &c.to_csv())?;
                    println!(
                        "a {:.4} ± {:.4}  b {:.4} ± {:.4}  p {:.3e}  {}",
                        c.a.reward().mean,
                        c.a.reward().ci99,
                        c.b.reward().mean,
                        c.b.reward().ci99,
                        c.welch.p,
                        if c.no_difference() { "no difference" } else { "different" }
                    );
                }
                None => {
                    let r = in_pool(cfg.workers, || harness::sample_policy(&a, &cfg.task, n, seed))?;
                    let mut csv = String::from("episode,reward,diverged,efficiency\n");
                    for e in &r.episodes {
                        csv.push_str(&format!("{},{},{},{}\n", e.index, e.reward, e.diverged, e.efficiency));
                    }
                    write(&out.join("evaluation.csv"), &csv)?;
                    let s = PolicySample::from_rollout(&r).reward();
                    println!("reward {:.4} ± {:.4} (99% CI, n = {})", s.mean, s.ci99, s.n);
                }
            }
        }
        Command::Replay { episode, index, trace, every, grid, out } => {
            let out = out.out;
            let mut args = vec![("episode", show(&episode)), ("index", index.to_string())];
            if let Some(t) = &trace {
                args.push(("trace", show(t)));
                args.push(("every", every.to_string()));
            }
            harness::write_manifest(&out, "replay", &args, None)?;
            let records = EpisodeRecord::load_all(&episode)?;
            let Some(record) = records.get(index) else {
                bail!("{} holds {} records, no index {index}", episode.display(), records.len());
            };
            let r = replay(record, trace.as_ref().map(|_| every.max(1)))?;
            if let Some(t) = &trace {
                let Some(traj) = &r.evaluation.trajectory else {
                    bail!("no trajectory: {} task or empty design", record.task.kind.name());
                };
                traj.save(t).with_context(|| format!("writing {}", t.display()))?;
            }
            if let Some(g) = &grid {
                r.state.grid.save(g).with_context(|| format!("writing {}", g.display()))?;
            }
            write(
                &out.join("replay.csv"),
                &format!(
                    "trial,epoch,episode,recorded,replayed,matches\n{},{},{},{},{},{}\n",
                    record.trial, record.epoch, record.episode, record.reward, r.evaluation.reward, r.matches
                ),
            )?;
            println!("recorded {} replayed {} {}", record.reward, r.evaluation.reward, if r.matches { "match" } else { "MISMATCH" });
            if !r.matches {
                bail!("replayed reward differs from the record");
            }
        }
        Command::Robustness { config, checkpoint, episodes, seed, tolerance, out } => {
            let cfg = load_config(&config)?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let out = out.out;
            let args =
                [("config", show(&config)), ("checkpoint", show(&checkpoint)), ("seed", seed.to_string()), ("episodes", n.to_string())];
            harness::write_manifest(&out, "robustness", &args, Some(&cfg))?;
            let params = load_params(&checkpoint)?;
            let r = in_pool(cfg.workers, || robustness_sweep(&params, &cfg.task, n, seed))?;
            write(&out.join("robustness.csv"), &r.to_csv())?;
            println!(
                "terminal column matches: {}; converges (within {tolerance}) at t = {}",
                r.terminal_matches(),
                r.convergence_step(tolerance)
            );
        }
        Command::CriticEval { checkpoint, trial, untrained, records, out } => {
            let out = out.out;
            let mut args = vec![("checkpoint", show(&checkpoint)), ("trial", trial.to_string())];
            if let Some(u) = &untrained {
                args.push(("untrained", show(u)));
            }
            let files = records.iter().map(|p| show(p)).collect::<Vec<_>>().join(",");
            args.push(("records", files));
            harness::write_manifest(&out, "critic-eval", &args, None)?;
            let mut all = Vec::new();
            for p in &records {
                all.extend(EpisodeRecord::load_all(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let workers = par::workers_from_env(0);
            let trained = par::with_workers(workers, || critic_eval(&load_params(&checkpoint)?, trial, &all).map_err(anyhow::Error::from))?;
            write(&out.join("critic.csv"), &trained.to_csv())?;
            let mut summary = String::from("critic,domain,n,mse,mse_ci99\n");
            let mut push = |name: &str, r: &harness::CriticReport| {
                for d in [Domain::In, Domain::Out] {
                    let s = Summary::of(&r.squared_errors(d));
                    summary.push_str(&format!("{name},{},{},{},{}\n", d.name(), s.n, s.mean, s.ci99));
                }
            };
            push("trained", &trained);
            if let Some(u) = &untrained {
                let base = par::with_workers(workers, || critic_eval(&load_params(u)?, trial, &all).map_err(anyhow::Error::from))?;
                write(&out.join("critic_untrained.csv"), &base.to_csv())?;
                push("untrained", &base);
                let (a, b) = (trained.squared_errors(Domain::In), base.squared_errors(Domain::In));
                if a.len() >= 2 {
                    let w = welch_t_test(&a, &b);
                    summary.push_str(&format!("# in-domain welch t={} df={} p={}\n", w.t, w.df, w.p));
                }
            }
            write(&out.join("critic_summary.csv"), &summary)?;
            print!("{summary}");
        }
        Command::Metrics { inputs, out } => {
            let out = out.out;
            let files = inputs.iter().map(|p| show(p)).collect::<Vec<_>>().join(",");
            harness::write_manifest(&out, "metrics", &[("inputs", files)], None)?;
            let mut csv = String::from(GRID_METRICS_HEADER);
            for p in &inputs {
                let is_grid = std::fs::read(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .starts_with(b"VXG1");
                if is_grid {
                    csv.push_str(&grid_metrics_row(&show(p), &VoxelGrid::load(p)?));
                } else {
                    for (i, r) in EpisodeRecord::load_all(p)?.iter().enumerate() {
                        csv.push_str(&grid_metrics_row(&format!("{}#{i}", show(p)), &r.design()?.grid));
                    }
                }
            }
            write(&out.join("metrics.csv"), &csv)?;
        }
        Command::ExportPlots { trials, out } => {
            let out = out.out;
            let files: Vec<PathBuf> =
                trials.iter().map(|t| if t.is_dir() { t.join("metrics.csv") } else { t.clone() }).collect();
            let listed = files.iter().map(|p| show(p)).collect::<Vec<_>>().join(",");
            harness::write_manifest(&out, "export-plots", &[("trials", listed)], None)?;
            let s = TrialSummary::load(&files)?;
            write(&out.join("plots.csv"), &s.to_csv())?;
        }
    }
    Ok(())
}
