use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use mmr_cli::config::{Method, Preset, RunConfig};
use mmr_cli::experiment;
use mmr_cli::output;

#[derive(Parser)]
#[command(name = "mmr", version, about = "Multiscale marginal relaxation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration, used when no file is given.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds (runs for solve and compare, draws for sample).
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relaxation solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run MMR and the local refiner, one run per seed.
    Solve(Common),
    /// Explore near-optimal configurations with perturbed costs.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Noise scale; defaults to a value derived from the costs.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Tabulate errors and energies of several methods over seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Methods to run; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Exhaustive and dynamic-programming values on a small instance.
    Oracle(Common),
}

fn load(c: &Common, sample: bool) -> Result<RunConfig> {
    let mut cfg = match (&c.config, c.preset) {
        (Some(_), Some(_)) => bail!("give either --config or --preset, not both"),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) => bail!("one of --config or --preset is required"),
    };
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = c.seeds {
        if sample {
            cfg.sampling.seeds = n;
        } else {
            cfg.run.seeds = n;
        }
    }
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(t) = c.tol {
        cfg.mmr.solver_tol = Some(t);
    }
    cfg.validate()?;
    output::ensure_dir(&cfg.output.dir)?;
    Ok(cfg)
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(match s {
        "mmr" => Method::Mmr,
        "mmr+refine" => Method::MmrRefine,
        "sa" => Method::Sa,
        "local-only" => Method::LocalOnly,
        other => bail!("unknown method {other:?} (expected mmr, mmr+refine, sa or local-only)"),
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(c) => {
            let cfg = load(&c, false)?;
            let h = cfg.hierarchy.build()?;
            let runs = experiment::solve(&cfg, &h)?;
            let dir = &cfg.output.dir;
            let traces: Vec<_> = runs.iter().map(|r| (r.record.seed, &r.trace)).collect();
            if cfg.output.trace {
                output::write_trace(dir, &traces)?;
            }
            if cfg.output.supports {
                output::write_supports(dir, &h, &traces)?;
            }
            let records: Vec<_> = runs.iter().map(|r| &r.record).collect();
            let rates: Option<Vec<f64>> = records.iter().map(|r| r.success_rate).collect();
            let success_rate = rates.map(|v| v.iter().sum::<f64>() / v.len() as f64);
            output::write_json(
                &dir.join("result.json"),
                &json!({ "command": "solve", "config": cfg, "success_rate": success_rate, "runs": records }),
            )?;
            for r in &records {
                println!("seed {}: grid {:.6} refined {:.6}", r.seed, r.grid_energy, r.refined_energy);
            }
        }
        Command::Sample { common, lambda } => {
            let cfg = load(&common, true)?;
            let h = cfg.hierarchy.build()?;
            let s = experiment::sample(&cfg, &h, lambda)?;
            let dir = &cfg.output.dir;
            output::write_samples(dir, &s.samples)?;
            let traces = [(s.base.record.seed, &s.base.trace)];
            if cfg.output.trace {
                output::write_trace(dir, &traces)?;
            }
            if cfg.output.supports {
                output::write_supports(dir, &h, &traces)?;
            }
            output::write_json(
                &dir.join("result.json"),
                &json!({
                    "command": "sample",
                    "config": cfg,
                    "lambda": s.lambda,
                    "runs": [s.base.record],
                    "samples": s.samples,
                }),
            )?;
            for x in &s.samples {
                println!("draw {}: grid {:.6} refined {:.6}", x.seed, x.grid_energy, x.refined_energy);
            }
        }
        Command::Compare { common, methods } => {
            let cfg = load(&common, false)?;
            let methods = if methods.is_empty() {
                cfg.baselines.methods.clone()
            } else {
                methods.iter().map(|m| parse_method(m)).collect::<Result<_>>()?
            };
            let h = cfg.hierarchy.build()?;
            let records = experiment::compare(&cfg, &h, &methods)?;
            let summary = experiment::summarize(&records, &methods);
            let dir = &cfg.output.dir;
            output::write_comparison(dir, &summary)?;
            output::write_json(
                &dir.join("result.json"),
                &json!({ "command": "compare", "config": cfg, "summary": summary, "runs": records }),
            )?;
            for s in &summary {
                println!(
                    "{:<11} eps_p {} eps_e {:.4} +- {:.4} exact {}",
                    s.method,
                    s.eps_p_mean.map_or("n/a".into(), |m| format!("{m:.3e} +- {:.3e}", s.eps_p_std.unwrap_or(0.0))),
                    s.eps_e_mean,
                    s.eps_e_std,
                    s.exact_rate.map_or("n/a".into(), |r| format!("{r:.2}")),
                );
            }
        }
        Command::Oracle(c) => {
            let cfg = load(&c, false)?;
            let h = cfg.hierarchy.build()?;
            let r = experiment::oracle(&cfg, &h)?;
            output::write_json(
                &cfg.output.dir.join("result.json"),
                &json!({ "command": "oracle", "config": cfg, "oracle": r }),
            )?;
            info!("{} discrete states", r.states);
            println!("brute force   {:.12}", r.brute_force);
            if let Some(sp) = r.shortest_path {
                println!("shortest path {sp:.12}");
            }
            println!("relaxation    {:.12}", r.relaxation);
        }
    }
    Ok(())
}
