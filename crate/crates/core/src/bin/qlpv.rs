use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qlpv::harness::{
    bfr_score, bootstrap, evaluate, path_study, run_active_learning_with, schema_text, tables, tanks_experiment,
    ExperimentConfig, PlantTag, RunFile,
};
use qlpv::plants::store::save_dataset;
use qlpv::plants::{import_benchmark_csv, tanks_load};
use qlpv::{par, QlpvModel};

#[derive(Parser)]
#[command(name = "qlpv", version, about = "qLPV identification with path-length active learning")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set kappa2=0` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Restrict to these seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print every configuration key with its default.
    Schema,
    /// Generate the initial dataset, test set, pool and initial model.
    Bootstrap(ConfigArgs),
    /// Run active learning (oscillator) or train on the tanks data.
    Run(ConfigArgs),
    /// Score a saved model on a seed's test set.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Time exact against LTV path-length acquisition.
    ComparePaths {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of dataset sizes to compare at.
        #[arg(long, default_value_t = 10)]
        settings: usize,
    },
    /// Convert the benchmark CSV into train.csv / test.csv.
    ImportTanks {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn load(args: &ConfigArgs) -> AnyResult<ExperimentConfig> {
    let mut set = args.set.clone();
    if let Some(out) = &args.out {
        set.push(format!("output_dir = \"{}\"", out.display().to_string().replace('\\', "/")));
    }
    if !args.seeds.is_empty() {
        let list: Vec<String> = args.seeds.iter().map(|s| s.to_string()).collect();
        set.push(format!("seeds = [{}]", list.join(", ")));
    }
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p, &set)?,
        None => ExperimentConfig::from_toml_with("", &set)?,
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.artifact("config", None, "toml"), cfg.canonical())?;
    log::info!("configuration fingerprint {}", cfg.fingerprint());
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> AnyResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Split<'a> {
    reg_indices: &'a [usize],
    pool_indices: &'a [usize],
}

fn cmd_bootstrap(cfg: &ExperimentConfig) -> AnyResult<bool> {
    for &seed in &cfg.seeds {
        let b = bootstrap(cfg, seed)?;
        let dir = cfg.artifact("bootstrap", Some(seed), "d");
        let scaler = Some(&b.plant.scaler);
        save_dataset(&dir.join("initial"), &b.initial, "oscillator", seed, scaler)?;
        save_dataset(&dir.join("test"), &b.test, "oscillator", seed, scaler)?;
        write_json(&dir.join("split.json"), &Split { reg_indices: &b.reg_indices, pool_indices: &b.pool_indices })?;
        b.theta0.save(&dir.join("theta0.txt"))?;
        println!("seed {seed}: initial {} test {} pool {} -> {}", b.initial.fingerprint(), b.test.fingerprint(), b.pool.len(), dir.display());
    }
    Ok(true)
}

fn cmd_run(cfg: &ExperimentConfig) -> AnyResult<bool> {
    if cfg.plant == PlantTag::Tanks {
        return cmd_tanks(cfg);
    }
    let results = par::map(&cfg.seeds, |&seed| -> AnyResult<_> {
        let path = cfg.artifact("runlog", Some(seed), "jsonl");
        let mut file = RunFile::create(&path)?;
        let out = run_active_learning_with(cfg, seed, &mut |line| file.append(line))?;
        tables::write_curve(&cfg.artifact("curve", Some(seed), "csv"), &out.log)?;
        out.model.save(&cfg.artifact("model", Some(seed), "txt"))?;
        let mut trace = String::new();
        for (n, records) in &out.train_logs {
            for r in records {
                let mut v = serde_json::to_value(r)?;
                v["n"] = (*n).into();
                trace.push_str(&serde_json::to_string(&v)?);
                trace.push('\n');
            }
        }
        std::fs::write(cfg.artifact("trainlog", Some(seed), "jsonl"), trace)?;
        Ok(out.log)
    });
    let mut logs = Vec::new();
    let mut complete = true;
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(log) => {
                let last = log.records.last();
                println!(
                    "seed {seed}: {:?}, final N {} mu_e {:?}, run fingerprint {}",
                    log.status,
                    last.map(|r| r.n).unwrap_or(0),
                    last.and_then(|r| r.mu_e),
                    log.fingerprint()
                );
                complete &= log.is_complete();
                logs.push(log);
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                complete = false;
            }
        }
    }
    tables::write_error_bars(&cfg.artifact("errorbars", None, "csv"), &logs)?;
    Ok(complete)
}

fn cmd_tanks(cfg: &ExperimentConfig) -> AnyResult<bool> {
    let data = tanks_load(&cfg.tanks_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let (r, model) = tanks_experiment(cfg, &data, cfg.kappa2, seed)?;
        println!("seed {seed}: train RMSE {:.6}, test RMSE {:.6}", r.train_rmse, r.test_rmse);
        model.save(&cfg.artifact("model", Some(seed), "txt"))?;
        rows.push(r);
    }
    tables::write_tanks(&cfg.artifact("tanks", None, "csv"), &rows)?;
    Ok(true)
}

#[derive(Serialize)]
struct EvaluationFile {
    model: String,
    seed: u64,
    mu_e: f64,
    var_e: f64,
    unstable: usize,
    bfr: f64,
    bfr_per_channel: Vec<f64>,
}

fn cmd_evaluate(cfg: &ExperimentConfig, model_path: &Path) -> AnyResult<bool> {
    let model = QlpvModel::load(model_path)?;
    for &seed in &cfg.seeds {
        let b = bootstrap(cfg, seed)?;
        let stats = evaluate(&model, &b.test)?;
        let bfr = bfr_score(&model, &b.test)?;
        println!(
            "seed {seed}: mu_e {:.6e} var_e {:.6e} unstable {} bfr {:.2}",
            stats.mu_e, stats.var_e, stats.unstable, bfr.mean
        );
        write_json(
            &cfg.artifact("evaluation", Some(seed), "json"),
            &EvaluationFile {
                model: model.fingerprint(),
                seed,
                mu_e: stats.mu_e,
                var_e: stats.var_e,
                unstable: stats.unstable,
                bfr: bfr.mean,
                bfr_per_channel: bfr.per_channel,
            },
        )?;
        tables::write_schedules(&cfg.artifact("schedules", Some(seed), "csv"), &model, &b.test, 50)?;
    }
    Ok(true)
}

fn cmd_compare(cfg: &ExperimentConfig, settings: usize) -> AnyResult<bool> {
    for &seed in &cfg.seeds {
        let rows = path_study(cfg, seed, settings)?;
        let agree = rows.iter().filter(|r| r.argmax_agree).count();
        let worst_time = rows.iter().map(|r| r.pct_time).fold(0.0, f64::max);
        let worst_ape = rows.iter().map(|r| r.max_ape).fold(0.0, f64::max);
        println!(
            "seed {seed}: ltv time <= {worst_time:.1}% of qlpv, max APE {worst_ape:.3}%, argmax agreement {agree}/{}",
            rows.len()
        );
        tables::write_timing(&cfg.artifact("timing", Some(seed), "csv"), &rows)?;
    }
    Ok(true)
}

fn dispatch(cli: Cli) -> AnyResult<bool> {
    match cli.cmd {
        Cmd::Schema => {
            print!("{}", schema_text());
            Ok(true)
        }
        Cmd::Bootstrap(a) => cmd_bootstrap(&load(&a)?),
        Cmd::Run(a) => cmd_run(&load(&a)?),
        Cmd::Evaluate { cfg, model } => cmd_evaluate(&load(&cfg)?, &model),
        Cmd::ComparePaths { cfg, settings } => cmd_compare(&load(&cfg)?, settings),
        Cmd::ImportTanks { src, out } => {
            import_benchmark_csv(&src, &out)?;
            let data = tanks_load(&out)?;
            println!("wrote {} (checksum {})", out.display(), data.checksum);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = if cli.threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cli.threads };
    match par::with_threads(threads, || dispatch(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("incomplete run");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
