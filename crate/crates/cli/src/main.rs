use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hitl_cli::bench::{run_bench, run_compare, BenchSpec};
use hitl_cli::ops::{self, IngestSpec};
use hitl_cli::Result;
use hitl_core::synthetic::KeywordCorpus;
use hitl_core::{DataFormat, Protocol, SessionConfig, Strategy};
use hitl_service::ServiceConfig;

/// Active-learning text classification: benchmarks, serving and exports.
#[derive(Parser)]
#[command(name = "hitl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated labeling runs, one learning curve per seed.
    Bench(BenchArgs),
    /// The same runs for several strategies, in one long-format CSV.
    Compare {
        #[command(flatten)]
        bench: BenchArgs,
        /// Comma-separated, at least two.
        #[arg(long, value_delimiter = ',', default_value = "max_entropy,random")]
        strategies: Vec<Strategy>,
    },
    /// Write the synthetic keyword corpus to disk.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        pool_size: usize,
        #[arg(long, default_value_t = 1000)]
        eval_size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "csv")]
        format: DataFormat,
    },
    /// Store a dataset in the service data directory.
    Ingest {
        #[arg(long)]
        name: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        format: Option<DataFormat>,
        /// JSON file `{"labels": [...]}`; inferred when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Built-in descriptor to check row and label counts against.
        #[arg(long)]
        descriptor: Option<String>,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Run the HTTP API.
    Serve(ServiceArgs),
    /// Replay a session log and write its model, vocabulary and annotations.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Training rows: the pool, or the source of the split.
    #[arg(long)]
    dataset: PathBuf,
    /// Evaluation rows; without it the labeled dataset rows are split.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    format: Option<DataFormat>,
    /// JSON file `{"labels": [...]}`; inferred when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    descriptor: Option<String>,
    #[arg(long, default_value = "max_entropy")]
    strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 150)]
    max_labels: usize,
    #[arg(long, default_value = "paper_protocol")]
    protocol: Protocol,
    /// Repeat for several runs.
    #[arg(long = "seed", default_values_t = [42u64])]
    seeds: Vec<u64>,
    /// Chance that the simulated annotator answers a wrong label.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    eval_fraction: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Also write one SVG chart per metric.
    #[arg(long)]
    svg: bool,
}

impl BenchArgs {
    fn spec(self) -> BenchSpec {
        BenchSpec {
            dataset: self.dataset,
            test: self.test,
            format: self.format,
            schema: self.schema,
            descriptor: self.descriptor,
            config: SessionConfig {
                strategy: self.strategy,
                batch_size: self.batch_size,
                max_labels: self.max_labels,
                protocol: self.protocol,
                ..Default::default()
            },
            seeds: self.seeds,
            noise: self.noise,
            eval_fraction: self.eval_fraction,
            split_seed: self.split_seed,
            out_dir: self.out_dir,
            svg: self.svg,
        }
    }
}

#[derive(Args)]
struct ServiceArgs {
    /// TOML file with `listen` and `data_dir`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl ServiceArgs {
    fn resolve(self) -> Result<ServiceConfig> {
        let mut cfg = ServiceConfig::load(self.config.as_deref())?;
        if let Some(l) = self.listen {
            cfg.listen = l;
        }
        if let Some(d) = self.data_dir {
            cfg.data_dir = d;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(args) => {
            let report = run_bench(&args.spec())?;
            for (seed, curve) in &report.curves {
                let last = curve.last().expect("curve has round 0");
                println!("seed {seed}: {} labels, accuracy {:.4}", last.n_labels, last.accuracy);
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare { bench, strategies } => {
            let report = run_compare(&bench.spec(), &strategies)?;
            for (s, curves) in &report.runs {
                let mean = curves.iter().map(|c| c.last().expect("curve has round 0").accuracy).sum::<f64>() / curves.len() as f64;
                println!("{s}: mean final accuracy {mean:.4}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Synth { out_dir, pool_size, eval_size, seed, format } => {
            let spec = KeywordCorpus { pool_size, eval_size, seed, ..Default::default() };
            for f in ops::synth(&spec, format, &out_dir)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Ingest { name, dataset, test, format, schema, descriptor, service } => {
            let data_dir = service.resolve()?.data_dir;
            let ds = ops::ingest(&IngestSpec { name, dataset, test, format, schema, descriptor, data_dir })?;
            let info = ds.info();
            println!(
                "stored `{}`: {} train rows, {} test rows, {} labels",
                info.name,
                info.n_train,
                info.n_test.map_or("no".to_string(), |n| n.to_string()),
                info.labels.len()
            );
        }
        Command::Serve(args) => ops::serve(&args.resolve()?)?,
        Command::Export { log, out_dir } => {
            let bundle = ops::export(&log, &out_dir)?;
            println!(
                "session {}: {} curve entries, {} annotations, written to {}",
                bundle.session_id,
                bundle.curve.len(),
                bundle.annotations_jsonl.lines().count(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
