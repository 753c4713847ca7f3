use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skeleton_cache::descriptors::{default_scheme, PartitionScheme};
use skeleton_cache::fusion::WeightMode;
use skeleton_cache::harness::{
    bench_latency, emit_reports, run_stream, sweep, write_latency_csv, write_sweep_csv,
    BenchConfig, PriorSelect, RunConfig, RunInputs, RunParams, RunReport, SweepParam,
};
use skeleton_cache::priors::{
    default_prompt_slots, fetch_priors, save_priors, EndpointConfig, PriorSource, PromptSlot,
};
use skeleton_cache::tensorio::{
    generate_synthetic, read_container, write_container, SyntheticConfig,
};
use skeleton_cache::{Error, Result};

#[derive(Parser)]
#[command(
    name = "skcache",
    version,
    about = "Cache-based test-time adaptation for zero-shot skeleton action recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream a container through the cache and write the report files.
    Run(RunArgs),
    /// Rerun the stream for each value of one hyperparameter.
    Sweep(SweepArgs),
    /// Time retrieval + fusion per sample at several sequence lengths.
    Bench(BenchArgs),
    /// Write a seeded synthetic stream as an SKC1 container.
    GenSynth(GenSynthArgs),
    /// Build a prior matrix from fixture responses or a chat-completion endpoint.
    FetchPriors(FetchArgs),
    /// Re-emit the report files from a saved report.json.
    ExportReport(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Llm,
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectArg {
    Predicted,
    PerClassMax,
}

#[derive(Args)]
struct RunArgs {
    /// SKC1 stream container.
    #[arg(long)]
    container: PathBuf,
    /// Prior matrix JSON, required with --weight-mode llm.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "llm")]
    weight_mode: ModeArg,
    /// Seed for --weight-mode random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Partition scheme JSON; Kinect-25 by default.
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Cache capacity per class.
    #[arg(short = 'k', long = "k", alias = "capacity", default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 5.0)]
    alpha_s: f64,
    #[arg(long)]
    retrieve_before_update: bool,
    #[arg(long)]
    gate_on_adapted: bool,
    #[arg(long)]
    gzsl: bool,
    #[arg(long, value_enum, default_value = "predicted")]
    prior_select: SelectArg,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn params(&self) -> RunParams {
        RunParams {
            capacity: self.k,
            beta: self.beta,
            alpha_s: self.alpha_s,
            retrieve_before_update: self.retrieve_before_update,
            gate_on_adapted: self.gate_on_adapted,
            gzsl: self.gzsl,
            prior_select: match self.prior_select {
                SelectArg::Predicted => PriorSelect::Predicted,
                SelectArg::PerClassMax => PriorSelect::PerClassMax,
            },
            weight_mode: match self.weight_mode {
                ModeArg::Llm => WeightMode::Llm,
                ModeArg::Uniform => WeightMode::Uniform,
                ModeArg::Random => WeightMode::Random { seed: self.seed },
            },
        }
    }

    fn config(&self) -> RunConfig {
        RunConfig {
            container: self.container.clone(),
            priors: self.priors.clone(),
            scheme: self.scheme.clone(),
            output_dir: self.output_dir.clone(),
            params: self.params(),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// K, alpha_s or beta.
    #[arg(long)]
    parameter: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// CSV path; defaults to <output-dir>/sweep_<parameter>.csv or stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench config JSON (synthetic template, params, samples, rounds, warm).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated sequence lengths.
    #[arg(long = "t-values", value_delimiter = ',', default_value = "50,500")]
    t_values: Vec<usize>,
    /// Overrides the config's sample count.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Synthetic config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's frame count.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    /// Take class names from this container.
    #[arg(long, conflicts_with = "classes")]
    container: Option<PathBuf>,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Directory of recorded responses, one <class-slug>.json per class.
    #[arg(long, conflicts_with = "endpoint")]
    fixtures: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. https://api.openai.com/v1.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4-turbo")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// report.json written by `run --output-dir`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
}

fn load_scheme(path: Option<&Path>) -> Result<PartitionScheme> {
    path.map_or_else(|| Ok(default_scheme()), PartitionScheme::load)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let report = run_stream(&args.config())?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("samples        {}", report.samples);
    println!("top1 baseline  {:.4}", report.top1_baseline);
    println!("top1 adapted   {:.4}", report.top1_adapted);
    if let Some(g) = &report.gzsl {
        println!(
            "baseline S/U/H {:.4} {:.4} {:.4}",
            g.baseline.seen, g.baseline.unseen, g.baseline.harmonic
        );
        println!(
            "adapted  S/U/H {:.4} {:.4} {:.4}",
            g.adapted.seen, g.adapted.unseen, g.adapted.harmonic
        );
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let parameter: SweepParam = args.parameter.parse()?;
    let cfg = args.run.config();
    let inputs = RunInputs::load(&cfg)?;
    let rows = sweep(
        &inputs.container,
        inputs.priors.as_ref(),
        &inputs.scheme,
        &cfg.params,
        parameter,
        &args.values,
    )?;
    let out = args.out.clone().or_else(|| {
        cfg.output_dir
            .as_ref()
            .map(|d| d.join(format!("sweep_{}.csv", args.parameter)))
    });
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_sweep_csv(&path, &rows)?;
            println!("wrote {}", path.display());
        }
        None => {
            println!("value,top1_adapted,runtime_s,top1_baseline");
            for r in &rows {
                println!(
                    "{},{},{},{}",
                    r.value, r.top1_adapted, r.runtime_s, r.top1_baseline
                );
            }
        }
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = BenchConfig::load(&args.config)?;
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    let scheme = load_scheme(args.scheme.as_deref())?;
    let rows = bench_latency(&cfg, &scheme, &args.t_values)?;
    for r in &rows {
        println!(
            "T={:<5} samples={} cache={} mean={:.2}us",
            r.frames, r.samples, r.cache_entries, r.mean_us
        );
    }
    if let Some(out) = &args.out {
        write_latency_csv(out, &rows)?;
    }
    Ok(())
}

fn cmd_gen_synth(args: &GenSynthArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(frames) = args.frames {
        cfg.frames = frames;
    }
    let container = generate_synthetic(&cfg)?;
    write_container(&args.out, &container)?;
    println!(
        "wrote {} samples to {}",
        container.sample_count(),
        args.out.display()
    );
    Ok(())
}

/// Prompt names for a scheme: the stock wording for the default partition,
/// the scheme's own labels otherwise.
fn prompt_slots(scheme: &PartitionScheme) -> (Vec<PromptSlot>, Vec<PromptSlot>) {
    if *scheme == default_scheme() {
        return default_prompt_slots();
    }
    (
        scheme
            .spatial_labels()
            .into_iter()
            .map(PromptSlot::from_label)
            .collect(),
        scheme
            .temporal_labels()
            .into_iter()
            .map(PromptSlot::from_label)
            .collect(),
    )
}

fn cmd_fetch(args: &FetchArgs) -> Result<()> {
    let names = match &args.container {
        Some(path) => read_container(path)?.class_names,
        None => args.classes.clone(),
    };
    let source = match (&args.fixtures, &args.endpoint) {
        (Some(dir), _) => PriorSource::Fixtures(dir.clone()),
        (None, Some(url)) => {
            let mut cfg =
                EndpointConfig::new(url.clone(), args.model.clone(), args.api_key_env.clone());
            cfg.max_retries = args.max_retries;
            PriorSource::Endpoint(cfg)
        }
        (None, None) => {
            return Err(Error::Validation(
                "either --fixtures or --endpoint is required".into(),
            ))
        }
    };
    let scheme = load_scheme(args.scheme.as_deref())?;
    let (spatial, temporal) = prompt_slots(&scheme);
    let matrix = fetch_priors(&names, &spatial, &temporal, &source)?;
    save_priors(&args.out, &matrix)?;
    println!(
        "wrote priors for {} classes to {}",
        names.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let report = RunReport::load(&args.report)?;
    emit_reports(&report, &args.output_dir)?;
    println!("wrote reports to {}", args.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::FetchPriors(a) => cmd_fetch(a),
        Command::ExportReport(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
