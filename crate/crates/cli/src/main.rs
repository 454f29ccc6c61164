//! `layerprobe`: train and evaluate hallucination probes on hidden-state dumps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use layerprobe::dump::{read_dump, write_dataset, Dataset, DatasetSplits, Manifest, SplitSpec};
use layerprobe::experiments::{
    cross_benchmark, layer_weight_summary, run_grid, sequence_experiment, train_run, transfer, write_reports, Decoder, GridPlan,
};
use layerprobe::model::{Architecture, Model};
use layerprobe::synthetic::{separable_dumps, tagged_dumps, SeparableConfig, TaggedConfig};
use layerprobe::tagging::TagScheme;
use layerprobe::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "layerprobe", version, about = "Hallucination probes over per-layer hidden states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long, default_value = "layerprobe-out")]
    out: PathBuf,
    /// Base seed; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Seed of the train/validation/test shuffle.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            freeze_aggregation: false,
        }
    }

    fn parallelism(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }

    fn echo(&self) -> serde_json::Value {
        json!({
            "seed": self.seed,
            "split_seed": self.split_seed,
            "train": self.train_config(),
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Io,
    Bio,
    Bioes,
}

impl From<SchemeArg> for TagScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Io => TagScheme::Io,
            SchemeArg::Bio => TagScheme::Bio,
            SchemeArg::Bioes => TagScheme::Bioes,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecoderArg {
    Greedy,
    Crf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Separable,
    Tagged,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every cell of the model-selection grid.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Restrict the grid to extractor depths up to this value.
        #[arg(long, default_value_t = 5)]
        max_depth: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train on each dataset and test on all of them.
    Crossbench {
        /// Two or more manifests.
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain on the first dataset, then finetune on the second.
    Transfer {
        /// Exactly two manifests: pretraining, then finetuning.
        #[arg(long, num_args = 2, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Keep the aggregation head fixed during finetuning.
        #[arg(long)]
        freeze: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Token-level hallucination tagging.
    Seqlabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "io")]
        scheme: SchemeArg,
        #[arg(long, value_enum, default_value = "crf")]
        decoder: DecoderArg,
        #[command(flatten)]
        common: Common,
    },
    /// Per-layer sums of a flattened head's first-map weights.
    Weights {
        /// Saved probe; when absent one run is trained from --data and --spec.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the header of a dump file or the summary of a manifest.
    DumpInfo {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write a synthetic dataset with a manifest.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples (separable) or sequences (tagged).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
    },
}

fn load_splits(path: &Path, split_seed: u64) -> Result<DatasetSplits> {
    let dataset = Dataset::load(path).with_context(|| format!("loading {}", path.display()))?;
    let spec = SplitSpec {
        seed: split_seed,
        ..SplitSpec::default()
    };
    Ok(dataset.split(&spec)?)
}

/// Suffixes repeated benchmark names with their position so every column is
/// addressable.
fn disambiguate(splits: &mut [DatasetSplits]) {
    for i in 0..splits.len() {
        if splits[..i].iter().any(|s| s.name == splits[i].name) {
            splits[i].name = format!("{}#{}", splits[i].name, i + 1);
        }
    }
}

fn load_spec(path: &Path) -> Result<Architecture> {
    let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    Architecture::from_json(&text).with_context(|| format!("parsing spec {}", path.display()))
}

fn prepare_out(common: &Common, verb: &str, extra: serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let config = json!({ "command": verb, "common": common.echo(), "args": extra });
    fs::write(common.out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    Ok(common.out.clone())
}

fn grid(data: &Path, runs: usize, max_depth: usize, common: &Common) -> Result<bool> {
    let splits = load_splits(data, common.split_seed)?;
    let mut plan = GridPlan::default_plan(common.seed);
    plan.runs_per_cell = runs;
    plan.specs.retain(|s| s.depth <= max_depth);
    let out = prepare_out(common, "grid", json!({ "data": data, "runs": runs, "max_depth": max_depth }))?;
    let report = run_grid(&plan, &splits, &common.train_config(), common.parallelism())?;
    fs::write(out.join("cells.tsv"), report.cells_tsv())?;
    fs::write(out.join("summary.tsv"), report.summary_tsv())?;
    for cell in &report.cells {
        write_reports(out.join("runs"), &cell.label(), &cell.reports)?;
        for f in &cell.failures {
            eprintln!("{}: run failed: {f}", cell.label());
        }
    }
    print!("{}", report.summary_tsv());
    let failed: Vec<String> = report.cells.iter().filter(|c| c.failed()).map(|c| c.label()).collect();
    if !failed.is_empty() {
        eprintln!("cells with no completed run: {}", failed.join(", "));
    }
    Ok(report.all_cells_reported())
}

fn crossbench(data: &[PathBuf], spec: &Path, runs: usize, common: &Common) -> Result<bool> {
    if data.len() < 2 {
        bail!("crossbench needs at least two --data manifests");
    }
    let arch = load_spec(spec)?;
    let mut splits = data.iter().map(|p| load_splits(p, common.split_seed)).collect::<Result<Vec<_>>>()?;
    disambiguate(&mut splits);
    let refs: Vec<&DatasetSplits> = splits.iter().collect();
    let out = prepare_out(common, "crossbench", json!({ "data": data, "spec": arch, "runs": runs }))?;
    let report = cross_benchmark(arch, &refs, runs, common.seed, &common.train_config(), common.parallelism())?;
    fs::write(out.join("crossbench.tsv"), report.to_tsv())?;
    for row in &report.rows {
        for f in &row.failures {
            eprintln!("run failed: {f}");
        }
    }
    for (i, row) in report.rows.iter().enumerate() {
        write_reports(out.join("runs"), &format!("train_{}", report.datasets[i]), &row.reports)?;
    }
    print!("{}", report.to_tsv());
    Ok(report.all_cells_reported())
}

fn transfer_cmd(data: &[PathBuf], spec: &Path, runs: usize, freeze: bool, common: &Common) -> Result<bool> {
    let arch = load_spec(spec)?;
    let first = load_splits(&data[0], common.split_seed)?;
    let mut second = load_splits(&data[1], common.split_seed)?;
    if second.name == first.name {
        second.name.push_str("#2");
    }
    let out = prepare_out(common, "transfer", json!({ "data": data, "spec": arch, "runs": runs, "freeze": freeze }))?;
    let report = transfer(arch, &first, &second, runs, common.seed, &common.train_config(), freeze, common.parallelism())?;
    fs::write(out.join("transfer.tsv"), report.to_tsv())?;
    fs::write(out.join("transfer.json"), serde_json::to_string_pretty(&report)?)?;
    for f in &report.failures {
        eprintln!("run failed: {f}");
    }
    print!("{}", report.to_tsv());
    Ok(report.failures.is_empty() && !report.runs.is_empty())
}

fn seqlabel(data: &Path, spec: &Path, scheme: TagScheme, decoder: Decoder, common: &Common) -> Result<bool> {
    let arch = load_spec(spec)?;
    let splits = load_splits(data, common.split_seed)?;
    let out = prepare_out(
        common,
        "seqlabel",
        json!({ "data": data, "spec": arch, "scheme": scheme, "decoder": decoder }),
    )?;
    let (model, report) = sequence_experiment(arch, &splits, scheme, decoder, &common.train_config())?;
    model.save(out.join("model.lpp"))?;
    fs::write(out.join("seqlabel.json"), serde_json::to_string_pretty(&report)?)?;
    let m = &report.test;
    println!("scheme\tdecoder\taccuracy\tprecision\trecall\tf1");
    println!(
        "{}\t{:?}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
        scheme.name(),
        decoder,
        m.accuracy,
        m.precision,
        m.recall,
        m.f1
    );
    Ok(true)
}

fn weights(model: Option<&Path>, data: Option<&Path>, spec: Option<&Path>, common: &Common) -> Result<bool> {
    let model = match (model, data, spec) {
        (Some(path), _, _) => Model::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(data), Some(spec)) => {
            let arch = load_spec(spec)?;
            let splits = load_splits(data, common.split_seed)?;
            let out = prepare_out(common, "weights", json!({ "data": data, "spec": arch }))?;
            let (model, report) = train_run(arch, &splits, &[&splits], &common.train_config(), common.seed)?;
            model.save(out.join("model.lpp"))?;
            report.write(out.join("run.json"))?;
            model
        }
        _ => bail!("weights needs --model, or both --data and --spec"),
    };
    let summary = layer_weight_summary(&model)?;
    if data.is_some() {
        fs::write(common.out.join("layer_weights.tsv"), summary.to_tsv())?;
    }
    print!("{}", summary.to_tsv());
    Ok(true)
}

fn dump_info(files: &[PathBuf]) -> Result<bool> {
    for path in files {
        if path.extension().is_some_and(|e| e == "tsv") {
            let manifest = Manifest::read(path)?;
            let positives = manifest.entries.iter().filter(|e| e.label == 1).count();
            let tokens: u64 = manifest.entries.iter().map(|e| u64::from(e.token_count)).sum();
            println!(
                "{}\tmanifest\tbenchmark={}\tllm={}\tsamples={}\tpositive={}\ttokens={}",
                path.display(),
                manifest.benchmark,
                manifest.llm,
                manifest.entries.len(),
                positives,
                tokens
            );
        } else {
            let dump = read_dump(path)?;
            let h = dump.header;
            let positives = dump.labels.iter().filter(|&&l| l == 1).count();
            println!(
                "{}\tdump\ttask={:?}\tlayers={}\thidden={}\ttokens={}\tpositive_labels={}",
                path.display(),
                h.task,
                h.num_layers,
                h.hidden_dim,
                h.num_tokens,
                positives
            );
        }
    }
    Ok(true)
}

fn synth(kind: SynthKind, out: &Path, seed: u64, count: Option<usize>, layers: usize, hidden: usize) -> Result<bool> {
    let (dumps, name) = match kind {
        SynthKind::Separable => {
            let d = SeparableConfig::default();
            let cfg = SeparableConfig {
                samples: count.unwrap_or(d.samples),
                num_layers: layers,
                hidden_dim: hidden,
                signal_layer: layers / 2,
                seed,
                ..d
            };
            (separable_dumps(&cfg)?, "separable")
        }
        SynthKind::Tagged => {
            let d = TaggedConfig::default();
            let sequences = count.unwrap_or(d.sequences);
            let cfg = TaggedConfig {
                sequences,
                // keep the default positive rate
                positive_tokens: d.positive_tokens * sequences / d.sequences,
                num_layers: layers,
                hidden_dim: hidden,
                signal_layer: layers / 2,
                seed,
                ..d
            };
            (tagged_dumps(&cfg)?, "tagged")
        }
    };
    let manifest = write_dataset(out, name, "synthetic", &dumps)?;
    println!("{}", manifest.display());
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Grid {
            data,
            runs,
            max_depth,
            common,
        } => grid(&data, runs, max_depth, &common),
        Command::Crossbench { data, spec, runs, common } => crossbench(&data, &spec, runs, &common),
        Command::Transfer {
            data,
            spec,
            runs,
            freeze,
            common,
        } => transfer_cmd(&data, &spec, runs, freeze, &common),
        Command::Seqlabel {
            data,
            spec,
            scheme,
            decoder,
            common,
        } => {
            let decoder = match decoder {
                DecoderArg::Greedy => Decoder::Greedy,
                DecoderArg::Crf => Decoder::Crf,
            };
            seqlabel(&data, &spec, scheme.into(), decoder, &common)
        }
        Command::Weights {
            model,
            data,
            spec,
            common,
        } => weights(model.as_deref(), data.as_deref(), spec.as_deref(), &common),
        Command::DumpInfo { files } => dump_info(&files),
        Command::Synth {
            kind,
            out,
            seed,
            count,
            layers,
            hidden,
        } => synth(kind, &out, seed, count, layers, hidden),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
