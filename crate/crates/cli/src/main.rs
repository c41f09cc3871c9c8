use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use wugbench::config::RunConfig;
use wugbench::probe::{parse_word_list, OutclassSource};
use wugbench::refmodel::{load_checkpoint, pretrain, save_checkpoint, MaskedLm};
use wugbench::report::{digest_file, read_summary, write_atomic, InputDigest, OutputSet, RunManifest};
use wugbench::runner::{self, ExperimentConfig};
use wugbench::stimuli::{default_selectional_network, load_battery, serialize_battery, AlternationSpec};
use wugbench::synthcorpus::{build_grammar, outclass_word_list, sample_corpus, GrammarSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "wugbench", version, about = "Novel-word learning experiments for masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the demo grammar and run configuration to a directory.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the reference model on a sampled synthetic corpus.
    Pretrain {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; battery, out-class list and manifest are written beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune on one frame of each alternation and test the sister frame.
    Alternations {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        battery: PathBuf,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration supplying fine-tuning, statistics and master-seed settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fine-tune on the attested verb/object network and compare surprisals.
    Selectional {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify fine-tuned novel embeddings with linear probes.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        battery: PathBuf,
        /// `distractor` or `wordlist:<path>`.
        #[arg(long, default_value = "distractor")]
        outclass: String,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// An alternations summary.csv to correlate probe accuracies against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .chain()
                .any(|c| c.downcast_ref::<wugbench::Error>().is_some_and(|e| e.is_numeric()));
            ExitCode::from(if numeric { EXIT_NUMERIC } else { EXIT_INPUT })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init { out } => init(&out),
        Command::Pretrain {
            grammar,
            config,
            out,
            seed,
        } => pretrain_cmd(&grammar, &config, &out, seed),
        Command::Alternations {
            model,
            battery,
            seeds,
            out,
            config,
        } => {
            let cfg = experiment_config(config.as_deref())?;
            let m = read_model(&model)?;
            let specs = read_battery(&battery)?;
            let trials = in_pool(|| runner::run_alternations(&m, &specs, seeds, &cfg))?;
            let outputs = runner::alternation_outputs(&trials, &specs, &cfg)?;
            let inputs = digests(&[&model, &battery])?;
            finish(outputs, &out, runner::ALTERNATIONS, seeds, &cfg, inputs, &[("model", &model), ("battery", &battery)])
        }
        Command::Selectional {
            model,
            seeds,
            out,
            config,
        } => {
            let cfg = experiment_config(config.as_deref())?;
            let m = read_model(&model)?;
            let net = default_selectional_network();
            let trials = in_pool(|| runner::run_selectional(&m, &net, seeds, &cfg))?;
            let outputs = runner::selectional_outputs(&trials, &net, &cfg)?;
            let inputs = digests(&[&model])?;
            finish(outputs, &out, runner::SELECTIONAL, seeds, &cfg, inputs, &[("model", &model)])
        }
        Command::Probe {
            model,
            battery,
            outclass,
            seeds,
            out,
            compare,
            config,
        } => {
            let cfg = experiment_config(config.as_deref())?;
            let m = read_model(&model)?;
            let specs = read_battery(&battery)?;
            let (source, list_path) = parse_outclass(&outclass)?;
            let compare_rows = match &compare {
                Some(p) => Some(read_summary(&read_text(p)?).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let trials = in_pool(|| runner::run_probes(&m, &specs, &source, seeds, &cfg))?;
            let outputs = runner::probe_outputs(&trials, &specs, compare_rows.as_deref(), &cfg)?;
            let mut paths: Vec<&Path> = vec![&model, &battery];
            paths.extend(list_path.as_deref());
            paths.extend(compare.as_deref());
            let inputs = digests(&paths)?;
            let mut named = vec![("model", model.as_path()), ("battery", battery.as_path())];
            if let Some(p) = &compare {
                named.push(("compare", p));
            }
            if let Some(p) = &list_path {
                named.push(("wordlist", p));
            }
            finish(outputs, &out, runner::PROBE, seeds, &cfg, inputs, &named)
        }
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| wugbench::Error::io(path, e).into())
}

fn read_model(path: &Path) -> anyhow::Result<MaskedLm> {
    load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

fn read_battery(path: &Path) -> anyhow::Result<Vec<AlternationSpec>> {
    load_battery(&read_text(path)?).with_context(|| format!("loading battery {}", path.display()))
}

fn experiment_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(RunConfig::parse(&read_text(p)?)
            .with_context(|| format!("reading config {}", p.display()))?
            .experiment()),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_outclass(arg: &str) -> anyhow::Result<(OutclassSource, Option<PathBuf>)> {
    if arg == "distractor" {
        return Ok((OutclassSource::Distractor, None));
    }
    let Some(path) = arg.strip_prefix("wordlist:") else {
        bail!("--outclass must be `distractor` or `wordlist:<path>`, got `{arg}`");
    };
    let path = PathBuf::from(path);
    let words = parse_word_list(&read_text(&path)?);
    if words.is_empty() {
        bail!("word list {} is empty", path.display());
    }
    Ok((OutclassSource::WordList(words), Some(path)))
}

fn in_pool<T: Send>(f: impl FnOnce() -> wugbench::Result<T> + Send) -> anyhow::Result<T> {
    let threads = runner::thread_count()?;
    Ok(runner::with_workers(threads, f)??)
}

fn digests(paths: &[&Path]) -> anyhow::Result<Vec<InputDigest>> {
    Ok(paths.iter().map(|p| digest_file(p)).collect::<wugbench::Result<_>>()?)
}

fn finish(
    mut outputs: OutputSet,
    out: &Path,
    experiment: &str,
    seeds: u64,
    cfg: &ExperimentConfig,
    inputs: Vec<InputDigest>,
    paths: &[(&str, &Path)],
) -> anyhow::Result<()> {
    let files: serde_json::Map<String, serde_json::Value> = paths
        .iter()
        .map(|(k, p)| (k.to_string(), p.display().to_string().into()))
        .collect();
    let manifest = RunManifest {
        experiment: experiment.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        seeds: (0..seeds).collect(),
        config: serde_json::json!({ "experiment": cfg, "files": files }),
        inputs,
    };
    manifest.validate()?;
    outputs.add("manifest.json", manifest.to_bytes()?);
    outputs.write_to(out)?;
    for name in outputs.names() {
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn sidecar(model: &Path, suffix: &str) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn init(out: &Path) -> anyhow::Result<()> {
    let mut files = OutputSet::default();
    files.add("grammar.json", pretty(&GrammarSpec::demo())?);
    files.add("config.json", pretty(&RunConfig::demo())?);
    files.write_to(out)?;
    for name in files.names() {
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn pretty<T: serde::Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn pretrain_cmd(grammar_path: &Path, config_path: &Path, out: &Path, seed: u64) -> anyhow::Result<()> {
    let spec: GrammarSpec = serde_json::from_str(&read_text(grammar_path)?)
        .map_err(wugbench::Error::from)
        .with_context(|| format!("reading grammar {}", grammar_path.display()))?;
    let cfg = RunConfig::parse(&read_text(config_path)?).with_context(|| format!("reading config {}", config_path.display()))?;
    let grammar = build_grammar(&spec, seed)?;
    let corpus = sample_corpus(&grammar, cfg.corpus.sentences, cfg.corpus.seed)?;
    let model_cfg = cfg.model_config(&grammar)?;
    let (model, report) = pretrain(&corpus, &model_cfg, &cfg.pretrain, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| wugbench::Error::io(dir, e))?;
    }
    save_checkpoint(&model, out)?;
    let battery_path = sidecar(out, ".battery.json");
    write_atomic(&battery_path, serialize_battery(&grammar.battery()).as_bytes())?;
    let list_path = sidecar(out, ".outclass.txt");
    let mut list = outclass_word_list(&grammar, &corpus).join("\n");
    list.push('\n');
    write_atomic(&list_path, list.as_bytes())?;
    let manifest = RunManifest {
        experiment: "pretrain".into(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: seed,
        seeds: vec![seed],
        config: serde_json::json!({
            "run": cfg,
            "grammar": spec,
            "report": report,
            "files": {
                "grammar": grammar_path.display().to_string(),
                "config": config_path.display().to_string(),
                "model": out.display().to_string(),
                "battery": battery_path.display().to_string(),
                "outclass": list_path.display().to_string(),
            },
        }),
        inputs: digests(&[grammar_path, config_path])?,
    };
    write_atomic(&sidecar(out, ".manifest.json"), &manifest.to_bytes()?)?;
    println!("final loss {}", report.final_loss);
    Ok(())
}
