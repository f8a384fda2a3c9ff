//! Command-line front end: ingest edge streams, train and evaluate models,
//! rank anomalous pairs, and export edge embeddings.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use stcad::features::{FeatureExtractor, PageRankCache, SampleFeatures};
use stcad::graph::{
    parse_edge_stream, partition_snapshots, read_graph, write_graph, DynamicGraph, NodeId,
    Snapshot,
};
use stcad::model::Model;
use stcad::sampler::{build_sample, build_test_set, EdgeSample};
use stcad::seed::derived_rng;
use stcad::training::{build_dataset, evaluate_model, train};

#[derive(Parser)]
#[command(name = "stcad", version, about = "Structural-temporal anomaly detection in dynamic graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every command: config file plus generic overrides.
#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Named ablation, e.g. `--ablate no-coupling-features`. Repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    snapshot_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    inject_rate: Option<f64>,
    #[arg(long)]
    split_fraction: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_sets(&self.set)?;
        if let Some(v) = self.snapshot_size {
            cfg.snapshot_size = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.train_ratio {
            cfg.train_ratio = v;
        }
        if let Some(v) = self.inject_rate {
            cfg.inject_rate = v;
        }
        if let Some(v) = self.split_fraction {
            cfg.split_fraction = v;
        }
        for name in &self.ablate {
            cfg.apply_ablation(name)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a timestamped edge list and serialize it as an STCG graph.
    Ingest {
        /// Edge list: `source target timestamp` per line, `#` comments.
        #[arg(long)]
        input: PathBuf,
        /// Output STCG path.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes report.json, best.ckpt, and config_used.txt.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also dump every train/test sample as JSON lines.
        #[arg(long)]
        dump_samples: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split; writes or prints eval.json.
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score candidate pairs and print the top K by anomaly score.
    Rank {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Candidate pairs (`source target` per line, original labels);
        /// defaults to all edges of the last snapshot.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Export test-edge embeddings as CSV: id, label, d values.
    ExportEmbeddings {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Ingest {
            input,
            output,
            common,
        } => cmd_ingest(&input, &output, &common),
        Cmd::Train {
            graph,
            out_dir,
            dump_samples,
            common,
        } => cmd_train(&graph, &out_dir, dump_samples.as_deref(), &common),
        Cmd::Eval {
            graph,
            checkpoint,
            output,
            common,
        } => cmd_eval(&graph, &checkpoint, output.as_deref(), &common),
        Cmd::Rank {
            graph,
            checkpoint,
            top_k,
            candidates,
            output,
            common,
        } => cmd_rank(
            &graph,
            &checkpoint,
            top_k,
            candidates.as_deref(),
            output.as_deref(),
            &common,
        ),
        Cmd::ExportEmbeddings {
            graph,
            checkpoint,
            output,
            common,
        } => cmd_export_embeddings(&graph, &checkpoint, &output, &common),
    }
}

fn load_graph(path: &Path) -> Result<DynamicGraph> {
    let mut r = BufReader::new(
        File::open(path).with_context(|| format!("opening graph {}", path.display()))?,
    );
    read_graph(&mut r).with_context(|| format!("reading STCG graph {}", path.display()))
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model> {
    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    let mut r = BufReader::new(
        File::open(checkpoint)
            .with_context(|| format!("opening checkpoint {}", checkpoint.display()))?,
    );
    model
        .params
        .load(&mut r)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(model)
}

fn cmd_ingest(input: &Path, output: &Path, common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let reader = BufReader::new(
        File::open(input).with_context(|| format!("opening {}", input.display()))?,
    );
    let graph = parse_edge_stream(reader)?;
    let mut w = BufWriter::new(
        File::create(output).with_context(|| format!("creating {}", output.display()))?,
    );
    write_graph(&graph, &mut w)?;
    w.flush()?;

    let mut summary = serde_json::json!({
        "nodes": graph.num_nodes(),
        "edge_instances": graph.edges().len(),
        "self_loops_dropped": graph.self_loops_dropped,
        "config": cfg,
    });
    if let Some(size) = cfg.snapshot_size {
        let snapshots = partition_snapshots(&graph, size)?;
        summary["snapshots"] = serde_json::json!(snapshots.len());
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn dump_samples_jsonl(
    path: &Path,
    train: &[(EdgeSample, SampleFeatures)],
    test: &[(EdgeSample, SampleFeatures)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (split, set) in [("train", train), ("test", test)] {
        for (sample, _) in set {
            let mut line = serde_json::to_value(sample)?;
            line["split"] = serde_json::json!(split);
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

fn cmd_train(
    graph_path: &Path,
    out_dir: &Path,
    dump_samples: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = common.resolve()?;
    let graph = load_graph(graph_path)?;
    let snapshots = partition_snapshots(&graph, cfg.snapshot_size()?)?;
    let dataset = build_dataset(&graph, &snapshots, &cfg.train_config(), &cfg.feature_config())?;
    if let Some(path) = dump_samples {
        dump_samples_jsonl(path, &dataset.train, &dataset.test)?;
    }
    let outcome = train(&dataset, &cfg.train_config())?;

    std::fs::create_dir_all(out_dir)?;
    let report = serde_json::json!({
        "config": cfg,
        "report": outcome.report,
    });
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut ckpt = BufWriter::new(File::create(out_dir.join("best.ckpt"))?);
    outcome.model.params.save(&mut ckpt)?;
    ckpt.flush()?;
    std::fs::write(out_dir.join("config_used.txt"), cfg.echo())?;

    eprintln!(
        "trained {} epochs on {} samples; best AUC {:.4} AP {:.4} at epoch {}",
        cfg.epochs,
        outcome.report.n_train,
        outcome.report.best.auc,
        outcome.report.best.ap,
        outcome.report.best.epoch
    );
    Ok(())
}

/// Test split with features, shared by eval and embedding export.
fn build_test_split(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    cfg: &RunConfig,
) -> Result<Vec<(EdgeSample, SampleFeatures)>> {
    if cfg.inject_rate <= 0.0 {
        bail!("inject_rate {} produces no positives", cfg.inject_rate);
    }
    let samples = build_test_set(
        graph,
        snapshots,
        cfg.split_fraction,
        cfg.inject_rate,
        cfg.context,
        cfg.window,
        cfg.seed,
    )?;
    let feature_cfg = cfg.feature_config();
    let cache = PageRankCache::build(snapshots, &feature_cfg);
    let extractor = FeatureExtractor::new(snapshots, &cache, feature_cfg);
    Ok(samples
        .into_iter()
        .map(|s| {
            let f = extractor.sample_features(&s);
            (s, f)
        })
        .collect())
}

fn cmd_eval(
    graph_path: &Path,
    checkpoint: &Path,
    output: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = common.resolve()?;
    let graph = load_graph(graph_path)?;
    let snapshots = partition_snapshots(&graph, cfg.snapshot_size()?)?;
    let model = load_model(&cfg, checkpoint)?;
    let test = build_test_split(&graph, &snapshots, &cfg)?;
    let result = evaluate_model(&model, &test, cfg.inject_rate)?;
    let report = serde_json::json!({
        "config": cfg,
        "eval": result,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_rank(
    graph_path: &Path,
    checkpoint: &Path,
    top_k: usize,
    candidates: Option<&Path>,
    output: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = common.resolve()?;
    let graph = load_graph(graph_path)?;
    let snapshots = partition_snapshots(&graph, cfg.snapshot_size()?)?;
    let model = load_model(&cfg, checkpoint)?;
    let window_end = snapshots.len() - 1;

    let pairs: Vec<(NodeId, NodeId)> = match candidates {
        Some(path) => read_candidates(path, &graph)?,
        None => {
            let mut pairs: Vec<_> = snapshots[window_end].pairs().collect();
            pairs.sort_unstable();
            pairs
        }
    };
    if pairs.is_empty() {
        bail!("no candidate pairs to rank");
    }
    if top_k > pairs.len() {
        eprintln!(
            "warning: top_k {} exceeds {} candidates; returning all",
            top_k,
            pairs.len()
        );
    }

    let feature_cfg = cfg.feature_config();
    let cache = PageRankCache::build(&snapshots, &feature_cfg);
    let extractor = FeatureExtractor::new(&snapshots, &cache, feature_cfg);
    let mut scored = Vec::with_capacity(pairs.len());
    for &(u, v) in &pairs {
        let mut rng = derived_rng(cfg.seed, "rank", &[u as u64, v as u64]);
        let sample = build_sample(
            &snapshots,
            window_end,
            (u, v),
            0,
            cfg.context,
            cfg.window,
            &mut rng,
        )?;
        let feats = extractor.sample_features(&sample);
        scored.push((u, v, model.score_sample(&feats)?));
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    scored.truncate(top_k);

    let mut text = String::from("source,target,score\n");
    for (u, v, score) in &scored {
        text.push_str(&format!("{},{},{}\n", graph.label(*u), graph.label(*v), score));
    }
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_candidates(path: &Path, graph: &DynamicGraph) -> Result<Vec<(NodeId, NodeId)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading candidates {}", path.display()))?;
    let index: std::collections::HashMap<&str, NodeId> = graph
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as NodeId))
        .collect();
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => bail!("{}:{}: expected `source target`", path.display(), lineno + 1),
        };
        let lookup = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| anyhow::anyhow!("{}:{}: unknown node {l:?}", path.display(), lineno + 1))
        };
        pairs.push((lookup(a)?, lookup(b)?));
    }
    Ok(pairs)
}

fn cmd_export_embeddings(
    graph_path: &Path,
    checkpoint: &Path,
    output: &Path,
    common: &Common,
) -> Result<()> {
    let cfg = common.resolve()?;
    let graph = load_graph(graph_path)?;
    let snapshots = partition_snapshots(&graph, cfg.snapshot_size()?)?;
    let model = load_model(&cfg, checkpoint)?;
    let test = build_test_split(&graph, &snapshots, &cfg)?;

    let mut w = BufWriter::new(File::create(output)?);
    write!(w, "id,label")?;
    for j in 0..cfg.d {
        write!(w, ",e{j}")?;
    }
    writeln!(w)?;
    for (id, (sample, feats)) in test.iter().enumerate() {
        let emb = model.embed_sample(feats)?;
        write!(w, "{id},{}", sample.label)?;
        for v in emb {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
