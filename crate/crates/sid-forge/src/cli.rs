//! Command-line surface: argument parsing, report envelopes, exit codes.
//!
//! Every subcommand can emit a machine-readable report of the shape
//! `{tool_version, command, config, result}`. Reports are deterministic for
//! identical inputs and flags: no timestamps, fixed field order, and sorted
//! map keys throughout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cce;
use crate::collab;
use crate::collision;
use crate::dataset;
use crate::error::{Error, Result};
use crate::index::{InteractionLog, ItemId, SidIndex};
use crate::rkmeans;
use crate::synth;
use crate::zcr;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "sid-forge",
    version,
    about = "Semantic-ID collision analysis, collision-corrected metrics, and zero-collision reassignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collision statistics and prefix-group analysis of a SID index.
    Analyze(AnalyzeArgs),
    /// Check the last-level codebook capacity condition.
    CapacityCheck(CapacityArgs),
    /// Quantize embeddings into SIDs with residual K-Means.
    Tokenize(TokenizeArgs),
    /// Rewrite last-level codes to remove collisions.
    Reassign(ReassignArgs),
    /// Score beam files with SID-level and item-level metrics.
    Evaluate(EvaluateArgs),
    /// Build collaborative item embeddings from interactions.
    EmbedCf(EmbedCfArgs),
    /// Fuse textual and collaborative embeddings via PCA.
    Fuse(FuseArgs),
    /// k-core filter and leave-one-out split of raw interactions.
    Preprocess(PreprocessArgs),
    /// Generate planted synthetic beams for harness runs.
    SynthBeams(SynthBeamsArgs),
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    index: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CapacityArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TokenizeArgs {
    /// Embedding file (SFEMB1).
    #[arg(long)]
    embeddings: PathBuf,
    /// Number of SID levels.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Codebook size per level.
    #[arg(long, default_value_t = 256)]
    codebook: usize,
    /// Lloyd iterations per level.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_index: PathBuf,
    /// Quantization model file (SFQM1).
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Zcr,
    Greedy,
}

#[derive(Args, Serialize)]
struct ReassignArgs {
    #[arg(long)]
    index: PathBuf,
    /// Quantization model file (SFQM1).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    out_index: PathBuf,
    /// Write the full reassignment report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail when any prefix group exceeds the codebook capacity.
    #[arg(long, default_value_t = false)]
    strict: bool,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    index: PathBuf,
    /// Beam file (JSON Lines).
    #[arg(long)]
    beams: PathBuf,
    /// Cutoffs, e.g. `--k 5,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EmbedCfArgs {
    /// Interactions TSV: user<TAB>item<TAB>timestamp.
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Interactions held out from the tail of each user sequence.
    #[arg(long, default_value_t = 2)]
    holdout: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Dense item id map (`dense<TAB>original` per line). Without it, item
    /// fields must already be dense integer ids.
    #[arg(long)]
    item_map: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FuseArgs {
    /// Textual embeddings (SFEMB1).
    #[arg(long)]
    text: PathBuf,
    /// Collaborative embeddings (SFEMB1).
    #[arg(long)]
    cf: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Output dimensionality.
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long, default_value_t = 5)]
    k_core: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SynthBeamsArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 20)]
    beam_width: usize,
    /// Plant probability per rank, e.g. `--hit-prob 0.6,0.2,0.1`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.1])]
    hit_prob: Vec<f64>,
    /// Limit to the first N items as targets (default: all items).
    #[arg(long)]
    records: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Json(_) | Error::Format(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::CapacityCheck(args) => cmd_capacity(args),
        Command::Tokenize(args) => cmd_tokenize(args),
        Command::Reassign(args) => cmd_reassign(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::EmbedCf(args) => cmd_embed_cf(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::SynthBeams(args) => cmd_synth_beams(args),
    }
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    tool_version: &'a str,
    command: &'a str,
    config: &'a C,
    result: &'a R,
}

fn emit<C: Serialize, R: Serialize>(
    command: &str,
    config: &C,
    result: &R,
    json: Option<&Path>,
) -> Result<()> {
    if let Some(path) = json {
        let report = Report {
            tool_version: TOOL_VERSION,
            command,
            config,
            result,
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PrefixSection {
    max: usize,
    mean: f64,
    rho_total: usize,
    capacity_ok: bool,
}

#[derive(Serialize)]
struct AnalyzeResult {
    coll_percent: f64,
    g_max: usize,
    histogram: BTreeMap<usize, usize>,
    prefix: Option<PrefixSection>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32> {
    let index = SidIndex::read_from_path(&args.index)?;
    let stats = collision::collision_stats(&index)?;
    let prefix = if index.sid_len() >= 2 {
        let table = collision::prefix_groups(&index)?;
        let capacity = collision::capacity_check(&table, index.codebook_size());
        Some(PrefixSection {
            max: table.max_size,
            mean: collision::round2(table.mean_size),
            rho_total: table.rho_total(),
            capacity_ok: capacity.satisfied,
        })
    } else {
        None
    };
    let result = AnalyzeResult {
        coll_percent: collision::round2(stats.coll_percent),
        g_max: stats.g_max,
        histogram: stats.group_size_histogram.clone(),
        prefix,
    };
    println!(
        "{} items: {}% in shared SIDs, largest group {}",
        index.n_items(),
        result.coll_percent,
        result.g_max
    );
    if let Some(p) = &result.prefix {
        println!(
            "prefix groups: max {} (mean {}), rho total {}, capacity {}",
            p.max,
            p.mean,
            p.rho_total,
            if p.capacity_ok { "ok" } else { "VIOLATED" }
        );
    }
    emit("analyze", &args, &result, args.json.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct CapacityResult {
    satisfied: bool,
    max: usize,
    mean: f64,
    violating_prefixes: Vec<Vec<u32>>,
}

fn cmd_capacity(args: CapacityArgs) -> Result<i32> {
    let index = SidIndex::read_from_path(&args.index)?;
    let table = collision::prefix_groups(&index)?;
    let report = collision::capacity_check(&table, index.codebook_size());
    let result = CapacityResult {
        satisfied: report.satisfied,
        max: report.max_size,
        mean: collision::round2(report.mean_size),
        violating_prefixes: report.violating_prefixes,
    };
    println!(
        "capacity {}: max group {} (mean {}), codebook {}",
        if result.satisfied { "ok" } else { "VIOLATED" },
        result.max,
        result.mean,
        index.codebook_size()
    );
    emit("capacity-check", &args, &result, args.json.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct TokenizeResult {
    n_items: usize,
    dim: usize,
    coll_percent: f64,
    g_max: usize,
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<i32> {
    let embeddings = rkmeans::EmbeddingMatrix::read_from_path(&args.embeddings)?;
    let (index, model) =
        rkmeans::tokenize(&embeddings, args.levels, args.codebook, args.iters, args.seed)?;
    index.write_to_path(&args.out_index)?;
    model.write_to_path(&args.out_model)?;
    let stats = collision::collision_stats(&index)?;
    let result = TokenizeResult {
        n_items: index.n_items(),
        dim: embeddings.dim(),
        coll_percent: collision::round2(stats.coll_percent),
        g_max: stats.g_max,
    };
    println!(
        "tokenized {} items into {}x{} SIDs ({}% collisions)",
        result.n_items, args.levels, args.codebook, result.coll_percent
    );
    emit("tokenize", &args, &result, args.json.as_deref())?;
    Ok(0)
}

fn cmd_reassign(args: ReassignArgs) -> Result<i32> {
    let index = SidIndex::read_from_path(&args.index)?;
    let model = zcr::QuantizationModel::read_from_path(&args.model)?;
    let (new_index, report) = match args.method {
        MethodArg::Zcr => zcr::zcr(&index, &model)?,
        MethodArg::Greedy => zcr::greedy_reassign(&index, &model)?,
    };
    new_index.write_to_path(&args.out_index)?;
    println!(
        "reassigned {} items, total cost increase {:.4}, collision-free: {}",
        report.n_reass,
        report.delta_d_total,
        zcr::verify_zero_collision(&new_index)
    );
    if !report.skipped_prefixes.is_empty() {
        eprintln!(
            "warning: {} prefix groups exceed the codebook and were left unchanged",
            report.skipped_prefixes.len()
        );
    }
    emit("reassign", &args, &report, args.report.as_deref())?;
    if args.strict && !report.skipped_prefixes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} prefix groups exceed the codebook capacity",
            report.skipped_prefixes.len()
        )));
    }
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let index = SidIndex::read_from_path(&args.index)?;
    let records = cce::read_beams_path(&args.beams, &index)?;
    let report = cce::evaluate(records, &index, &args.k)?;
    if report.short_beams > 0 {
        eprintln!(
            "warning: {} records have fewer beams than the largest K",
            report.short_beams
        );
    }
    if report.skipped_targets > 0 {
        eprintln!(
            "warning: {} records reference items outside the index and scored zero",
            report.skipped_targets
        );
    }
    for (k, m) in &report.per_k {
        let inflation = m
            .inflation_percent
            .map(|x| format!("{x:.2}%"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "K={k}: sid hit {:.4} ndcg {:.4} | item hit {:.4} ndcg {:.4} | inflation {inflation}",
            m.sid_hit, m.sid_ndcg, m.item_hit, m.item_ndcg
        );
    }
    emit("evaluate", &args, &report, args.json.as_deref())?;
    Ok(0)
}

fn read_item_map(path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (dense, original) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("item map line {}: expected dense<TAB>id", lineno + 1))
        })?;
        let dense: u32 = dense
            .parse()
            .map_err(|_| Error::Format(format!("item map line {}: bad dense id", lineno + 1)))?;
        map.insert(original.to_string(), dense);
    }
    Ok(map)
}

/// Group interactions per user chronologically over dense item ids.
fn interaction_log_from_rows(
    rows: &[dataset::RawInteraction],
    item_map: Option<&BTreeMap<String, u32>>,
) -> Result<InteractionLog> {
    let resolve = |item: &str| -> Result<u32> {
        match item_map {
            Some(map) => map.get(item).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("item '{item}' missing from item map"))
            }),
            None => item.parse::<u32>().map_err(|_| {
                Error::InvalidArgument(format!(
                    "item '{item}' is not a dense integer id; pass --item-map"
                ))
            }),
        }
    };

    let mut users: BTreeMap<&str, Vec<(i64, usize, u32)>> = BTreeMap::new();
    for (seq, row) in rows.iter().enumerate() {
        users
            .entry(&row.user)
            .or_default()
            .push((row.timestamp, seq, resolve(&row.item)?));
    }
    let n_items = match item_map {
        Some(map) => map.values().max().map(|&m| m as usize + 1).unwrap_or(0),
        None => rows
            .iter()
            .map(|r| resolve(&r.item).map(|i| i as usize + 1))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(0),
    };

    let mut log = InteractionLog::new(n_items);
    for (dense_user, (_, entries)) in users.iter_mut().enumerate() {
        entries.sort_unstable();
        let items: Vec<ItemId> = entries.iter().map(|&(_, _, i)| ItemId(i)).collect();
        log.push_sequence(dense_user as u32, items)?;
    }
    Ok(log)
}

#[derive(Serialize)]
struct EmbedCfResult {
    n_items: usize,
    dim: usize,
    top_singular_values: Vec<f64>,
}

fn cmd_embed_cf(args: EmbedCfArgs) -> Result<i32> {
    let rows = dataset::read_interactions_path(&args.interactions)?;
    let item_map = args.item_map.as_deref().map(read_item_map).transpose()?;
    let log = interaction_log_from_rows(&rows, item_map.as_ref())?;
    let ppmi = collab::build_ppmi(&log, args.window, args.holdout)?;
    let embedding = collab::truncated_svd(&ppmi, args.dim, args.seed)?;
    embedding.matrix.write_to_path(&args.out)?;
    let result = EmbedCfResult {
        n_items: embedding.matrix.n(),
        dim: embedding.matrix.dim(),
        top_singular_values: embedding.singular_values.iter().take(8).copied().collect(),
    };
    println!(
        "collaborative embedding: {} items x {} dims",
        result.n_items, result.dim
    );
    emit("embed-cf", &args, &result, args.json.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct FuseResult {
    n_items: usize,
    dim: usize,
}

fn cmd_fuse(args: FuseArgs) -> Result<i32> {
    let text = rkmeans::EmbeddingMatrix::read_from_path(&args.text)?;
    let cf_matrix = rkmeans::EmbeddingMatrix::read_from_path(&args.cf)?;
    let cf = collab::CollabEmbedding {
        matrix: cf_matrix,
        singular_values: vec![],
    };
    let fused = collab::fuse(&text, &cf, args.alpha, args.dim)?;
    fused.write_to_path(&args.out)?;
    let result = FuseResult {
        n_items: fused.n(),
        dim: fused.dim(),
    };
    println!("fused embedding: {} items x {} dims", result.n_items, result.dim);
    emit("fuse", &args, &result, args.json.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct PreprocessResult {
    n_users: usize,
    n_items: usize,
    n_interactions: usize,
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<i32> {
    let rows = dataset::read_interactions_path(&args.interactions)?;
    let split = dataset::preprocess(&rows, args.k_core)?;
    std::fs::create_dir_all(&args.out_dir)?;

    dataset::write_interactions_path(args.out_dir.join("filtered.tsv"), &split.kept)?;

    // kept is user-major chronological; the last two rows per user are the
    // validation and test interactions.
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut start = 0usize;
    while start < split.kept.len() {
        let user = &split.kept[start].user;
        let mut end = start;
        while end < split.kept.len() && &split.kept[end].user == user {
            end += 1;
        }
        train.extend_from_slice(&split.kept[start..end - 2]);
        validation.push(split.kept[end - 2].clone());
        test.push(split.kept[end - 1].clone());
        start = end;
    }
    dataset::write_interactions_path(args.out_dir.join("train.tsv"), &train)?;
    dataset::write_interactions_path(args.out_dir.join("validation.tsv"), &validation)?;
    dataset::write_interactions_path(args.out_dir.join("test.tsv"), &test)?;

    let mut user_map = BufWriter::new(File::create(args.out_dir.join("user_map.tsv"))?);
    for (dense, original) in split.user_ids.iter().enumerate() {
        writeln!(user_map, "{dense}\t{original}")?;
    }
    user_map.flush()?;
    let mut item_map = BufWriter::new(File::create(args.out_dir.join("item_map.tsv"))?);
    for (dense, original) in split.item_ids.iter().enumerate() {
        writeln!(item_map, "{dense}\t{original}")?;
    }
    item_map.flush()?;

    let result = PreprocessResult {
        n_users: split.user_ids.len(),
        n_items: split.item_ids.len(),
        n_interactions: split.kept.len(),
    };
    println!(
        "kept {} interactions over {} users and {} items",
        result.n_interactions, result.n_users, result.n_items
    );
    emit("preprocess", &args, &result, args.json.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct SynthBeamsResult {
    n_records: usize,
    beam_width: usize,
}

fn cmd_synth_beams(args: SynthBeamsArgs) -> Result<i32> {
    let index = SidIndex::read_from_path(&args.index)?;
    let n_targets = args.records.unwrap_or(index.n_items()).min(index.n_items());
    let targets: Vec<ItemId> = (0..n_targets as u32).map(ItemId).collect();
    let cfg = synth::SynthBeamConfig {
        beam_width: args.beam_width,
        hit_prob: args.hit_prob.clone(),
        seed: args.seed,
    };
    let records = synth::synth_beams(&index, &targets, &cfg)?;
    cce::write_beams_path(&args.out, &records)?;
    let result = SynthBeamsResult {
        n_records: records.len(),
        beam_width: args.beam_width,
    };
    println!("wrote {} beam records", result.n_records);
    emit("synth-beams", &args, &result, args.json.as_deref())?;
    Ok(0)
}
