//! `momentscope` operator CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use momentscope_core::config::{EngineConfig, CONFIG_ENV, MANIFEST_FILE};
use momentscope_core::ensemble::ModelConfig;
use momentscope_core::ingest::{load_ingest_input, run_ingest, DedupConfig, DedupReport, IngestOptions};
use momentscope_core::pipeline::{Engine, RerankOptions, SearchRequest, SearchResponse, TemporalRequest};
use momentscope_core::{CorpusManifest, EmbeddingMatrix, FlatIndex};

const REPORT_JSON: &str = "dedup_report.json";
const REPORT_TXT: &str = "dedup_report.txt";

#[derive(Parser)]
#[command(name = "momentscope", version, about = "Keyframe moment retrieval engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Engine config (TOML).
    #[arg(long, env = CONFIG_ENV)]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and deduplicate keyframes, write manifest, report and matrices.
    Ingest {
        /// Directory of `<video_id>.<ext>` scene boundary files.
        #[arg(long)]
        boundaries: PathBuf,
        /// Directory of `<model>/<video_id>.frm` per-frame embeddings.
        #[arg(long)]
        embeddings: PathBuf,
        /// Video table: header line, then `video_id fps frame_count`.
        #[arg(long)]
        videos: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f32,
        #[arg(long, default_value_t = 4)]
        per_scene: usize,
        /// Model used for dedup similarity. Defaults to the first model id.
        #[arg(long)]
        dedup_model: Option<String>,
        /// Manifest creation timestamp. Defaults to now.
        #[arg(long)]
        created_at: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wrap `<model>.emb` matrices into `<model>.idx` index files.
    BuildIndex {
        #[arg(long)]
        manifest: PathBuf,
        /// Models to index. Defaults to every model in the manifest.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Directory holding `<model>.emb`. Defaults to the manifest directory.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Output directory. Defaults to the manifest directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a text query through the search pipeline.
    Search {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        query: String,
        /// `model[:weight]`, repeatable. Defaults to every configured model.
        #[arg(long = "model", value_parser = parse_model)]
        models: Vec<ModelConfig>,
        #[arg(long)]
        rerank: bool,
        #[arg(long, default_value_t = 2)]
        radius: u32,
        /// Leave the candidate itself out of its rerank window.
        #[arg(long)]
        exclude_center: bool,
        #[arg(long, default_value_t = 100)]
        limit: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Locate a start/end moment around an anchor keyframe.
    Temporal {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        anchor: i64,
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        gap_c: Option<u32>,
        #[arg(long, allow_negative_numbers = true)]
        floor: Option<f64>,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Summarize frame reduction from a manifest and its dedup report.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn parse_model(s: &str) -> Result<ModelConfig, String> {
    let (id, weight) = match s.rsplit_once(':') {
        Some((id, w)) => (id, w.parse::<f64>().map_err(|_| format!("invalid weight in {s:?}"))?),
        None => (s, 1.0),
    };
    if id.is_empty() {
        return Err(format!("missing model id in {s:?}"));
    }
    Ok(ModelConfig::new(id, weight))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            boundaries,
            embeddings,
            videos,
            threshold,
            per_scene,
            dedup_model,
            created_at,
            out,
        } => {
            let opts = IngestOptions {
                dedup: DedupConfig {
                    similarity_threshold: threshold,
                    frames_per_scene: per_scene,
                },
                dedup_model,
                created_at: created_at.unwrap_or_else(|| {
                    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
                }),
            };
            cmd_ingest(&boundaries, &embeddings, &videos, &opts, &out)
        }
        Command::BuildIndex {
            manifest,
            models,
            embeddings,
            out,
        } => cmd_build_index(&manifest, &models, embeddings.as_deref(), out.as_deref()),
        Command::Search {
            config,
            query,
            models,
            rerank,
            radius,
            exclude_center,
            limit,
            format,
        } => {
            let engine = load_engine(&config.config)?;
            let req = SearchRequest {
                query,
                models,
                rerank: rerank.then_some(RerankOptions {
                    enabled: true,
                    radius,
                    include_center: !exclude_center,
                }),
                limit,
            };
            let resp = engine.handle_search(&req)?;
            print_search(&resp, format)
        }
        Command::Temporal {
            config,
            anchor,
            start,
            end,
            model,
            gap_c,
            floor,
            max_steps,
            format,
        } => {
            let engine = load_engine(&config.config)?;
            let model_id = match model {
                Some(m) => m,
                None => engine.default_model().context("no models loaded")?.to_string(),
            };
            let req = TemporalRequest {
                anchor_key: anchor,
                query_start: start,
                query_end: end,
                gap_c,
                floor,
                max_steps,
                model_id,
            };
            let resp = engine.handle_temporal(&req)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string(&resp)?),
                Format::Table => {
                    let m = &resp.moment;
                    println!(
                        "video {}  start {}  anchor {}  end {}  objective {:.6}",
                        m.video_id,
                        m.start_key,
                        m.anchor_key,
                        m.end_key,
                        m.objective()
                    );
                    for (label, list) in [("start", &resp.start_candidates), ("end", &resp.end_candidates)] {
                        for c in list {
                            println!(
                                "{label:<5} {:>8} {:>10} {:>8} {:>10.3} {:>10.6}",
                                c.frame_key, c.video_id, c.frame_index, c.timestamp_s, c.score
                            );
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Stats { manifest, report } => cmd_stats(&manifest, &report),
        Command::Serve { config, listen } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .init();
            let mut cfg = load_config(&config.config)?;
            if let Some(addr) = listen {
                cfg.listen = addr;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(momentscope_service::serve(&cfg))?;
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<EngineConfig> {
    Ok(EngineConfig::load(path)?)
}

fn load_engine(path: &Path) -> Result<Engine> {
    Ok(Engine::load(&load_config(path)?)?)
}

fn cmd_ingest(
    boundaries: &Path,
    embeddings: &Path,
    videos: &Path,
    opts: &IngestOptions,
    out: &Path,
) -> Result<()> {
    let input = load_ingest_input(boundaries, embeddings, videos)?;
    let output = run_ingest(&input, opts)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output.manifest.save(&out.join(MANIFEST_FILE))?;
    for m in &output.matrices {
        m.save(&out.join(format!("{}.emb", m.model_id())))?;
    }
    let table = report_table(&output.report);
    std::fs::write(out.join(REPORT_JSON), serde_json::to_string_pretty(&output.report)? + "\n")?;
    std::fs::write(out.join(REPORT_TXT), &table)?;
    print!("{table}");
    Ok(())
}

fn report_table(r: &DedupReport) -> String {
    let mut s = format!("{:<16} {:>6} {:>8} {:>6}\n", "video", "scene", "sampled", "kept");
    for sc in &r.per_scene {
        s.push_str(&format!("{:<16} {:>6} {:>8} {:>6}\n", sc.video_id, sc.scene_id, sc.sampled, sc.kept));
    }
    s.push_str(&format!(
        "scenes {}  sampled {}  removed {}  kept {}\n",
        r.scenes_processed, r.frames_sampled, r.frames_removed, r.frames_kept
    ));
    s
}

fn cmd_build_index(
    manifest_path: &Path,
    models: &[String],
    embeddings: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let src = embeddings.unwrap_or(base);
    let out = out.unwrap_or(base);
    std::fs::create_dir_all(out)?;
    let models: Vec<String> = if models.is_empty() {
        manifest.models().to_vec()
    } else {
        models.to_vec()
    };
    for model in &models {
        if !manifest.models().contains(model) {
            bail!("model {model} is not listed in the manifest");
        }
        let matrix = EmbeddingMatrix::load(&src.join(format!("{model}.emb")), &manifest)?;
        if matrix.model_id() != model {
            bail!("{model}.emb holds model {}", matrix.model_id());
        }
        let index = FlatIndex::new(matrix);
        let path = out.join(format!("{model}.idx"));
        index.save(&path)?;
        println!("{model}: {} rows, dim {} -> {}", index.len(), index.dim(), path.display());
    }
    Ok(())
}

fn print_search(resp: &SearchResponse, format: Format) -> Result<()> {
    for w in &resp.warnings {
        eprintln!("warning: {w}");
    }
    match format {
        Format::Json => {
            for e in &resp.entries {
                println!("{}", serde_json::to_string(e)?);
            }
        }
        Format::Table => {
            println!(
                "{:>4} {:>8} {:<16} {:>8} {:>10} {:>10}  per-model",
                "rank", "key", "video", "frame", "time_s", "score"
            );
            for (i, e) in resp.entries.iter().enumerate() {
                let per: Vec<String> = e
                    .per_model_scores
                    .iter()
                    .map(|(m, s)| format!("{m}={s:.4}"))
                    .collect();
                println!(
                    "{:>4} {:>8} {:<16} {:>8} {:>10.3} {:>10.6}  {}",
                    i + 1,
                    e.frame_key,
                    e.video_id,
                    e.frame_index,
                    e.timestamp_s,
                    e.fused_score,
                    per.join(" ")
                );
            }
        }
    }
    Ok(())
}

fn cmd_stats(manifest_path: &Path, report_path: &Path) -> Result<()> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let text = std::fs::read_to_string(report_path)
        .with_context(|| format!("reading {}", report_path.display()))?;
    let report: DedupReport = serde_json::from_str(&text).context("parsing dedup report")?;
    if !report.is_consistent() {
        bail!("dedup report totals are inconsistent");
    }
    if report.frames_kept != manifest.len() {
        bail!(
            "report keeps {} frames but manifest holds {}",
            report.frames_kept,
            manifest.len()
        );
    }
    let mut per_video: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in &report.per_scene {
        let e = per_video.entry(s.video_id.as_str()).or_default();
        e.0 += s.sampled;
        e.1 += s.kept;
    }
    for v in manifest.videos() {
        let in_manifest = manifest.video_span(&v.video_id).map(|r| r.len()).unwrap_or(0);
        let in_report = per_video.get(v.video_id.as_str()).map(|p| p.1).unwrap_or(0);
        if in_manifest != in_report {
            bail!(
                "video {}: report keeps {in_report} frames but manifest holds {in_manifest}",
                v.video_id
            );
        }
    }
    if let Some(v) = per_video.keys().find(|v| manifest.video(v).is_none()) {
        bail!("report mentions video {v} missing from the manifest");
    }
    if report.frames_sampled == 0 {
        println!("0 frames");
        return Ok(());
    }
    println!(
        "frames before {}  after {}  removed {}  reduction {}",
        report.frames_sampled,
        report.frames_kept,
        report.frames_removed,
        percent(report.frames_removed, report.frames_sampled)
    );
    println!("{:<16} {:>8} {:>8} {:>10}", "video", "before", "after", "reduction");
    for (v, (sampled, kept)) in &per_video {
        println!(
            "{v:<16} {sampled:>8} {kept:>8} {:>10}",
            percent(sampled - kept, *sampled)
        );
    }
    Ok(())
}

fn percent(part: usize, whole: usize) -> String {
    if whole == 0 {
        return "-".into();
    }
    format!("{:.1}%", 100.0 * part as f64 / whole as f64)
}
