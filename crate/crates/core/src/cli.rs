//! The `detant` command line.
//!
//! Settings resolve as flag, then `--config` TOML file, then built-in default.
//! Data goes to files or stdout; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    self, build_benchmark, check_horizons, eval_ground_truth, export_hoia, read_jsonl, write_json, write_jsonl,
    AnnotationStream, BuildParams, ClipParams, CorrectionParams, GapReport, Segment, ShortGap, StreamMode,
    SupplementSet,
};
use crate::eval::{evaluate, recall_at_k, ApMode, EvalConfig, FrequencyEntry, FrequencyTable, GtRecord, Prediction};
use crate::losses::{objective_from_forward, ObjectiveConfig};
use crate::model::{model_forward, ModelBundle, ModelConfig, ModelParams, VisualMemory};
use crate::selfcheck::{format_results, run_selfcheck, SelfcheckConfig};
use crate::synth::{gen_clip_targets, gen_eval_case, gen_stream, SynthEvalSpec, SynthStreamSpec};

pub const THREADS_ENV: &str = "DETANT_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonList(pub Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KList(pub Vec<usize>);

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("malformed list element {p:?}")))
        .collect()
}

fn parse_horizons(s: &str) -> Result<HorizonList, String> {
    let v = parse_list::<u32>(s)?;
    check_horizons(&v).map_err(|e| e.to_string())?;
    Ok(HorizonList(v))
}

fn parse_ks(s: &str) -> Result<KList, String> {
    let v = parse_list::<usize>(s)?;
    if v.is_empty() || v.contains(&0) {
        return Err("ks must be positive integers".into());
    }
    Ok(KList(v))
}

#[derive(Debug, Parser)]
#[command(name = "detant", version, about = "Pair-centric HOI detection/anticipation toolkit")]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark construction and statistics.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Triplet mAP and person-wise recall.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Seeded model demonstrations.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Loss diagnostics.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Synthetic fixture generation.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Annotation streams, one JSON object per line.
    #[arg(long)]
    pub ann: PathBuf,
    /// Supplementary instance-only keyframes, one set per line.
    #[arg(long)]
    pub supplements: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_parser = parse_horizons)]
    pub horizons: Option<HorizonList>,
    /// Inactive span (in nominal steps) that splits a stream; defaults to the window.
    #[arg(long)]
    pub long_gap: Option<f64>,
    #[arg(long)]
    pub gap_tolerance: Option<f64>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<StreamMode>,
}

fn parse_mode(s: &str) -> Result<StreamMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// merge → correct → build → align → export
    Build {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gap reports and benchmark statistics as JSON.
    Stats {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, one JSON object per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth records, one JSON object per line.
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long, value_parser = parse_ks)]
    pub ks: Option<KList>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Full/Rare/Non-rare mAP per horizon.
    Map {
        #[command(flatten)]
        common: EvalArgs,
        /// Training frequencies: JSON list of {verb, object_category, count}.
        #[arg(long)]
        freq: Option<PathBuf>,
        #[arg(long)]
        rare_threshold: Option<u64>,
        #[arg(long, value_parser = parse_ap_mode)]
        ap_mode: Option<ApMode>,
    },
    /// Person-wise Recall@k per horizon.
    Recall {
        #[command(flatten)]
        common: EvalArgs,
    },
}

fn parse_ap_mode(s: &str) -> Result<ApMode, String> {
    match s {
        "all-point" => Ok(ApMode::AllPoint),
        "eleven-point" => Ok(ApMode::ElevenPoint),
        _ => Err(format!("unknown AP mode {s:?} (all-point|eleven-point)")),
    }
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Seeded forward pass, matching and loss on synthetic memory and targets.
    Forward {
        #[arg(long)]
        seed: Option<u64>,
        /// Model bundle JSON; overrides the size flags.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        slots: usize,
        #[arg(long, default_value_t = 6)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, value_parser = parse_horizons)]
        horizons: Option<HorizonList>,
        /// Training epoch used for the warm-up ramp.
        #[arg(long, default_value_t = 0)]
        epoch: u32,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Finite-difference gradient checks and invariant probes.
    Selfcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Annotation stream from a spec file (or a seeded preset).
    Stream {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluation case with its expected metrics.
    Eval {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Settings that may come from the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub window: Option<usize>,
    pub horizons: Option<Vec<u32>>,
    pub long_gap_steps: Option<f64>,
    pub gap_tolerance: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub rare_threshold: Option<u64>,
    pub ks: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub mode: Option<StreamMode>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(h) = &cfg.horizons {
            check_horizons(h)?;
        }
        if cfg.ks.as_ref().is_some_and(|k| k.is_empty() || k.contains(&0)) {
            bail!("{}: ks must be positive integers", path.display());
        }
        Ok(cfg)
    }
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Writes to stdout; a closed reader is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Caps the global worker pool from `DETANT_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be positive");
        }
        // a pool may already exist when embedded; keeping it is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn build_params(p: &PipelineArgs, file: &FileConfig) -> anyhow::Result<BuildParams> {
    let d = BuildParams::default();
    let window = p.window.or(file.window).unwrap_or(d.clip.window);
    let horizons = p
        .horizons
        .as_ref()
        .map(|h| h.0.clone())
        .or_else(|| file.horizons.clone())
        .unwrap_or(d.clip.horizons);
    let tolerance = p.gap_tolerance.or(file.gap_tolerance).unwrap_or(d.gap_tolerance);
    let params = BuildParams {
        clip: ClipParams {
            window,
            horizons,
            mode: p.mode.or(file.mode).unwrap_or_default(),
            tolerance,
        },
        correction: CorrectionParams {
            window,
            long_gap_steps: p.long_gap.or(file.long_gap_steps).unwrap_or(window as f64),
            tolerance,
        },
        gap_tolerance: tolerance,
        iou_threshold: p.iou.or(file.iou_threshold).unwrap_or(d.iou_threshold),
    };
    if params.clip.window < 2 {
        bail!("--window must be at least 2");
    }
    Ok(params)
}

fn load_inputs(p: &PipelineArgs) -> anyhow::Result<(Vec<AnnotationStream>, Vec<SupplementSet>)> {
    let streams = read_jsonl(&p.ann)?;
    let sup = match &p.supplements {
        Some(path) => read_jsonl(path)?,
        None => Vec::new(),
    };
    Ok((streams, sup))
}

#[derive(Debug, Serialize)]
struct SegmentSummary<'a> {
    video_id: &'a str,
    segment_index: usize,
    origin: [usize; 2],
    keyframes: usize,
    short_gaps: &'a [ShortGap],
}

impl<'a> From<&'a Segment> for SegmentSummary<'a> {
    fn from(s: &'a Segment) -> Self {
        Self {
            video_id: &s.video_id,
            segment_index: s.segment_index,
            origin: s.origin,
            keyframes: s.keyframes.len(),
            short_gaps: &s.short_gaps,
        }
    }
}

#[derive(Debug, Serialize)]
struct StatsDocument<'a> {
    gaps: Vec<(&'a str, &'a GapReport)>,
    stats: &'a benchmark::BenchmarkStats,
}

pub const CLIPS_FILE: &str = "clips.jsonl";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const EVAL_GT_FILE: &str = "eval_gt.jsonl";
pub const STATS_FILE: &str = "stats.json";

fn bench(cmd: &BenchCommand, file: &FileConfig) -> anyhow::Result<()> {
    let (pipeline, out_dir, out_file) = match cmd {
        BenchCommand::Build { pipeline, out } => (pipeline, Some(out), None),
        BenchCommand::Stats { pipeline, out } => (pipeline, None, out.as_ref()),
    };
    let params = build_params(pipeline, file)?;
    let (streams, sup) = load_inputs(pipeline)?;
    let out = build_benchmark(&streams, &sup, &params)?;
    let doc = StatsDocument {
        gaps: out.videos.iter().map(|v| (v.video_id.as_str(), &v.gaps)).collect(),
        stats: &out.stats,
    };
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let clips: Vec<_> = out.clips().cloned().collect();
            let segments: Vec<Segment> = out.segments().cloned().collect();
            let summaries: Vec<SegmentSummary<'_>> = segments.iter().map(SegmentSummary::from).collect();
            write_jsonl(&dir.join(CLIPS_FILE), &clips)?;
            write_jsonl(&dir.join(SEGMENTS_FILE), &summaries)?;
            write_jsonl(&dir.join(EVAL_GT_FILE), &eval_ground_truth(&clips))?;
            write_json(&dir.join(STATS_FILE), &doc)?;
            export_hoia(&clips, &segments, dir)?;
            eprintln!(
                "{} videos, {} segments, {} clips → {}",
                out.videos.len(),
                segments.len(),
                clips.len(),
                dir.display()
            );
        }
        None => match out_file {
            Some(path) => write_json(path, &doc)?,
            None => emit(&(serde_json::to_string_pretty(&doc)? + "\n"))?,
        },
    }
    Ok(())
}

fn eval_config(common: &EvalArgs, file: &FileConfig) -> EvalConfig {
    let d = EvalConfig::default();
    EvalConfig {
        iou_threshold: common.iou.or(file.iou_threshold).unwrap_or(d.iou_threshold),
        rare_threshold: file.rare_threshold.unwrap_or(d.rare_threshold),
        ap_mode: d.ap_mode,
        ks: common
            .ks
            .as_ref()
            .map(|k| k.0.clone())
            .or_else(|| file.ks.clone())
            .unwrap_or(d.ks),
    }
}

fn eval(cmd: &EvalCommand, file: &FileConfig) -> anyhow::Result<()> {
    let common = match cmd {
        EvalCommand::Map { common, .. } | EvalCommand::Recall { common } => common,
    };
    let preds: Vec<Prediction> = read_jsonl(&common.pred)?;
    let gts: Vec<GtRecord> = read_jsonl(&common.gt)?;
    let mut config = eval_config(common, file);
    match cmd {
        EvalCommand::Map {
            freq,
            rare_threshold,
            ap_mode,
            ..
        } => {
            if let Some(t) = rare_threshold {
                config.rare_threshold = *t;
            }
            if let Some(m) = ap_mode {
                config.ap_mode = *m;
            }
            let table = match freq {
                Some(path) => {
                    let entries: Vec<FrequencyEntry> = benchmark::read_json(path)?;
                    FrequencyTable::from_entries(&entries)
                }
                None => FrequencyTable::default(),
            };
            let report = evaluate(&preds, &gts, &config, &table)?;
            let flagged: usize = report
                .horizons
                .iter()
                .map(|h| h.categories.iter().filter(|c| c.missing_frequency).count())
                .sum();
            if flagged > 0 {
                eprintln!("{flagged} category entries had no training frequency and were treated as rare");
            }
            emit(&report.table(&config.ks))?;
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
        }
        EvalCommand::Recall { .. } => {
            let recall = recall_at_k(&preds, &gts, &config)?;
            let mut s = format!("{:>3}", "h");
            for k in &config.ks {
                s.push_str(&format!(" {:>9}", format!("R@{k}")));
            }
            s.push('\n');
            for (h, per_k) in &recall {
                let mut row = format!("{h:>3}");
                for k in &config.ks {
                    row.push_str(&format!(" {:>9.4}", per_k[k]));
                }
                s.push_str(&row);
                s.push('\n');
            }
            emit(&s)?;
            if let Some(out) = &common.out {
                write_json(out, &recall)?;
            }
        }
    }
    Ok(())
}

fn demo(cmd: &DemoCommand, file: &FileConfig) -> anyhow::Result<()> {
    let DemoCommand::Forward {
        seed,
        model,
        slots,
        frames,
        hidden,
        horizons,
        epoch,
        out,
    } = cmd;
    let seed = seed.or(file.seed).unwrap_or(0);
    let (config, params) = match model {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let b = ModelBundle::from_json(&text)?;
            (b.config, b.params)
        }
        None => {
            let config = ModelConfig {
                pair_slots: *slots,
                frames: *frames,
                hidden: *hidden,
                horizons: horizons
                    .as_ref()
                    .map(|h| h.0.clone())
                    .or_else(|| file.horizons.clone())
                    .unwrap_or_else(|| ModelConfig::default().horizons),
                seed,
                ..ModelConfig::default()
            };
            let params = ModelParams::init(&config)?;
            (config, params)
        }
    };
    let memory = VisualMemory::synthesize(&config, seed);
    let output = model_forward(&config, &params, &memory)?;
    let targets = gen_clip_targets(&config, seed);
    let (assignment, loss) = objective_from_forward(&output, &targets, *epoch, &ObjectiveConfig::default())?;

    let mut text = format!(
        "pair slots {}  frames {}  hidden {}  horizons {:?}\n",
        config.pair_slots, config.frames, config.hidden, config.horizons
    );
    text.push_str(&format!("subject/object boxes   {} x 4\n", output.subject_boxes.len()));
    text.push_str(&format!("object logits          {} x {}\n", output.object_logits.rows(), output.object_logits.cols()));
    text.push_str(&format!(
        "current verb logits    {} x {}\n",
        output.verb_logits_current.rows(),
        output.verb_logits_current.cols()
    ));
    for (h, m) in output.horizons.iter().zip(&output.verb_logits_future) {
        text.push_str(&format!("future verb logits h={h:<2} {} x {}\n", m.rows(), m.cols()));
    }
    text.push_str(&format!("matched pairs          {}\n", assignment.pairs.len()));
    text.push_str(&format!("total loss             {:.6}\n", loss.total));
    emit(&text)?;

    #[derive(Serialize)]
    struct DemoDocument<'a> {
        config: &'a ModelConfig,
        output: &'a crate::model::ForwardOutput,
        targets: &'a crate::losses::ClipTargets,
        assignment: &'a crate::matching::Assignment,
        loss: &'a crate::losses::LossBreakdown,
    }
    write_json(
        out,
        &DemoDocument {
            config: &config,
            output: &output,
            targets: &targets,
            assignment: &assignment,
            loss: &loss,
        },
    )?;
    Ok(())
}

fn loss(cmd: &LossCommand, file: &FileConfig) -> anyhow::Result<()> {
    let LossCommand::Selfcheck { seed, cases } = cmd;
    let config = SelfcheckConfig {
        seed: seed.or(file.seed).unwrap_or(0),
        cases: *cases,
        ..SelfcheckConfig::default()
    };
    let results = run_selfcheck(&config)?;
    emit(&format_results(&results))?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} self-check(s) failed");
    }
    Ok(())
}

fn synth(cmd: &SynthCommand, file: &FileConfig) -> anyhow::Result<()> {
    match cmd {
        SynthCommand::Stream { spec, seed, out } => {
            let spec: SynthStreamSpec = match spec {
                Some(path) => benchmark::read_json(path)?,
                None => SynthStreamSpec::basic(seed.or(file.seed).unwrap_or(0), "synth", 24),
            };
            let s = gen_stream(&spec)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            write_jsonl(&out.join("stream.jsonl"), std::slice::from_ref(&s.stream))?;
            write_jsonl(&out.join("supplements.jsonl"), std::slice::from_ref(&s.supplements))?;
            write_json(&out.join("planted.json"), &s.planted)?;
        }
        SynthCommand::Eval { seed, out } => {
            let case = gen_eval_case(&SynthEvalSpec::variant(seed.or(file.seed).unwrap_or(0)))?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            write_jsonl(&out.join("gt.jsonl"), &case.ground_truth)?;
            write_jsonl(&out.join("pred.jsonl"), &case.predictions)?;
            write_json(&out.join("freq.json"), &case.frequencies)?;
            write_json(&out.join("expected.json"), &case.expected)?;
        }
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Bench(c) => bench(c, &file),
        Command::Eval(c) => eval(c, &file),
        Command::Demo(c) => demo(c, &file),
        Command::Loss(c) => loss(c, &file),
        Command::Synth(c) => synth(c, &file),
    }
}

/// Parses, dispatches and maps the outcome to a process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = init_threads().and_then(|_| dispatch(&cli)) {
        eprintln!("error: {e:#}");
        return 1;
    }
    0
}
