use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use meldfair::formats;
use meldfair::pipeline::{
    load_records, localise_rows, manifest_from, posterior_dir_loader, realign_records, with_pool, write_manifest,
    LocaliseRecord, RunConfig,
};
use meldfair::synth_check::{self, SynthCheckConfig};
use meldfair_core::manifest::{render_stats, stats, ManifestEntry};
use meldfair_core::realign::EdlRow;
use meldfair_core::schema::{apply_overrides, group_dialogues, OverrideList, Split};
use meldfair_core::timeline::build_timeline;

#[derive(Parser)]
#[command(name = "meldfair", version, about = "Utterance realignment and active speaker localisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align transcripts against posteriors and write the edit decision list.
    Realign(RealignArgs),
    /// Localise the active speaker of every aligned utterance.
    Localise(LocaliseArgs),
    /// Join records, EDL and localisation into the dataset manifest.
    Manifest(ManifestArgs),
    /// Retention tables for a manifest.
    Stats(StatsArgs),
    /// Run the synthetic end-to-end fixture.
    SynthCheck(SynthCheckArgs),
    /// Write the concatenated dialogue timelines.
    Timeline(TimelineArgs),
}

/// `split:path`, repeatable.
fn parse_records_arg(s: &str) -> Result<(Split, PathBuf), String> {
    let (split, path) = s.split_once(':').ok_or_else(|| format!("expected split:path, got {s:?}"))?;
    Ok((split.parse().map_err(|e| format!("{e}"))?, PathBuf::from(path)))
}

#[derive(Args)]
struct RecordsArgs {
    /// Utterance table as `split:path`, e.g. `train:train_sent_emo.csv`.
    #[arg(long = "records", value_parser = parse_records_arg, required = true)]
    records: Vec<(Split, PathBuf)>,
}

#[derive(Args)]
struct OverrideArgs {
    /// Override list; the shipped list is used when absent.
    #[arg(long, conflicts_with = "no_overrides")]
    overrides: Option<PathBuf>,
    /// Apply no overrides.
    #[arg(long)]
    no_overrides: bool,
}

impl OverrideArgs {
    fn load(&self) -> Result<OverrideList> {
        Ok(match (&self.overrides, self.no_overrides) {
            (_, true) => OverrideList::default(),
            (Some(p), _) => formats::read_overrides(formats::open(p)?)?,
            (None, false) => formats::default_overrides(),
        })
    }
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = RunConfig::default().theta)]
    theta: f64,
    #[arg(long, default_value_t = RunConfig::default().min_span_ms)]
    min_span_ms: u64,
    #[arg(long, default_value_t = RunConfig::default().min_confidence, allow_negative_numbers = true)]
    min_confidence: f64,
    /// Do not infer cuts when a clip has no cuts file.
    #[arg(long)]
    no_cut_fallback: bool,
    #[arg(long, default_value_t = RunConfig::default().exact_group_limit)]
    exact_group_limit: usize,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl ConfigArgs {
    fn config(&self) -> Result<RunConfig> {
        let c = RunConfig {
            theta: self.theta,
            min_span_ms: self.min_span_ms,
            min_confidence: self.min_confidence,
            cut_fallback: !self.no_cut_fallback,
            exact_group_limit: self.exact_group_limit,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RealignArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Directory holding `<split>/<dialogue_id>.ctcp`.
    #[arg(long)]
    posteriors: PathBuf,
    /// Vocabulary every posterior file must use.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    edl: PathBuf,
    #[arg(long)]
    timelines: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct LocaliseArgs {
    #[arg(long)]
    edl: PathBuf,
    /// Directory holding `<split>/<dia>/<utt>/{detections.jsonl,scores.jsonl,cuts.json}`.
    #[arg(long)]
    media: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ManifestArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[arg(long)]
    edl: PathBuf,
    #[arg(long)]
    localised: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthCheckArgs {
    /// Directory for the generated inputs and stage outputs.
    #[arg(long)]
    work: PathBuf,
    #[arg(long, default_value_t = 20)]
    dialogues: u32,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Passing dialogues required for success; 95% of them by default.
    #[arg(long)]
    min_pass: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TimelineArgs {
    #[command(flatten)]
    records: RecordsArgs,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn write_report<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(p) = path {
        formats::write_json(formats::create(p)?, value)?;
    }
    Ok(())
}

/// Ok(false) when a dialogue or clip failed fatally.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Realign(a) => {
            let config = a.config.config()?;
            let (records, row_errors) = load_records(&a.records.records)?;
            let overrides = a.overrides.load()?;
            let vocab = a.vocab.as_deref().map(|p| formats::open(p).and_then(formats::read_vocab)).transpose()?;
            let loader = posterior_dir_loader(&a.posteriors);
            let mut out =
                with_pool(a.config.jobs, || realign_records(records, &overrides, loader, vocab.as_ref(), &config))?;
            out.report.row_errors = row_errors;
            formats::write_jsonl(formats::create(&a.edl)?, &out.edl)?;
            if let Some(p) = &a.timelines {
                formats::write_jsonl(formats::create(p)?, &out.timelines)?;
            }
            write_report(a.report.as_deref(), &out.report)?;
            let r = &out.report;
            for e in &r.row_errors {
                eprintln!("skipped {} line {}: {}", e.split, e.error.line, e.error.message);
            }
            for k in &r.missing_posteriors {
                eprintln!("no posteriors for {k}");
            }
            for f in &r.failures {
                eprintln!("failed {}: {}", f.dialogue, f.message);
            }
            eprintln!(
                "{} rows, {} dialogues aligned, {} without posteriors, {} failed",
                out.edl.len(),
                out.timelines.len(),
                r.missing_posteriors.len(),
                r.failures.len()
            );
            Ok(r.failures.is_empty())
        }
        Command::Localise(a) => {
            let config = a.config.config()?;
            let edl: Vec<EdlRow> = formats::read_jsonl(formats::open(&a.edl)?)?;
            let (records, report) = with_pool(a.config.jobs, || localise_rows(&edl, &a.media, &config))?;
            formats::write_jsonl(formats::create(&a.out)?, &records)?;
            write_report(a.report.as_deref(), &report)?;
            for (k, m) in &report.failures {
                eprintln!("failed {k}: {m}");
            }
            eprintln!(
                "{} clips localised, {} without media, {} failed",
                records.len(),
                report.missing_inputs.len(),
                report.failures.len()
            );
            Ok(report.failures.is_empty())
        }
        Command::Manifest(a) => {
            let config = a.config.config()?;
            let (records, _) = load_records(&a.records.records)?;
            let edl: Vec<EdlRow> = formats::read_jsonl(formats::open(&a.edl)?)?;
            let localised: Vec<LocaliseRecord> = formats::read_jsonl(formats::open(&a.localised)?)?;
            let entries = manifest_from(&records, &edl, &localised);
            write_manifest(&a.out, &entries, &config)?;
            eprintln!("{} entries, {} retained", entries.len(), entries.iter().filter(|e| e.is_retained()).count());
            Ok(true)
        }
        Command::Stats(a) => {
            let entries: Vec<ManifestEntry> = formats::read_jsonl(formats::open(&a.manifest)?)?;
            let s = stats(&entries);
            if a.json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                print!("{}", render_stats(&s));
            }
            Ok(true)
        }
        Command::SynthCheck(a) => {
            let config = SynthCheckConfig {
                dialogues: a.dialogues,
                noise: a.noise,
                seed: a.seed,
                jobs: a.config.jobs,
                run: a.config.config()?,
                ..SynthCheckConfig::default()
            };
            let report = synth_check::run(&a.work, &config)?;
            write_report(a.report.as_deref(), &report)?;
            for d in &report.dialogues {
                let verdict = if d.passed() { "pass" } else { "FAIL" };
                println!("{verdict} {} max error {:.2} frames", d.dialogue, d.max_frame_error);
                for p in &d.problems {
                    println!("    {p}");
                }
            }
            for f in &report.fatal {
                println!("fatal: {f}");
            }
            println!("{}/{} dialogues passed", report.passed(), report.dialogues.len());
            let min_pass = a.min_pass.unwrap_or((a.dialogues as usize * 19).div_ceil(20));
            Ok(report.fatal.is_empty() && report.passed() >= min_pass)
        }
        Command::Timeline(a) => {
            let (records, _) = load_records(&a.records.records)?;
            let (records, _) = apply_overrides(records, &a.overrides.load()?);
            let timelines: Vec<_> = group_dialogues(&records).iter().map(build_timeline).collect();
            formats::write_jsonl(formats::create(&a.out)?, &timelines).context("writing timelines")?;
            Ok(true)
        }
    }
}
