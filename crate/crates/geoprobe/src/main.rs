use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geoprobe::analysis::{analyze, ReportDocument};
use geoprobe::bank_io::load_bank_file;
use geoprobe::diag::first_token;
use geoprobe::manifest::{Ablations, ProviderConfig, RunManifest};
use geoprobe::report::{render_text, write_coherence, write_report};
use geoprobe::runner::{run, run_dir, Experiment, ExecOutcome, RunSummary, Stages};
use geoprobe::store::RunStore;
use geoprobe_core::bank::Language;

/// Forced-choice logit-probe audits of geopolitical preference.
#[derive(Parser)]
#[command(name = "geoprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the main probe matrix (plus any stages the manifest enables) and write a report.
    Run(RunArgs),
    /// Recompute the report of an existing run.
    Report(ReportArgs),
    /// Print the coherence census of an existing run.
    Coherence(ReportArgs),
    /// Run the free-generation stage only.
    Freegen(RunArgs),
    /// Run ablation stages only.
    Ablate(AblateArgs),
    /// Show the top next tokens after the answer cue for one prompt.
    #[command(name = "diag-firsttoken")]
    DiagFirstToken(DiagArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment manifest (JSON).
    #[arg(long, short)]
    manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Send every model's queries to this provider endpoint instead.
    #[arg(long)]
    provider_url: Option<String>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the coherence threshold used for the report.
    #[arg(long)]
    threshold: Option<f64>,
    /// Stop after this many new queries.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Run every ablation regardless of the manifest toggles.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest of the run; its run id locates the run directory.
    #[arg(long, short, conflicts_with = "run_dir")]
    manifest: Option<PathBuf>,
    /// Run directory, as printed by `run`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long, short)]
    manifest: PathBuf,
    #[arg(long)]
    provider_url: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Profile id; defaults to the first manifest model.
    #[arg(long)]
    model: Option<String>,
    /// Scenario id; defaults to the first scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Country codes for slots A and B, e.g. `US,CN`.
    #[arg(long)]
    pair: Option<String>,
    #[arg(long, default_value = "en")]
    language: String,
    #[arg(long, short, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn load_manifest(path: &Path, output_dir: &Option<PathBuf>, url: &Option<String>, seed: Option<u64>) -> Result<RunManifest> {
    let mut m = RunManifest::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(d) = output_dir {
        m.output_dir = d.clone();
    }
    if let Some(url) = url {
        for entry in &mut m.models {
            entry.provider = match &entry.provider {
                ProviderConfig::Http { top_k, timeout_secs, .. } => ProviderConfig::Http {
                    url: url.clone(),
                    top_k: *top_k,
                    timeout_secs: *timeout_secs,
                },
                ProviderConfig::Synthetic { .. } => ProviderConfig::Http {
                    url: url.clone(),
                    top_k: None,
                    timeout_secs: 120,
                },
            };
        }
    }
    if let Some(s) = seed {
        m.seed = s;
    }
    Ok(m)
}

fn experiment(c: &Common) -> Result<Experiment> {
    let mut m = load_manifest(&c.manifest, &c.output_dir, &c.provider_url, c.seed)?;
    if c.limit.is_some() {
        m.limit = c.limit;
    }
    if let Some(t) = c.threshold {
        m.thresholds.coherence = t;
    }
    Ok(Experiment::load(m)?)
}

fn outcome_line(stage: &str, o: &ExecOutcome) -> String {
    format!(
        "{stage}: {} planned, {} present, {} written, {} gaps, {} deferred",
        o.planned, o.already_present, o.written, o.gaps, o.deferred
    )
}

fn finish(exp: &Experiment, store: &RunStore, summary: &RunSummary, threshold: Option<f64>, format: Format) -> Result<()> {
    let doc = report_for(store, threshold)?;
    write_report(store.dir(), &doc)?;
    write_coherence(store, &doc)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&doc)?),
        Format::Text => {
            println!("run {} -> {}", exp.run_id, store.dir().display());
            for (name, o) in [("main", &summary.main), ("ablations", &summary.ablations), ("freegen", &summary.freegen)] {
                if o.planned > 0 {
                    println!("{}", outcome_line(name, o));
                }
            }
            println!("report: {}", store.dir().join(geoprobe::store::REPORT_TEXT).display());
        }
    }
    Ok(())
}

fn report_for(store: &RunStore, threshold: Option<f64>) -> Result<ReportDocument> {
    let mut meta = store.meta()?;
    if let Some(t) = threshold {
        if !(t > 0.0 && t <= 1.0) {
            bail!("threshold {t} outside (0, 1]");
        }
        meta.manifest.thresholds.coherence = t;
    }
    Ok(analyze(&meta, &store.records()?, &store.generations()?, &store.gaps()?))
}

fn open_run(a: &ReportArgs) -> Result<RunStore> {
    let dir = match (&a.run_dir, &a.manifest) {
        (Some(d), _) => d.clone(),
        (None, Some(m)) => {
            let exp = Experiment::load(load_manifest(m, &a.output_dir, &None, a.seed)?)?;
            run_dir(&exp.manifest.output_dir, &exp.run_id)
        }
        (None, None) => bail!("either --manifest or --run-dir is required"),
    };
    Ok(RunStore::open(&dir)?)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let exp = experiment(&a.common)?;
            let (store, summary) = run(
                &exp,
                Stages {
                    main: true,
                    ablations: true,
                    freegen: true,
                },
            )?;
            finish(&exp, &store, &summary, a.common.threshold, a.common.format)
        }
        Command::Freegen(a) => {
            let mut exp = experiment(&a.common)?;
            exp.manifest.freegen.enabled = true;
            let (store, summary) = run(
                &exp,
                Stages {
                    main: false,
                    ablations: false,
                    freegen: true,
                },
            )?;
            finish(&exp, &store, &summary, a.common.threshold, a.common.format)
        }
        Command::Ablate(a) => {
            let mut exp = experiment(&a.common)?;
            if a.all {
                exp.manifest.ablations = Ablations::all();
            } else if !exp.manifest.ablations.any() {
                bail!("the manifest enables no ablations; pass --all or set `ablations`");
            }
            let (store, summary) = run(
                &exp,
                Stages {
                    main: false,
                    ablations: true,
                    freegen: false,
                },
            )?;
            finish(&exp, &store, &summary, a.common.threshold, a.common.format)
        }
        Command::Report(a) => {
            let store = open_run(&a)?;
            let doc = report_for(&store, a.threshold)?;
            write_report(store.dir(), &doc)?;
            write_coherence(&store, &doc)?;
            match a.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&doc)?),
                Format::Text => print!("{}", render_text(&doc)),
            }
            Ok(())
        }
        Command::Coherence(a) => {
            let store = open_run(&a)?;
            let doc = report_for(&store, a.threshold)?;
            write_coherence(&store, &doc)?;
            match a.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&doc.coherence)?),
                Format::Text => {
                    let co = &doc.coherence;
                    println!("scenario            flip   cells  included@{:.2}", co.threshold);
                    for r in &co.reports {
                        println!(
                            "{:<18} {:>5.2} {:>7}  {}",
                            r.scenario_id,
                            r.flip_fraction,
                            r.n_cells,
                            if r.included(co.threshold) { "yes" } else { "no" }
                        );
                    }
                    for s in &co.sensitivity {
                        println!("included at {:.2}: {}/{}", s.threshold, s.n_included, co.n_scenarios);
                    }
                }
            }
            Ok(())
        }
        Command::DiagFirstToken(a) => {
            let m = load_manifest(&a.manifest, &None, &a.provider_url, a.seed)?;
            let exp = Experiment::load(m)?;
            let idx = match &a.model {
                Some(id) => exp
                    .profiles
                    .iter()
                    .position(|p| &p.id == id)
                    .with_context(|| format!("model `{id}` is not in the manifest"))?,
                None => 0,
            };
            let providers = exp.providers()?;
            let bank = load_bank_file(&exp.manifest.bank)?;
            let scenario = match &a.scenario {
                Some(s) => s.clone(),
                None => exp.scenario_ids()[0].clone(),
            };
            let pair = match &a.pair {
                Some(p) => match p.split_once(',') {
                    Some((x, y)) => (x.trim().to_string(), y.trim().to_string()),
                    None => bail!("--pair takes two comma-separated country codes"),
                },
                None => {
                    let p = bank
                        .real_pairs()
                        .into_iter()
                        .find(|p| p.contains(&exp.manifest.target_country))
                        .context("no real pair contains the target country")?;
                    (p.0, p.1)
                }
            };
            let language = Language::from_code(&a.language).with_context(|| format!("unknown language `{}`", a.language))?;
            let rows = first_token(
                &bank,
                &exp.profiles[idx],
                providers[idx].as_ref(),
                &scenario,
                (&pair.0, &pair.1),
                language,
                a.k,
            )?;
            match a.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
                Format::Text => {
                    for r in rows {
                        println!(
                            "{} {} prefilled={} compliance={:.4}",
                            r.model_id, r.scenario_id, r.prefilled, r.compliance
                        );
                        for (t, p) in r.top {
                            println!("  {:<12} {p:.6}", format!("{t:?}"));
                        }
                    }
                }
            }
            Ok(())
        }
    }
}
