use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fairsynth::annotations::{parse_annotations, AnnotationTable};
use fairsynth::artifact::{
    load_registry, read_counts, read_plan_file, to_json_bytes, write_atomic, CountsFile, PlanFile, RunProvenance,
    SignatureFile, COUNTS_FORMAT, PLAN_FORMAT,
};
use fairsynth::balance::{check_criteria, plan_balance, tabulate_counts, PlanMode, PlanRequest, PlanStrategy};
use fairsynth::config::Config;
use fairsynth::discovery::{discover, Thresholds};
use fairsynth::latent::{LayerRange, Polarity};
use fairsynth::metrics::{evaluate_all, parse_predictions, render_table};
use fairsynth::seedfile;
use fairsynth::study::{attribute_study, check_study_target, render_study};
use fairsynth::synthesis::{
    oracle_annotate, synthesize_batch, write_manifest, IdentityMode, SynthesisOptions, ToyAttribute, ToyGenerator,
    ToyGeneratorSpec,
};
use fairsynth::{Error, Result};

/// Build fairness-balanced synthetic datasets by latent attribute translation,
/// and measure model bias.
///
/// Concurrent invocations writing the same `--out` path are not supported.
#[derive(Debug, Parser)]
#[command(name = "fairsynth", version)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    rng_seed: u64,
    /// TOML configuration file (thresholds, layer registry, metrics, taxonomy).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or output directory for `synthesize` and `evaluate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discover an attribute signature from positive and negative seed sets.
    Discover(DiscoverArgs),
    /// Plan the synthetic samples needed to balance a dataset.
    Plan(PlanArgs),
    /// Render the samples of a plan.
    Synthesize(SynthesizeArgs),
    /// Compute the fairness metric report for a prediction table.
    Evaluate(EvaluateArgs),
    /// Tabulate per-group counts, fairness criteria and the attribute study.
    Stats(StatsArgs),
    /// Write a toy generator spec and seed sets for end-to-end trials.
    ToyFixture(ToyFixtureArgs),
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    /// Seeds showing the target value; they become the donor pool.
    #[arg(long)]
    pos: PathBuf,
    /// Seeds showing the opposite value.
    #[arg(long)]
    neg: PathBuf,
    /// Layer range `lo:hi`; defaults to the registry entry, else all layers.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    intra: Option<f64>,
    #[arg(long)]
    inter: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Supplement,
    SameSize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Marginal,
    Joint,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    protected: String,
    /// Attributes of interest (repeat or comma-separate).
    #[arg(long, value_delimiter = ',', required = true)]
    aoi: Vec<String>,
    #[arg(long, value_enum, default_value = "supplement")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "marginal")]
    strategy: StrategyArg,
    /// Signature files, used to check that joint cells are cell-disjoint.
    #[arg(long, value_delimiter = ',')]
    signatures: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IdentityArg {
    Independent,
    Paired,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Signature files for the protected attribute and every planned attribute.
    #[arg(long, value_delimiter = ',', required = true)]
    signatures: Vec<PathBuf>,
    /// Toy generator spec (JSON).
    #[arg(long)]
    toy_spec: PathBuf,
    #[arg(long, value_enum, default_value = "independent")]
    identity_mode: IdentityArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Prediction CSV: `id,group,<attr>:label,<attr>:score,...[,repr:0,...]`.
    #[arg(long)]
    pred: PathBuf,
    /// Training counts (a `stats` artifact or a bare count table), for BA.
    #[arg(long)]
    train_counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    protected: String,
    /// Attributes to tabulate; defaults to every non-protected attribute.
    #[arg(long, value_delimiter = ',')]
    aoi: Vec<String>,
    /// Predictions for the same ids, to add the per-attribute study.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyFixtureArgs {
    /// Attribute names; the first is treated as the protected attribute.
    #[arg(long, value_delimiter = ',', required = true)]
    attributes: Vec<String>,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    /// Seeds per polarity per attribute.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    log::info!("rng_seed = {}", cli.rng_seed);
    log::info!("configuration:\n{}", config.to_toml()?);
    let provenance = RunProvenance::new(std::env::args().skip(1).collect(), cli.rng_seed, &config);
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Discover(a) => cmd_discover(a, &config, provenance, &out("signature.json")),
        Command::Plan(a) => cmd_plan(a, &config, cli.rng_seed, provenance, &out("plan.json")),
        Command::Synthesize(a) => cmd_synthesize(a, &config, cli.rng_seed, provenance, &out("synth")),
        Command::Evaluate(a) => cmd_evaluate(a, &config, provenance, &out("report")),
        Command::Stats(a) => cmd_stats(a, &config, provenance, &out("counts.json")),
        Command::ToyFixture(a) => cmd_toy_fixture(a, cli.rng_seed, &out("toy")),
    }
}

/// Maps `BlondHair` or `blond_hair` onto the table's `Blond_Hair`.
fn resolve_attribute(ann: &AnnotationTable, name: &str) -> Result<String> {
    if ann.column(name).is_ok() {
        return Ok(name.to_string());
    }
    let key = |s: &str| s.replace('_', "").to_ascii_lowercase();
    let hits: Vec<&String> = ann.attributes().iter().filter(|a| key(a) == key(name)).collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        _ => Err(Error::MissingColumn(name.to_string())),
    }
}

fn cmd_discover(a: &DiscoverArgs, config: &Config, provenance: RunProvenance, out: &Path) -> Result<()> {
    let pos = seedfile::load(&a.pos)?;
    let neg = seedfile::load(&a.neg)?;
    if pos.polarity() == neg.polarity() {
        return Err(Error::InvalidConfig(format!(
            "--pos and --neg are both {} seed sets",
            pos.polarity()
        )));
    }
    let layers = pos.shape().0;
    let range = match &a.layers {
        Some(s) => s.parse::<LayerRange>()?,
        None => config
            .layer_registry()?
            .get(pos.label())
            .copied()
            .unwrap_or_else(|| LayerRange::all(layers)),
    };
    range.check(layers)?;
    let th = Thresholds::new(
        a.intra.unwrap_or(config.discovery.intra),
        a.inter.unwrap_or(config.discovery.inter),
    )?;
    let d = discover(&pos, &neg, range, th)?;
    for diag in &d.diagnostics {
        log::info!(
            "layer {}: |A| = {}, |B| = {}, |C| = {}",
            diag.layer,
            diag.intra,
            diag.inter,
            diag.combined
        );
    }
    let file = SignatureFile::from_discovery(&d, th, &a.pos.to_string_lossy(), Some(provenance));
    write_atomic(out, &to_json_bytes(&file)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn cmd_plan(a: &PlanArgs, config: &Config, rng_seed: u64, provenance: RunProvenance, out: &Path) -> Result<()> {
    let ann = parse_annotations(&a.annotations)?;
    let protected = resolve_attribute(&ann, &a.protected)?;
    let aoi = a
        .aoi
        .iter()
        .map(|n| resolve_attribute(&ann, n))
        .collect::<Result<Vec<_>>>()?;
    for n in &aoi {
        check_study_target(&protected, n)?;
    }
    let registry = if a.signatures.is_empty() {
        None
    } else {
        Some(load_registry(&a.signatures, config.planner.families.clone())?)
    };
    let req = PlanRequest {
        protected,
        aoi,
        mode: match a.mode {
            ModeArg::Supplement => PlanMode::Supplement,
            ModeArg::SameSize => PlanMode::SameSize,
        },
        strategy: match a.strategy {
            StrategyArg::Marginal => PlanStrategy::Marginal,
            StrategyArg::Joint => PlanStrategy::Joint,
        },
        families: config.planner.families.clone(),
        rng_seed,
    };
    let plan = plan_balance(&ann, &req, registry.as_ref())?;
    for note in &plan.notes {
        log::warn!("{note}");
    }
    let [g0, g1] = plan.group_counts();
    log::info!(
        "{} cells, {} samples ({g0} + {g1})",
        plan.cells.len(),
        plan.total_count()
    );
    let file = PlanFile {
        format: PLAN_FORMAT.into(),
        plan,
        provenance: Some(provenance),
    };
    write_atomic(out, &to_json_bytes(&file)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct SynthesisRun {
    format: &'static str,
    samples: usize,
    layers: usize,
    dims: usize,
    features: usize,
    identity_mode: IdentityMode,
    /// Fraction of assigned labels the toy oracle reads back.
    oracle_agreement: Option<f64>,
    provenance: RunProvenance,
}

fn cmd_synthesize(
    a: &SynthesizeArgs,
    config: &Config,
    rng_seed: u64,
    provenance: RunProvenance,
    out: &Path,
) -> Result<()> {
    let plan = read_plan_file(&a.plan)?.plan;
    let registry = load_registry(&a.signatures, config.planner.families.clone())?;
    let spec: ToyGeneratorSpec = serde_json::from_slice(&fs::read(&a.toy_spec)?)?;
    let generator = ToyGenerator::new(spec)?;
    let identity_mode = match a.identity_mode {
        IdentityArg::Independent => IdentityMode::Independent,
        IdentityArg::Paired => IdentityMode::Paired,
    };
    let samples = synthesize_batch(
        &plan,
        &registry,
        &generator,
        SynthesisOptions {
            rng_seed,
            identity_mode,
        },
    )?;

    let (mut agree, mut total) = (0usize, 0usize);
    for s in &samples {
        let read = oracle_annotate(&s.image, generator.spec());
        let wanted = s.labels.iter().chain([(&plan.protected, &s.protected)]);
        for (attr, v) in wanted {
            if let Some(got) = read.get(attr) {
                total += 1;
                agree += usize::from(got == v);
            }
        }
    }
    let oracle_agreement = (total > 0).then(|| agree as f64 / total as f64);
    if let Some(r) = oracle_agreement {
        log::info!("toy oracle agreement {:.4} over {total} labels", r);
    }

    let (mut manifest, mut latents, mut features) = (Vec::new(), Vec::new(), Vec::new());
    write_manifest(&samples, &plan.protected, &mut manifest, &mut latents, &mut features)?;
    let (layers, dims) = (generator.spec().layers, generator.spec().dims);
    let run = SynthesisRun {
        format: "fairsynth-synthesis/1",
        samples: samples.len(),
        layers,
        dims,
        features: fairsynth::synthesis::Generator::output_dim(&generator),
        identity_mode,
        oracle_agreement,
        provenance,
    };
    fs::create_dir_all(out)?;
    write_atomic(&out.join("manifest.jsonl"), &manifest)?;
    write_atomic(&out.join("latents.bin"), &latents)?;
    write_atomic(&out.join("features.bin"), &features)?;
    write_atomic(&out.join("run.json"), &to_json_bytes(&run)?)?;
    log::info!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct EvaluationFile<'a> {
    format: &'static str,
    report: &'a fairsynth::metrics::MetricsReport,
    provenance: RunProvenance,
}

fn cmd_evaluate(a: &EvaluateArgs, config: &Config, provenance: RunProvenance, out: &Path) -> Result<()> {
    let pred = parse_predictions(&a.pred)?;
    let train = a.train_counts.as_deref().map(read_counts).transpose()?;
    let report = evaluate_all(&pred, train.as_ref(), &config.metrics)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    let table = render_table(&report);
    let file = EvaluationFile {
        format: "fairsynth-report/1",
        report: &report,
        provenance,
    };
    fs::create_dir_all(out)?;
    write_atomic(&out.join("report.json"), &to_json_bytes(&file)?)?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_stats(a: &StatsArgs, config: &Config, provenance: RunProvenance, out: &Path) -> Result<()> {
    let ann = parse_annotations(&a.annotations)?;
    let protected = resolve_attribute(&ann, &a.protected)?;
    let aoi = if a.aoi.is_empty() {
        ann.attributes().iter().filter(|n| **n != protected).cloned().collect()
    } else {
        a.aoi
            .iter()
            .map(|n| resolve_attribute(&ann, n))
            .collect::<Result<Vec<_>>>()?
    };
    for n in &aoi {
        check_study_target(&protected, n)?;
    }
    let counts = tabulate_counts(&ann, &protected, &aoi)?;
    let criteria = check_criteria(&counts);
    let study = match &a.pred {
        Some(p) => {
            let rows = attribute_study(&ann, &parse_predictions(p)?, &protected, &config.taxonomy)?;
            let names = [
                config.planner.group_names[0].as_str(),
                config.planner.group_names[1].as_str(),
            ];
            print!("{}", render_study(&rows, names));
            rows
        }
        None => Vec::new(),
    };
    log::info!(
        "group totals {:?}; demographic parity {}",
        counts.group_totals,
        if criteria.group_dp_ok { "holds" } else { "fails" }
    );
    let file = CountsFile {
        format: COUNTS_FORMAT.into(),
        counts,
        criteria,
        study,
        provenance: Some(provenance),
    };
    write_atomic(out, &to_json_bytes(&file)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn cmd_toy_fixture(a: &ToyFixtureArgs, rng_seed: u64, out: &Path) -> Result<()> {
    const CONTROL_DIMS: usize = 3;
    if a.layers == 0 || a.attributes.len().div_ceil(a.layers) * CONTROL_DIMS > a.dims {
        return Err(Error::InvalidConfig(format!(
            "{} attributes do not fit in {}x{} latents",
            a.attributes.len(),
            a.layers,
            a.dims
        )));
    }
    // Attribute i controls three dims of layer i mod L; attributes sharing a
    // layer take successive dim blocks, so control cells never overlap.
    let attributes = a
        .attributes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let layer = i % a.layers;
            let first = (i / a.layers) * CONTROL_DIMS;
            Ok(ToyAttribute {
                name: name.clone(),
                control_dims: (first..first + CONTROL_DIMS).collect(),
                control_layers: LayerRange::single(layer, a.layers)?,
                shift: 3.0,
                jitter: 0.1,
                threshold: 1.5,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ToyGeneratorSpec {
        layers: a.layers,
        dims: a.dims,
        attributes,
        noise: a.noise,
        mixing_features: 4,
        seed: rng_seed,
    };
    let generator = ToyGenerator::new(spec.clone())?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("toy_spec.json"), &to_json_bytes(&spec)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for name in &a.attributes {
        for (polarity, suffix) in [(Polarity::Positive, "pos"), (Polarity::Negative, "neg")] {
            let set = generator.attribute_seeds(name, polarity, a.seeds, &mut rng)?;
            let path = out.join(format!("{name}.{suffix}.seeds"));
            write_atomic(&path, &seedfile::to_binary_bytes(&set)?)?;
        }
    }
    log::info!("wrote toy fixture to {}", out.display());
    Ok(())
}
