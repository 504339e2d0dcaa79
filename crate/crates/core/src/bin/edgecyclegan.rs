use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use edgecyclegan::data::{
    ingest_dataset, make_patches, two_domain_synth, AugmentSpec, DomainStyle, FundusDataset, Layout, SynthSpec,
};
use edgecyclegan::eval::{
    compare_report, evaluate_segmentor, prepare_eval_set, run_adapted_prepared, run_baseline_prepared,
    ExperimentSpec, MetricsReport,
};
use edgecyclegan::gantrain::{train_edgecyclegan, translate, GanConfig, GanRunOptions};
use edgecyclegan::networks::ModelBundle;
use edgecyclegan::segtrain::{train_segmentor, train_unet, SegConfig};

#[derive(Parser)]
#[command(name = "edgecyclegan", version, about = "Edge-preserving CycleGAN domain adaptation for vessel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write two synthetic domains in the generic layout.
    Synth(SynthArgs),
    /// Train G, F, D_A and D_B on unlabelled patches from two domains.
    TrainGan(TrainGanArgs),
    /// Run a generator over every image of a dataset.
    Translate(TranslateArgs),
    /// Train a U-Net on (optionally translated) labelled patches.
    TrainSeg(TrainSegArgs),
    /// Score a U-Net on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Combine report.json files into a method-by-direction table.
    Report(ReportArgs),
    /// Run baseline, CycleGAN and EdgeCycleGAN arms from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// TOML file with `[style_a]`, `[style_b]` and `[vessels]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "generic")]
    layout: Layout,
}

#[derive(Args, Clone)]
struct AugmentArgs {
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Random square window cut before resizing.
    #[arg(long)]
    window: Option<usize>,
}

impl AugmentArgs {
    fn apply(&self, mut a: AugmentSpec, seed: u64) -> AugmentSpec {
        if let Some(n) = self.patches {
            a.patches_per_domain = n;
        }
        if let Some(n) = self.patch_size {
            a.patch_size = n;
        }
        if self.window.is_some() {
            a.window = self.window;
        }
        a.seed = seed;
        a
    }
}

#[derive(Args)]
struct TrainGanArgs {
    #[arg(long)]
    domain_a: PathBuf,
    #[arg(long, value_enum, default_value = "generic")]
    layout_a: Layout,
    #[arg(long)]
    domain_b: PathBuf,
    #[arg(long, value_enum, default_value = "generic")]
    layout_b: Layout,
    #[arg(long)]
    out: PathBuf,
    /// TOML GanConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 1)]
    sample_every: usize,
    #[command(flatten)]
    augment: AugmentArgs,
}

#[derive(Args)]
struct TranslateArgs {
    /// Checkpoint directory of a generator.
    #[arg(long)]
    generator: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Resize inputs to this square size first.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct TrainSegArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Frozen generator applied to the patches before training.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// TOML SegConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    augment: AugmentArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory of a U-Net.
    #[arg(long)]
    unet: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Resize images and masks to this square size first.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value = "model")]
    method: String,
    #[arg(long, default_value = "")]
    direction: String,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Append the published reference rows.
    #[arg(long)]
    published: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum Arm {
    Baseline,
    Cyclegan,
    Edgecyclegan,
}

#[derive(Deserialize)]
struct PipelineConfig {
    #[serde(default = "all_arms")]
    arms: Vec<Arm>,
    /// Directory for the combined table; defaults to the first experiment's parent.
    report_dir: Option<PathBuf>,
    experiments: Vec<ExperimentSpec>,
}

fn all_arms() -> Vec<Arm> {
    vec![Arm::Baseline, Arm::Cyclegan, Arm::Edgecyclegan]
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct SynthConfig {
    style_a: Option<DomainStyle>,
    style_b: Option<DomainStyle>,
    vessels: Option<edgecyclegan::data::VesselParams>,
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load(d: &DataArgs) -> Result<FundusDataset> {
    ingest_dataset(&d.data, d.layout).with_context(|| format!("loading {}", d.data.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = read_toml(a.config.as_deref())?;
    let spec = SynthSpec {
        count: a.count,
        image_size: a.size,
        vessels: cfg.vessels.unwrap_or_default(),
        seed: a.seed,
        ..Default::default()
    };
    let (da, db) = two_domain_synth(
        &cfg.style_a.unwrap_or_else(DomainStyle::warm),
        &cfg.style_b.unwrap_or_else(DomainStyle::pale),
        &spec,
    )?;
    da.export_generic(a.out.join("domain_a"))?;
    db.export_generic(a.out.join("domain_b"))?;
    println!("wrote {} + {} images under {}", da.len(), db.len(), a.out.display());
    Ok(())
}

fn train_gan(a: TrainGanArgs) -> Result<()> {
    let mut cfg: GanConfig = read_toml(a.config.as_deref())?;
    cfg.seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda_cyc = v;
    }
    if let Some(v) = a.gamma {
        cfg.gamma_edge = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    let aug = a.augment.apply(AugmentSpec::default(), edgecyclegan::derive_seed(a.seed, 43));
    let da = ingest_dataset(&a.domain_a, a.layout_a)?;
    let db = ingest_dataset(&a.domain_b, a.layout_b)?;
    let pa = make_patches(&da, &aug)?;
    let pb = make_patches(&db, &AugmentSpec { seed: edgecyclegan::derive_seed(a.seed, 44), ..aug.clone() })?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("config.json"), &serde_json::json!({ "gan": cfg, "augment": aug }))?;
    write_json(&a.out.join("patches_a.json"), &pa.records)?;
    write_json(&a.out.join("patches_b.json"), &pb.records)?;
    let opts = GanRunOptions {
        output_dir: Some(a.out.clone()),
        checkpoint_every: Some(a.checkpoint_every),
        sample_every: Some(a.sample_every),
    };
    let out = train_edgecyclegan(&pa.dataset.images, &pb.dataset.images, &cfg, &opts)?;
    if let Some(last) = out.history.last() {
        let o = &last.mean.objective;
        println!(
            "epoch {}: adv {:.4}/{:.4} cyc {:.4} edge {:.4} total {:.4}",
            last.epoch, o.adv_a_to_b, o.adv_b_to_a, o.cyc, o.edge, o.total
        );
    }
    println!("G={} F={}", out.g.fingerprint()?, out.f.fingerprint()?);
    Ok(())
}

fn translate_cmd(a: TranslateArgs) -> Result<()> {
    let gen = ModelBundle::load(&a.generator)?;
    let ds = load(&a.data)?;
    let ds = prepare_eval_set(&ds, a.size)?;
    let out = translate(&gen, &ds.images)?;
    fs::create_dir_all(&a.out)?;
    for (id, im) in ds.ids.iter().zip(&out) {
        im.save(a.out.join(format!("{id}.png")))?;
    }
    println!("translated {} images into {}", out.len(), a.out.display());
    Ok(())
}

fn train_seg(a: TrainSegArgs) -> Result<()> {
    let mut cfg: SegConfig = read_toml(a.config.as_deref())?;
    cfg.seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    let ds = load(&a.data)?;
    let aug = a.augment.apply(AugmentSpec::default(), edgecyclegan::derive_seed(a.seed, 43));
    let patches = make_patches(&ds, &aug)?;
    let labels = patches.dataset.labels()?;
    let out = match &a.generator {
        Some(g) => {
            let gen = ModelBundle::load(g)?;
            train_segmentor(&gen, &patches.dataset.images, labels, &cfg, Some(&a.out))?
        }
        None => train_unet(&patches.dataset.images, labels, &cfg, Some(&a.out))?,
    };
    write_json(&a.out.join("config.json"), &serde_json::json!({ "seg": cfg, "augment": aug }))?;
    if let Some(last) = out.history.last() {
        println!("epoch {}: loss {:.5}", last.epoch, last.loss);
    }
    println!("U={}", out.unet.fingerprint()?);
    Ok(())
}

fn print_metrics(r: &MetricsReport) {
    if let Some(m) = r.aggregate {
        println!(
            "dice {:.2}  precision {:.2}  recall {:.2}  accuracy {:.2}",
            100.0 * m.dice,
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.accuracy
        );
    }
    if let Some(m) = r.aggregate_full_frame {
        println!("full frame: dice {:.2}", 100.0 * m.dice);
    }
    if let Some(e) = &r.edge {
        println!("edge F median {:.4}, L_edge median {:.4}", e.median_f_measure, e.median_l_edge);
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let unet = ModelBundle::load(&a.unet)?;
    let ds = prepare_eval_set(&load(&a.data)?, a.size)?;
    let mut r = evaluate_segmentor(&unet, &ds, a.threshold)?;
    r.method = a.method;
    r.direction = a.direction;
    print_metrics(&r);
    if let Some(p) = &a.out {
        write_json(p, &r)?;
    }
    Ok(())
}

fn write_table(reports: &[MetricsReport], dir: &Path, published: bool) -> Result<()> {
    let table = compare_report(reports)?;
    fs::create_dir_all(dir)?;
    let text = table.to_text(published);
    fs::write(dir.join("table.txt"), &text)?;
    fs::write(dir.join("table.csv"), table.to_csv())?;
    table.save_bar_chart(dir.join("table.png"))?;
    print!("{text}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| -> Result<MetricsReport> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(&reports, &a.out, a.published)
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: PipelineConfig = toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if cfg.experiments.is_empty() {
        bail!("{} defines no experiments", a.config.display());
    }
    let mut reports = Vec::new();
    for mut spec in cfg.experiments.clone() {
        spec.seed = a.seed;
        spec.validate()?;
        log::info!("experiment {}", spec.direction);
        write_json(&spec.output_root.join("experiment.json"), &spec)?;
        let data = spec.prepare()?;
        for arm in &cfg.arms {
            let r = match arm {
                Arm::Baseline => run_baseline_prepared(&spec, &data)?,
                Arm::Cyclegan => run_adapted_prepared(&spec, &data, false)?,
                Arm::Edgecyclegan => run_adapted_prepared(&spec, &data, true)?,
            };
            println!("{} {}:", r.direction, r.method);
            print_metrics(&r);
            reports.push(r);
        }
    }
    let dir = cfg.report_dir.clone().unwrap_or_else(|| {
        cfg.experiments[0].output_root.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    });
    write_json(&dir.join("reports.json"), &reports)?;
    write_table(&reports, &dir, true)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::TrainGan(a) => train_gan(a),
        Command::Translate(a) => translate_cmd(a),
        Command::TrainSeg(a) => train_seg(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    }
}
