mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use discnn::checkpoint::{load_model, save_model};
use discnn::dataset::{
    generate_synthetic_dataset_with, load_stl10_split, make_scene, random_plant_box, validate_lemma_requirements,
    GlyphKind, Sample, SceneSpec, SynthConfig, DEFAULT_MIN_RATIO,
};
use discnn::detect::{detect_with_net, inspect, render_strip, DetectionDocument, Divisors, DEFAULT_BATCH_CAP};
use discnn::image::{draw_boxes, load_image, save_image, BBox, Rgb};
use discnn::model::InferenceNet;
use discnn::orchestrator::{detect_multi, multi_document, ClassRegistry};
use discnn::train::{calibrate_threshold, N2OConfig, Trainer};
use discnn::DisCnn;

use config::{required, DetectFlags, RegistryFile, RunConfig};

#[derive(Parser)]
#[command(name = "discnn", version, about = "One-positive-class CNN training and multi-scale sliding-window detection")]
struct Cli {
    /// TOML file with default values for any flag (flat keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Detect one class in an image.
    Detect(DetectArgs),
    /// Detect every class of a registry file in an image.
    DetectMulti(MultiArgs),
    /// Score every window at fixed sizes and save the best ones as sorted strips.
    Inspect(InspectArgs),
    /// Detect on a scene directory with ground truth and report IoU and hit rate.
    Eval(EvalArgs),
    /// Suggest a threshold from labelled validation samples.
    CalibrateThreshold(CalibrateArgs),
    /// Write seeded synthetic scenes and their ground truth.
    SynthScenes(ScenesArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Use the seeded synthetic glyph dataset.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Positive glyph for synthetic data.
    #[arg(long, value_parser = parse_glyph)]
    glyph: Option<GlyphKind>,
    #[arg(long)]
    stl10_images: Option<PathBuf>,
    #[arg(long)]
    stl10_labels: Option<PathBuf>,
    /// STL-10 labels to keep, e.g. 3,2,4,5,6,7,8.
    #[arg(long, value_delimiter = ',')]
    stl10_classes: Option<Vec<u8>>,
    #[arg(long)]
    positive_class: Option<u8>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log path (default: checkpoint path with `.log` appended).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DetectFlagArgs {
    #[arg(long)]
    min_sws: Option<usize>,
    #[arg(long)]
    thr: Option<f64>,
    #[arg(long)]
    link_distance: Option<f64>,
    #[arg(long)]
    batch_cap: Option<usize>,
    /// Fixed window range `HI,LO`, visiting sizes from HI down to just above LO.
    #[arg(long, value_parser = parse_range)]
    range: Option<[usize; 2]>,
    #[arg(long)]
    stride_div: Option<usize>,
    #[arg(long)]
    wa_div: Option<usize>,
}

impl DetectFlagArgs {
    fn flags(&self) -> DetectFlags {
        DetectFlags {
            min_sws: self.min_sws,
            thr: self.thr,
            link_distance: self.link_distance,
            batch_cap: self.batch_cap,
            range: self.range,
            stride_div: self.stride_div,
            wa_div: self.wa_div,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[command(flatten)]
    detect: DetectFlagArgs,
    /// Threads over window scales.
    #[arg(long)]
    workers: Option<usize>,
    /// JSON output (default: stdout).
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    annotated: Option<PathBuf>,
}

#[derive(Args)]
struct MultiArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    annotated: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Window sizes, e.g. 280,180,50.
    #[arg(long, value_delimiter = ',', required = true)]
    sws: Vec<usize>,
    /// Windows kept per strip.
    #[arg(long, default_value_t = 8)]
    top: usize,
    /// Tile edge in the strips.
    #[arg(long, default_value_t = 96)]
    tile: usize,
    #[arg(long)]
    stride_div: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory holding images and `ground_truth.json`.
    #[arg(long)]
    scenes: PathBuf,
    #[command(flatten)]
    detect: DetectFlagArgs,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ScenesArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 64)]
    glyph_size: usize,
    #[arg(long, value_parser = parse_glyph, default_value = "car")]
    glyph: GlyphKind,
    #[arg(long, default_value_t = 1)]
    distractors: usize,
    /// Leave the glyph out.
    #[arg(long)]
    blank: bool,
}

fn parse_glyph(s: &str) -> Result<GlyphKind, String> {
    match s {
        "car" => Ok(GlyphKind::Car),
        "diamond" => Ok(GlyphKind::Diamond),
        _ => Err(format!("unknown glyph {s:?} (expected car or diamond)")),
    }
}

fn parse_range(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [hi, lo] => {
            let hi = hi.trim().parse().map_err(|_| format!("bad range start {hi:?}"))?;
            let lo = lo.trim().parse().map_err(|_| format!("bad range end {lo:?}"))?;
            Ok([hi, lo])
        }
        _ => Err(format!("range must be HI,LO, got {s:?}")),
    }
}

fn write_json(value: &impl Serialize, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn image_id(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn load_samples(data: &DataArgs, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let images = data.stl10_images.clone().or(cfg.stl10_images.clone());
    let synthetic = data.synthetic || cfg.synthetic.unwrap_or(false);
    if synthetic && images.is_some() {
        bail!("choose either synthetic data or STL-10 files, not both");
    }
    if synthetic {
        let glyph = data.glyph.or(cfg.glyph).unwrap_or(GlyphKind::Car);
        let seed = required(data.seed, cfg.seed, "seed")?;
        let n_pos = data.n_pos.or(cfg.n_pos).unwrap_or(64);
        let n_neg = data.n_neg.or(cfg.n_neg).unwrap_or(128);
        return Ok(generate_synthetic_dataset_with(&SynthConfig::for_glyph(glyph), seed, n_pos, n_neg));
    }
    let Some(images) = images else {
        bail!("no data: pass --synthetic or --stl10-images/--stl10-labels");
    };
    let labels = required(data.stl10_labels.clone(), cfg.stl10_labels.clone(), "stl10_labels")?;
    let positive = required(data.positive_class, cfg.positive_class, "positive_class")?;
    let classes = data
        .stl10_classes
        .clone()
        .or(cfg.stl10_classes.clone())
        .unwrap_or_else(|| (1..=10).collect());
    Ok(load_stl10_split(images, labels, &classes, positive)?)
}

fn train_cmd(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let samples = load_samples(&a.data, cfg)?;
    let report = validate_lemma_requirements(&samples, DEFAULT_MIN_RATIO);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let defaults = N2OConfig::default();
    let n2o = N2OConfig {
        lambda: a.lambda.or(cfg.lambda).unwrap_or(defaults.lambda),
        lr: a.lr.or(cfg.lr).unwrap_or(defaults.lr),
        momentum: a.momentum.or(cfg.momentum).unwrap_or(defaults.momentum),
        epochs: a.epochs.or(cfg.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(cfg.batch_size).unwrap_or(defaults.batch_size),
        seed: a.data.seed.or(cfg.seed).unwrap_or(defaults.seed),
    };
    let out = required(a.out, cfg.out.clone(), "out")?;
    let log_path = a.log.or(cfg.log.clone()).unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut trainer = Trainer::new(DisCnn::new(n2o.seed), n2o)?;
    let mut log = String::new();
    trainer.fit(
        &samples,
        |m| {
            let line = m.log_line();
            eprintln!("{line}");
            log.push_str(&line);
            log.push('\n');
        },
        |_| false,
    )?;
    save_model(&trainer.model, &out)?;
    fs::write(&log_path, log).with_context(|| format!("cannot write {}", log_path.display()))?;
    Ok(())
}

const BOX_COLORS: [Rgb; 6] = [[0, 255, 0], [255, 0, 255], [0, 200, 255], [255, 160, 0], [255, 255, 0], [255, 0, 0]];

fn detect_cmd(a: DetectArgs, cfg: &RunConfig) -> Result<()> {
    let model_path = required(a.model, cfg.model.clone(), "model")?;
    let image_path = required(a.image, cfg.image.clone(), "image")?;
    let dc = a.detect.flags().resolve(cfg)?;
    let model = load_model(&model_path)?;
    let image = load_image(&image_path)?;
    let net = InferenceNet::new(&model)?;
    let workers = a.workers.or(cfg.workers).unwrap_or(1);
    let detection = detect_with_net(&image, &net, &dc, workers)?;
    let doc = DetectionDocument::new(image_id(&image_path), &dc, &detection);
    write_json(&doc, a.json.or(cfg.json.clone()).as_deref())?;
    if let Some(p) = a.annotated.or(cfg.annotated.clone()) {
        save_image(&draw_boxes(&image, &detection.boxes(), BOX_COLORS[0], 2), p)?;
    }
    Ok(())
}

fn multi_cmd(a: MultiArgs, cfg: &RunConfig) -> Result<()> {
    let image_path = required(a.image, cfg.image.clone(), "image")?;
    let file = RegistryFile::load(&a.registry)?;
    let mut registry = ClassRegistry::new();
    for c in &file.classes {
        registry
            .register(&c.name, &c.checkpoint, c.detect_config()?)
            .with_context(|| format!("class {:?}", c.name))?;
    }
    let image = load_image(&image_path)?;
    let results = detect_multi(&image, &registry, a.parallelism)?;
    let doc = multi_document(&image_id(&image_path), &registry, &results);
    write_json(&doc, a.json.or(cfg.json.clone()).as_deref())?;
    for (name, r) in &results {
        if let Err(e) = r {
            eprintln!("error: class {name:?}: {e}");
        }
    }
    if let Some(p) = a.annotated.or(cfg.annotated.clone()) {
        let mut out = image.clone();
        for (i, r) in results.values().enumerate() {
            if let Ok(d) = r {
                out = draw_boxes(&out, &d.boxes(), BOX_COLORS[i % BOX_COLORS.len()], 2);
            }
        }
        save_image(&out, p)?;
    }
    if results.values().any(Result::is_err) {
        bail!("{} of {} classes failed", results.values().filter(|r| r.is_err()).count(), results.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct InspectStrip {
    sws: usize,
    strip: String,
    modules: Vec<f32>,
    boxes: Vec<[i64; 4]>,
}

fn inspect_cmd(a: InspectArgs, cfg: &RunConfig) -> Result<()> {
    let model_path = required(a.model, cfg.model.clone(), "model")?;
    let image_path = required(a.image, cfg.image.clone(), "image")?;
    let model = load_model(&model_path)?;
    let image = load_image(&image_path)?;
    let div = Divisors {
        stride_div: a.stride_div.or(cfg.stride_div).unwrap_or(Divisors::default().stride_div),
        ..Divisors::default()
    };
    for &s in &a.sws {
        if s == 0 || s > image.width().min(image.height()) {
            bail!("window size {s} does not fit the {}x{} image", image.width(), image.height());
        }
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let cap = cfg.batch_cap.unwrap_or(DEFAULT_BATCH_CAP);
    let mut strips = Vec::new();
    for (sws, records) in inspect(&image, &model, &a.sws, div, cap)? {
        let top = &records[..a.top.min(records.len())];
        let name = format!("inspect_sws{sws}.png");
        save_image(&render_strip(&image, top, a.tile.max(1))?, a.out_dir.join(&name))?;
        strips.push(InspectStrip {
            sws,
            strip: name,
            modules: top.iter().map(|r| r.module).collect(),
            boxes: top.iter().map(|r| r.bbox().as_array()).collect(),
        });
    }
    write_json(&strips, Some(&a.out_dir.join("inspect.json")))
}

/// One entry of a scene directory's `ground_truth.json`.
#[derive(Serialize, Deserialize)]
struct SceneTruth {
    image: String,
    boxes: Vec<[i64; 4]>,
}

#[derive(Serialize)]
struct SceneResult {
    image: String,
    ground_truth: usize,
    clusters: usize,
    best_iou: Vec<f64>,
    hit: bool,
}

#[derive(Serialize)]
struct EvalReport {
    scenes: Vec<SceneResult>,
    hits: usize,
    hit_rate: f64,
    mean_best_iou: Option<f64>,
}

fn eval_cmd(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let model_path = required(a.model, cfg.model.clone(), "model")?;
    let dc = a.detect.flags().resolve(cfg)?;
    let net = InferenceNet::new(&load_model(&model_path)?)?;
    let gt_path = a.scenes.join("ground_truth.json");
    let text = fs::read_to_string(&gt_path).with_context(|| format!("cannot read {}", gt_path.display()))?;
    let truth: Vec<SceneTruth> =
        serde_json::from_str(&text).with_context(|| format!("invalid {}", gt_path.display()))?;
    let mut scenes = Vec::with_capacity(truth.len());
    println!("{:<24} {:>3} {:>9} {:>9} {:>4}", "scene", "gt", "clusters", "best_iou", "hit");
    for t in &truth {
        let image = load_image(a.scenes.join(&t.image))?;
        let d = detect_with_net(&image, &net, &dc, cfg.workers.unwrap_or(1))?;
        let boxes = d.boxes();
        let best: Vec<f64> = t
            .boxes
            .iter()
            .map(|g| {
                let g = BBox { xmin: g[0], ymin: g[1], xmax: g[2], ymax: g[3] };
                boxes.iter().map(|b| b.iou(&g)).fold(0.0, f64::max)
            })
            .collect();
        // a hit needs one cluster per planted glyph, each matched; blank scenes need none
        let hit = boxes.len() == t.boxes.len() && best.iter().all(|&v| v >= a.iou);
        let shown = best.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        println!(
            "{:<24} {:>3} {:>9} {:>9} {:>4}",
            t.image,
            t.boxes.len(),
            boxes.len(),
            shown.map_or("-".to_string(), |v| format!("{v:.3}")),
            if hit { "yes" } else { "no" }
        );
        scenes.push(SceneResult {
            image: t.image.clone(),
            ground_truth: t.boxes.len(),
            clusters: boxes.len(),
            best_iou: best,
            hit,
        });
    }
    let hits = scenes.iter().filter(|s| s.hit).count();
    let ious: Vec<f64> = scenes.iter().flat_map(|s| s.best_iou.iter().copied()).collect();
    let report = EvalReport {
        hit_rate: if scenes.is_empty() { 0.0 } else { hits as f64 / scenes.len() as f64 },
        hits,
        mean_best_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        scenes,
    };
    println!("hit_rate {}/{}", report.hits, report.scenes.len());
    if let Some(p) = a.json.or(cfg.json.clone()) {
        write_json(&report, Some(&p))?;
    }
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs, cfg: &RunConfig) -> Result<()> {
    let model_path = required(a.model, cfg.model.clone(), "model")?;
    let samples = load_samples(&a.data, cfg)?;
    let c = calibrate_threshold(&load_model(&model_path)?, &samples)?;
    match a.json.or(cfg.json.clone()) {
        Some(p) => {
            write_json(&c, Some(&p))?;
            println!("{}", c.thr);
        }
        None => write_json(&c, None)?,
    }
    Ok(())
}

fn scenes_cmd(a: ScenesArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut truth = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let bbox = random_plant_box(a.size, a.size, a.glyph_size, &mut rng)?;
        let mut spec = SceneSpec::single(a.size, a.size, a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), a.glyph, bbox);
        spec.distractors = a.distractors;
        if a.blank {
            spec.plants.clear();
        }
        let (image, boxes) = make_scene(&spec)?;
        let name = format!("scene_{i:03}.ppm");
        save_image(&image, a.out_dir.join(&name))?;
        truth.push(SceneTruth {
            image: name,
            boxes: boxes.iter().map(BBox::as_array).collect(),
        });
    }
    write_json(&truth, Some(&a.out_dir.join("ground_truth.json")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Detect(a) => detect_cmd(a, &cfg),
        Command::DetectMulti(a) => multi_cmd(a, &cfg),
        Command::Inspect(a) => inspect_cmd(a, &cfg),
        Command::Eval(a) => eval_cmd(a, &cfg),
        Command::CalibrateThreshold(a) => calibrate_cmd(a, &cfg),
        Command::SynthScenes(a) => scenes_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
