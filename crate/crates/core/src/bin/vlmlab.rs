//! Operator surface: corpus generation, training, decoding, hallucination
//! evaluation, attention dumps, and report rendering. One subcommand per run;
//! every run serializes its resolved configuration into the output directory.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use vlmlab::data::{self, Corpus, CorpusConfig, Vocabulary};
use vlmlab::decoding::{generate, DecodeConfig, TraceStep};
use vlmlab::error::Error;
use vlmlab::eval::{
    answer_pope_all, build_pope, chair, chair_table, eval_pope, pope_table, ChairCaption,
    PopeStrategy,
};
use vlmlab::feedback::{train, train_items, FeedbackConfig, TrainOptions};
use vlmlab::judge::{MockJudge, RemoteConfig, RemoteJudge, SentenceJudge};
use vlmlab::model::{Model, ModelConfig};
use vlmlab::numerics::{checkpoint, AdamWConfig, LrSchedule, OptimState};
use vlmlab::Result;

#[derive(Parser)]
#[command(name = "vlmlab", about = "visual-prefix language model hallucination lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic biased corpus
    GenData(GenDataArgs),
    /// Train with cross-entropy and hierarchical feedback
    Train(TrainArgs),
    /// Decode captions for a corpus split
    Decode(DecodeArgs),
    /// Compute hallucination ratios over generated captions
    EvalChair(EvalChairArgs),
    /// Build, answer, and score a yes/no object polling benchmark
    EvalPope(EvalPopeArgs),
    /// Dump attention matrices as labeled CSV (and optional PPM images)
    AttnDump(AttnDumpArgs),
    /// Re-render stored metric JSON as tables
    Report(ReportArgs),
}

/// Fully resolved run configuration, written into the output directory so
/// every run is reproducible from the serialized copy.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct RunConfig {
    command: String,
    seed: u64,
    model: Option<ModelConfig>,
    data: Option<CorpusConfig>,
    feedback: Option<FeedbackConfig>,
    decode: Option<DecodeConfig>,
    judge: Option<String>,
    flags: serde_json::Value,
}

fn write_run_config(out_dir: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("run_config.json");
    fs::write(&path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// Load a TOML or JSON config file into a serde-deserializable value.
fn load_config_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(Error::Serde)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// training scene count
    #[arg(long)]
    scenes: Option<usize>,
    /// heldout (broken-pair) scene count
    #[arg(long)]
    heldout: Option<usize>,
    /// TOML or JSON file with the full corpus config (bias pairs etc.)
    #[arg(long)]
    bias_config: Option<PathBuf>,
    #[arg(long, default_value = "runs/data")]
    out_dir: PathBuf,
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut config: CorpusConfig = match &args.bias_config {
        Some(path) => load_config_file(path)?,
        None => CorpusConfig::default(),
    };
    if let Some(n) = args.scenes {
        config.n_scenes = n;
    }
    if let Some(n) = args.heldout {
        config.heldout_scenes = n;
    }
    let corpus = data::gen_corpus(args.seed, &config)?;
    fs::create_dir_all(&args.out_dir)?;
    corpus.vocab.save(&args.out_dir.join("vocab.json"))?;
    data::save_scenes(&corpus.scenes, &args.out_dir.join("scenes.jsonl"))?;
    data::save_jsonl(&corpus.records, &args.out_dir.join("records.jsonl"))?;
    write_run_config(
        &args.out_dir,
        &RunConfig {
            command: "gen-data".into(),
            seed: args.seed,
            data: Some(config),
            ..Default::default()
        },
    )?;
    println!(
        "wrote {} scenes, {} records to {}",
        corpus.scenes.len(),
        corpus.records.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn load_corpus(data_dir: &Path) -> Result<Corpus> {
    Ok(Corpus {
        vocab: Vocabulary::load(&data_dir.join("vocab.json"))?,
        scenes: data::load_scenes(&data_dir.join("scenes.jsonl"))?,
        records: data::load_jsonl(&data_dir.join("records.jsonl"))?,
    })
}

fn save_model(model: &Model, out_dir: &Path) -> Result<()> {
    checkpoint::save(&model.params, model.dtype, &out_dir.join("model.ckpt"))?;
    fs::write(out_dir.join("model_config.json"), serde_json::to_string_pretty(&model.config)?)?;
    Ok(())
}

fn load_model(dir: &Path) -> Result<Model> {
    let config: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join("model_config.json"))?)?;
    let (params, dtype) = checkpoint::load(&dir.join("model.ckpt"))?;
    Ok(Model { config, params, dtype })
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON file with model/feedback/train sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs/train")]
    out_dir: PathBuf,
    #[arg(long)]
    total_steps: Option<u64>,
    /// CE-only phase fraction
    #[arg(long)]
    c: Option<f64>,
    /// sentence-vs-object reward mix
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value = "mock", value_parser = ["mock", "remote"])]
    judge: String,
    #[arg(long)]
    feedback_interval: Option<u64>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    peak_lr: f64,
    #[arg(long, default_value_t = 0.03)]
    warmup_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// continue from an earlier checkpoint directory instead of fresh init
    #[arg(long)]
    init_from: Option<PathBuf>,
}

/// Optional config file sections for `train`; flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct TrainFileConfig {
    model: Option<ModelConfig>,
    feedback: Option<FeedbackConfig>,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file: TrainFileConfig = match &args.config {
        Some(path) => load_config_file(path)?,
        None => TrainFileConfig::default(),
    };
    let corpus = load_corpus(&args.data_dir)?;
    let vocab = &corpus.vocab;

    let mut feedback = file.feedback.unwrap_or_default();
    if let Some(v) = args.total_steps {
        feedback.total_steps = v;
    }
    if let Some(v) = args.c {
        feedback.c = v;
    }
    if let Some(v) = args.sigma {
        feedback.sigma = v;
    }
    if let Some(v) = args.feedback_interval {
        feedback.feedback_interval = v;
    }
    feedback.seed = args.seed;
    feedback.validate()?;

    let mut model = match &args.init_from {
        Some(dir) => load_model(dir)?,
        None => {
            let mut mc = file.model.unwrap_or_default();
            mc.vocab_size = vocab.len();
            mc.n_objects = vocab.objects.len();
            Model::init(mc, args.seed)?
        }
    };

    let items = train_items(&corpus, vocab, "train");
    let schedule = LrSchedule::new(args.peak_lr, args.warmup_ratio, feedback.total_steps)?;
    let mut optim = OptimState::new(AdamWConfig { lr: args.peak_lr, ..Default::default() });

    fs::create_dir_all(&args.out_dir)?;
    let mut log = fs::File::create(args.out_dir.join("train_log.jsonl"))?;

    let judge: Box<dyn SentenceJudge> = match args.judge.as_str() {
        "remote" => Box::new(RemoteJudge::new(RemoteConfig::from_env()?)),
        _ => Box::new(MockJudge::new(vocab.lexicon.clone())),
    };

    write_run_config(
        &args.out_dir,
        &RunConfig {
            command: "train".into(),
            seed: args.seed,
            model: Some(model.config.clone()),
            feedback: Some(feedback.clone()),
            judge: Some(args.judge.clone()),
            flags: serde_json::json!({
                "data_dir": args.data_dir,
                "batch_size": args.batch_size,
                "peak_lr": args.peak_lr,
                "warmup_ratio": args.warmup_ratio,
                "init_from": args.init_from,
            }),
            ..Default::default()
        },
    )?;

    let reports = train(
        &mut model,
        vocab,
        &items,
        judge.as_ref(),
        &feedback,
        &schedule,
        &mut optim,
        &TrainOptions { batch_size: args.batch_size, shuffle_seed: args.seed },
        Some(&mut log),
    )?;
    save_model(&model, &args.out_dir)?;
    let last = reports.last().unwrap();
    println!(
        "trained {} steps ({} items); final l_ce {:.4}, checkpoint in {}",
        reports.len(),
        items.len(),
        last.l_ce,
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value = "runs/train")]
    checkpoint_dir: PathBuf,
    #[arg(long, default_value = "runs/data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs/decode")]
    out_dir: PathBuf,
    #[arg(long, default_value = "beam", value_parser = ["greedy", "beam", "nucleus", "overtrust", "vep"])]
    strategy: String,
    #[arg(long)]
    beam_width: Option<usize>,
    /// attention magnification applied before penalty products
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long, default_value = "heldout")]
    split: String,
    /// prompt text prepended after bos; the default steers caption mode
    #[arg(long, default_value = "a")]
    prompt: String,
    /// cap on the number of scenes decoded
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Penalty trace line tagged with the scene it came from.
#[derive(Serialize)]
struct TraceLine<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    step: &'a TraceStep,
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let corpus = load_corpus(&args.data_dir)?;
    let model = load_model(&args.checkpoint_dir)?;
    let mut config = DecodeConfig::preset(&args.strategy)?;
    if let Some(w) = args.beam_width {
        config.beam_width = w;
    }
    if let Some(g) = args.gamma {
        config.gamma_scale = g;
    }
    if let Some(m) = args.max_new_tokens {
        config.max_new_tokens = m;
    }
    config.seed = args.seed;
    config.validate()?;

    let vocab = &corpus.vocab;
    let mut scenes: Vec<_> = corpus.scenes.iter().filter(|s| s.group == args.split).collect();
    if scenes.is_empty() {
        return Err(Error::InvalidArgument(format!("no scenes in split {}", args.split)));
    }
    if let Some(limit) = args.limit {
        scenes.truncate(limit);
    }

    let mut prompt_tokens = vec![vocab.bos()];
    prompt_tokens.extend(vocab.tokenize(&args.prompt));
    let decode_one = |scene: &data::Scene| -> Result<(String, String, usize, Vec<TraceStep>)> {
        let out = generate(&model, &scene.object_ids(vocab), &prompt_tokens, vocab.eos(), &config)?;
        let text = format!("{} {}", args.prompt, vocab.detokenize(&out.tokens));
        Ok((scene.id.clone(), text.trim().to_string(), out.tokens.len(), out.trace))
    };
    let results: Vec<(String, String, usize, Vec<TraceStep>)> = if args.jobs <= 1 {
        scenes.iter().map(|s| decode_one(s)).collect::<Result<_>>()?
    } else {
        let chunk = scenes.len().div_ceil(args.jobs).max(1);
        let mut out = Vec::with_capacity(scenes.len());
        std::thread::scope(|scope| -> Result<()> {
            let decode_one = &decode_one;
            let mut handles = Vec::new();
            for part in scenes.chunks(chunk) {
                handles.push(scope.spawn(move || part.iter().map(|s| decode_one(s)).collect::<Result<Vec<_>>>()));
            }
            for h in handles {
                out.extend(h.join().expect("decode worker panicked")?);
            }
            Ok(())
        })?;
        out
    };

    fs::create_dir_all(&args.out_dir)?;
    let mut captions = fs::File::create(args.out_dir.join("captions.jsonl"))?;
    let mut traces = fs::File::create(args.out_dir.join("penalty_trace.jsonl"))?;
    for (image_id, caption, gen_len, trace) in &results {
        serde_json::to_writer(
            &mut captions,
            &ChairCaption { image_id: image_id.clone(), caption: caption.clone(), gen_len: *gen_len },
        )?;
        writeln!(captions)?;
        for step in trace {
            serde_json::to_writer(&mut traces, &TraceLine { image_id, step })?;
            writeln!(traces)?;
        }
    }
    write_run_config(
        &args.out_dir,
        &RunConfig {
            command: "decode".into(),
            seed: args.seed,
            decode: Some(config),
            flags: serde_json::json!({
                "checkpoint_dir": args.checkpoint_dir,
                "data_dir": args.data_dir,
                "split": args.split,
                "limit": args.limit,
                "jobs": args.jobs,
                "strategy": args.strategy,
            }),
            ..Default::default()
        },
    )?;
    println!("decoded {} scenes into {}", results.len(), args.out_dir.display());
    Ok(())
}

#[derive(Args)]
struct EvalChairArgs {
    /// captions JSONL produced by `decode`
    #[arg(long)]
    captions: PathBuf,
    /// scenes JSONL with ground-truth annotations
    #[arg(long)]
    annotations: PathBuf,
    /// directory holding vocab.json
    #[arg(long, default_value = "runs/data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs/eval")]
    out_dir: PathBuf,
    #[arg(long, default_value = "table", value_parser = ["json", "table"])]
    format: String,
}

fn read_caption_file(path: &Path) -> Result<Vec<ChairCaption>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

fn cmd_eval_chair(args: &EvalChairArgs) -> Result<()> {
    let vocab = Vocabulary::load(&args.data_dir.join("vocab.json"))?;
    let captions = read_caption_file(&args.captions)?;
    let scenes = data::load_scenes(&args.annotations)?;
    let annotations: HashMap<String, std::collections::BTreeSet<usize>> = scenes
        .iter()
        .map(|s| (s.id.clone(), s.object_ids(&vocab).into_iter().collect()))
        .collect();
    let report = chair(&captions, &annotations, &vocab.lexicon)?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("chair.json"), serde_json::to_string_pretty(&report)?)?;
    match args.format.as_str() {
        "json" => println!("{}", serde_json::to_string_pretty(&report)?),
        _ => print!("{}", chair_table(&report)),
    }
    Ok(())
}

#[derive(Args)]
struct EvalPopeArgs {
    #[arg(long, default_value = "runs/train")]
    checkpoint_dir: PathBuf,
    #[arg(long, default_value = "runs/data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs/pope")]
    out_dir: PathBuf,
    #[arg(long, default_value = "random", value_parser = ["random", "popular", "adversarial"])]
    strategy: String,
    #[arg(long, default_value_t = 6)]
    questions_per_image: usize,
    #[arg(long, default_value = "heldout")]
    split: String,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "table", value_parser = ["json", "table"])]
    format: String,
}

fn cmd_eval_pope(args: &EvalPopeArgs) -> Result<()> {
    let corpus = load_corpus(&args.data_dir)?;
    let model = load_model(&args.checkpoint_dir)?;
    let vocab = &corpus.vocab;
    let strategy: PopeStrategy = args.strategy.parse()?;
    let mut split_scenes: Vec<data::Scene> =
        corpus.scenes.iter().filter(|s| s.group == args.split).cloned().collect();
    if split_scenes.is_empty() {
        return Err(Error::InvalidArgument(format!("no scenes in split {}", args.split)));
    }
    if let Some(limit) = args.limit {
        split_scenes.truncate(limit);
    }
    let triples = build_pope(&split_scenes, vocab, strategy, args.questions_per_image, args.seed)?;
    let by_id: HashMap<String, Vec<usize>> =
        split_scenes.iter().map(|s| (s.id.clone(), s.object_ids(vocab))).collect();
    let answers = answer_pope_all(&model, vocab, &by_id, &triples, args.jobs)?;
    let predictions: Vec<bool> = answers.iter().map(|(p, _)| *p).collect();
    let mut report = eval_pope(&predictions, &triples)?;
    report.n_unmappable = answers.iter().filter(|(_, u)| *u).count();

    fs::create_dir_all(&args.out_dir)?;
    let mut qfile = fs::File::create(args.out_dir.join("pope_questions.jsonl"))?;
    for (t, (pred, _)) in triples.iter().zip(&answers) {
        let mut v = serde_json::to_value(t)?;
        v["predicted"] = serde_json::json!(pred);
        serde_json::to_writer(&mut qfile, &v)?;
        writeln!(qfile)?;
    }
    fs::write(args.out_dir.join("pope.json"), serde_json::to_string_pretty(&report)?)?;
    write_run_config(
        &args.out_dir,
        &RunConfig {
            command: "eval-pope".into(),
            seed: args.seed,
            flags: serde_json::json!({
                "checkpoint_dir": args.checkpoint_dir,
                "data_dir": args.data_dir,
                "strategy": args.strategy,
                "questions_per_image": args.questions_per_image,
                "split": args.split,
            }),
            ..Default::default()
        },
    )?;
    match args.format.as_str() {
        "json" => println!("{}", serde_json::to_string_pretty(&report)?),
        _ => print!("{}", pope_table(&report)),
    }
    Ok(())
}

#[derive(Args)]
struct AttnDumpArgs {
    #[arg(long, default_value = "runs/train")]
    checkpoint_dir: PathBuf,
    #[arg(long, default_value = "runs/data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs/attn")]
    out_dir: PathBuf,
    /// scene id; defaults to the first heldout scene
    #[arg(long)]
    scene: Option<String>,
    /// prompt text; defaults to the scene's first caption
    #[arg(long)]
    prompt: Option<String>,
    /// single layer to dump (default: all)
    #[arg(long)]
    layer: Option<usize>,
    /// single head to dump (default: all)
    #[arg(long)]
    head: Option<usize>,
    /// also write greyscale portable-pixmap renderings
    #[arg(long)]
    ppm: bool,
}

fn cmd_attn_dump(args: &AttnDumpArgs) -> Result<()> {
    let corpus = load_corpus(&args.data_dir)?;
    let model = load_model(&args.checkpoint_dir)?;
    let vocab = &corpus.vocab;
    let scene = match &args.scene {
        Some(id) => corpus
            .scene(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {id}")))?,
        None => corpus
            .scenes
            .iter()
            .find(|s| s.group == "heldout")
            .unwrap_or(&corpus.scenes[0]),
    };
    let prompt_text = match &args.prompt {
        Some(p) => p.clone(),
        None => corpus
            .records
            .iter()
            .find(|r| r.scene_id == scene.id)
            .map(|r| r.caption.clone())
            .unwrap_or_else(|| "a".into()),
    };
    let mut tokens = vec![vocab.bos()];
    tokens.extend(vocab.tokenize(&prompt_text));
    tokens.truncate(model.config.max_text_len);
    let (_, attn) = model.forward_frozen(&scene.object_ids(vocab), &tokens)?;

    let layers: Vec<usize> = match args.layer {
        Some(l) if l >= model.config.n_layers => {
            return Err(Error::InvalidArgument(format!(
                "layer {l} out of range (n_layers {})",
                model.config.n_layers
            )))
        }
        Some(l) => vec![l],
        None => (0..model.config.n_layers).collect(),
    };
    let heads: Vec<usize> = match args.head {
        Some(h) if h >= model.config.n_heads => {
            return Err(Error::InvalidArgument(format!(
                "head {h} out of range (n_heads {})",
                model.config.n_heads
            )))
        }
        Some(h) => vec![h],
        None => (0..model.config.n_heads).collect(),
    };

    fs::create_dir_all(&args.out_dir)?;
    let l = attn.prefix_len;
    for &layer in &layers {
        for &head in &heads {
            let matrix = &attn.layers[layer][head];
            let rows = matrix.rows();
            let cols = matrix.cols();
            let mut csv = String::new();
            let labels: Vec<String> = (0..cols)
                .map(|c| if c < l { format!("img_{c}") } else { format!("txt_{}", c - l) })
                .collect();
            csv.push_str(&format!("row,{}\n", labels.join(",")));
            for r in 0..rows {
                let cells: Vec<String> = matrix.row(r).iter().map(|v| format!("{v:.8}")).collect();
                csv.push_str(&format!("{},{}\n", labels[r], cells.join(",")));
            }
            let stem = format!("attn_l{layer}_h{head}");
            fs::write(args.out_dir.join(format!("{stem}.csv")), csv)?;
            if args.ppm {
                let max = matrix.data().iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
                let mut ppm = format!("P5\n{cols} {rows}\n255\n").into_bytes();
                ppm.extend(matrix.data().iter().map(|&v| ((v / max) * 255.0).round() as u8));
                fs::write(args.out_dir.join(format!("{stem}.ppm")), ppm)?;
            }
        }
    }
    write_run_config(
        &args.out_dir,
        &RunConfig {
            command: "attn-dump".into(),
            flags: serde_json::json!({
                "checkpoint_dir": args.checkpoint_dir,
                "scene": scene.id,
                "prompt": prompt_text,
                "layer": args.layer,
                "head": args.head,
            }),
            ..Default::default()
        },
    )?;
    println!("dumped {} matrices to {}", layers.len() * heads.len(), args.out_dir.display());
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// directory containing chair.json / pope.json, or a single metric file
    #[arg(long)]
    r#in: PathBuf,
    #[arg(long, default_value = "table", value_parser = ["json", "table"])]
    format: String,
}

fn render_metric_file(path: &Path, format: &str) -> Result<bool> {
    if !path.exists() {
        return Ok(false);
    }
    let text = fs::read_to_string(path)?;
    if format == "json" {
        println!("{}", text.trim_end());
        return Ok(true);
    }
    if let Ok(r) = serde_json::from_str::<vlmlab::eval::ChairReport>(&text) {
        print!("{}", chair_table(&r));
        return Ok(true);
    }
    if let Ok(r) = serde_json::from_str::<vlmlab::eval::PopeReport>(&text) {
        print!("{}", pope_table(&r));
        return Ok(true);
    }
    Err(Error::InvalidArgument(format!("{} is not a known metric file", path.display())))
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut shown = false;
    if args.r#in.is_dir() {
        for name in ["chair.json", "pope.json"] {
            shown |= render_metric_file(&args.r#in.join(name), &args.format)?;
        }
    } else {
        shown = render_metric_file(&args.r#in, &args.format)?;
    }
    if !shown {
        return Err(Error::InvalidArgument(format!("no metric files found in {}", args.r#in.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::EvalChair(a) => cmd_eval_chair(a),
        Command::EvalPope(a) => cmd_eval_pope(a),
        Command::AttnDump(a) => cmd_attn_dump(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::InvalidArgument(_) | Error::Malformed { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
