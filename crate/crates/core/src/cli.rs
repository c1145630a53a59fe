//! Command-line front end.
//!
//! Every subcommand reads an optional `key = value` configuration file and
//! accepts one flag per configuration key (`lambda_wd` becomes
//! `--lambda-wd`); flags override the file. Exit codes: 0 success, 2 usage
//! or configuration error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::classify::classify;
use crate::config::{FeatureMode, PipelineConfig, KEYS};
use crate::data::{evaluate, generate_synthetic, load_corpus, parse_manifest, sanitize, write_corpus, SynthSpec};
use crate::error::{DdmError, Result};
use crate::format::{write_file, DictionaryFile, FeatureMeta, ModelFile, SequenceFile};
use crate::pipeline::{pretrain, train_classes, Featurizer, FrameScaler};
use crate::scsp::ScspSequence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &DdmError) -> i32 {
    match e {
        DdmError::Config(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("ddm")
        .about("Video classification with per-class deep autoencoders over sparse spatiotemporal codes")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("configuration file of key = value lines"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(value_parser!(usize))
                .help("cap on worker threads (default: all cores)"),
        )
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("only log warnings and errors"),
        );
    for &key in KEYS {
        cmd = cmd.arg(
            Arg::new(key)
                .long(flag(key))
                .global(true)
                .value_name("VALUE")
                .help_heading("Configuration overrides"),
        );
    }
    cmd.subcommand(
        Command::new("synth")
            .about("write a synthetic drifting-grating corpus and its manifest")
            .arg(Arg::new("out").long("out").required(true).value_parser(value_parser!(PathBuf)))
            .arg(Arg::new("classes").long("classes").default_value("3").value_parser(value_parser!(u32)))
            .arg(Arg::new("per-class").long("per-class").default_value("10").value_parser(value_parser!(usize)))
            .arg(Arg::new("frames").long("frames").default_value("30").value_parser(value_parser!(usize)))
            .arg(Arg::new("height").long("height").default_value("24").value_parser(value_parser!(usize)))
            .arg(Arg::new("width").long("width").default_value("24").value_parser(value_parser!(usize)))
            .arg(Arg::new("noise").long("noise").default_value("0.03").value_parser(value_parser!(f64))),
    )
    .subcommand(
        Command::new("extract")
            .about("build the dictionary and write one feature file per manifest video, or code one query video")
            .arg(
                Arg::new("query")
                    .long("query")
                    .value_parser(value_parser!(PathBuf))
                    .requires("out")
                    .help("code a single video against the dictionary in feature_dir"),
            )
            .arg(Arg::new("out").long("out").value_parser(value_parser!(PathBuf))),
    )
    .subcommand(Command::new("pretrain").about("fit the frame scaler and pre-train the GRBM stack on extracted features"))
    .subcommand(Command::new("train").about("fine-tune one autoencoder per class and write the model file"))
    .subcommand(
        Command::new("classify")
            .about("classify a query feature file with a trained model")
            .arg(Arg::new("query").long("query").required(true).value_parser(value_parser!(PathBuf))),
    )
    .subcommand(Command::new("evaluate").about("run leave-one-out or split evaluation from raw videos"))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if matches.get_flag("quiet") { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(&n) = matches.get_one::<usize>("threads") {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(&matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    match m.subcommand() {
        Some(("synth", sub)) => cmd_synth(&cfg, sub),
        Some(("extract", sub)) => match sub.get_one::<PathBuf>("query") {
            Some(q) => cmd_extract_query(&cfg, q, sub.get_one::<PathBuf>("out").expect("required by clap")),
            None => cmd_extract(&cfg),
        },
        Some(("pretrain", _)) => cmd_pretrain(&cfg),
        Some(("train", _)) => cmd_train(&cfg),
        Some(("classify", sub)) => cmd_classify(&cfg, sub.get_one::<PathBuf>("query").expect("required by clap")),
        Some(("evaluate", _)) => cmd_evaluate(&cfg),
        _ => Err(DdmError::Config("unknown subcommand".into())),
    }
}

/// Defaults, then the configuration file, then command-line flags.
pub fn load_config(m: &ArgMatches) -> Result<PipelineConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| DdmError::Config(format!("cannot read configuration {}: {e}", path.display())))?;
            PipelineConfig::from_text(&text)?
        }
        None => PipelineConfig::default(),
    };
    for &key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| DdmError::Config(format!("{key} is not set (use --{} or the configuration file)", flag(key))))
}

fn existing_manifest(value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = required(value, key)?;
    if !path.is_file() {
        return Err(DdmError::Config(format!("{key} {} does not exist", path.display())));
    }
    Ok(path.to_path_buf())
}

fn comment_header(cfg: &BTreeMap<String, String>) -> String {
    cfg.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}

fn cmd_synth(cfg: &PipelineConfig, m: &ArgMatches) -> Result<()> {
    let spec = SynthSpec {
        classes: *m.get_one("classes").expect("default"),
        per_class: *m.get_one("per-class").expect("default"),
        frames: *m.get_one("frames").expect("default"),
        height: *m.get_one("height").expect("default"),
        width: *m.get_one("width").expect("default"),
        noise: *m.get_one("noise").expect("default"),
        seed: cfg.seed,
    };
    let corpus = generate_synthetic(&spec)?;
    let header: BTreeMap<String, String> = [
        ("classes", spec.classes.to_string()),
        ("per_class", spec.per_class.to_string()),
        ("frames", spec.frames.to_string()),
        ("height", spec.height.to_string()),
        ("width", spec.width.to_string()),
        ("noise", spec.noise.to_string()),
        ("seed", spec.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let out = m.get_one::<PathBuf>("out").expect("required by clap");
    let manifest = write_corpus(out, &corpus, &header)?;
    println!("wrote {} videos; manifest {}", corpus.len(), manifest.display());
    Ok(())
}

const FEATURE_INDEX: &str = "features.tsv";
const DICTIONARY_FILE: &str = "dictionary.scspft";

fn feature_meta(cfg: &PipelineConfig, featurizer: &Featurizer) -> FeatureMeta {
    FeatureMeta {
        features: cfg.features,
        block: cfg.block,
        lambda: cfg.lambda,
        segment_len: cfg.segment_len(),
        dictionary_sources: featurizer
            .dictionary()
            .map(|d| {
                let mut v: Vec<String> = d.sources().iter().map(|s| s.video.clone()).collect();
                v.dedup();
                v
            })
            .unwrap_or_default(),
        config: cfg.echo(),
    }
}

fn cmd_extract(cfg: &PipelineConfig) -> Result<()> {
    let manifest = existing_manifest(&cfg.manifest, "manifest")?;
    let dir = required(&cfg.feature_dir, "feature_dir")?;
    let corpus = load_corpus(&manifest)?;
    let samples = corpus.samples();
    let featurizer = Featurizer::fit(&samples, cfg)?;
    let meta = feature_meta(cfg, &featurizer);
    if let Some(d) = featurizer.dictionary() {
        DictionaryFile { dictionary: d.clone(), meta: meta.clone() }.write(&dir.join(DICTIONARY_FILE))?;
    }
    use rayon::prelude::*;
    let seqs: Vec<ScspSequence> = samples
        .par_iter()
        .map(|s| featurizer.frames(s.video, s.id, true))
        .collect::<Result<_>>()?;
    let header = comment_header(&cfg.echo());
    let mut index = header.clone();
    let mut embeddings = header;
    embeddings.push_str("id,label");
    let width = seqs.iter().map(|s| s.len() * s.frame_len()).max().unwrap_or(0);
    for i in 0..width {
        let _ = write!(embeddings, ",x{i}");
    }
    embeddings.push('\n');
    for (s, seq) in samples.iter().zip(&seqs) {
        let name = format!("{}.scspft", sanitize(s.id));
        SequenceFile { sequence: seq.clone(), label: Some(s.label), meta: meta.clone() }.write(&dir.join(&name))?;
        let _ = writeln!(index, "{name}\t{}", s.label);
        let _ = write!(embeddings, "{},{}", s.id, s.label);
        for v in seq.flatten() {
            let _ = write!(embeddings, ",{v}");
        }
        embeddings.push('\n');
    }
    write_file(&dir.join(FEATURE_INDEX), index.as_bytes())?;
    write_file(&dir.join("embeddings.csv"), embeddings.as_bytes())?;
    println!("wrote {} feature files to {}", seqs.len(), dir.display());
    Ok(())
}

fn cmd_extract_query(cfg: &PipelineConfig, video: &Path, out: &Path) -> Result<()> {
    let v = crate::format::read_rvt(video)?;
    let id = video.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let featurizer = match cfg.features {
        FeatureMode::Scsp => {
            let dir = required(&cfg.feature_dir, "feature_dir")?;
            let file = DictionaryFile::read(&dir.join(DICTIONARY_FILE))?;
            Featurizer::Scsp { dictionary: file.dictionary, lambda: cfg.lambda }
        }
        FeatureMode::Raw => Featurizer::Raw { spec: cfg.block },
    };
    let seq = featurizer.frames(&v, &id, false)?;
    SequenceFile { sequence: seq, label: None, meta: feature_meta(cfg, &featurizer) }.write(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Training sequences listed in the feature directory's index.
fn load_features(cfg: &PipelineConfig) -> Result<Vec<(ScspSequence, u32)>> {
    let dir = required(&cfg.feature_dir, "feature_dir")?;
    let index = dir.join(FEATURE_INDEX);
    let text = std::fs::read_to_string(&index).map_err(|e| DdmError::io(&index, e))?;
    let entries = parse_manifest(&text, &index)?;
    if entries.is_empty() {
        return Err(DdmError::Data(format!("{} lists no feature files", index.display())));
    }
    entries
        .iter()
        .map(|e| {
            let f = SequenceFile::read(&dir.join(&e.path))?;
            if f.meta.features != cfg.features {
                return Err(DdmError::Config(format!(
                    "{} holds {} features but features = {}",
                    e.path, f.meta.features, cfg.features
                )));
            }
            Ok((f.sequence, e.label))
        })
        .collect()
}

fn pretrained_path(cfg: &PipelineConfig) -> Result<PathBuf> {
    match &cfg.pretrained {
        Some(p) => Ok(p.clone()),
        None => Ok(required(&cfg.feature_dir, "feature_dir")?.join("pretrained.ddm")),
    }
}

fn fit_stack(cfg: &PipelineConfig, labeled: &[(ScspSequence, u32)]) -> Result<ModelFile> {
    let seqs: Vec<&ScspSequence> = labeled.iter().map(|(s, _)| s).collect();
    let scaler = FrameScaler::fit(seqs.iter().copied())?;
    let scaled: Vec<ScspSequence> = seqs.iter().map(|s| scaler.apply(s)).collect();
    let (stack, _) = pretrain(&scaled, cfg)?;
    Ok(ModelFile {
        features: cfg.features,
        scaler,
        stack,
        models: Vec::new(),
        seed: cfg.seed,
        config: cfg.echo(),
    })
}

fn cmd_pretrain(cfg: &PipelineConfig) -> Result<()> {
    let labeled = load_features(cfg)?;
    let file = fit_stack(cfg, &labeled)?;
    let out = pretrained_path(cfg)?;
    file.write(&out)?;
    println!("wrote pre-trained stack {:?} to {}", file.sizes(), out.display());
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let out = required(&cfg.model, "model")?.to_path_buf();
    let labeled = load_features(cfg)?;
    let path = pretrained_path(cfg)?;
    let base = if path.is_file() {
        log::info!("using pre-trained stack {}", path.display());
        ModelFile::read(&path)?
    } else {
        log::info!("no pre-trained stack at {}; pre-training now", path.display());
        fit_stack(cfg, &labeled)?
    };
    let scaled: Vec<(ScspSequence, u32)> = labeled.iter().map(|(s, l)| (base.scaler.apply(s), *l)).collect();
    let models = train_classes(&scaled, &base.stack, cfg)?;
    for m in &models {
        log::info!("class {}: final cost {:.6} after {} epochs", m.label, m.final_cost, m.epochs_run);
    }
    let file = ModelFile { models, config: cfg.echo(), seed: cfg.seed, ..base };
    file.write(&out)?;
    println!("wrote {} class models to {}", file.models.len(), out.display());
    Ok(())
}

fn cmd_classify(cfg: &PipelineConfig, query: &Path) -> Result<()> {
    let model = ModelFile::read(required(&cfg.model, "model")?)?;
    if model.models.is_empty() {
        return Err(DdmError::Data("model file holds a pre-trained stack but no class models".into()));
    }
    let q = SequenceFile::read(query)?;
    if q.meta.features != model.features {
        return Err(DdmError::Data(format!(
            "query holds {} features but the model was trained on {} features",
            q.meta.features, model.features
        )));
    }
    let report = classify(&model.scaler.apply(&q.sequence), &model.models)?;
    print!("{}", report.to_table());
    if let Some(path) = &cfg.report {
        let doc = serde_json::json!({ "config": cfg.echo(), "report": report });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| DdmError::Data(e.to_string()))?;
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

/// `report.json` → `report.confusion.csv`.
pub fn confusion_path(report: &Path) -> PathBuf {
    report.with_extension("confusion.csv")
}

fn cmd_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let manifest = existing_manifest(&cfg.manifest, "manifest")?;
    let corpus = load_corpus(&manifest)?;
    let test = match &cfg.test_manifest {
        Some(_) => Some(load_corpus(&existing_manifest(&cfg.test_manifest, "test_manifest")?)?),
        None => None,
    };
    let result = evaluate(&corpus, test.as_ref(), cfg)?;
    println!(
        "{} over {} queries: accuracy {:.4}, mAP {:.4}, seed {}",
        result.protocol,
        result.predictions.len(),
        result.accuracy,
        result.map,
        result.seed
    );
    print!("{}", result.confusion_csv());
    if let Some(path) = &cfg.report {
        write_file(path, result.to_json()?.as_bytes())?;
        let mut csv = comment_header(&cfg.echo());
        csv.push_str(&result.confusion_csv());
        write_file(&confusion_path(path), csv.as_bytes())?;
    }
    Ok(())
}
