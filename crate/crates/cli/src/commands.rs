use std::io::{self, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::ExitCode;

use gramark::config::RunConfig;
use gramark::evalkit::{corpus_snippets, crop_attack, false_positive_count, prompt_suite, CropMode, Pipeline, SweepAxis, SweepPlan, SweepReport};
use gramark::lmsource::{serve, LogitEncoding, TokenizerKind};
use gramark::{
    build_type_map, decode_message, extract_parallel, generate, train_predictor, ExtractMode, ExtractParams, LexTokenType,
    Lexer, NgramConfig, NgramLm, NgramSource, PredictorTrainingConfig, TokenId, TypePredictor, TypeVocabMap,
    WatermarkKey, WatermarkMessage,
};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult, Context};
use crate::manifest::{digest, substream, to_json, write_file, write_sidecar, Manifest};
use crate::setup::{corpus, effective_config, ngram, read_text, CommonArgs, MessageArgs, Source, SourceArgs};
use crate::{
    AttackArgs, BenchArgs, BuildTypeMapArgs, Cli, Command, EvalArgs, ExtractArgs, Format, InputArgs, InsertArgs,
    ServeLmArgs, SweepArgs, TrainLmArgs, TrainPredictorArgs,
};

/// Target of the false-positive check when no message is configured
/// (reduced modulo the message space for narrow widths).
const DEFAULT_FP_TARGET: u64 = 2024;

pub fn run(cli: Cli) -> CliResult<ExitCode> {
    let c = &cli.common;
    match cli.command {
        Command::Insert(a) => insert(c, a),
        Command::Extract(a) => extract(c, a),
        Command::Attack(a) => attack(c, a),
        Command::TrainLm(a) => train_lm(c, a),
        Command::TrainPredictor(a) => train_tp(c, a),
        Command::BuildTypeMap(a) => type_map(c, a),
        Command::Sweep(a) => sweep(c, a),
        Command::Eval(a) => eval(c, a),
        Command::ServeLm(a) => serve_lm(c, a),
    }
}

fn seed_of(cfg: &RunConfig) -> u64 {
    cfg.generation.seed.unwrap_or(0)
}

/// Manifests never hold the key itself.
fn key_digest(key: &WatermarkKey) -> String {
    digest(key.to_hex().as_bytes())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).context("cannot write stdout")
        }
    }
}

fn with_manifest(mut doc: Value, manifest: &Manifest) -> Value {
    doc["manifest"] = serde_json::to_value(manifest).expect("manifest serializes");
    doc
}

fn insert(common: &CommonArgs, a: InsertArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("insert", 0);
    let file = common.file_config(&mut m)?;
    let cfg = effective_config(file, &a.wm, Some(&a.msg), Some(&a.weights), Some(&a.generation), common.seed)?;
    m.seed = seed_of(&cfg);
    let message = cfg
        .message()?
        .ok_or_else(|| CliError::usage("insert needs --message or --message-text (or a message in the config)"))?;
    let wm = cfg.watermark_config(message)?;
    let mut params = cfg.generation_params()?;
    params.seed = substream(m.seed, "sampling");

    let prompt = match (&a.prompt, &a.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => read_text(path)?,
        (None, None) => unreachable!("clap requires a prompt"),
    };
    m.input("prompt", prompt.as_bytes());
    let lexer = common.lexer();
    let mut source = Source::open(&a.source, &*lexer, &mut m)?;
    let prompt_ids = source.encode(&prompt, &*lexer)?;
    let tp = a.tp.resolve(wm.gamma, source.vocab(), &*lexer, &mut m)?;
    let guidance = tp.as_ref().map(|t| t.guidance(&*lexer));
    m.settings = json!({
        "message": message.value(),
        "bits": message.bits(),
        "key": key_digest(&wm.key),
        "beta": wm.beta,
        "gamma": wm.gamma,
        "green_fraction": wm.green_fraction,
        "max_new_tokens": params.max_new_tokens,
        "repetition_penalty": params.repetition_penalty,
        "no_repeat_ngram": params.no_repeat_ngram,
        "sampling_mode": params.sampling_mode,
        "temperature": params.temperature,
        "type_guidance": a.tp.describe(wm.gamma),
    });

    let generation = generate(source.logits(), &prompt_ids, Some(&wm), guidance.as_ref(), &params)?;
    let text = source.decode(&generation.ids);
    if let Some(path) = &a.trace {
        let lines: String = generation
            .traces
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
            .collect();
        write_file(path, lines)?;
    }
    let result = json!({
        "schema_version": 1,
        "message": message.value(),
        "message_text": decode_message(message).render(),
        "ids": generation.ids,
        "prompt_ids": prompt_ids,
        "stopped_on_eos": generation.stopped_on_eos,
        "divergence": generation.divergence(),
    });
    match a.format {
        Format::Json => {
            let mut doc = result;
            doc["text"] = Value::String(text);
            emit(a.out.as_deref(), &to_json(&with_manifest(doc, &m)))?;
        }
        Format::Text => {
            emit(a.out.as_deref(), &text)?;
            if let Some(path) = &a.manifest {
                let mut doc = serde_json::to_value(&m).expect("manifest serializes");
                doc.as_object_mut().expect("object").extend(result.as_object().expect("object").clone());
                write_file(path, to_json(&doc))?;
            } else if let Some(out) = &a.out {
                write_sidecar(out, &m, result)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

enum Input {
    Text(String),
    Ids(Vec<TokenId>),
}

fn load_input(args: &InputArgs, m: &mut Manifest) -> CliResult<Input> {
    if let Some(path) = &args.ids_file {
        let text = read_text(path)?;
        m.input("ids", text.as_bytes());
        return parse_ids(&text).map(Input::Ids).context(format_args!("{}", path.display()));
    }
    let text = match &args.input {
        Some(path) => read_text(path)?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("cannot read stdin")?;
            s
        }
    };
    m.input("input", text.as_bytes());
    Ok(Input::Text(text))
}

fn parse_ids(text: &str) -> CliResult<Vec<TokenId>> {
    if text.trim_start().starts_with(['[', '{']) {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::data(format!("bad JSON: {e}")))?;
        let list = match &v {
            Value::Object(o) => o.get("ids").ok_or_else(|| CliError::data("JSON ids file has no \"ids\" field"))?,
            _ => &v,
        };
        return serde_json::from_value(list.clone()).map_err(|e| CliError::data(format!("bad ids: {e}")));
    }
    text.split_whitespace()
        .map(|t| t.parse::<TokenId>().map_err(|_| CliError::data(format!("bad token id {t:?}"))))
        .collect()
}

fn input_ids(input: Input, source: &SourceArgs, lexer: &dyn Lexer, m: &mut Manifest) -> CliResult<Vec<TokenId>> {
    match input {
        Input::Ids(ids) => Ok(ids),
        Input::Text(text) => Source::open(source, lexer, m)?.encode(&text, lexer),
    }
}

fn extract(common: &CommonArgs, a: ExtractArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("extract", 0);
    let file = common.file_config(&mut m)?;
    let cfg = effective_config(file, &a.wm, Some(&a.msg), None, None, common.seed)?;
    m.seed = seed_of(&cfg);
    let expected = cfg.message()?;
    let mode: ExtractMode = a.mode.parse()?;
    let params = ExtractParams { key: cfg.key()?, bits: cfg.bits(), green_fraction: cfg.green_fraction(), mode };
    let workers = match a.workers {
        Some(0) => return Err(CliError::usage("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let lexer = common.lexer();
    let input = load_input(&a.input, &mut m)?;
    let ids = input_ids(input, &a.source, &*lexer, &mut m)?;
    m.settings = json!({
        "bits": params.bits,
        "key": key_digest(&params.key),
        "green_fraction": params.green_fraction,
        "mode": a.mode,
        "min_margin": a.min_margin,
    });

    let r = extract_parallel(&ids, &params, workers)?;
    let mut doc = json!({
        "schema_version": 1,
        "best_message": r.best_message.value(),
        "best_message_text": decode_message(r.best_message).render(),
        "best_score": r.best_score,
        "runner_up_score": r.runner_up_score,
        "margin": r.margin,
        "pairs": r.pairs,
        "ambiguous": r.ambiguous,
    });
    let mut matched = true;
    if let Some(e) = expected {
        matched = r.recovers(e, a.min_margin);
        doc["expected"] = json!(e.value());
        doc["matches_expected"] = json!(matched);
    }
    emit(None, &to_json(&with_manifest(doc, &m)))?;
    Ok(if matched { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn crop_mode(s: &str) -> CliResult<CropMode> {
    Ok(s.parse::<CropMode>()?)
}

fn attack(common: &CommonArgs, a: AttackArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("attack", 0);
    let file = common.file_config(&mut m)?;
    m.seed = common.seed.or(file.generation.seed).unwrap_or(0);
    let mode = crop_mode(&a.crop_mode)?;
    let lexer = common.lexer();
    let input = load_input(&a.input, &mut m)?;
    let source = Source::open(&a.source, &*lexer, &mut m)?;
    let ids = match input {
        Input::Ids(ids) => ids,
        Input::Text(text) => source.encode(&text, &*lexer)?,
    };
    m.settings = json!({"crop_rate": a.crop_rate, "crop_mode": mode});
    let kept = crop_attack(&ids, a.crop_rate, mode, substream(m.seed, "crop"))?;
    let text = source.decode(&kept);
    let result = json!({"schema_version": 1, "ids": kept, "original_len": ids.len()});
    match a.format {
        Format::Json => {
            let mut doc = result;
            doc["text"] = Value::String(text);
            emit(a.out.as_deref(), &to_json(&with_manifest(doc, &m)))?;
        }
        Format::Text => {
            emit(a.out.as_deref(), &text)?;
            if let Some(out) = &a.out {
                write_sidecar(out, &m, result)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_lm(common: &CommonArgs, a: TrainLmArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("train-lm", common.seed.unwrap_or(0));
    let mut cfg = if a.order == NgramConfig::default().order { NgramConfig::default() } else { NgramConfig::with_order(a.order) };
    if a.order == 0 {
        return Err(CliError::usage("--order must be at least 1"));
    }
    if let Some(w) = a.weights {
        if w.len() != a.order {
            return Err(CliError::usage(format!("--order {} needs {} weights, got {}", a.order, a.order, w.len())));
        }
        cfg.weights = w;
    }
    if let Some(f) = a.floor {
        cfg.floor = f;
    }
    cfg.floor_relative = !a.raw_logprobs;
    cfg.tokenizer = a.tokenizer.parse::<TokenizerKind>().map_err(CliError::usage)?;
    cfg.seed = m.seed;
    let lexer = common.lexer();
    let docs = corpus(a.corpus.as_deref(), &mut m)?;
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    let lm = NgramLm::train(&refs, &*lexer, cfg.clone())?;
    m.settings = json!({
        "order": cfg.order,
        "weights": cfg.weights,
        "floor": cfg.floor,
        "floor_relative": cfg.floor_relative,
        "tokenizer": a.tokenizer,
    });
    write_file(&a.out, lm.to_bytes())?;
    let summary = json!({"schema_version": 1, "vocab_size": lm.vocab().len(), "documents": docs.len()});
    write_sidecar(&a.out, &m, summary.clone())?;
    emit(None, &to_json(&summary))?;
    Ok(ExitCode::SUCCESS)
}

fn train_tp(common: &CommonArgs, a: TrainPredictorArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("train-predictor", common.seed.unwrap_or(0));
    let mut cfg = PredictorTrainingConfig { seed: m.seed, ..Default::default() };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.context_window = a.context_window.unwrap_or(cfg.context_window);
    cfg.embed_dim = a.embed_dim.unwrap_or(cfg.embed_dim);
    cfg.hidden_dim = a.hidden_dim.unwrap_or(cfg.hidden_dim);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let lexer = common.lexer();
    let docs = corpus(a.corpus.as_deref(), &mut m)?;
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    let predictor = train_predictor::<f32>(&cfg, &refs, &*lexer)?;
    m.settings = json!({
        "epochs": cfg.epochs,
        "context_window": cfg.context_window,
        "embed_dim": cfg.embed_dim,
        "hidden_dim": cfg.hidden_dim,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
    });
    write_file(&a.out, predictor.to_bytes())?;
    let summary = json!({"schema_version": 1, "heldout_accuracy": predictor.heldout_accuracy()});
    write_sidecar(&a.out, &m, summary.clone())?;
    emit(None, &to_json(&summary))?;
    Ok(ExitCode::SUCCESS)
}

fn type_map(common: &CommonArgs, a: BuildTypeMapArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("build-type-map", common.seed.unwrap_or(0));
    let lexer = common.lexer();
    let source = Source::open(&a.source, &*lexer, &mut m)?;
    let map = build_type_map(source.vocab(), &*lexer);
    write_file(&a.out, map.to_text(lexer.name()))?;
    let counts: serde_json::Map<String, Value> =
        LexTokenType::ALL.iter().map(|&t| (t.name().to_string(), json!(map.members(t).len()))).collect();
    let summary = json!({"schema_version": 1, "vocab_size": map.vocab_size(), "members": counts});
    write_sidecar(&a.out, &m, summary.clone())?;
    emit(None, &to_json(&summary))?;
    Ok(ExitCode::SUCCESS)
}

/// Everything a sweep or evaluation run needs, owned.
struct Bench {
    cfg: RunConfig,
    lexer: Box<dyn Lexer>,
    lm: NgramLm,
    docs: Vec<String>,
    predictor: Option<TypePredictor<f32>>,
    map: TypeVocabMap,
}

impl Bench {
    fn load(common: &CommonArgs, b: &BenchArgs, msg: Option<&MessageArgs>, m: &mut Manifest) -> CliResult<Self> {
        let file = common.file_config(m)?;
        let cfg = effective_config(file, &b.wm, msg, None, None, common.seed)?;
        m.seed = seed_of(&cfg);
        let lexer = common.lexer();
        let lm = ngram(b.lm.as_deref(), &*lexer, m)?;
        let docs = corpus(b.corpus.as_deref(), m)?;
        let (predictor, map) = match b.tp.resolve(1.0, lm.vocab(), &*lexer, m)? {
            Some(parts) => (Some(parts.predictor), parts.map),
            None => (None, build_type_map(lm.vocab(), &*lexer)),
        };
        Ok(Self { cfg, lexer, lm, docs, predictor, map })
    }

    fn pipeline(&self, b: &BenchArgs, min_continuation: usize) -> CliResult<Pipeline<'_, f32>> {
        let refs: Vec<&str> = self.docs.iter().map(String::as_str).collect();
        let prompts = prompt_suite(&refs, &self.lm, &*self.lexer, min_continuation);
        if prompts.is_empty() {
            return Err(CliError::data(format!(
                "corpus yields no prompts: need documents with a def line followed by {min_continuation} tokens"
            )));
        }
        let mut pipe = Pipeline::new(&self.lm, &*self.lexer, self.predictor.as_ref(), &self.map, self.cfg.key()?, prompts);
        pipe.bits = self.cfg.bits();
        pipe.green_fraction = self.cfg.green_fraction();
        pipe.generation = self.cfg.generation_params()?;
        pipe.generation.seed = substream(seed_of(&self.cfg), "sampling");
        pipe.tp_options.continuation = !b.tp.no_continuation;
        pipe.tp_options.confidence_weighted = b.tp.confidence_weighted;
        Ok(pipe)
    }

    fn plan(&self, b: &BenchArgs, axis: SweepAxis, grid: Vec<f64>) -> SweepPlan {
        let mut plan = SweepPlan::new(axis, grid);
        plan.trials = b.trials;
        plan.beta = b.beta;
        plan.gamma = b.gamma;
        plan.length = b.length;
        plan.type_guidance = !b.tp.no_tp;
        plan.seed = substream(seed_of(&self.cfg), "sweep");
        plan
    }

    fn settings(&self, b: &BenchArgs) -> CliResult<Value> {
        Ok(json!({
            "bits": self.cfg.bits(),
            "key": key_digest(&self.cfg.key()?),
            "green_fraction": self.cfg.green_fraction(),
            "trials": b.trials,
            "beta": b.beta,
            "gamma": b.gamma,
            "length": b.length,
            "type_guidance": b.tp.describe(1.0),
        }))
    }
}

fn sweep(common: &CommonArgs, a: SweepArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("sweep", 0);
    let bench = Bench::load(common, &a.bench, None, &mut m)?;
    let axis: SweepAxis = a.axis.parse()?;
    let mut plan = bench.plan(&a.bench, axis, a.grid.clone());
    plan.crop_rate = a.crop_rate;
    plan.crop_mode = crop_mode(&a.crop_mode)?;
    plan.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let longest = match axis {
        SweepAxis::Length => a.grid.iter().fold(0usize, |acc, &v| acc.max(v as usize)),
        _ => a.bench.length,
    };
    m.settings = bench.settings(&a.bench)?;
    let pipe = bench.pipeline(&a.bench, longest)?;
    let report = pipe.run_sweep(&plan)?;
    write_report(&report, &m, a.out.as_deref())?;
    if let Some(path) = &a.csv {
        write_file(path, report.to_csv())?;
        write_sidecar(path, &m, json!({}))?;
    }
    if let Some(path) = &a.emit_plot_data {
        write_file(path, report.plot_data())?;
        write_sidecar(path, &m, json!({}))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_report(report: &SweepReport, m: &Manifest, out: Option<&Path>) -> CliResult<()> {
    let doc: Value = serde_json::from_str(&report.to_json()).map_err(|e| CliError::internal(e.to_string()))?;
    emit(out, &to_json(&with_manifest(doc, m)))
}

fn eval(common: &CommonArgs, a: EvalArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("eval", 0);
    let bench = Bench::load(common, &a.bench, Some(&a.msg), &mut m)?;
    let mut settings = bench.settings(&a.bench)?;
    settings["crop_rates"] = json!(a.crop_rates);
    settings["fp_snippets"] = json!(a.fp_snippets);
    m.settings = settings;
    let pipe = bench.pipeline(&a.bench, a.bench.length)?;

    let baseline = pipe.run_sweep(&bench.plan(&a.bench, SweepAxis::Beta, vec![a.bench.beta]))?;
    let base = &baseline.rows[0];
    let mut robustness = Vec::new();
    for mode in [CropMode::SuffixKeep, CropMode::PrefixKeep, CropMode::RandomWindow] {
        let mut plan = bench.plan(&a.bench, SweepAxis::CropRate, a.crop_rates.clone());
        plan.crop_mode = mode;
        plan.validate().map_err(|e| CliError::usage(e.to_string()))?;
        for row in pipe.run_sweep(&plan)?.rows {
            robustness.push(json!({
                "crop_mode": mode,
                "crop_rate": row.value,
                "extraction_rate": row.extraction_rate,
                "mean_margin": row.mean_margin,
            }));
        }
    }

    let bits = bench.cfg.bits();
    let target = match bench.cfg.message()? {
        Some(msg) => msg,
        None => WatermarkMessage::new(DEFAULT_FP_TARGET % WatermarkMessage::space(bits), bits)?,
    };
    let refs: Vec<&str> = bench.docs.iter().map(String::as_str).collect();
    let snippets = corpus_snippets(&refs, &bench.lm, &*bench.lexer, a.fp_snippets, a.bench.length);
    let params = ExtractParams { key: bench.cfg.key()?, bits, green_fraction: bench.cfg.green_fraction(), mode: ExtractMode::FromStart };
    let hits = false_positive_count(&snippets, target, &params)?;

    let doc = json!({
        "schema_version": 1,
        "baseline": {
            "extraction_rate": base.extraction_rate,
            "mean_bleu_proxy": base.mean_bleu_proxy,
            "mean_margin": base.mean_margin,
            "mean_divergence": base.mean_divergence,
        },
        "robustness": robustness,
        "false_positives": {
            "target": target.value(),
            "snippets": snippets.len(),
            "length": a.bench.length,
            "hits": hits,
            "rate": if snippets.is_empty() { 0.0 } else { hits as f64 / snippets.len() as f64 },
        },
    });
    emit(a.out.as_deref(), &to_json(&with_manifest(doc, &m)))?;
    Ok(ExitCode::SUCCESS)
}

fn serve_lm(common: &CommonArgs, a: ServeLmArgs) -> CliResult<ExitCode> {
    let mut m = Manifest::new("serve-lm", common.seed.unwrap_or(0));
    let lexer = common.lexer();
    let lm = ngram(a.lm.as_deref(), &*lexer, &mut m)?;
    let encoding = if a.encoding == "base64" { LogitEncoding::Base64 } else { LogitEncoding::Json };
    let Some(addr) = &a.listen else {
        serve::<f32>(&mut NgramSource(&lm), io::stdin().lock(), io::stdout().lock(), encoding).context("stdio session")?;
        return Ok(ExitCode::SUCCESS);
    };
    let listener = TcpListener::bind(addr).context(format_args!("cannot listen on {addr}"))?;
    let local = listener.local_addr().context("listener address")?;
    // Announce the bound address, so `--listen 127.0.0.1:0` is usable.
    emit(None, &format!("{}\n", json!({"listening": local.to_string()})))?;
    for stream in listener.incoming() {
        let stream = stream.context("accept")?;
        let reader = BufReader::new(stream.try_clone().context("socket")?);
        if let Err(e) = serve::<f32>(&mut NgramSource(&lm), reader, stream, encoding) {
            eprintln!("note: connection ended: {e}");
        }
        if a.once {
            break;
        }
    }
    Ok(ExitCode::SUCCESS)
}
