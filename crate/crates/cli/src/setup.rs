//! Flags shared by several subcommands and the objects they resolve to.

use std::io::BufReader;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{ChildStdin, ChildStdout};

use clap::Args;
use gramark::config::{GenerationSection, RunConfig, WatermarkSection};
use gramark::corpus::{bundled_corpus, load_documents};
use gramark::lexing::{lexer_by_name, LEXER_NAMES};
use gramark::typepred::TpOptions;
use gramark::types::SamplingMode;
use gramark::{
    build_type_map, train_predictor, ExternalProvider, Lexer, LogitSource, NgramConfig, NgramLm,
    PredictorTrainingConfig, TokenId, TypeGuidance, TypePredictor, TypeVocabMap, Vocabulary,
};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult, Context};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; per-purpose seeds are derived from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "minilang", value_parser = clap::builder::PossibleValuesParser::new(LEXER_NAMES))]
    pub lexer: String,
}

impl CommonArgs {
    pub fn lexer(&self) -> Box<dyn Lexer> {
        lexer_by_name(&self.lexer).expect("clap restricts the lexer name")
    }

    pub fn file_config(&self, manifest: &mut Manifest) -> CliResult<RunConfig> {
        match &self.config {
            Some(path) => {
                manifest.input("config", &read(path)?);
                Ok(RunConfig::load(path)?)
            }
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct WatermarkArgs {
    /// Watermark key, up to 32 hex digits
    #[arg(long)]
    pub key: Option<String>,
    /// Message width in bits
    #[arg(long)]
    pub bits: Option<u8>,
    /// Share of the vocabulary marked green per step
    #[arg(long)]
    pub green_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MessageArgs {
    /// Message as an integer
    #[arg(long, conflicts_with = "message_text")]
    pub message: Option<u64>,
    /// Message as printable ASCII, packed as concatenated character codes
    #[arg(long)]
    pub message_text: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WeightArgs {
    /// Watermark logit weight
    #[arg(long)]
    pub beta: Option<f64>,
    /// Type-guidance logit weight
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerationArgs {
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub repetition_penalty: Option<f64>,
    /// Forbid repeating any n-gram of this size (0 disables)
    #[arg(long)]
    pub no_repeat_ngram: Option<usize>,
    #[arg(long, value_parser = ["greedy", "multinomial"])]
    pub sampling_mode: Option<String>,
    /// Softmax temperature; only used when sampling
    #[arg(long)]
    pub temperature: Option<f64>,
}

/// Layer flags over the config file over the library defaults.
pub fn effective_config(
    file: RunConfig,
    wm: &WatermarkArgs,
    msg: Option<&MessageArgs>,
    weights: Option<&WeightArgs>,
    generation: Option<&GenerationArgs>,
    seed: Option<u64>,
) -> CliResult<RunConfig> {
    let mut top = RunConfig {
        watermark: WatermarkSection {
            key: wm.key.clone(),
            bits: wm.bits,
            green_fraction: wm.green_fraction,
            ..Default::default()
        },
        generation: GenerationSection { seed, ..Default::default() },
    };
    if let Some(m) = msg {
        top.watermark.message = m.message;
        top.watermark.message_text = m.message_text.clone();
    }
    if let Some(w) = weights {
        top.watermark.beta = w.beta;
        top.watermark.gamma = w.gamma;
    }
    if let Some(g) = generation {
        let t = &mut top.generation;
        t.max_new_tokens = g.max_new_tokens;
        t.repetition_penalty = g.repetition_penalty;
        t.no_repeat_ngram = g.no_repeat_ngram;
        t.temperature = g.temperature;
        t.sampling_mode = g.sampling_mode.as_deref().map(str::parse::<SamplingMode>).transpose()?;
    }
    Ok(file.overlay(&top))
}

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).context(format_args!("cannot read {}", path.display()))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::data(format!("{} is not UTF-8 text", path.display())))
}

/// Documents from `path`, or the bundled corpus.
pub fn corpus(path: Option<&Path>, manifest: &mut Manifest) -> CliResult<Vec<String>> {
    let docs: Vec<String> = match path {
        Some(p) => load_documents(p).context(format_args!("cannot load corpus {}", p.display()))?,
        None => bundled_corpus().into_iter().map(str::to_string).collect(),
    };
    if docs.is_empty() {
        return Err(CliError::data("corpus has no documents"));
    }
    let label = if path.is_some() { "corpus" } else { "corpus (bundled)" };
    manifest.input(label, docs.join("\n#%%\n").as_bytes());
    Ok(docs)
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Trained n-gram model file (default: train one on the bundled corpus)
    #[arg(long, value_name = "PATH", conflicts_with_all = ["provider_cmd", "provider_addr"])]
    pub lm: Option<PathBuf>,
    /// Command speaking the logit protocol on its stdin/stdout
    #[arg(long, value_name = "CMD", conflicts_with = "provider_addr")]
    pub provider_cmd: Option<String>,
    /// Address of a logit protocol server
    #[arg(long, value_name = "HOST:PORT")]
    pub provider_addr: Option<String>,
}

/// The n-gram model named by `--lm`, or the default one on the bundled corpus.
pub fn ngram(path: Option<&Path>, lexer: &dyn Lexer, manifest: &mut Manifest) -> CliResult<NgramLm> {
    match path {
        Some(p) => {
            let bytes = read(p)?;
            manifest.input("lm", &bytes);
            let lm = NgramLm::from_bytes(&bytes).context(format_args!("cannot load {}", p.display()))?;
            if lm.lexer_name() != lexer.name() {
                return Err(CliError::data(format!(
                    "{} was trained with lexer {:?}, not {:?}",
                    p.display(),
                    lm.lexer_name(),
                    lexer.name()
                )));
            }
            Ok(lm)
        }
        None => {
            let docs = bundled_corpus();
            manifest.input("lm (bundled)", docs.join("\n#%%\n").as_bytes());
            Ok(NgramLm::train(&docs, lexer, NgramConfig::default())?)
        }
    }
}

pub enum Source {
    Ngram(NgramLm),
    Spawned(ExternalProvider<BufReader<ChildStdout>, ChildStdin>),
    Remote(ExternalProvider<BufReader<TcpStream>, TcpStream>),
}

impl Source {
    pub fn open(args: &SourceArgs, lexer: &dyn Lexer, manifest: &mut Manifest) -> CliResult<Self> {
        if let Some(cmd) = &args.provider_cmd {
            manifest.input("provider command", cmd.as_bytes());
            return Ok(Source::Spawned(ExternalProvider::spawn(cmd).context("cannot start provider")?));
        }
        if let Some(addr) = &args.provider_addr {
            manifest.input("provider address", addr.as_bytes());
            return Ok(Source::Remote(ExternalProvider::connect(addr.as_str()).context("cannot reach provider")?));
        }
        Ok(Source::Ngram(ngram(args.lm.as_deref(), lexer, manifest)?))
    }

    pub fn logits(&mut self) -> &mut dyn LogitSource<f32> {
        match self {
            Source::Ngram(lm) => lm,
            Source::Spawned(p) => p,
            Source::Remote(p) => p,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Source::Ngram(lm) => lm.vocab(),
            Source::Spawned(p) => LogitSource::<f32>::vocabulary(p),
            Source::Remote(p) => LogitSource::<f32>::vocabulary(p),
        }
    }

    /// Token ids of `text`. Provider vocabularies are matched greedily,
    /// longest token first.
    pub fn encode(&self, text: &str, lexer: &dyn Lexer) -> CliResult<Vec<TokenId>> {
        match self {
            Source::Ngram(lm) => Ok(lm.encode(text, lexer)),
            _ => self.vocab().tokenize_longest(text).context("cannot tokenize text"),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.vocab().detokenize(ids)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TpArgs {
    /// Trained type predictor (default: train one on the bundled corpus)
    #[arg(long, value_name = "PATH")]
    pub predictor: Option<PathBuf>,
    /// Token-to-type map (default: built from the source vocabulary)
    #[arg(long, value_name = "PATH")]
    pub type_map: Option<PathBuf>,
    /// Disable type guidance
    #[arg(long)]
    pub no_tp: bool,
    /// Do not let an unfinished lexeme keep its own type
    #[arg(long)]
    pub no_continuation: bool,
    /// Weight tokens by predicted type probability instead of top-type 0/1
    #[arg(long)]
    pub confidence_weighted: bool,
}

pub struct TpParts {
    pub predictor: TypePredictor<f32>,
    pub map: TypeVocabMap,
    pub options: TpOptions,
}

impl TpParts {
    pub fn guidance<'a>(&'a self, lexer: &'a dyn Lexer) -> TypeGuidance<'a, f32> {
        TypeGuidance { predictor: &self.predictor, map: &self.map, lexer, options: self.options }
    }
}

impl TpArgs {
    /// The predictor and map, unless guidance is off or `gamma` is zero.
    pub fn resolve(
        &self,
        gamma: f64,
        vocab: &Vocabulary,
        lexer: &dyn Lexer,
        manifest: &mut Manifest,
    ) -> CliResult<Option<TpParts>> {
        if self.no_tp || gamma == 0.0 {
            return Ok(None);
        }
        let predictor = predictor(self.predictor.as_deref(), lexer, manifest)?;
        let map = type_map(self.type_map.as_deref(), vocab, lexer, manifest)?;
        let options = TpOptions { continuation: !self.no_continuation, confidence_weighted: self.confidence_weighted };
        Ok(Some(TpParts { predictor, map, options }))
    }

    pub fn describe(&self, gamma: f64) -> Value {
        json!({
            "enabled": !self.no_tp && gamma != 0.0,
            "continuation": !self.no_continuation,
            "confidence_weighted": self.confidence_weighted,
        })
    }
}

pub fn predictor(path: Option<&Path>, lexer: &dyn Lexer, manifest: &mut Manifest) -> CliResult<TypePredictor<f32>> {
    let p = match path {
        Some(p) => {
            let bytes = read(p)?;
            manifest.input("predictor", &bytes);
            TypePredictor::<f32>::from_bytes(&bytes).context(format_args!("cannot load {}", p.display()))?
        }
        None => {
            eprintln!("note: no --predictor given; training the default type predictor on the bundled corpus");
            let docs = bundled_corpus();
            manifest.input("predictor (bundled)", docs.join("\n#%%\n").as_bytes());
            train_predictor::<f32>(&PredictorTrainingConfig::default(), &docs, lexer)?
        }
    };
    if p.lexer_name() != lexer.name() {
        return Err(CliError::data(format!("predictor uses lexer {:?}, not {:?}", p.lexer_name(), lexer.name())));
    }
    Ok(p)
}

pub fn type_map(path: Option<&Path>, vocab: &Vocabulary, lexer: &dyn Lexer, manifest: &mut Manifest) -> CliResult<TypeVocabMap> {
    match path {
        Some(p) => {
            let text = read_text(p)?;
            manifest.input("type map", text.as_bytes());
            let map = TypeVocabMap::from_text(&text).context(format_args!("cannot load {}", p.display()))?;
            map.check_vocab(vocab).context(format_args!("{}", p.display()))?;
            Ok(map)
        }
        None => Ok(build_type_map(vocab, lexer)),
    }
}

