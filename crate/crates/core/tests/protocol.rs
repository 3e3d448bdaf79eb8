//! Wire protocol: transcript replay, client against stub peers, TCP serving.

use std::io::{BufReader, Cursor};
use std::net::TcpListener;

use gramark::corpus::bundled_corpus;
use gramark::lmsource::{parse_logits_reply, serve, LogitEncoding};
use gramark::{
    generate, generate_unwatermarked, DecodeError, ExternalProvider, GenerationContext, GenerationParams, LogitSource,
    LogitVector, MiniLangLexer, NgramConfig, NgramLm, NgramSource, SourceError, Vocabulary, WatermarkConfig,
    WatermarkKey, WatermarkMessage,
};
use serde_json::Value;

/// The source the golden transcript was recorded against.
struct Stub {
    vocab: Vocabulary,
}

impl Stub {
    fn new() -> Self {
        Self { vocab: Vocabulary::new(vec!["x".into(), "a".into(), "b".into()]).unwrap() }
    }
}

impl LogitSource<f32> for Stub {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<f32>, SourceError> {
        let first = if ctx.generated_ids.len() >= 3 { f32::NEG_INFINITY } else { ctx.prompt_ids.len() as f32 };
        Ok(LogitVector::new(vec![first, ctx.generated_ids.len() as f32, -1.5]))
    }
}

fn transcript() -> (Vec<String>, Vec<String>) {
    let text = include_str!("../golden/protocol_transcript.txt");
    let requests = text.lines().filter_map(|l| l.strip_prefix("> ")).map(String::from).collect();
    let replies = text.lines().filter_map(|l| l.strip_prefix("< ")).map(String::from).collect();
    (requests, replies)
}

/// Same keys and value kinds; logit arrays must have `vocab_len` entries.
fn same_shape(expected: &Value, actual: &Value, vocab_len: usize) -> bool {
    let (Some(e), Some(a)) = (expected.as_object(), actual.as_object()) else { return false };
    if e.keys().collect::<Vec<_>>() != a.keys().collect::<Vec<_>>() {
        return false;
    }
    for (k, v) in a {
        let ok = match k.as_str() {
            "tokens" => v.as_array().is_some_and(|t| t.iter().all(Value::is_string)),
            "logits" => v.as_array().is_some_and(|t| t.len() == vocab_len && t.iter().all(Value::is_number)),
            "logits_b64" => v.as_str().is_some_and(|s| parse_logits_reply(&actual.to_string()).is_ok_and(|l| l.len() == vocab_len) && !s.is_empty()),
            "error" => v.is_string(),
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    true
}

fn run_server(source: &mut dyn LogitSource<f32>, requests: &[String], encoding: LogitEncoding) -> Vec<String> {
    let input = requests.join("\n") + "\n";
    let mut out = Vec::new();
    let n = serve(source, Cursor::new(input), &mut out, encoding).unwrap();
    assert_eq!(n, requests.len());
    String::from_utf8(out).unwrap().lines().map(String::from).collect()
}

#[test]
fn server_replays_transcript_byte_for_byte() {
    let (requests, replies) = transcript();
    assert_eq!(requests.len(), replies.len());
    let got = run_server(&mut Stub::new(), &requests, LogitEncoding::Json);
    assert_eq!(got, replies);
}

#[test]
fn base64_server_conforms_on_structure() {
    let (requests, replies) = transcript();
    let got = run_server(&mut Stub::new(), &requests, LogitEncoding::Base64);
    for (i, (g, e)) in got.iter().zip(&replies).enumerate() {
        let g: Value = serde_json::from_str(g).unwrap();
        let e: Value = serde_json::from_str(e).unwrap();
        if e.get("logits").is_some() {
            // packed instead of listed, same numbers
            assert!(g.get("logits_b64").is_some(), "reply {i}");
            assert_eq!(parse_logits_reply(&g.to_string()).unwrap(), parse_logits_reply(&e.to_string()).unwrap());
        } else {
            assert!(same_shape(&e, &g, 3), "reply {i}: {g}");
        }
    }
}

#[test]
fn shape_check_rejects_wrong_structure() {
    let e: Value = serde_json::from_str(r#"{"logits":[1.0,0.0,-1.5]}"#).unwrap();
    for bad in [r#"{"logits":[1.0,0.0]}"#, r#"{"logit":[1.0,0.0,-1.5]}"#, r#"{"logits":["a","b","c"]}"#] {
        assert!(!same_shape(&e, &serde_json::from_str(bad).unwrap(), 3), "{bad}");
    }
    assert!(same_shape(&e, &serde_json::from_str(r#"{"logits":[9,9,9]}"#).unwrap(), 3));
}

/// POSIX sh peer answering the vocab op and then fixed logits. After
/// `budget` logits replies it exits.
fn stub_peer(logits: &str, budget: usize) -> String {
    format!(
        r#"n=0; while IFS= read -r line; do case "$line" in *'"vocab"'*) printf '%s\n' '{{"tokens":["x","a","b"]}}';; *) n=$((n+1)); [ $n -gt {budget} ] && exit 0; printf '%s\n' '{{"logits":{logits}}}';; esac; done"#
    )
}

fn params(n: usize) -> GenerationParams {
    GenerationParams { max_new_tokens: n, repetition_penalty: 1.0, no_repeat_ngram: 0, ..Default::default() }
}

#[test]
fn stub_peer_generation_is_reproducible() {
    let cmd = stub_peer("[0.5,1.0,0.25]", 1000);
    let wm = WatermarkConfig::new(WatermarkMessage::new(5, 4).unwrap(), WatermarkKey(1));
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut peer = ExternalProvider::spawn(&cmd).unwrap();
        assert_eq!(LogitSource::<f32>::vocabulary(&peer).len(), 3);
        runs.push(generate::<f32>(&mut peer, &[1], Some(&wm), None, &params(12)).unwrap().ids);
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].len(), 12);
    // without the watermark the argmax is always token 1
    let mut peer = ExternalProvider::spawn(&cmd).unwrap();
    assert_eq!(generate_unwatermarked::<f32>(&mut peer, &[1], &params(4)).unwrap().ids, vec![1; 4]);
}

#[test]
fn short_reply_is_a_vocab_mismatch() {
    let mut peer = ExternalProvider::spawn(&stub_peer("[0.5,1.0]", 1000)).unwrap();
    let ctx = GenerationContext::new(vec![1]).unwrap();
    let err = LogitSource::<f32>::next_logits(&mut peer, &ctx).unwrap_err();
    assert!(matches!(err, SourceError::VocabMismatch { expected: 3, found: 2 }), "{err}");
}

#[test]
fn peer_exit_returns_partial_generation() {
    let mut peer = ExternalProvider::spawn(&stub_peer("[0.5,1.0,0.25]", 4)).unwrap();
    match generate_unwatermarked::<f32>(&mut peer, &[1], &params(10)) {
        Err(DecodeError::Source { source: SourceError::PeerExit, partial }) => {
            assert_eq!(partial.ids, vec![1; 4]);
            assert_eq!(partial.traces.len(), 4);
        }
        other => panic!("expected PeerExit, got {other:?}"),
    }
}

#[test]
fn bad_handshake_is_a_protocol_error() {
    for cmd in ["printf 'hello\\n'; cat >/dev/null", "printf '{\"tokens\":[1,2]}\\n'; cat >/dev/null"] {
        assert!(matches!(ExternalProvider::spawn(cmd), Err(SourceError::Protocol(_))), "{cmd}");
    }
    assert!(matches!(ExternalProvider::spawn("exit 0"), Err(SourceError::PeerExit)));
}

#[test]
fn ngram_model_over_tcp_matches_direct_decoding() {
    let docs = bundled_corpus();
    let lm = NgramLm::train(&docs[..40], &MiniLangLexer, NgramConfig::default()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let prompt = lm.encode("# scale every score in place\ndef scale(", &MiniLangLexer);
    let wm = WatermarkConfig::new(WatermarkMessage::new(2024, 20).unwrap(), WatermarkKey(0xc0de));
    let p = GenerationParams { max_new_tokens: 40, ..Default::default() };

    let direct = generate::<f32>(&mut NgramSource(&lm), &prompt, Some(&wm), None, &p).unwrap();
    std::thread::scope(|s| {
        let lm = &lm;
        s.spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            serve::<f32>(&mut NgramSource(lm), reader, stream, LogitEncoding::Base64).unwrap();
        });
        let mut remote = ExternalProvider::connect(addr).unwrap();
        assert_eq!(LogitSource::<f32>::vocabulary(&remote).tokens(), lm.vocab().tokens());
        let got = generate::<f32>(&mut remote, &prompt, Some(&wm), None, &p).unwrap();
        assert_eq!(got, direct);
        drop(remote);
    });
}
