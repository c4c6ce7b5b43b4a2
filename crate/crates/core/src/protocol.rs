//! Line-delimited JSON protocol for driving a model in another process.
//!
//! Each request is one JSON object on one line, tagged by `op`; each reply is
//! one line. A malformed or failing request gets an `{"error": ...}` frame and
//! the session carries on.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{ForwardOutput, InterventionSpec, LanguageModel, ModelShape, PositionPolicy, TokenSequence};
use crate::retrieval::EmbeddingProvider;
use crate::vocab::{Vocabulary, OPTION_WORDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireIntervention {
    pub layer: usize,
    pub vector: Vec<f64>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Handshake,
    Forward {
        tokens: Vec<u32>,
        #[serde(default)]
        capture_layers: Vec<usize>,
        #[serde(default)]
        intervention: Option<WireIntervention>,
    },
    Embed {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    #[serde(rename = "L")]
    pub num_layers: usize,
    #[serde(rename = "d")]
    pub hidden_dim: usize,
    /// Token id of each answer digit.
    pub options: BTreeMap<String, u32>,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub error: String,
}

/// Answers a single request line.
pub fn handle_line(
    model: &dyn LanguageModel,
    embedder: Option<&dyn EmbeddingProvider>,
    line: &str,
) -> std::result::Result<Value, String> {
    let req: Request = serde_json::from_str(line).map_err(|e| format!("bad request: {e}"))?;
    let to_value = |v: std::result::Result<Value, serde_json::Error>| v.map_err(|e| e.to_string());
    match req {
        Request::Handshake => {
            let shape = model.shape();
            let vocab = model.vocabulary();
            let options = OPTION_WORDS
                .iter()
                .map(|w| (w.to_string(), vocab.id(w).unwrap_or(u32::MAX)))
                .collect();
            to_value(serde_json::to_value(Handshake {
                num_layers: shape.num_layers,
                hidden_dim: shape.hidden_dim,
                options,
                vocab_size: shape.vocab_size,
                max_seq_len: shape.max_seq_len,
            }))
        }
        Request::Forward {
            tokens,
            capture_layers,
            intervention,
        } => {
            let hook = intervention.map(|i| InterventionSpec {
                layer: i.layer,
                vector: i.vector,
                strength: i.strength,
                position_policy: PositionPolicy::FinalTokenOnly,
            });
            let out = model
                .forward(&TokenSequence::new(tokens), hook.as_ref(), &capture_layers)
                .map_err(|e| e.to_string())?;
            to_value(serde_json::to_value(out))
        }
        Request::Embed { text } => {
            let e = embedder.ok_or("this server has no embedding model")?;
            let vector = e.embed(&text).map_err(|e| e.to_string())?;
            to_value(serde_json::to_value(EmbedReply { vector }))
        }
    }
}

/// Serves requests from `input` until end of stream. Returns the number of
/// requests answered.
pub fn serve<R: BufRead, W: Write>(
    model: &dyn LanguageModel,
    embedder: Option<&dyn EmbeddingProvider>,
    input: R,
    mut output: W,
) -> Result<usize> {
    let mut answered = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle_line(model, embedder, &line) {
            Ok(v) => v,
            Err(error) => {
                log::warn!("request failed: {error}");
                serde_json::to_value(ErrorFrame { error })?
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
        answered += 1;
    }
    Ok(answered)
}

/// Sends one request line and returns the reply line.
pub trait Transport: Send + Sync {
    fn round_trip(&self, request: &str) -> Result<String>;
}

/// Stdio pipes of a spawned server process. Requests are serialized.
pub struct ChildTransport {
    child: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl ChildTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildTransport {
            child: Mutex::new((child, stdin, stdout)),
        })
    }
}

impl Transport for ChildTransport {
    fn round_trip(&self, request: &str) -> Result<String> {
        let mut guard = self.child.lock().expect("transport lock poisoned");
        let (_, stdin, stdout) = &mut *guard;
        stdin.write_all(request.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        let mut line = String::new();
        if stdout.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("server closed the connection".into()));
        }
        Ok(line)
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.child.lock() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

/// Runs requests against a model in the same process; mainly for tests.
pub struct LocalTransport<M> {
    pub model: M,
    pub embedder: Option<Box<dyn EmbeddingProvider>>,
}

impl<M: LanguageModel> Transport for LocalTransport<M> {
    fn round_trip(&self, request: &str) -> Result<String> {
        let mut out = Vec::new();
        serve(&self.model, self.embedder.as_deref(), request.as_bytes(), &mut out)?;
        String::from_utf8(out).map_err(|e| Error::Protocol(e.to_string()))
    }
}

fn call<T: for<'de> Deserialize<'de>>(transport: &dyn Transport, req: &Request) -> Result<T> {
    let reply = transport.round_trip(&serde_json::to_string(req)?)?;
    let value: Value =
        serde_json::from_str(reply.trim()).map_err(|e| Error::Protocol(format!("unparseable reply: {e}")))?;
    if let Some(err) = value.get("error") {
        return Err(Error::Protocol(format!(
            "server error: {}",
            err.as_str().unwrap_or("?")
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::Protocol(format!("unexpected reply shape: {e}")))
}

/// A model served over the protocol.
///
/// The protocol carries token ids only, so the client tokenizes with a local
/// vocabulary that must agree with the server on the answer digits.
pub struct RemoteModel {
    transport: Box<dyn Transport>,
    shape: ModelShape,
    vocab: Vocabulary,
}

impl RemoteModel {
    pub fn connect(transport: Box<dyn Transport>, vocab: Vocabulary) -> Result<Self> {
        let hs: Handshake = call(transport.as_ref(), &Request::Handshake)?;
        for (word, id) in &hs.options {
            if vocab.id(word) != Some(*id) {
                return Err(Error::Protocol(format!(
                    "server maps option `{word}` to token {id}, local vocabulary disagrees"
                )));
            }
        }
        if vocab.len() > hs.vocab_size {
            return Err(Error::Protocol(format!(
                "local vocabulary has {} words, server only {}",
                vocab.len(),
                hs.vocab_size
            )));
        }
        Ok(RemoteModel {
            transport,
            shape: ModelShape {
                num_layers: hs.num_layers,
                hidden_dim: hs.hidden_dim,
                vocab_size: hs.vocab_size,
                max_seq_len: hs.max_seq_len,
            },
            vocab,
        })
    }
}

impl LanguageModel for RemoteModel {
    fn shape(&self) -> ModelShape {
        self.shape
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(
        &self,
        seq: &TokenSequence,
        intervention: Option<&InterventionSpec>,
        capture_layers: &[usize],
    ) -> Result<ForwardOutput> {
        seq.validate(&self.shape)?;
        if let Some(spec) = intervention {
            spec.validate(&self.shape)?;
            if spec.position_policy != PositionPolicy::FinalTokenOnly {
                return Err(Error::Protocol("the protocol only steers the final token".into()));
            }
        }
        let req = Request::Forward {
            tokens: seq.tokens.clone(),
            capture_layers: capture_layers.to_vec(),
            intervention: intervention.map(|s| WireIntervention {
                layer: s.layer,
                vector: s.vector.clone(),
                strength: s.strength,
            }),
        };
        let out: ForwardOutput = call(self.transport.as_ref(), &req)?;
        if out.logits.len() != self.shape.vocab_size {
            return Err(Error::Protocol(format!(
                "expected {} logits, got {}",
                self.shape.vocab_size,
                out.logits.len()
            )));
        }
        Ok(out)
    }
}

/// Embeddings computed by the server.
pub struct RemoteEmbedder {
    transport: Box<dyn Transport>,
    dim: usize,
}

impl RemoteEmbedder {
    /// Probes the server once to learn the embedding width.
    pub fn connect(transport: Box<dyn Transport>) -> Result<Self> {
        let probe: EmbedReply = call(
            transport.as_ref(),
            &Request::Embed {
                text: "dimension probe".into(),
            },
        )?;
        Ok(RemoteEmbedder {
            dim: probe.vector.len(),
            transport,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let reply: EmbedReply = call(self.transport.as_ref(), &Request::Embed { text: text.into() })?;
        Ok(reply.vector)
    }
}
