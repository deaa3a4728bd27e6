//! GRU cells and the hierarchical encoder: a stacked bi-directional GRU over
//! the words of each utterance, followed by a unidirectional GRU over
//! utterance representations tagged with the sender flag.
//!
//! Model structs only hold parameter ids. To run one, bind it to a graph
//! first (`bind`), which adds each parameter as a leaf exactly once so that
//! gradients from all time steps accumulate in one buffer.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, MentionSpan, Role, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Scalar, Tensor, Var};

/// Weights of one GRU cell.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_in: ParamId,
    pub b_hn: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, cols: usize, rng: &mut R| {
            store.param(&format!("{prefix}.{name}"), &[hidden, cols], Init::FanIn, rng)
        };
        let (w_ir, w_iz, w_in) = (w("w_ir", input, rng)?, w("w_iz", input, rng)?, w("w_in", input, rng)?);
        let (w_hr, w_hz, w_hn) = (w("w_hr", hidden, rng)?, w("w_hz", hidden, rng)?, w("w_hn", hidden, rng)?);
        let mut b = |name: &str| store.param(&format!("{prefix}.{name}"), &[hidden], Init::Zeros, rng);
        Ok(GruParams {
            w_ir,
            w_iz,
            w_in,
            w_hr,
            w_hz,
            w_hn,
            b_r: b("b_r")?,
            b_z: b("b_z")?,
            b_in: b("b_in")?,
            b_hn: b("b_hn")?,
            input,
            hidden,
        })
    }

    pub fn ids(&self) -> [ParamId; 10] {
        [
            self.w_ir, self.w_iz, self.w_in, self.w_hr, self.w_hz, self.w_hn, self.b_r, self.b_z,
            self.b_in, self.b_hn,
        ]
    }

    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> GruCell {
        let [w_ir, w_iz, w_in, w_hr, w_hz, w_hn, b_r, b_z, b_in, b_hn] =
            self.ids().map(|id| g.param(store, id));
        GruCell {
            w_ir,
            w_iz,
            w_in,
            w_hr,
            w_hz,
            w_hn,
            b_r,
            b_z,
            b_in,
            b_hn,
            input: self.input,
            hidden: self.hidden,
        }
    }

    pub fn set_frozen<S: Scalar>(&self, store: &mut ParamStore<S>, frozen: bool) {
        for id in self.ids() {
            store.set_frozen(id, frozen);
        }
    }
}

/// A [`GruParams`] bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    w_ir: Var,
    w_iz: Var,
    w_in: Var,
    w_hr: Var,
    w_hz: Var,
    w_hn: Var,
    b_r: Var,
    b_z: Var,
    b_in: Var,
    b_hn: Var,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    /// One recurrence step:
    ///
    /// ```text
    /// r = sigmoid(W_ir x + W_hr h + b_r)
    /// z = sigmoid(W_iz x + W_hz h + b_z)
    /// n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn step<S: Scalar>(&self, g: &mut Graph<S>, x: Var, h: Var) -> Result<Var> {
        if g.shape(x) != [self.input] {
            return Err(Error::shape("gru_cell", g.shape(x), &[self.input]));
        }
        if g.shape(h) != [self.hidden] {
            return Err(Error::shape("gru_cell", g.shape(h), &[self.hidden]));
        }
        let gate = |g: &mut Graph<S>, wi: Var, wh: Var, b: Var| -> Result<Var> {
            let a = g.matmul(wi, x)?;
            let c = g.matmul(wh, h)?;
            let s = g.add(a, c)?;
            let s = g.add_bias(s, b)?;
            Ok(g.sigmoid(s))
        };
        let r = gate(g, self.w_ir, self.w_hr, self.b_r)?;
        let z = gate(g, self.w_iz, self.w_hz, self.b_z)?;

        let xn = g.matmul(self.w_in, x)?;
        let xn = g.add_bias(xn, self.b_in)?;
        let hn = g.matmul(self.w_hn, h)?;
        let hn = g.add_bias(hn, self.b_hn)?;
        let rhn = g.mul(r, hn)?;
        let pre = g.add(xn, rhn)?;
        let n = g.tanh(pre);

        // (1 - z) * n + z * h == n + z * (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    /// Runs the cell over `inputs` from `h0`, returning every hidden state.
    pub fn run<S: Scalar>(&self, g: &mut Graph<S>, inputs: &[Var], h0: Var) -> Result<Vec<Var>> {
        let mut h = h0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(g, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Free-function form of a single GRU step.
pub fn gru_cell<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    params: &GruParams,
    x: Var,
    h_prev: Var,
) -> Result<Var> {
    params.bind(g, store).step(g, x, h_prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtteranceEncoderConfig {
    pub embedding_dim: usize,
    /// Hidden size per direction.
    pub hidden: usize,
    pub layers: usize,
}

impl Default for UtteranceEncoderConfig {
    fn default() -> Self {
        UtteranceEncoderConfig {
            embedding_dim: 64,
            hidden: 128,
            layers: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

/// Word embeddings plus stacked bi-directional GRU layers.
///
/// With `mention_feature` set, layer 1 takes one extra input per position:
/// a 0/1 flag marking tokens that belong to the conditioned movie's title,
/// appended to layer 0's output.
#[derive(Debug, Clone)]
pub struct UtteranceEncoder {
    pub embedding: ParamId,
    pub layers: Vec<BiGruParams>,
    pub config: UtteranceEncoderConfig,
    pub mention_feature: bool,
}

impl UtteranceEncoder {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        vocab_size: usize,
        config: UtteranceEncoderConfig,
        mention_feature: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("utterance encoder needs at least one layer".into()));
        }
        if mention_feature && config.layers < 2 {
            return Err(Error::Config(
                "the mention feature enters after layer 0, so at least two layers are required".into(),
            ));
        }
        let embedding = store.param(
            &format!("{prefix}.embedding"),
            &[vocab_size, config.embedding_dim],
            Init::FanIn,
            rng,
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = match l {
                0 => config.embedding_dim,
                1 if mention_feature => 2 * config.hidden + 1,
                _ => 2 * config.hidden,
            };
            layers.push(BiGruParams {
                forward: GruParams::register(store, &format!("{prefix}.l{l}.fwd"), input, config.hidden, rng)?,
                backward: GruParams::register(store, &format!("{prefix}.l{l}.bwd"), input, config.hidden, rng)?,
            });
        }
        Ok(UtteranceEncoder {
            embedding,
            layers,
            config,
            mention_feature,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.hidden
    }

    pub fn vocab_size<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        store.value(self.embedding).shape()[0]
    }

    /// Freezes (or unfreezes) the embedding table and layer 0.
    pub fn freeze_first_layer<S: Scalar>(&self, store: &mut ParamStore<S>, frozen: bool) {
        store.set_frozen(self.embedding, frozen);
        self.layers[0].forward.set_frozen(store, frozen);
        self.layers[0].backward.set_frozen(store, frozen);
    }

    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> BoundUtteranceEncoder {
        BoundUtteranceEncoder {
            embedding: g.param(store, self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| (l.forward.bind(g, store), l.backward.bind(g, store)))
                .collect(),
            hidden: self.config.hidden,
            mention_feature: self.mention_feature,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundUtteranceEncoder {
    embedding: Var,
    layers: Vec<(GruCell, GruCell)>,
    hidden: usize,
    mention_feature: bool,
}

impl BoundUtteranceEncoder {
    /// Encodes word indices into `[h_fwd_final ; h_bwd_final]` of the last layer.
    ///
    /// `feature` must be given (one 0/1 value per token) exactly when the
    /// encoder was built with the mention feature.
    pub fn encode<S: Scalar>(&self, g: &mut Graph<S>, tokens: &[usize], feature: Option<&[f64]>) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode_utterance", "empty token list"));
        }
        match (self.mention_feature, feature) {
            (true, Some(f)) if f.len() == tokens.len() => {}
            (false, None) => {}
            (true, _) => {
                return Err(Error::invalid(
                    "encode_utterance",
                    "mention feature missing or of wrong length",
                ))
            }
            (false, Some(_)) => {
                return Err(Error::invalid("encode_utterance", "encoder has no mention feature"))
            }
        }

        let mut xs = Vec::with_capacity(tokens.len());
        for &t in tokens {
            xs.push(g.embedding(self.embedding, t)?);
        }
        let zero = g.constant(Tensor::zeros(&[self.hidden]));
        let mut finals = (zero, zero);
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let hf = fwd.run(g, &xs, zero)?;
            let rev: Vec<Var> = xs.iter().rev().copied().collect();
            let mut hb = bwd.run(g, &rev, zero)?;
            finals = (*hf.last().unwrap(), *hb.last().unwrap());
            hb.reverse();
            if l + 1 == self.layers.len() {
                break;
            }
            let mut next = Vec::with_capacity(xs.len());
            for t in 0..xs.len() {
                let mut parts = vec![hf[t], hb[t]];
                if l == 0 {
                    if let Some(f) = feature {
                        parts.push(g.constant(Tensor::vector(&[S::lit(f[t])])));
                    }
                }
                next.push(g.concat(&parts)?);
            }
            xs = next;
        }
        g.concat(&[finals.0, finals.1])
    }
}

/// Unidirectional GRU over `[u_m ; s_m]`.
#[derive(Debug, Clone)]
pub struct ConversationEncoder {
    pub gru: GruParams,
}

impl ConversationEncoder {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        utterance_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ConversationEncoder {
            gru: GruParams::register(store, &format!("{prefix}.gru"), utterance_dim + 1, hidden, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> BoundConversationEncoder {
        BoundConversationEncoder {
            cell: self.gru.bind(g, store),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundConversationEncoder {
    cell: GruCell,
}

impl BoundConversationEncoder {
    pub fn initial<S: Scalar>(&self, g: &mut Graph<S>) -> Var {
        g.constant(Tensor::zeros(&[self.cell.hidden]))
    }

    /// Advances the conversation state by one utterance.
    pub fn step<S: Scalar>(&self, g: &mut Graph<S>, utterance: Var, sender: f64, h_prev: Var) -> Result<Var> {
        if sender != 1.0 && sender != -1.0 {
            return Err(Error::invalid("encode_conversation", format!("sender flag must be +-1, got {sender}")));
        }
        let s = g.constant(Tensor::vector(&[S::lit(sender)]));
        let x = g.concat(&[utterance, s])?;
        self.cell.step(g, x, h_prev)
    }

    /// `h_1..h_M` from `h_0 = 0`.
    pub fn encode<S: Scalar>(&self, g: &mut Graph<S>, utterances: &[Var], senders: &[f64]) -> Result<Vec<Var>> {
        if utterances.len() != senders.len() {
            return Err(Error::invalid(
                "encode_conversation",
                format!("{} utterances but {} sender flags", utterances.len(), senders.len()),
            ));
        }
        let mut h = self.initial(g);
        let mut out = Vec::with_capacity(utterances.len());
        for (&u, &s) in utterances.iter().zip(senders) {
            h = self.step(g, u, s, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// One utterance ready for the encoders: word indices of the
/// mention-expanded text, the title spans, and the sender flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUtterance {
    pub ids: Vec<usize>,
    pub spans: Vec<MentionSpan>,
    pub role: Role,
}

impl EncodedUtterance {
    pub fn sender(&self) -> f64 {
        self.role.flag()
    }
}

pub fn encode_utterances(conversation: &Conversation, vocab: &Vocab) -> Result<Vec<EncodedUtterance>> {
    (0..conversation.utterances.len())
        .map(|i| {
            let e = conversation.expand(i)?;
            Ok(EncodedUtterance {
                ids: vocab.encode(&e.words),
                spans: e.spans,
                role: conversation.utterances[i].role,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EmbeddingLoadReport {
    pub found: usize,
    pub random: usize,
    pub warnings: Vec<String>,
}

/// Loads word vectors (`count dim` header, then `word v_1 .. v_dim` lines)
/// into the encoder's embedding table and freezes the table and layer 0.
/// Vocabulary words absent from the file get N(0, 0.01^2) vectors.
pub fn load_pretrained_embeddings<S: Scalar, R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocab,
    store: &mut ParamStore<S>,
    encoder: &UtteranceEncoder,
    rng: &mut R,
) -> Result<EmbeddingLoadReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dim = encoder.config.embedding_dim;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut report = EmbeddingLoadReport::default();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    if let Some((n, header)) = lines.next() {
        let nums: Vec<&str> = header.split_whitespace().collect();
        let file_dim = match nums.as_slice() {
            [_, d] => d
                .parse::<usize>()
                .map_err(|_| parse_err(n + 1, format!("bad header `{header}`")))?,
            _ => return Err(parse_err(n + 1, "header must be `count dim`".into())),
        };
        if file_dim != dim {
            return Err(parse_err(
                n + 1,
                format!("file dimension {file_dim} does not match embedding dimension {dim}"),
            ));
        }
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(n + 1, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(parse_err(n + 1, format!("expected {dim} values, got {}", values.len())));
            }
            if let Some(i) = vocab.get(word) {
                rows[i] = Some(values);
            }
        }
    } else {
        report.warnings.push(format!("{}: embedding file is empty", path.display()));
    }

    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let table = store.value_mut(encoder.embedding);
    for (i, row) in rows.into_iter().enumerate() {
        let dst = &mut table.data_mut()[i * dim..(i + 1) * dim];
        match row {
            Some(v) => {
                report.found += 1;
                for (d, s) in dst.iter_mut().zip(v) {
                    *d = S::lit(s);
                }
            }
            None => {
                report.random += 1;
                for d in dst.iter_mut() {
                    *d = S::lit(normal.sample(rng));
                }
            }
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    encoder.freeze_first_layer(store, true);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_gru(input: usize, hidden: usize) -> (ParamStore<f64>, GruParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GruParams::register(&mut store, "g", input, hidden, &mut rng).unwrap();
        for id in p.ids() {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(&shape);
        }
        (store, p)
    }

    #[test]
    fn zero_params_halve_previous_state() {
        let (store, p) = zero_gru(3, 4);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[0.3, -2.0, 5.0]));
        let h = g.constant(Tensor::vector(&[1.0, -0.5, 0.25, 2.0]));
        let out = gru_cell(&mut g, &store, &p, x, h).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -0.25, 0.125, 1.0]);

        let h0 = g.constant(Tensor::zeros(&[4]));
        let out = gru_cell(&mut g, &store, &p, x, h0).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (store, p) = zero_gru(3, 4);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2]));
        let h = g.constant(Tensor::zeros(&[4]));
        assert!(gru_cell(&mut g, &store, &p, x, h).is_err());
    }

    #[test]
    fn mention_feature_requires_two_layers() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = UtteranceEncoderConfig {
            embedding_dim: 4,
            hidden: 3,
            layers: 1,
        };
        assert!(UtteranceEncoder::register(&mut store, "u", 10, cfg, true, &mut rng).is_err());
    }

    #[test]
    fn sender_flag_validated() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ConversationEncoder::register(&mut store, "c", 2, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = enc.bind(&mut g, &store);
        let u = g.constant(Tensor::zeros(&[2]));
        let h = b.initial(&mut g);
        assert!(b.step(&mut g, u, 0.0, h).is_err());
        assert!(b.encode(&mut g, &[u, u], &[1.0]).is_err());
    }
}
