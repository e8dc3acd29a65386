//! Sequence-to-sequence G2P models built on the autodiff tape.
//!
//! Sources are wrapped as `<s> graphemes </s>`; decoder inputs are
//! `<s> phonemes` and targets `phonemes </s>`. Batches are padded to their
//! longest member and padding never influences real positions.

mod cnn;
pub mod genome;
mod transformer;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    read_checkpoint, write_checkpoint, AutodiffError, BoundParams, CheckpointError, ParamStore,
    Tape, Tensor, Var,
};
use crate::lexicon::{word_graphemes, PhonemeSequence, Vocab, EOS, PAD, SOS, SPECIAL_TOKENS};

pub use genome::{
    Activation, AnyGenome, Architecture, CnnGenome, Genome, GenomeError, PublishedGenomes,
    TransformerGenome, PUBLISHED,
};

pub const DEFAULT_MAX_LEN: usize = 64;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match its genome: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Encoder states on a tape, with the real length of every source row.
pub(crate) struct EncoderOut {
    pub(crate) memory: Var,
    pub(crate) lens: Vec<usize>,
    pub(crate) time: usize,
}

/// Output projection scaled so untrained logits are close to uniform.
pub(crate) fn output_layer_init(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::normal(&[din, dout], 0.1 / (din as f64).sqrt(), rng)
}

/// Padded token ids for a teacher-forced step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub src: Vec<usize>,
    pub src_lens: Vec<usize>,
    pub src_time: usize,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub tgt_time: usize,
}

fn pad_rows(rows: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let time = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut flat = Vec::with_capacity(rows.len() * time);
    for r in rows {
        flat.extend_from_slice(r);
        flat.extend(std::iter::repeat_n(PAD, time - r.len()));
    }
    (flat, time)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    genome: AnyGenome,
    graphemes: Vocab,
    phonemes: Vocab,
    max_len: usize,
    seed: u64,
    language: Option<String>,
    param_count: usize,
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    genome: AnyGenome,
    graphemes: Vocab,
    phonemes: Vocab,
    params: ParamStore,
    max_len: usize,
    seed: u64,
    language: Option<String>,
}

impl Seq2SeqModel {
    /// Fresh model with parameters initialized from `seed`.
    pub fn new(
        genome: AnyGenome,
        graphemes: Vocab,
        phonemes: Vocab,
        max_len: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        genome.validate()?;
        if max_len < 4 {
            return Err(ModelError::Config(format!("max_len {max_len} is below 4")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match &genome {
            AnyGenome::Cnn(g) => cnn::init(g, graphemes.len(), phonemes.len(), &mut rng),
            AnyGenome::Transformer(g) => {
                transformer::init(g, graphemes.len(), phonemes.len(), max_len, &mut rng)
            }
        };
        Ok(Self {
            genome,
            graphemes,
            phonemes,
            params,
            max_len,
            seed,
            language: None,
        })
    }

    pub fn build_cnn(
        g: CnnGenome,
        graphemes: Vocab,
        phonemes: Vocab,
        max_len: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::new(AnyGenome::Cnn(g), graphemes, phonemes, max_len, seed)
    }

    pub fn build_transformer(
        g: TransformerGenome,
        graphemes: Vocab,
        phonemes: Vocab,
        max_len: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::new(
            AnyGenome::Transformer(g),
            graphemes,
            phonemes,
            max_len,
            seed,
        )
    }

    pub fn genome(&self) -> &AnyGenome {
        &self.genome
    }

    pub fn architecture(&self) -> Architecture {
        self.genome.architecture()
    }

    pub fn graphemes(&self) -> &Vocab {
        &self.graphemes
    }

    pub fn phonemes(&self) -> &Vocab {
        &self.phonemes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }

    pub fn set_language(&mut self, code: Option<String>) {
        self.language = code;
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Parameter counts per layer (`enc.0`, `dec.1`, `final`, ...), in
    /// construction order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params.iter() {
            let mut parts = name.split('.');
            let head = parts.next().unwrap_or(name);
            let key = match parts.next() {
                Some(n) if n.bytes().all(|b| b.is_ascii_digit()) => format!("{head}.{n}"),
                _ => head.to_string(),
            };
            match groups.last_mut() {
                Some((k, c)) if *k == key => *c += t.len(),
                _ => groups.push((key, t.len())),
            }
        }
        groups
    }

    /// `<s> graphemes </s>` ids of a word.
    pub fn source_ids(&self, word: &str) -> Result<Vec<usize>, ModelError> {
        let g = word_graphemes(word);
        if g.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut ids = Vec::with_capacity(g.len() + 2);
        ids.push(SOS);
        ids.extend(self.graphemes.encode(&g));
        ids.push(EOS);
        if ids.len() > self.max_len {
            return Err(ModelError::TooLong {
                len: ids.len(),
                max: self.max_len,
            });
        }
        Ok(ids)
    }

    /// Whether a training pair fits within the length limit on both sides.
    pub fn fits(&self, word: &str, pron: &[String]) -> bool {
        let g = word_graphemes(word).len();
        g > 0 && !pron.is_empty() && g + 2 <= self.max_len && pron.len() + 1 <= self.max_len
    }

    pub fn make_batch(&self, pairs: &[(&str, &[String])]) -> Result<Batch, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut srcs = Vec::with_capacity(pairs.len());
        let mut ins = Vec::with_capacity(pairs.len());
        let mut outs = Vec::with_capacity(pairs.len());
        for (word, pron) in pairs {
            srcs.push(self.source_ids(word)?);
            if pron.is_empty() {
                return Err(ModelError::EmptyInput);
            }
            if pron.len() + 1 > self.max_len {
                return Err(ModelError::TooLong {
                    len: pron.len() + 1,
                    max: self.max_len,
                });
            }
            let ids = self.phonemes.encode(pron);
            let mut tin = vec![SOS];
            tin.extend_from_slice(&ids);
            let mut tout = ids;
            tout.push(EOS);
            ins.push(tin);
            outs.push(tout);
        }
        let src_lens = srcs.iter().map(Vec::len).collect();
        let (src, src_time) = pad_rows(&srcs);
        let (tgt_in, tgt_time) = pad_rows(&ins);
        let (tgt_out, _) = pad_rows(&outs);
        Ok(Batch {
            size: pairs.len(),
            src,
            src_lens,
            src_time,
            tgt_in,
            tgt_out,
            tgt_time,
        })
    }

    fn encode(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        src: &[usize],
        lens: &[usize],
        time: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOut, AutodiffError> {
        match &self.genome {
            AnyGenome::Cnn(g) => cnn::encode(g, tape, p, src, lens, time, self.graphemes.len()),
            AnyGenome::Transformer(g) => transformer::encode(g, tape, p, src, lens, time, rng),
        }
    }

    fn decode(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        enc: &EncoderOut,
        tgt_in: &[usize],
        time: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutodiffError> {
        match &self.genome {
            AnyGenome::Cnn(g) => cnn::decode(g, tape, p, enc, tgt_in, time, self.phonemes.len()),
            AnyGenome::Transformer(g) => transformer::decode(g, tape, p, enc, tgt_in, time, rng),
        }
    }

    /// Logits `[batch, tgt_time, phonemes]` under teacher forcing. Passing a
    /// dropout RNG selects training mode.
    pub fn logits(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &Batch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutodiffError> {
        let enc = self.encode(
            tape,
            p,
            &batch.src,
            &batch.src_lens,
            batch.src_time,
            rng.as_deref_mut(),
        )?;
        self.decode(tape, p, &enc, &batch.tgt_in, batch.tgt_time, rng)
    }

    /// Mean cross-entropy over the non-padding target positions.
    pub fn loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutodiffError> {
        let logits = self.logits(tape, p, batch, rng)?;
        let rows = tape.reshape(
            logits,
            vec![batch.size * batch.tgt_time, self.phonemes.len()],
        )?;
        tape.softmax_cross_entropy(rows, &batch.tgt_out, PAD)
    }

    /// Evaluation-mode loss of a batch.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let loss = self.loss(&mut tape, &p, batch, None)?;
        Ok(tape.value(loss).item())
    }

    /// Evaluation-mode logits `[len(pron) + 1, phonemes]` for one pair.
    pub fn forward_teacher_forced(
        &self,
        word: &str,
        pron: &[String],
    ) -> Result<Tensor, ModelError> {
        let batch = self.make_batch(&[(word, pron)])?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &p, &batch, None)?;
        Ok(tape
            .value(logits)
            .clone()
            .reshaped(vec![batch.tgt_time, self.phonemes.len()])?)
    }

    pub fn greedy_decode(&self, word: &str) -> Result<PhonemeSequence, ModelError> {
        Ok(self
            .greedy_decode_batch(&[word])?
            .pop()
            .expect("one output per word"))
    }

    /// Greedy decoding of several words at once. Each word stops at `</s>`
    /// or after `min(2 * graphemes + 5, max_len - 1)` phonemes; special
    /// tokens other than `</s>` are never emitted.
    pub fn greedy_decode_batch(&self, words: &[&str]) -> Result<Vec<PhonemeSequence>, ModelError> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let srcs = words
            .iter()
            .map(|w| self.source_ids(w))
            .collect::<Result<Vec<_>, _>>()?;
        let lens: Vec<usize> = srcs.iter().map(Vec::len).collect();
        let (src, src_time) = pad_rows(&srcs);
        let memory = {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let enc = self.encode(&mut tape, &p, &src, &lens, src_time, None)?;
            tape.value(enc.memory).clone()
        };
        let caps: Vec<usize> = lens
            .iter()
            .map(|l| (2 * (l - 2) + 5).min(self.max_len - 1))
            .collect();
        let n = words.len();
        let v = self.phonemes.len();
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        let mut prefix: Vec<usize> = vec![SOS; n];
        let mut time = 1;
        while done.iter().any(|d| !d) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let mem = tape.constant(memory.clone());
            let enc = EncoderOut {
                memory: mem,
                lens: lens.clone(),
                time: src_time,
            };
            let logits = self.decode(&mut tape, &p, &enc, &prefix, time, None)?;
            let data = tape.value(logits).data();
            let mut next_prefix = Vec::with_capacity(n * (time + 1));
            for i in 0..n {
                let next = if done[i] {
                    PAD
                } else {
                    let row = &data[(i * time + time - 1) * v..][..v];
                    let best = (SPECIAL_TOKENS.len()..v)
                        .chain([EOS])
                        .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                        .expect("EOS is always a candidate");
                    if best == EOS {
                        done[i] = true;
                    } else {
                        outputs[i].push(best);
                        done[i] = outputs[i].len() >= caps[i];
                    }
                    best
                };
                next_prefix.extend_from_slice(&prefix[i * time..(i + 1) * time]);
                next_prefix.push(next);
            }
            prefix = next_prefix;
            time += 1;
        }
        Ok(outputs
            .iter()
            .map(|ids| self.phonemes.decode(ids))
            .collect())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            genome: self.genome,
            graphemes: self.graphemes.clone(),
            phonemes: self.phonemes.clone(),
            max_len: self.max_len,
            seed: self.seed,
            language: self.language.clone(),
            param_count: self.param_count(),
        };
        let header = serde_json::to_value(header).map_err(CheckpointError::from)?;
        write_checkpoint(w, &header, &self.params)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, ModelError> {
        let (header, params) = read_checkpoint(r)?;
        let h: Header = serde_json::from_value(header).map_err(CheckpointError::from)?;
        if h.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Mismatch(format!(
                "unsupported format version {}",
                h.format_version
            )));
        }
        let mut model = Self::new(h.genome, h.graphemes, h.phonemes, h.max_len, h.seed)?;
        let expected: BTreeMap<&str, &[usize]> =
            model.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let found: BTreeMap<&str, &[usize]> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(ModelError::Mismatch(
                "parameter names or shapes differ".into(),
            ));
        }
        for (name, t) in params.iter() {
            *model.params.get_mut(name).expect("checked above") = t.clone();
        }
        model.language = h.language;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests;
