//! Encoder/decoder transformer with learned positional embeddings and
//! post-norm residual sublayers.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    multi_head_attention, AttentionMask, AutodiffError, BoundParams, MhaParams, ParamStore, Tape,
    Tensor, Var,
};

use super::genome::TransformerGenome;
use super::{output_layer_init, EncoderOut};

const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

fn dense_init(s: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) {
    s.insert(
        format!("{name}.w"),
        Tensor::glorot_uniform(&[din, dout], din, dout, rng),
    );
    s.insert(format!("{name}.b"), Tensor::zeros(&[dout]));
}

fn norm_init(s: &mut ParamStore, name: &str, d: usize) {
    s.insert(format!("{name}.g"), Tensor::filled(&[d], 1.0));
    s.insert(format!("{name}.b"), Tensor::zeros(&[d]));
}

fn mha_init(s: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) {
    for proj in ["q", "k", "v", "o"] {
        dense_init(s, &format!("{name}.{proj}"), d, d, rng);
    }
}

pub(crate) fn init(
    g: &TransformerGenome,
    graphemes: usize,
    phonemes: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> ParamStore {
    let d = g.g3_embed_dim;
    let ff = g.g6_ff_dim;
    let mut s = ParamStore::new();
    s.insert("src.embed", Tensor::normal(&[graphemes, d], EMBED_STD, rng));
    s.insert("src.pos", Tensor::normal(&[max_len, d], EMBED_STD, rng));
    s.insert("tgt.embed", Tensor::normal(&[phonemes, d], EMBED_STD, rng));
    s.insert("tgt.pos", Tensor::normal(&[max_len, d], EMBED_STD, rng));
    for l in 0..g.g1_enc_layers {
        let pre = format!("enc.{l}");
        mha_init(&mut s, &format!("{pre}.self"), d, rng);
        norm_init(&mut s, &format!("{pre}.ln1"), d);
        dense_init(&mut s, &format!("{pre}.ff1"), d, ff, rng);
        dense_init(&mut s, &format!("{pre}.ff2"), ff, d, rng);
        norm_init(&mut s, &format!("{pre}.ln2"), d);
    }
    for l in 0..g.g2_dec_layers {
        let pre = format!("dec.{l}");
        mha_init(&mut s, &format!("{pre}.self"), d, rng);
        norm_init(&mut s, &format!("{pre}.ln1"), d);
        mha_init(&mut s, &format!("{pre}.cross"), d, rng);
        norm_init(&mut s, &format!("{pre}.ln2"), d);
        dense_init(&mut s, &format!("{pre}.ff1"), d, ff, rng);
        dense_init(&mut s, &format!("{pre}.ff2"), ff, d, rng);
        norm_init(&mut s, &format!("{pre}.ln3"), d);
    }
    s.insert("final.w", output_layer_init(d, phonemes, rng));
    s.insert("final.b", Tensor::zeros(&[phonemes]));
    s
}

fn mha_params(p: &BoundParams, name: &str) -> MhaParams {
    let v = |proj: &str, part: &str| p.var(&format!("{name}.{proj}.{part}"));
    MhaParams {
        wq: v("q", "w"),
        bq: v("q", "b"),
        wk: v("k", "w"),
        bk: v("k", "b"),
        wv: v("v", "w"),
        bv: v("v", "b"),
        wo: v("o", "w"),
        bo: v("o", "b"),
    }
}

struct Layer<'a> {
    tape: &'a mut Tape,
    p: &'a BoundParams,
    dropout: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Layer<'_> {
    fn drop(&mut self, x: Var) -> Result<Var, AutodiffError> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => self.tape.dropout(x, self.dropout, rng),
            _ => Ok(x),
        }
    }

    fn embed(
        &mut self,
        table: &str,
        pos: &str,
        ids: &[usize],
        batch: usize,
        time: usize,
    ) -> Result<Var, AutodiffError> {
        let tok = self.tape.gather(self.p.var(table), ids, &[batch, time])?;
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..time).collect();
        let at = self
            .tape
            .gather(self.p.var(pos), &positions, &[batch, time])?;
        let x = self.tape.add(tok, at)?;
        self.drop(x)
    }

    /// `norm(x + dropout(sublayer))`
    fn residual(&mut self, x: Var, sub: Var, norm: &str) -> Result<Var, AutodiffError> {
        let sub = self.drop(sub)?;
        let sum = self.tape.add(x, sub)?;
        self.tape.layer_norm(
            sum,
            self.p.var(&format!("{norm}.g")),
            self.p.var(&format!("{norm}.b")),
            LN_EPS,
        )
    }

    fn feed_forward(&mut self, x: Var, pre: &str) -> Result<Var, AutodiffError> {
        let p = self.p;
        let h = self.tape.dense(
            x,
            p.var(&format!("{pre}.ff1.w")),
            p.var(&format!("{pre}.ff1.b")),
        )?;
        let h = self.tape.relu(h)?;
        self.tape.dense(
            h,
            p.var(&format!("{pre}.ff2.w")),
            p.var(&format!("{pre}.ff2.b")),
        )
    }

    fn attend(
        &mut self,
        q: Var,
        kv: Var,
        name: &str,
        heads: usize,
        d: usize,
        mask: &AttentionMask,
    ) -> Result<Var, AutodiffError> {
        let params = mha_params(self.p, name);
        multi_head_attention(self.tape, q, kv, heads, d, &params, Some(mask))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn encode(
    g: &TransformerGenome,
    tape: &mut Tape,
    p: &BoundParams,
    src: &[usize],
    lens: &[usize],
    time: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<EncoderOut, AutodiffError> {
    let batch = lens.len();
    let (d, heads) = (g.g3_embed_dim, g.g4_heads);
    let mut layer = Layer {
        tape,
        p,
        dropout: g.g5_dropout,
        rng,
    };
    let mask = AttentionMask::key_padding(lens, time, time);
    let mut x = layer.embed("src.embed", "src.pos", src, batch, time)?;
    for l in 0..g.g1_enc_layers {
        let pre = format!("enc.{l}");
        let a = layer.attend(x, x, &format!("{pre}.self"), heads, d, &mask)?;
        x = layer.residual(x, a, &format!("{pre}.ln1"))?;
        let f = layer.feed_forward(x, &pre)?;
        x = layer.residual(x, f, &format!("{pre}.ln2"))?;
    }
    Ok(EncoderOut {
        memory: x,
        lens: lens.to_vec(),
        time,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn decode(
    g: &TransformerGenome,
    tape: &mut Tape,
    p: &BoundParams,
    enc: &EncoderOut,
    tgt_in: &[usize],
    time: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, AutodiffError> {
    let batch = enc.lens.len();
    let (d, heads) = (g.g3_embed_dim, g.g4_heads);
    let mut layer = Layer {
        tape,
        p,
        dropout: g.g5_dropout,
        rng,
    };
    let self_mask = AttentionMask::causal(time);
    let cross_mask = AttentionMask::key_padding(&enc.lens, time, enc.time);
    let mut y = layer.embed("tgt.embed", "tgt.pos", tgt_in, batch, time)?;
    for l in 0..g.g2_dec_layers {
        let pre = format!("dec.{l}");
        let a = layer.attend(y, y, &format!("{pre}.self"), heads, d, &self_mask)?;
        y = layer.residual(y, a, &format!("{pre}.ln1"))?;
        let c = layer.attend(
            y,
            enc.memory,
            &format!("{pre}.cross"),
            heads,
            d,
            &cross_mask,
        )?;
        y = layer.residual(y, c, &format!("{pre}.ln2"))?;
        let f = layer.feed_forward(y, &pre)?;
        y = layer.residual(y, f, &format!("{pre}.ln3"))?;
    }
    layer.tape.dense(y, p.var("final.w"), p.var("final.b"))
}
