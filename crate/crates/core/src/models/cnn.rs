//! Convolutional encoder/decoder with a single attention step.
//!
//! Encoder: `g1` same-padded conv blocks of width `g2` over one-hot
//! graphemes. Decoder: `g3` causal conv blocks of width `g4` over the shifted
//! one-hot phoneme sequence. Encoder states projected to `g4` serve as keys
//! and values for the decoder queries; the attended context is concatenated
//! with the decoder states and passed through `g5` causal conv blocks before
//! the output projection. Every block is conv, activation, layer norm.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    AttentionMask, AutodiffError, BoundParams, Padding, ParamStore, Tape, Tensor, Var,
};
use crate::lexicon::PAD;

use super::genome::{Activation, CnnGenome};
use super::{output_layer_init, EncoderOut};

pub const KERNEL_WIDTH: usize = 3;
const LN_EPS: f64 = 1e-5;

fn conv_block(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) {
    let k = KERNEL_WIDTH;
    store.insert(
        format!("{prefix}.conv.w"),
        Tensor::glorot_uniform(&[k, cin, cout], k * cin, k * cout, rng),
    );
    store.insert(format!("{prefix}.conv.b"), Tensor::zeros(&[cout]));
    store.insert(format!("{prefix}.ln.g"), Tensor::filled(&[cout], 1.0));
    store.insert(format!("{prefix}.ln.b"), Tensor::zeros(&[cout]));
}

pub(crate) fn init(
    g: &CnnGenome,
    graphemes: usize,
    phonemes: usize,
    rng: &mut ChaCha8Rng,
) -> ParamStore {
    let mut s = ParamStore::new();
    let mut cin = graphemes;
    for l in 0..g.g1_enc_layers {
        conv_block(&mut s, &format!("enc.{l}"), cin, g.g2_enc_dim, rng);
        cin = g.g2_enc_dim;
    }
    let mut cin = phonemes;
    for l in 0..g.g3_dec_layers {
        conv_block(&mut s, &format!("dec.{l}"), cin, g.g4_dec_dim, rng);
        cin = g.g4_dec_dim;
    }
    s.insert(
        "attn.proj.w",
        Tensor::glorot_uniform(
            &[g.g2_enc_dim, g.g4_dec_dim],
            g.g2_enc_dim,
            g.g4_dec_dim,
            rng,
        ),
    );
    s.insert("attn.proj.b", Tensor::zeros(&[g.g4_dec_dim]));
    let mut cin = 2 * g.g4_dec_dim;
    for (l, w) in g.output_widths().into_iter().enumerate() {
        conv_block(&mut s, &format!("out.{l}"), cin, w, rng);
        cin = w;
    }
    s.insert("final.w", output_layer_init(cin, phonemes, rng));
    s.insert("final.b", Tensor::zeros(&[phonemes]));
    s
}

/// One-hot rows; PAD maps to the zero vector so batch padding looks exactly
/// like the convolution's own zero padding.
fn one_hot(ids: &[usize], batch: usize, time: usize, classes: usize) -> Tensor {
    let mut data = vec![0.0; ids.len() * classes];
    for (r, &id) in ids.iter().enumerate() {
        if id != PAD {
            data[r * classes + id] = 1.0;
        }
    }
    Tensor::new(vec![batch, time, classes], data).expect("one-hot shape")
}

fn block(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    pad: Padding,
    act: Activation,
) -> Result<Var, AutodiffError> {
    let h = tape.conv1d(
        x,
        p.var(&format!("{prefix}.conv.w")),
        p.var(&format!("{prefix}.conv.b")),
        pad,
    )?;
    let h = match act {
        Activation::Relu => tape.relu(h)?,
        Activation::Linear => h,
    };
    tape.layer_norm(
        h,
        p.var(&format!("{prefix}.ln.g")),
        p.var(&format!("{prefix}.ln.b")),
        LN_EPS,
    )
}

pub(crate) fn encode(
    g: &CnnGenome,
    tape: &mut Tape,
    p: &BoundParams,
    src: &[usize],
    lens: &[usize],
    time: usize,
    graphemes: usize,
) -> Result<EncoderOut, AutodiffError> {
    let batch = lens.len();
    let mut x = tape.constant(one_hot(src, batch, time, graphemes));
    // Re-zero padded positions after every block so wider receptive fields
    // in later layers still see only zeros beyond the word.
    let width = g.g2_enc_dim;
    let keep: Vec<f64> = lens
        .iter()
        .flat_map(|&len| {
            (0..time).flat_map(move |t| std::iter::repeat_n(if t < len { 1.0 } else { 0.0 }, width))
        })
        .collect();
    let keep = tape.constant(Tensor::new(vec![batch, time, width], keep)?);
    for l in 0..g.g1_enc_layers {
        x = block(
            tape,
            p,
            &format!("enc.{l}"),
            x,
            Padding::SameZero,
            g.g7_activation,
        )?;
        x = tape.mul(x, keep)?;
    }
    let memory = tape.dense(x, p.var("attn.proj.w"), p.var("attn.proj.b"))?;
    Ok(EncoderOut {
        memory,
        lens: lens.to_vec(),
        time,
    })
}

pub(crate) fn decode(
    g: &CnnGenome,
    tape: &mut Tape,
    p: &BoundParams,
    enc: &EncoderOut,
    tgt_in: &[usize],
    time: usize,
    phonemes: usize,
) -> Result<Var, AutodiffError> {
    let batch = enc.lens.len();
    let mut y = tape.constant(one_hot(tgt_in, batch, time, phonemes));
    for l in 0..g.g3_dec_layers {
        y = block(
            tape,
            p,
            &format!("dec.{l}"),
            y,
            Padding::Causal,
            g.g7_activation,
        )?;
    }
    let mask = AttentionMask::key_padding(&enc.lens, time, enc.time);
    let ctx = tape.attention(y, enc.memory, enc.memory, Some(&mask))?;
    let mut h = tape.concat_last(y, ctx)?;
    for l in 0..g.g5_out_layers {
        h = block(
            tape,
            p,
            &format!("out.{l}"),
            h,
            Padding::Causal,
            g.g7_activation,
        )?;
    }
    tape.dense(h, p.var("final.w"), p.var("final.b"))
}
