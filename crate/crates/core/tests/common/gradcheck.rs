//! Central finite-difference check of every tape primitive on random shapes.

use phonostudio::autodiff::{
    multi_head_attention, AttentionMask, MhaParams, Padding, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Relative errors are measured against max(|analytic|, |numeric|, FLOOR).
pub const FLOOR: f64 = 1e-3;

pub struct PrimitiveResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

struct Case {
    inputs: Vec<Tensor>,
    build: Build,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so ReLU kinks never sit inside the stencil.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn any_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = dim(rng, 1, 3);
    (0..rank).map(|_| dim(rng, 1, 4)).collect()
}

fn random_mask(groups: usize, tq: usize, tk: usize, rng: &mut ChaCha8Rng) -> AttentionMask {
    let mut allowed: Vec<bool> = (0..groups * tq * tk)
        .map(|_| rng.random_bool(0.6))
        .collect();
    for row in allowed.chunks_mut(tk) {
        let j = rng.random_range(0..tk);
        row[j] = true;
    }
    AttentionMask::grouped(groups, tq, tk, allowed).unwrap()
}

fn case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    match name {
        "add" | "mul" => {
            let s = any_shape(rng);
            let mul = name == "mul";
            Case {
                inputs: vec![uniform(&s, rng), uniform(&s, rng)],
                build: Box::new(move |t, v| {
                    if mul {
                        t.mul(v[0], v[1]).unwrap()
                    } else {
                        t.add(v[0], v[1]).unwrap()
                    }
                }),
            }
        }
        "sum" => {
            let s = any_shape(rng);
            Case {
                inputs: vec![uniform(&s, rng)],
                build: Box::new(|t, v| t.sum(v[0]).unwrap()),
            }
        }
        "relu" => {
            let s = any_shape(rng);
            Case {
                inputs: vec![off_zero(&s, rng)],
                build: Box::new(|t, v| t.relu(v[0]).unwrap()),
            }
        }
        "reshape" => {
            let (a, b, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
            Case {
                inputs: vec![uniform(&[a, b, c], rng)],
                build: Box::new(move |t, v| t.reshape(v[0], vec![a * b, c]).unwrap()),
            }
        }
        "concat_last" => {
            let (a, b) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let (d1, d2) = (dim(rng, 1, 4), dim(rng, 1, 4));
            Case {
                inputs: vec![uniform(&[a, b, d1], rng), uniform(&[a, b, d2], rng)],
                build: Box::new(|t, v| t.concat_last(v[0], v[1]).unwrap()),
            }
        }
        "conv1d_same" | "conv1d_causal" => {
            let causal = name == "conv1d_causal";
            let k = if causal {
                dim(rng, 1, 4)
            } else {
                [1, 3, 5][dim(rng, 0, 2)]
            };
            let (b, t, cin, cout) = (
                dim(rng, 1, 3),
                dim(rng, 1, 6),
                dim(rng, 1, 3),
                dim(rng, 1, 3),
            );
            let pad = if causal {
                Padding::Causal
            } else {
                Padding::SameZero
            };
            Case {
                inputs: vec![
                    uniform(&[b, t, cin], rng),
                    uniform(&[k, cin, cout], rng),
                    uniform(&[cout], rng),
                ],
                build: Box::new(move |tp, v| tp.conv1d(v[0], v[1], v[2], pad).unwrap()),
            }
        }
        "dense" => {
            let (n, din, dout) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let lead = if rng.random_bool(0.5) {
                vec![n]
            } else {
                vec![dim(rng, 1, 2), n]
            };
            let mut xs = lead.clone();
            xs.push(din);
            Case {
                inputs: vec![
                    uniform(&xs, rng),
                    uniform(&[din, dout], rng),
                    uniform(&[dout], rng),
                ],
                build: Box::new(|t, v| t.dense(v[0], v[1], v[2]).unwrap()),
            }
        }
        "layer_norm" => {
            let (n, d) = (dim(rng, 1, 4), dim(rng, 2, 6));
            let mut x = uniform(&[n, d], rng);
            for v in x.data_mut() {
                *v *= 3.0;
            }
            Case {
                inputs: vec![x, uniform(&[d], rng), uniform(&[d], rng)],
                build: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            }
        }
        "attention" => {
            let (b, tq, tk, d, dv) = (
                dim(rng, 1, 3),
                dim(rng, 1, 4),
                dim(rng, 1, 4),
                dim(rng, 1, 4),
                dim(rng, 1, 3),
            );
            let mask = rng.random_bool(0.5).then(|| random_mask(b, tq, tk, rng));
            Case {
                inputs: vec![
                    uniform(&[b, tq, d], rng),
                    uniform(&[b, tk, d], rng),
                    uniform(&[b, tk, dv], rng),
                ],
                build: Box::new(move |t, v| t.attention(v[0], v[1], v[2], mask.as_ref()).unwrap()),
            }
        }
        "split_heads" | "merge_heads" => {
            let (b, t, h, dh) = (
                dim(rng, 1, 3),
                dim(rng, 1, 4),
                dim(rng, 1, 3),
                dim(rng, 1, 3),
            );
            if name == "split_heads" {
                Case {
                    inputs: vec![uniform(&[b, t, h * dh], rng)],
                    build: Box::new(move |tp, v| tp.split_heads(v[0], h).unwrap()),
                }
            } else {
                Case {
                    inputs: vec![uniform(&[b * h, t, dh], rng)],
                    build: Box::new(move |tp, v| tp.merge_heads(v[0], h).unwrap()),
                }
            }
        }
        "gather" => {
            let (vocab, d, b, t) = (
                dim(rng, 2, 6),
                dim(rng, 1, 4),
                dim(rng, 1, 3),
                dim(rng, 1, 4),
            );
            let ids: Vec<usize> = (0..b * t).map(|_| rng.random_range(0..vocab)).collect();
            Case {
                inputs: vec![uniform(&[vocab, d], rng)],
                build: Box::new(move |tp, v| tp.gather(v[0], &ids, &[b, t]).unwrap()),
            }
        }
        "dropout" => {
            let s = any_shape(rng);
            let seed = rng.random();
            Case {
                inputs: vec![uniform(&s, rng)],
                build: Box::new(move |t, v| {
                    t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))
                        .unwrap()
                }),
            }
        }
        "softmax_cross_entropy" => {
            let (n, c) = (dim(rng, 1, 5), dim(rng, 2, 6));
            let pad = 0;
            let mut targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let keep = rng.random_range(0..n);
            if targets[keep] == pad {
                targets[keep] = 1;
            }
            let mut logits = uniform(&[n, c], rng);
            for v in logits.data_mut() {
                *v *= 3.0;
            }
            Case {
                inputs: vec![logits],
                build: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &targets, pad).unwrap()),
            }
        }
        "multi_head_attention" => {
            let heads = dim(rng, 1, 2);
            let d = heads * dim(rng, 1, 2);
            let (b, tq, tk) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
            let mask = random_mask(b, tq, tk, rng);
            let mut inputs = vec![uniform(&[b, tq, d], rng), uniform(&[b, tk, d], rng)];
            for _ in 0..4 {
                inputs.push(uniform(&[d, d], rng));
                inputs.push(uniform(&[d], rng));
            }
            Case {
                inputs,
                build: Box::new(move |t, v| {
                    let p = MhaParams {
                        wq: v[2],
                        bq: v[3],
                        wk: v[4],
                        bk: v[5],
                        wv: v[6],
                        bv: v[7],
                        wo: v[8],
                        bo: v[9],
                    };
                    multi_head_attention(t, v[0], v[1], heads, d, &p, Some(&mask)).unwrap()
                }),
            }
        }
        other => panic!("no generator for {other}"),
    }
}

pub const PRIMITIVES: [&str; 17] = [
    "add",
    "mul",
    "sum",
    "relu",
    "reshape",
    "concat_last",
    "conv1d_same",
    "conv1d_causal",
    "dense",
    "layer_norm",
    "attention",
    "split_heads",
    "merge_heads",
    "gather",
    "dropout",
    "softmax_cross_entropy",
    "multi_head_attention",
];

/// Scalar objective `sum(output * weights)` evaluated without gradients.
fn objective(c: &Case, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (c.build)(&mut tape, &vars);
    tape.value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Largest relative error between analytic and numeric gradients of one case.
fn check_case(c: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = c.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (c.build)(&mut tape, &vars);
    let weights = uniform(tape.value(out).shape(), rng);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = c.inputs.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; c.inputs[i].len()]);
        for j in 0..c.inputs[i].len() {
            let x = c.inputs[i].data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let up = objective(c, &probe, &weights);
            probe[i].data_mut()[j] = x - STEP;
            let down = objective(c, &probe, &weights);
            probe[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Runs `trials` random cases for every primitive.
pub fn run_suite(seed: u64, trials: usize) -> Vec<PrimitiveResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PRIMITIVES
        .iter()
        .copied()
        .map(|name| {
            let mut max_rel_err: f64 = 0.0;
            for _ in 0..trials {
                let c = case(name, &mut rng);
                max_rel_err = max_rel_err.max(check_case(&c, &mut rng));
            }
            PrimitiveResult {
                name,
                trials,
                max_rel_err,
            }
        })
        .collect()
}
