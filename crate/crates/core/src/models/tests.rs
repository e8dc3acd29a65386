use super::*;
use crate::lexicon::build_vocabularies;
use crate::lexicon::toy::toy_lexicon;

fn vocabs() -> (Vocab, Vocab) {
    build_vocabularies(&toy_lexicon(50, 8, 1)).unwrap()
}

fn small_cnn() -> CnnGenome {
    CnnGenome::from_gene_indices(&[0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap()
}

fn small_tf() -> TransformerGenome {
    TransformerGenome::from_gene_indices(&[0, 0, 0, 0, 0, 0, 0]).unwrap()
}

fn models() -> Vec<Seq2SeqModel> {
    let (g, p) = vocabs();
    vec![
        Seq2SeqModel::build_cnn(small_cnn(), g.clone(), p.clone(), DEFAULT_MAX_LEN, 3).unwrap(),
        Seq2SeqModel::build_transformer(small_tf(), g, p, DEFAULT_MAX_LEN, 3).unwrap(),
    ]
}

fn pron(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn batch_layout() {
    let m = &models()[0];
    let a = pron("k æ t");
    let b = pron("d ɒ");
    let batch = m.make_batch(&[("cat", &a), ("do", &b)]).unwrap();
    assert_eq!(batch.src_lens, [5, 4]);
    assert_eq!(batch.src_time, 5);
    assert_eq!(batch.tgt_time, 4);
    assert_eq!(
        batch.src[5..],
        [
            SOS,
            m.graphemes().id("d").unwrap(),
            m.graphemes().id("o").unwrap(),
            EOS,
            PAD
        ]
    );
    assert_eq!(batch.tgt_in[..2], [SOS, m.phonemes().id("k").unwrap()]);
    assert_eq!(batch.tgt_out[3], EOS);
    assert_eq!(batch.tgt_out[6..], [EOS, PAD]);
}

#[test]
fn padding_does_not_change_real_positions() {
    for m in models() {
        let a = pron("k æ t s");
        let b = pron("d ɒ");
        let alone = m.forward_teacher_forced("do", &b).unwrap();
        let batch = m.make_batch(&[("cattle", &a), ("do", &b)]).unwrap();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape);
        let l = m.logits(&mut tape, &p, &batch, None).unwrap();
        let v = m.phonemes().len();
        let joint = &tape.value(l).data()[batch.tgt_time * v..];
        for (i, x) in alone.data().iter().enumerate() {
            assert!(
                (x - joint[i]).abs() < 1e-12,
                "{:?} position {i}",
                m.architecture()
            );
        }
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    for m in models() {
        let a = pron("k æ t");
        let batch = m.make_batch(&[("cat", &a)]).unwrap();
        let loss = m.batch_loss(&batch).unwrap();
        let uniform = (m.phonemes().len() as f64).ln();
        assert!(
            (loss - uniform).abs() / uniform < 0.15,
            "{loss} vs {uniform}"
        );
    }
}

#[test]
fn greedy_output_is_bounded_and_clean() {
    for m in models() {
        for w in ["a", "cat", "strengths"] {
            let out = m.greedy_decode(w).unwrap();
            assert!(out.len() <= 2 * w.len() + 5);
            assert!(out.iter().all(|t| !SPECIAL_TOKENS.contains(&t.as_str())));
        }
        let batch = m.greedy_decode_batch(&["a", "cat", "strengths"]).unwrap();
        assert_eq!(batch[1], m.greedy_decode("cat").unwrap());
        assert!(matches!(m.greedy_decode(""), Err(ModelError::EmptyInput)));
        let long = "a".repeat(80);
        assert!(matches!(
            m.greedy_decode(&long),
            Err(ModelError::TooLong { .. })
        ));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for mut m in models() {
        m.params_mut().iter_mut().next().unwrap().1.data_mut()[0] = 0.123456789;
        m.set_language(Some("tx".into()));
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Seq2SeqModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.genome(), m.genome());
        assert_eq!(back.language(), Some("tx"));
        for ((n1, t1), (n2, t2)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
        let a = pron("k æ t");
        assert_eq!(
            m.forward_teacher_forced("cat", &a).unwrap(),
            back.forward_teacher_forced("cat", &a).unwrap()
        );
    }
}

#[test]
fn param_breakdown_sums_to_total() {
    for m in models() {
        let total: usize = m.param_breakdown().iter().map(|(_, c)| c).sum();
        assert_eq!(total, m.param_count());
    }
}

#[test]
fn cnn_param_count_matches_layer_formula() {
    let (gv, pv) = vocabs();
    let g = small_cnn();
    let m = Seq2SeqModel::build_cnn(g, gv.clone(), pv.clone(), DEFAULT_MAX_LEN, 0).unwrap();
    let (vg, vp) = (gv.len(), pv.len());
    let conv = |cin: usize, cout: usize| 3 * cin * cout + cout + 2 * cout;
    let mut expect = conv(vg, 32) + conv(32, 32) + conv(vp, 32) + conv(32, 32);
    expect += 32 * 32 + 32;
    expect += conv(64, 32) + conv(32, 32);
    expect += 32 * vp + vp;
    assert_eq!(m.param_count(), expect);
}
