use super::*;
use crate::corpus::{SyntheticTask, SyntheticTaskSpec};
use proptest::prelude::*;

fn tiny(vocab: usize, d: usize, context: usize, seed: u64) -> PolicyParams {
    PolicyParams::init(PolicyHyper { vocab_size: vocab, d_model: d, context_len: context }, seed)
}

fn tensor<'a>(p: &'a PolicyParams, name: &str) -> &'a [f64] {
    &p.tensors().iter().find(|t| t.name == name).unwrap().values
}

fn tensor_mut<'a>(p: &'a mut PolicyParams, name: &str) -> &'a mut Vec<f64> {
    &mut p.tensors_mut().iter_mut().find(|t| t.name == name).unwrap().values
}

/// Straight-line recomputation of the whole network for one prefix, written
/// independently of the tape and the incremental decoder.
fn reference_next_logprobs(p: &PolicyParams, tokens: &[usize], rows: &[usize]) -> Vec<f64> {
    let h = p.hyper();
    let (d, v) = (h.d_model, h.vocab_size);
    let emb = tensor(p, "tok_embed");
    let pos = tensor(p, "pos_embed");
    let mat = |x: &[f64], w: &[f64], m: usize| -> Vec<f64> {
        (0..m).map(|j| (0..x.len()).map(|i| x[i] * w[i * m + j]).sum()).collect()
    };
    let hs: Vec<Vec<f64>> = tokens
        .iter()
        .zip(rows)
        .map(|(&t, &r)| (0..d).map(|i| emb[t * d + i] + pos[r * d + i]).collect())
        .collect();
    let last = &hs[hs.len() - 1];
    let q = mat(last, tensor(p, "w_query"), d);
    let keys: Vec<Vec<f64>> = hs.iter().map(|x| mat(x, tensor(p, "w_key"), d)).collect();
    let vals: Vec<Vec<f64>> = hs.iter().map(|x| mat(x, tensor(p, "w_value"), d)).collect();
    let scores: Vec<f64> =
        keys.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let mut o = last.clone();
    for (s, val) in scores.iter().zip(&vals) {
        for i in 0..d {
            o[i] += (s - m).exp() / z * val[i];
        }
    }
    let hb = tensor(p, "b_hidden");
    let f: Vec<f64> = mat(&o, tensor(p, "w_hidden"), d).iter().zip(hb).map(|(a, b)| (a + b).tanh()).collect();
    let ob = tensor(p, "b_out");
    let logits: Vec<f64> = mat(&f, tensor(p, "w_out"), v).iter().zip(ob).map(|(a, b)| a + b).collect();
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lz = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|l| l - lz).collect()
}

fn reference_seq_logprob(p: &PolicyParams, prompt: &[usize], target: &[usize]) -> f64 {
    let c = p.hyper().context_len;
    let mut tokens = prompt.to_vec();
    let mut rows: Vec<usize> = (0..prompt.len()).collect();
    let mut total = 0.0;
    for (t, &y) in target.iter().enumerate() {
        total += reference_next_logprobs(p, &tokens, &rows)[y];
        tokens.push(y);
        rows.push(c + t + 1);
    }
    total
}

#[test]
fn zeroed_model_is_uniform() {
    let p = PolicyParams::zeros(PolicyHyper::new(7));
    let lp = logprob_seq(&p, &[0, 3, 5], &[1, 2, 6, 6]).unwrap();
    for v in lp {
        assert!((v + (7f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn two_token_vocab_matches_exhaustive_enumeration() {
    let p = tiny(2, 4, 8, 17);
    let prompt = [1, 0];
    let mut total = 0.0;
    for code in 0..8usize {
        let target = [code & 1, (code >> 1) & 1, (code >> 2) & 1];
        let lp: f64 = logprob_seq(&p, &prompt, &target).unwrap().iter().sum();
        let oracle = reference_seq_logprob(&p, &prompt, &target);
        assert!((lp - oracle).abs() < 1e-9, "{lp} vs {oracle}");
        total += lp.exp();
    }
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn tape_and_decoder_agree() {
    let p = tiny(9, 6, 16, 3);
    let prompt = [4, 5, 6, 2];
    let target = [7, 8, 1, 3, 3];
    let (_, tape_lp) = weighted_logprob_grad(&p, &prompt, &target, &[1.0; 5]).unwrap();
    let dec_lp = logprob_seq(&p, &prompt, &target).unwrap();
    for (a, b) in tape_lp.iter().zip(&dec_lp) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    let mut p = tiny(5, 4, 8, 21);
    let prompt = [2, 3];
    let target = [4, 0, 1];
    let w = [0.7, -1.2, 0.4];
    let f = |p: &PolicyParams| -> f64 {
        logprob_seq(p, &prompt, &target).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let (g, _) = weighted_logprob_grad(&p, &prompt, &target, &w).unwrap();
    let h = 1e-5;
    for ti in 0..p.tensors().len() {
        for j in 0..p.tensors()[ti].values.len() {
            let orig = p.tensors()[ti].values[j];
            p.tensors_mut()[ti].values[j] = orig + h;
            let up = f(&p);
            p.tensors_mut()[ti].values[j] = orig - h;
            let down = f(&p);
            p.tensors_mut()[ti].values[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.0[ti][j];
            assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()), "{} {j}: {fd} vs {an}", p.tensors()[ti].name);
        }
    }
}

#[test]
fn kl_of_known_distributions() {
    let hyper = PolicyHyper { vocab_size: 2, d_model: 2, context_len: 8 };
    let snapshot = PolicyParams::zeros(hyper);
    let mut p = PolicyParams::zeros(hyper);
    *tensor_mut(&mut p, "b_out") = vec![0.9f64.ln(), 0.1f64.ln()];
    let kl = kl_per_position(&p, &snapshot, &[0], &[1, 0]).unwrap();
    let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
    assert!((expected - 0.368).abs() < 1e-3);
    for v in kl {
        assert!((v - expected).abs() < 1e-12);
    }
}

#[test]
fn kl_against_self_is_zero() {
    let p = tiny(6, 4, 16, 8);
    let kl = kl_per_position(&p, &p, &[1, 2, 3], &[4, 5, 0]).unwrap();
    assert_eq!(kl, vec![0.0; 3]);
}

#[test]
fn sampling_is_deterministic_and_records_true_logprobs() {
    let p = tiny(12, 8, 32, 4);
    let prompt = Prompt { id: "x".into(), tokens: vec![5, 6, 7, 4] };
    for temperature in [1.0, 0.7, 1.5] {
        let a = sample_k(&p, &prompt, 3, temperature, 99).unwrap();
        let b = sample_k(&p, &prompt, 3, temperature, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for (i, h) in a.iter().enumerate() {
            assert_eq!(h.sample_index, i + 1);
            assert!(!h.tokens.is_empty() && h.tokens.len() <= prompt.max_response_len(32));
            let lp = logprob_seq(&p, &prompt.tokens, &h.tokens).unwrap();
            for (x, y) in lp.iter().zip(&h.old_logprobs) {
                assert!((x - y).abs() < 1e-9);
                assert!(*y <= 0.0);
            }
        }
    }
}

#[test]
fn zero_temperature_is_greedy() {
    let p = tiny(12, 8, 32, 5);
    let prompt = Prompt { id: "x".into(), tokens: vec![5, 6, 7, 4] };
    let hs = sample_k(&p, &prompt, 4, 0.0, 1).unwrap();
    let g = greedy_decode(&p, &prompt).unwrap();
    assert!(hs.iter().all(|h| h.tokens == g));
}

#[test]
fn greedy_is_invariant_to_logit_rescaling() {
    let p = tiny(12, 8, 32, 6);
    let mut scaled = p.clone();
    for name in ["w_out", "b_out"] {
        tensor_mut(&mut scaled, name).iter_mut().for_each(|x| *x *= 3.5);
    }
    let prompt = Prompt { id: "x".into(), tokens: vec![5, 6, 7, 8, 4] };
    assert_eq!(greedy_decode(&p, &prompt).unwrap(), greedy_decode(&scaled, &prompt).unwrap());
}

#[test]
fn contract_errors() {
    let p = tiny(5, 4, 6, 1);
    assert!(matches!(logprob_seq(&p, &[0], &[]), Err(PolicyError::EmptyTarget)));
    assert!(matches!(logprob_seq(&p, &[0], &[9]), Err(PolicyError::TokenOutOfVocab { id: 9, .. })));
    assert!(matches!(logprob_seq(&p, &[0; 4], &[1; 3]), Err(PolicyError::ContextOverflow { .. })));
    let prompt = Prompt { id: "x".into(), tokens: vec![0; 6] };
    assert!(matches!(sample_k(&p, &prompt, 1, 1.0, 0), Err(PolicyError::ContextOverflow { .. })));
    let prompt = Prompt { id: "x".into(), tokens: vec![0, 2] };
    assert!(matches!(sample_k(&p, &prompt, 0, 1.0, 0), Err(PolicyError::NoSamples)));
    assert!(matches!(sample_k(&p, &prompt, 1, -1.0, 0), Err(PolicyError::BadTemperature(_))));
}

#[test]
fn snapshot_restore_is_identity() {
    let p = tiny(8, 4, 16, 2);
    let s = PolicySnapshot::take(&p, 3);
    assert_eq!(s.version(), 3);
    assert_eq!(s.restore(), p);
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let task = SyntheticTask::new(SyntheticTaskSpec::cipher_with_entities(0)).unwrap();
    let vocab = task.vocab().clone();
    let p = PolicyParams::init(PolicyHyper::new(vocab.len()), 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    checkpoint::save(&path, &p, &vocab).unwrap();
    let (q, v) = checkpoint::load(&path).unwrap();
    assert_eq!(q, p);
    assert_eq!(v, vocab);

    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("\"shape\":[", "\"shape\":[1,", 1);
    std::fs::write(&path, broken).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(PolicyError::Checkpoint(_))));

    let other = PolicyParams::init(PolicyHyper::new(vocab.len() + 1), 7);
    assert!(checkpoint::save(&path, &other, &vocab).is_err());
}

#[test]
fn prompt_template() {
    let task = SyntheticTask::new(SyntheticTaskSpec::cipher_with_entities(0)).unwrap();
    let src: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let prompt = Prompt::render("p", task.vocab(), "tgt", &src).unwrap();
    let symbols = task.vocab().decode(&prompt.tokens);
    assert_eq!(symbols, vec!["<2tgt>", "a", "b", "<sep>"]);
    assert_eq!(prompt.max_response_len(64), 12);
    assert_eq!(prompt.max_response_len(10), 6);
}

#[test]
fn batch_gradient_is_sum_of_parts() {
    let p = tiny(6, 4, 16, 9);
    let a = WeightedSequence { prompt: &[1, 2], target: &[3, 4], weights: vec![1.0, 0.5] };
    let b = WeightedSequence { prompt: &[2, 5], target: &[0], weights: vec![-2.0] };
    let (total, lps) = batch_weighted_grad(&p, &[a, b]).unwrap();
    let (ga, _) = weighted_logprob_grad(&p, &[1, 2], &[3, 4], &[1.0, 0.5]).unwrap();
    let (gb, _) = weighted_logprob_grad(&p, &[2, 5], &[0], &[-2.0]).unwrap();
    let mut expect = ga;
    expect.add_assign(&gb);
    assert_eq!(total, expect);
    assert_eq!(lps.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn next_token_distributions_normalise(seed in 0u64..10_000, len in 1usize..6) {
        let p = tiny(7, 4, 16, seed);
        let target: Vec<usize> = (0..len).map(|i| (seed as usize + 3 * i) % 7).collect();
        for dist in next_token_logprobs(&p, &[2, 3], &target).unwrap() {
            let s: f64 = dist.iter().map(|x| x.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_non_negative(a in 0u64..10_000, b in 0u64..10_000) {
        let p = tiny(7, 4, 16, a);
        let q = tiny(7, 4, 16, b);
        for v in kl_per_position(&p, &q, &[1, 2], &[3, 4, 5]).unwrap() {
            prop_assert!(v >= 0.0);
        }
    }
}
