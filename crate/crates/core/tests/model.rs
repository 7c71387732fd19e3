use ctxnmt_core::corpus::{Document, DocumentBatch, SentencePair};
use ctxnmt_core::decode::DecodeConfig;
use ctxnmt_core::model::{
    context_stack_count, param_count, param_layout, Carry, ContextCache, StateMatrix,
};
use ctxnmt_core::optim::AdaGradState;
use ctxnmt_core::train::{batch_gradients, train_batch, TrainConfig};
use ctxnmt_core::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        emb: 6,
        hidden: 8,
        src_vocab: 15,
        trg_vocab: 13,
        layers: 2,
        dropout: 0.0,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_model(variant: Variant, seed: u64, scale: f64) -> Model<f64> {
    let mut r = rng(seed);
    let mut m = Model::new(cfg(variant), &mut r).unwrap();
    for t in m.params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = r.gen_range(-scale..scale));
    }
    m
}

fn toks(r: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<u32> {
    (0..n).map(|_| r.gen_range(4..vocab)).collect()
}

fn random_states(r: &mut ChaCha8Rng, rows: usize, dim: usize) -> StateMatrix<f64> {
    StateMatrix {
        rows,
        dim,
        data: (0..rows * dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn parameter_count_identities() {
    for (e, h, vs, vt) in [(6, 8, 15, 13), (32, 32, 300, 280), (512, 512, 30000, 30000), (4, 4, 12, 12)] {
        let c = |v| ModelConfig {
            variant: v,
            emb: e,
            hidden: h,
            src_vocab: vs,
            trg_vocab: vt,
            layers: 2,
            dropout: 0.2,
        };
        let n = |v| param_count(&c(v));
        assert_eq!(n(Variant::SharedSource), n(Variant::SharedTarget));
        assert_eq!(n(Variant::SharedTarget), n(Variant::SharedMix));
        assert_eq!(n(Variant::SharedSource) - n(Variant::Baseline), h * h);
        // two uni layers of width H: 4H(E+H)+4H and 4H(H+H)+4H
        let stack = 4 * h * (e + h) + 4 * h + 4 * h * (2 * h) + 4 * h;
        assert_eq!(context_stack_count(&c(Variant::SeparatedSource)), stack);
        assert_eq!(n(Variant::SeparatedSource) - n(Variant::SharedSource), stack);
        assert_eq!(n(Variant::SeparatedTarget), n(Variant::SeparatedSource));
    }
    // the layout matches the tensors actually allocated
    for v in Variant::ALL {
        let m = Model::<f32>::zeros(cfg(v)).unwrap();
        assert_eq!(m.param_count(), param_count(&cfg(v)));
        let names: Vec<_> = param_layout(&cfg(v)).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().any(|n| n.starts_with("ctx.")), v.has_context_encoder());
    }
}

#[test]
fn uniform_model_loss_is_log_vocab() {
    let m = Model::<f64>::zeros(cfg(Variant::SharedTarget)).unwrap();
    let (loss, _) = m
        .forward_loss(&[vec![4, 5, 6]], &[vec![7, 8]], &[None], false, &mut rng(0))
        .unwrap();
    assert!((loss - (13f64).ln()).abs() < 1e-12);
}

#[test]
fn empty_position_is_an_error() {
    let m = Model::<f32>::zeros(cfg(Variant::Baseline)).unwrap();
    assert!(m.forward_loss(&[], &[], &[], false, &mut rng(0)).is_err());
}

#[test]
fn masked_rows_contribute_nothing() {
    let m = random_model(Variant::SharedSource, 3, 0.3);
    let doc = |pairs: Vec<(Vec<u32>, Vec<u32>)>| {
        Document::new(
            "d".into(),
            pairs
                .into_iter()
                .map(|(source, target)| SentencePair { source, target })
                .collect(),
        )
        .unwrap()
    };
    let a = doc(vec![(vec![4, 5], vec![6]), (vec![7], vec![8, 9])]);
    let b = doc(vec![(vec![5, 5, 6], vec![6, 7])]);
    let both = batch_gradients(&m, &[a.clone(), b.clone()], &DocumentBatch { documents: vec![0, 1] }, false, &mut rng(0)).unwrap();
    let ga = batch_gradients(&m, &[a], &DocumentBatch { documents: vec![0] }, false, &mut rng(0)).unwrap();
    let gb = batch_gradients(&m, &[b], &DocumentBatch { documents: vec![0] }, false, &mut rng(0)).unwrap();
    assert_eq!(both.tokens, ga.tokens + gb.tokens);
    assert!((both.loss_sum - ga.loss_sum - gb.loss_sum).abs() < 1e-12);
    let t = both.tokens as f64;
    for ((x, y), z) in both.grads.iter().flatten().zip(ga.grads.iter().flatten()).zip(gb.grads.iter().flatten()) {
        let expect = (y * ga.tokens as f64 + z * gb.tokens as f64) / t;
        assert!((x - expect).abs() < 1e-12);
    }
}

#[test]
fn fifty_adagrad_steps_reduce_loss_on_one_pair() {
    let mut r = rng(5);
    let mut c = cfg(Variant::Baseline);
    c.dropout = 0.2;
    let mut m = Model::<f32>::new(c, &mut r).unwrap();
    let doc = Document::new(
        "x".into(),
        vec![SentencePair {
            source: vec![4, 5, 6, 7],
            target: vec![8, 9, 10],
        }],
    )
    .unwrap();
    let docs = vec![doc];
    let batch = DocumentBatch { documents: vec![0] };
    let tc = TrainConfig {
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let mut opt = AdaGradState::new(&m.params, tc.learning_rate).unwrap();
    let loss = |m: &Model<f32>| {
        m.forward_loss(&[vec![4, 5, 6, 7]], &[vec![8, 9, 10]], &[None], false, &mut rng(0))
            .unwrap()
            .0
    };
    let before = loss(&m);
    for _ in 0..50 {
        train_batch(&mut m, &mut opt, &docs, &batch, &tc, &mut r).unwrap();
    }
    let after = loss(&m);
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn single_source_token_attends_with_weight_one() {
    let m = random_model(Variant::SharedMix, 1, 1.0);
    let enc = m.encode(&[9]).unwrap();
    assert_eq!((enc.rows, enc.dim), (1, 8));
    let carry = m.initial_carry(&[9]).unwrap();
    let out = m.decode_step(1, &carry, &enc, &ContextCache::default()).unwrap();
    assert_eq!(out.alpha, vec![1.0]);
}

#[test]
fn zero_model_gives_zero_states() {
    let m = Model::<f64>::zeros(cfg(Variant::Baseline)).unwrap();
    let enc = m.encode(&[4, 5, 6]).unwrap();
    assert!(enc.data.iter().all(|&v| v == 0.0));
}

#[test]
fn reversed_input_mirrors_backward_half() {
    let mut c = cfg(Variant::Baseline);
    c.layers = 1;
    let mut r = rng(2);
    let mut m = Model::<f64>::new(c, &mut r).unwrap();
    for n in ["enc.l0.w", "enc.l0.b"] {
        let fwd = m.params.by_name(&n.replace("l0", "l0.fwd")).unwrap().data.clone();
        m.params.by_name_mut(&n.replace("l0", "l0.bwd")).unwrap().data = fwd;
    }
    let half = c.hidden / 2;
    let a = m.encode(&[4, 9]).unwrap();
    let b = m.encode(&[9, 4]).unwrap();
    for t in 0..2 {
        let fwd_a = &a.row(t)[..half];
        let bwd_b = &b.row(1 - t)[half..];
        assert_eq!(fwd_a, bwd_b);
    }
}

#[test]
fn attention_weights_are_normalised_over_random_steps() {
    let mut r = rng(11);
    let variants = [Variant::SharedMix, Variant::SeparatedSource, Variant::SharedTarget, Variant::Baseline];
    let models: Vec<Model<f64>> = variants
        .iter()
        .enumerate()
        .map(|(k, &v)| random_model(v, 20 + k as u64, 1.0))
        .collect();
    let mut checked = 0;
    for step in 0..1000 {
        let m = &models[step % models.len()];
        let n = r.gen_range(1..7);
        let src = toks(&mut r, n, 15);
        let enc = m.encode(&src).unwrap();
        let mut cache = ContextCache::default();
        if r.gen_bool(0.8) {
            let n = r.gen_range(0..6);
            cache.source = Some(random_states(&mut r, n, 8));
            let n = r.gen_range(0..6);
            cache.target = Some(random_states(&mut r, n, 8));
        }
        let carry = Carry {
            layers: (0..2)
                .map(|_| {
                    let h = random_states(&mut r, 1, 8).data;
                    let c = random_states(&mut r, 1, 8).data;
                    (h, c)
                })
                .collect(),
        };
        let out = m.decode_step(r.gen_range(0..13), &carry, &enc, &cache).unwrap();
        let sum: f64 = out.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(out.alpha.iter().all(|&a| a >= 0.0));
        let p: f64 = out.probs.iter().sum();
        assert!((p - 1.0).abs() < 1e-6 && out.probs.iter().all(|&x| x > 0.0));
        for beta in &out.beta {
            if beta.is_empty() {
                continue;
            }
            let s: f64 = beta.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn empty_cache_gives_zero_context() {
    for v in Variant::ALL {
        let m = random_model(v, 4, 1.0);
        let c = m.context_attention(&[0.5; 8], &ContextCache::default()).unwrap();
        assert_eq!(c, vec![0.0; 8]);
    }
}

#[test]
fn zero_states_give_uniform_beta_and_zero_context() {
    let m = random_model(Variant::SharedTarget, 4, 1.0);
    let cache = ContextCache {
        source: None,
        target: Some(StateMatrix {
            rows: 4,
            dim: 8,
            data: vec![0.0; 32],
        }),
    };
    let enc = m.encode(&[4, 5]).unwrap();
    let carry = m.initial_carry(&[4, 5]).unwrap();
    let out = m.decode_step(1, &carry, &enc, &cache).unwrap();
    assert_eq!(out.beta[0], vec![0.25; 4]);
    assert_eq!(out.context, vec![0.0; 8]);
}

#[test]
fn shared_mix_decomposes_into_its_parts() {
    let mut r = rng(8);
    let mix = random_model(Variant::SharedMix, 9, 1.0);
    let src = Model::from_params(cfg(Variant::SharedSource), mix.params.clone()).unwrap();
    let trg = Model::from_params(cfg(Variant::SharedTarget), mix.params.clone()).unwrap();
    let q: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
    let s = random_states(&mut r, 3, 8);
    let t = random_states(&mut r, 5, 8);
    // empty target cache: bitwise the source-only context
    let only_src = ContextCache {
        source: Some(s.clone()),
        target: Some(StateMatrix::empty(8)),
    };
    assert_eq!(
        mix.context_attention(&q, &only_src).unwrap(),
        src.context_attention(&q, &only_src).unwrap()
    );
    let both = ContextCache {
        source: Some(s),
        target: Some(t),
    };
    let c = mix.context_attention(&q, &both).unwrap();
    let a = src.context_attention(&q, &both).unwrap();
    let b = trg.context_attention(&q, &both).unwrap();
    for k in 0..8 {
        assert_eq!(c[k], a[k] + b[k]);
    }
}

#[test]
fn shared_source_cache_is_the_encoder_output() {
    let m = random_model(Variant::SharedSource, 6, 0.5);
    let (_, prev) = m
        .forward_loss(&[vec![4, 5, 6]], &[vec![7]], &[None], false, &mut rng(0))
        .unwrap();
    let cache = m.context_states(1, Some(&prev[0])).unwrap();
    assert_eq!(cache.source.as_ref().unwrap(), &m.encode(&[4, 5, 6]).unwrap());
    assert_eq!(cache.source.unwrap(), prev[0].encoder);
    assert!(m.context_states(1, None).is_err());
    assert!(m.context_states(0, Some(&prev[0])).unwrap().is_empty());
}

#[test]
fn zeroed_context_encoder_yields_zero_cache() {
    let mut m = random_model(Variant::SeparatedTarget, 6, 0.5);
    for i in 0..m.params.len() {
        let id = ctxnmt_core::params::ParamId(i);
        if m.params.name(id).starts_with("ctx.") {
            m.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (_, prev) = m
        .forward_loss(&[vec![4, 5]], &[vec![7, 8, 9]], &[None], false, &mut rng(0))
        .unwrap();
    let cache = m.context_states(1, Some(&prev[0])).unwrap();
    let t = cache.target.as_ref().unwrap();
    assert_eq!(t.rows, 3);
    assert!(t.data.iter().all(|&v| v == 0.0));
    assert_eq!(m.context_attention(&[1.0; 8], &cache).unwrap(), vec![0.0; 8]);
}

fn pretrained_family(seed: u64) -> (Model<f64>, Vec<Model<f64>>) {
    let base = random_model(Variant::Baseline, seed, 0.5);
    let mut r = rng(seed + 1);
    let family = Variant::ALL
        .iter()
        .map(|&v| Model::from_pretrained(&base, v, &mut r).unwrap())
        .collect();
    (base, family)
}

#[test]
fn zeroed_context_block_matches_baseline_distribution() {
    let (base, family) = pretrained_family(30);
    let mut r = rng(31);
    for m in &family {
        for _ in 0..20 {
            let src = toks(&mut r, 4, 15);
            let enc = m.encode(&src).unwrap();
            let carry = m.initial_carry(&src).unwrap();
            let cache = ContextCache {
                source: Some(random_states(&mut r, 3, 8)),
                target: Some(random_states(&mut r, 2, 8)),
            };
            let y = r.gen_range(0..13);
            let p = m.decode_step(y, &carry, &enc, &cache).unwrap().probs;
            let q = base.decode_step(y, &carry, &enc, &ContextCache::default()).unwrap().probs;
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn first_sentence_ignores_the_cache_and_the_variant() {
    let (base, family) = pretrained_family(40);
    let docs: Vec<Vec<u32>> = vec![vec![4, 5, 6], vec![7, 8], vec![9, 10, 11, 12]];
    let opts = DecodeConfig::default();
    let reference = base.translate_document(&docs[..1], &opts).unwrap().hypotheses[0].clone();
    let enc = base.encode(&docs[0]).unwrap();
    let carry = base.initial_carry(&docs[0]).unwrap();
    let p0 = base.decode_step(1, &carry, &enc, &ContextCache::default()).unwrap().probs;
    for m in &family {
        let full = m.translate_document(&docs, &opts).unwrap();
        assert_eq!(full.hypotheses[0], reference, "{}", m.variant());
        let alone = m.translate_document(&docs[..1], &opts).unwrap();
        assert_eq!(alone.hypotheses[0], reference);
        let p = m.decode_step(1, &carry, &enc, &ContextCache::default()).unwrap().probs;
        assert_eq!(p, p0, "{}", m.variant());
    }
}

#[test]
fn cache_mutation_does_not_change_recorded_output() {
    let m = random_model(Variant::SharedTarget, 50, 1.0);
    let mut r = rng(51);
    let enc = m.encode(&[4, 5]).unwrap();
    let carry = m.initial_carry(&[4, 5]).unwrap();
    let mut cache = ContextCache {
        source: None,
        target: Some(random_states(&mut r, 3, 8)),
    };
    let out = m.decode_step(1, &carry, &enc, &cache).unwrap();
    let recorded = out.clone();
    cache.target.as_mut().unwrap().data.iter_mut().for_each(|v| *v = 9.0);
    assert_eq!(out, recorded);
    assert_ne!(m.decode_step(1, &carry, &enc, &cache).unwrap(), recorded);
}

fn two_sentence_docs() -> Vec<Document<u32>> {
    let p = |s: Vec<u32>, t: Vec<u32>| SentencePair { source: s, target: t };
    vec![
        Document::new("a".into(), vec![p(vec![4, 5, 6], vec![7, 8]), p(vec![9, 4], vec![10, 11, 12])]).unwrap(),
        Document::new("b".into(), vec![p(vec![6, 6], vec![9]), p(vec![5, 7, 8], vec![4, 5]), p(vec![4], vec![6])]).unwrap(),
    ]
}

#[test]
fn gradients_do_not_cross_sentence_boundaries() {
    // with a zero-weighted context branch, shared variants see exactly the
    // baseline gradients on every shared parameter
    let (base, family) = pretrained_family(60);
    let docs = two_sentence_docs();
    let batch = DocumentBatch { documents: vec![0, 1] };
    let gb = batch_gradients(&base, &docs, &batch, false, &mut rng(0)).unwrap();
    for m in family.iter().filter(|m| m.variant().is_shared()) {
        let g = batch_gradients(m, &docs, &batch, false, &mut rng(0)).unwrap();
        for (i, (name, _)) in base.params.iter().enumerate() {
            let j = m.params.find(name).unwrap().0;
            if name == "attn_out" {
                let h = 8;
                for row in 0..h {
                    assert_eq!(&g.grads[j][row * 3 * h..row * 3 * h + 2 * h], &gb.grads[i][row * 2 * h..(row + 1) * 2 * h]);
                }
            } else {
                assert_eq!(g.grads[j], gb.grads[i], "{name}");
            }
        }
    }
}

#[test]
fn saved_states_are_detached() {
    // the batch gradient decomposes into per-sentence gradients computed with
    // the previous sentence's states held fixed
    for v in [Variant::SharedSource, Variant::SharedTarget, Variant::SharedMix] {
        let m = random_model(v, 70, 0.5);
        let docs = two_sentence_docs();
        let d = &docs[0];
        let batch = DocumentBatch { documents: vec![0] };
        let whole = batch_gradients(&m, &docs, &batch, false, &mut rng(0)).unwrap();
        let s = |i: usize| (vec![d.pairs[i].source.clone()], vec![d.pairs[i].target.clone()]);
        let (s0, t0) = s(0);
        let (s1, t1) = s(1);
        let (_, prev) = m.forward_loss(&s0, &t0, &[None], false, &mut rng(0)).unwrap();
        let (_, g0) = m.loss_and_grads(&s0, &t0, &[None], false, &mut rng(0)).unwrap();
        let (_, g1) = m.loss_and_grads(&s1, &t1, &[Some(&prev[0])], false, &mut rng(0)).unwrap();
        let (n0, n1) = ((t0[0].len() + 1) as f64, (t1[0].len() + 1) as f64);
        for ((w, a), b) in whole.grads.iter().flatten().zip(g0.iter().flatten()).zip(g1.iter().flatten()) {
            let expect = (a * n0 + b * n1) / (n0 + n1);
            assert!((w - expect).abs() < 1e-12, "{v}");
        }
    }
}

#[test]
fn frozen_context_branch_tracks_baseline_training() {
    let (base, family) = pretrained_family(80);
    let docs = two_sentence_docs();
    let batch = DocumentBatch { documents: vec![0, 1] };
    let tc = TrainConfig {
        freeze_context: true,
        ..TrainConfig::default()
    };
    let run = |mut m: Model<f64>| {
        let mut opt = AdaGradState::new(&m.params, 0.1).unwrap();
        let mut r = rng(3);
        (0..5)
            .map(|_| train_batch(&mut m, &mut opt, &docs, &batch, &tc, &mut r).unwrap().loss_sum)
            .collect::<Vec<_>>()
    };
    let reference = run(base.clone());
    for m in family.iter().filter(|m| m.variant().is_shared()) {
        assert_eq!(run(m.clone()), reference, "{}", m.variant());
    }
}

#[test]
fn training_order_is_position_major() {
    let m = random_model(Variant::SharedTarget, 90, 0.3);
    let docs = two_sentence_docs();
    let g = batch_gradients(&m, &docs, &DocumentBatch { documents: vec![1, 0] }, false, &mut rng(0)).unwrap();
    assert_eq!(g.order, vec![(0, 1), (0, 0), (1, 1), (1, 0), (2, 1)]);
}

#[test]
fn beam_of_one_is_greedy() {
    for v in [Variant::Baseline, Variant::SharedTarget, Variant::SeparatedSource] {
        let m = random_model(v, 100, 1.5);
        let doc = vec![vec![4, 5, 6], vec![7, 8, 9, 10], vec![11]];
        let greedy = m.translate_document(&doc, &DecodeConfig::default()).unwrap();
        let beam1 = m
            .translate_document(&doc, &DecodeConfig { beam_size: 1, ..DecodeConfig::default() })
            .unwrap();
        assert_eq!(greedy, beam1);
        let b = m.translate_document(&doc, &DecodeConfig { beam_size: 3, ..DecodeConfig::default() }).unwrap();
        assert_eq!(b.hypotheses.len(), 3);
        for (h, s) in b.hypotheses.iter().zip(&doc) {
            assert!(h.len() <= 2 * s.len());
        }
    }
}

#[test]
fn batched_greedy_equals_one_document_at_a_time() {
    let m = random_model(Variant::SharedMix, 110, 1.5);
    let docs = vec![
        vec![vec![4, 5, 6], vec![7, 8]],
        vec![vec![9], vec![10, 11, 12, 13], vec![5, 5]],
        vec![vec![6, 7, 8, 9, 10]],
    ];
    let together = m.translate_documents(&docs, None, &DecodeConfig::default()).unwrap();
    for (d, t) in docs.iter().zip(&together) {
        assert_eq!(&m.translate_document(d, &DecodeConfig::default()).unwrap(), t);
    }
    assert_eq!(together[1].cache_hits, 2);
    assert_eq!(together[2].cache_hits, 0);
}

#[test]
fn hypotheses_respect_the_length_limit() {
    let m = random_model(Variant::Baseline, 120, 2.0);
    let out = m.translate_document(&[vec![4, 5], vec![], vec![6]], &DecodeConfig::default()).unwrap();
    assert!(out.hypotheses[0].len() <= 4);
    assert!(out.hypotheses[1].is_empty());
    assert!(out.hypotheses[2].len() <= 2);
    assert!(out.hypotheses.iter().flatten().all(|&t| t != ctxnmt_core::subword::EOS));
}

#[test]
fn forced_prefix_reuses_references() {
    let m = random_model(Variant::SharedTarget, 130, 1.0);
    let src = vec![vec![vec![4, 5], vec![6, 7, 8]]];
    let refs = vec![vec![vec![9, 10, 11], vec![4]]];
    let cfg = DecodeConfig {
        forced_prefix: 1,
        ..DecodeConfig::default()
    };
    let out = m.translate_documents(&src, Some(&refs), &cfg).unwrap();
    assert_eq!(out[0].hypotheses[0], refs[0][0]);
    assert!(m.translate_documents(&src, None, &cfg).is_err());
    // the second sentence sees the reference's decoder states
    let (_, prev) = m.forward_loss(&[src[0][0].clone()], &[refs[0][0].clone()], &[None], false, &mut rng(0)).unwrap();
    let second = &out[0].hypotheses[1];
    let enc = m.encode(&src[0][1]).unwrap();
    let cache = m.context_states(1, Some(&prev[0])).unwrap();
    let mut carry = m.initial_carry(&src[0][1]).unwrap();
    let mut y = ctxnmt_core::subword::BOS;
    let mut manual = Vec::new();
    for _ in 0..6 {
        let o = m.decode_step(y, &carry, &enc, &cache).unwrap();
        let best = o
            .probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > o.probs[b] { i } else { b }) as u32;
        if best == ctxnmt_core::subword::EOS {
            break;
        }
        manual.push(best);
        carry = o.carry;
        y = best;
    }
    assert_eq!(&manual, second);
}

#[test]
fn pretrained_shapes_must_match() {
    let base = Model::<f32>::zeros(cfg(Variant::Baseline)).unwrap();
    let mut other = cfg(Variant::Baseline);
    other.hidden = 10;
    let mismatched = Model::<f32>::zeros(other).unwrap();
    assert!(Model::from_params(cfg(Variant::SharedTarget), base.params.clone()).is_err());
    assert!(Model::from_params(cfg(Variant::Baseline), mismatched.params.clone()).is_err());
}

#[test]
fn decoder_states_have_one_row_per_target_token() {
    let m = random_model(Variant::SharedTarget, 14, 0.5);
    let (src, trg) = (vec![4, 5, 6], vec![7, 8, 9, 10]);
    let (_, prev) = m.forward_loss(std::slice::from_ref(&src), std::slice::from_ref(&trg), &[None], false, &mut rng(0)).unwrap();
    let states = &prev[0].decoder;
    assert_eq!(states.rows, trg.len());
    // row k is the top state of the step that reads target token k
    let enc = m.encode(&src).unwrap();
    let empty = ContextCache::default();
    let mut carry = m.initial_carry(&src).unwrap();
    let mut input = 1;
    for (k, &y) in trg.iter().enumerate() {
        carry = m.decode_step(input, &carry, &enc, &empty).unwrap().carry;
        input = y;
        let step = m.decode_step(input, &carry, &enc, &empty).unwrap();
        for (a, b) in step.hidden.iter().zip(states.row(k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let (_, none) = m.forward_loss(&[src], &[vec![]], &[None], false, &mut rng(0)).unwrap();
    assert!(none[0].decoder.is_empty());
}
