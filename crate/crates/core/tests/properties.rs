mod common;

use common::{random_example, random_trigram, rng, HashLM, WORDS};
use pmi_faith::calibration::{calibrate, classification_report, confusion, LabeledScore};
use pmi_faith::decoder::{self, step_score, top_p_mask, Decoder, Hypothesis};
use pmi_faith::evaluate::decode_examples;
use pmi_faith::faith::{normalize_score, response_ids, PromptPair};
use pmi_faith::lexical::{bleu4, rouge_l, unigram_f1};
use pmi_faith::lm::{per_token_logprobs, sequence_logprob, LogProbVector};
use pmi_faith::tokenizer::{self, normalize_tokens, Vocabulary, EOS};
use pmi_faith::{DecodeConfig, FaithScorer, LanguageModel, NGramLM, NormalizationBounds, PromptTemplate};
use proptest::prelude::*;
use rand::Rng;

fn word_text(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 0..max_words).prop_map(|w| w.join(" "))
}

fn labeled_set() -> impl Strategy<Value = Vec<LabeledScore>> {
    prop::collection::vec((-50i32..50, any::<bool>()), 2..40).prop_map(|v| {
        let mut out: Vec<LabeledScore> = v
            .into_iter()
            .enumerate()
            .map(|(i, (s, pos))| LabeledScore::new(i.to_string(), s as f64 / 10.0, pos))
            .collect();
        out[0].positive = true;
        out[1].positive = false;
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tokenize_round_trips_in_vocabulary_text(text in word_text(20)) {
        let vocab = Vocabulary::from_words(WORDS).unwrap();
        let ids = tokenizer::tokenize(&vocab, &text);
        let back = tokenizer::detokenize(&vocab, &ids).unwrap();
        prop_assert_eq!(&back, &text);
        prop_assert_eq!(tokenizer::tokenize(&vocab, &back), ids);
    }

    #[test]
    fn detokenize_then_tokenize_is_stable(text in "[a-zA-Z .,!?']{0,40}") {
        let vocab = Vocabulary::from_words(WORDS).unwrap();
        let ids = tokenizer::tokenize(&vocab, &text);
        let again = tokenizer::tokenize(&vocab, &tokenizer::detokenize(&vocab, &ids).unwrap());
        prop_assert_eq!(again, ids);
    }

    #[test]
    fn normalization_is_idempotent(text in "\\PC{0,40}") {
        let once = normalize_tokens(&text);
        prop_assert_eq!(normalize_tokens(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
    }

    #[test]
    fn lexical_metrics_are_bounded(a in word_text(12), b in word_text(12)) {
        let f = unigram_f1(&a, &b);
        let r = rouge_l(&a, &b);
        let bl = bleu4(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=100.0).contains(&bl));
        prop_assert_eq!(f, unigram_f1(&b, &a));
        prop_assert_eq!(r, rouge_l(&b, &a));
    }

    #[test]
    fn identical_texts_score_perfectly(a in word_text(12)) {
        prop_assume!(!a.is_empty());
        prop_assert_eq!(unigram_f1(&a, &a), 1.0);
        prop_assert_eq!(rouge_l(&a, &a), 1.0);
        prop_assert_eq!(bleu4(&a, &a), 100.0);
    }

    #[test]
    fn report_identities_hold(scores in labeled_set(), t in -6.0f64..6.0) {
        let rep = classification_report(&scores, t);
        let c = rep.measures.counts;
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, scores.len() as u64);
        let acc = (c.tp + c.tn) as f64 / scores.len() as f64;
        prop_assert!((rep.measures.accuracy - acc).abs() < 1e-12);
        let (p, r) = (rep.measures.precision, rep.measures.recall);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((rep.measures.f1 - f1).abs() < 1e-12);
        prop_assert!(rep.measures.f1 <= p.max(r) + 1e-12 && rep.measures.f1 >= p.min(r) - 1e-12);
    }

    #[test]
    fn predicted_positives_shrink_as_threshold_rises(scores in labeled_set(), a in -6.0f64..6.0, b in -6.0f64..6.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (l, h) = (confusion(&scores, lo), confusion(&scores, hi));
        prop_assert!(h.tp <= l.tp && h.fp <= l.fp);
        prop_assert!(h.tn >= l.tn && h.fn_ >= l.fn_);
    }

    #[test]
    fn calibration_is_optimal_over_observed_cuts(scores in labeled_set()) {
        let c = calibrate(&scores).unwrap();
        prop_assert!((confusion(&scores, c.threshold).f1() - c.dev_f1).abs() == 0.0);
        // any threshold equal to an observed score is a valid cut too
        for s in &scores {
            prop_assert!(confusion(&scores, s.score).f1() <= c.dev_f1);
        }
    }

    #[test]
    fn calibration_is_invariant_to_positive_affine_maps(scores in labeled_set(), k in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mapped: Vec<LabeledScore> = scores
            .iter()
            .map(|s| LabeledScore::new(s.id.clone(), s.score * k + shift, s.positive))
            .collect();
        let a = calibrate(&scores).unwrap();
        let b = calibrate(&mapped).unwrap();
        prop_assert_eq!(a.dev_f1, b.dev_f1);
        let predicted = |set: &[LabeledScore], t: f64| set.iter().map(|s| s.score > t).collect::<Vec<_>>();
        prop_assert_eq!(predicted(&scores, a.threshold), predicted(&mapped, b.threshold));
    }

    #[test]
    fn normalized_scores_are_clamped_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let bounds = NormalizationBounds::DEFAULT;
        let (na, nb) = (normalize_score(a, bounds).unwrap(), normalize_score(b, bounds).unwrap());
        prop_assert!((0.0..=1.0).contains(&na));
        if a <= b {
            prop_assert!(na <= nb);
        }
    }

    #[test]
    fn top_p_mask_is_minimal_and_sound(seed in any::<u64>(), p in 0.01f64..1.0) {
        let lm = HashLM::new(&WORDS, seed, 3.0);
        let dist = lm.next_logprobs(&[1, 5]).unwrap();
        let mask = top_p_mask(&dist, p);
        let mass = |ids: &[u32]| ids.iter().map(|&i| dist.get(i).exp()).sum::<f64>();
        prop_assert!(mass(mask.members()) >= p - 1e-12);
        let weakest = *mask.members().iter().min_by(|&&a, &&b| dist.get(a).partial_cmp(&dist.get(b)).unwrap()).unwrap();
        let rest: Vec<u32> = mask.members().iter().copied().filter(|&i| i != weakest).collect();
        prop_assert!(rest.is_empty() || mass(&rest) < p - 1e-12);
        // every member is at least as likely as every non-member
        let floor = dist.get(weakest);
        for id in 0..dist.len() as u32 {
            if !mask.contains(id) {
                prop_assert!(dist.get(id) <= floor);
            }
        }
    }

    #[test]
    fn higher_alpha_never_lowers_chosen_cpmi(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut r = rng(seed);
        let lm = random_trigram(&mut r, 0.3);
        let ex = random_example(&mut r, 0, &WORDS);
        let template = PromptTemplate::default();
        let cpmi_of_choice = |alpha: f64| {
            let config = DecodeConfig::pmi(alpha, 1.0);
            let decoder = Decoder::new(&lm, &ex, config, &template).unwrap();
            let state = Hypothesis::default();
            let (tok, _) = decoder.decode_step(&state).unwrap();
            let d = decoder.distributions(&state).unwrap();
            d.with_doc.get(tok) - d.without_doc.unwrap().get(tok)
        };
        prop_assert!(cpmi_of_choice(hi) >= cpmi_of_choice(lo) - 1e-9);
    }
}

#[test]
fn hypothesis_scores_account_for_every_step() {
    let mut r = rng(11);
    let template = PromptTemplate::default();
    for i in 0..40 {
        let lm = random_trigram(&mut r, 0.3);
        let ex = random_example(&mut r, i, &WORDS);
        for config in [DecodeConfig::likelihood(), DecodeConfig::pmi_d(), DecodeConfig::pmi_d_equal_weight().with_beam(3)] {
            let hyp = decoder::decode(&lm, &ex, &config, &template).unwrap();
            let mut state = Hypothesis::default();
            let mut combined = 0.0;
            for &tok in &hyp.tokens {
                combined += step_score(&lm, tok, &state, &ex, &config, &template).unwrap();
                state.tokens.push(tok);
            }
            assert!((combined - hyp.combined_score).abs() < 1e-9);
            let prompts = PromptPair::build(&lm, &ex, &template).unwrap();
            let loglik = sequence_logprob(&lm, &prompts.with_doc, &hyp.tokens).unwrap();
            assert!((loglik - hyp.loglik).abs() < 1e-9);
            assert!(hyp.tokens.len() <= config.max_len);
            assert_eq!(hyp.finished, hyp.tokens.last() == Some(&EOS));
        }
    }
}

#[test]
fn sequence_logprob_is_additive() {
    let mut r = rng(12);
    for _ in 0..50 {
        let lm = random_trigram(&mut r, 0.2);
        let n = lm.vocab_size() as u32;
        let ctx: Vec<u32> = (0..r.gen_range(0..6)).map(|_| r.gen_range(0..n)).collect();
        let a: Vec<u32> = (0..r.gen_range(0..6)).map(|_| r.gen_range(0..n)).collect();
        let b: Vec<u32> = (0..r.gen_range(0..6)).map(|_| r.gen_range(0..n)).collect();
        let whole = sequence_logprob(&lm, &ctx, &[a.clone(), b.clone()].concat()).unwrap();
        let first = sequence_logprob(&lm, &ctx, &a).unwrap();
        let second = sequence_logprob(&lm, &[ctx.clone(), a.clone()].concat(), &b).unwrap();
        assert!((whole - (first + second)).abs() <= 1e-12 * (1.0 + whole.abs()));
        assert_eq!(sequence_logprob(&lm, &ctx, &[]).unwrap(), 0.0);
    }
}

#[test]
fn ngram_distributions_are_normalized() {
    let mut r = rng(13);
    for _ in 0..30 {
        let cache = r.gen_range(0.0..0.9);
        let lm = random_trigram(&mut r, cache);
        let n = lm.vocab_size() as u32;
        let ctx: Vec<u32> = (0..r.gen_range(0..10)).map(|_| r.gen_range(0..n)).collect();
        let dist = lm.next_logprobs(&ctx).unwrap();
        let total: f64 = dist.values().iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(dist.values().iter().all(|l| l.is_finite()));
    }
}

#[test]
fn ngram_model_survives_save_and_load() {
    let mut r = rng(14);
    let lm = random_trigram(&mut r, 0.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.json");
    lm.save(&path).unwrap();
    let back = NGramLM::load(&path).unwrap();
    let n = lm.vocab_size() as u32;
    for _ in 0..50 {
        let ctx: Vec<u32> = (0..r.gen_range(0..8)).map(|_| r.gen_range(0..n)).collect();
        assert_eq!(lm.next_logprobs(&ctx).unwrap(), back.next_logprobs(&ctx).unwrap());
    }
}

#[test]
fn faith_scores_are_consistent() {
    let mut r = rng(15);
    let template = PromptTemplate::default();
    for i in 0..60 {
        let lm = random_trigram(&mut r, 0.3);
        let ex = random_example(&mut r, i, &WORDS);
        let plain = FaithScorer::default().score(&lm, &ex).unwrap();
        assert!((plain.raw - (plain.logprob_with_doc - plain.logprob_without_doc)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&plain.normalized));

        let mean = FaithScorer {
            per_token_mean: true,
            ..FaithScorer::default()
        }
        .score(&lm, &ex)
        .unwrap();
        let n = response_ids(&lm, ex.response.as_deref().unwrap()).unwrap().len() as f64;
        assert!((mean.raw * n - plain.raw).abs() < 1e-9);

        // the with-document term is the sum of per-token conditionals
        let prompts = PromptPair::build(&lm, &ex, &template).unwrap();
        let ids = response_ids(&lm, ex.response.as_deref().unwrap()).unwrap();
        let terms = per_token_logprobs(&lm, &prompts.with_doc, &ids).unwrap();
        assert!((terms.iter().sum::<f64>() - plain.logprob_with_doc).abs() < 1e-9);
    }
}

#[test]
fn document_blind_backend_scores_zero() {
    // without the cache component the trigram never sees the document
    let mut r = rng(16);
    for i in 0..20 {
        let lm = random_trigram(&mut r, 0.0);
        let ex = random_example(&mut r, i, &WORDS);
        assert_eq!(FaithScorer::default().score(&lm, &ex).unwrap().raw, 0.0);
    }
}

#[test]
fn decoding_is_independent_of_pool_size() {
    let mut r = rng(17);
    let lm = random_trigram(&mut r, 0.3);
    let examples: Vec<_> = (0..40).map(|i| random_example(&mut r, i, &WORDS)).collect();
    let template = PromptTemplate::default();
    let run = |threads: usize, config: DecodeConfig| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| decode_examples(&lm, &examples, &config, &template).unwrap())
    };
    for config in [DecodeConfig::pmi_d(), DecodeConfig::likelihood().with_beam(4)] {
        assert_eq!(run(1, config), run(6, config));
    }
}

#[test]
fn probability_floor_keeps_logprobs_finite() {
    let v = LogProbVector::from_probs(vec![1.0, 0.0, 0.0]);
    assert!(v.values().iter().all(|l| l.is_finite()));
    assert_eq!(v.argmax(), 0);
    let total: f64 = v.values().iter().map(|l| l.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
