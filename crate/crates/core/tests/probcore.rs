use factorix::probcore::{enumerate_permutations, SequenceAssignment};
use factorix::{Error, Markov, PermKind, Permutation, Tabular};
use proptest::prelude::*;

fn positive_table() -> impl Strategy<Value = Tabular> {
    (2usize..=3, 1usize..=4).prop_flat_map(|(v, n)| {
        prop::collection::vec(0.01f64..1.0, v.pow(n as u32))
            .prop_map(move |raw| Tabular::normalize(&raw, v, n).unwrap())
    })
}

/// Tables with some exact zeros, so zero-mass contexts appear.
fn sparse_table() -> impl Strategy<Value = Tabular> {
    (2usize..=3, 2usize..=4).prop_flat_map(|(v, n)| {
        prop::collection::vec(prop_oneof![Just(0.0f64), 0.01f64..1.0], v.pow(n as u32))
            .prop_filter("needs mass", |raw| raw.iter().any(|&x| x > 0.0))
            .prop_map(move |raw| Tabular::normalize(&raw, v, n).unwrap())
    })
}

fn assignments(d: &Tabular) -> Vec<SequenceAssignment> {
    (0..d.probs().len()).map(|i| d.assignment_of(i)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_order_recovers_the_joint(d in sparse_table(), seed in 0u64..1000) {
        let sigmas = enumerate_permutations(d.seq_len(), 120, seed).unwrap();
        for seq in assignments(&d) {
            match d.verify_invariance(&seq, &sigmas, 1e-9) {
                Ok(report) => prop_assert!(report.passed(), "max dev {}", report.max_rel_dev),
                Err(e) => {
                    prop_assert!(matches!(e, Error::ZeroProbability));
                    prop_assert_eq!(d.joint_probability(&seq).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn normalization_and_conditional_consistency(d in positive_table(), pos_seed in 0usize..64) {
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let n = d.seq_len();
        let v = d.vocab_size() as u32;
        for seq in assignments(&d) {
            let pos = pos_seed % n;
            // A pseudo-random subset of the other positions is observed.
            let ctx: Vec<Option<u32>> = (0..n)
                .map(|i| (i != pos && (i * 7 + pos_seed) % 3 != 0).then(|| seq.values()[i]))
                .collect();
            let m = d.marginal(&ctx).unwrap();
            let mut row = 0.0;
            for val in 0..v {
                let c = d.conditional(pos, val, &ctx).unwrap();
                prop_assert!(c >= 0.0);
                let mut joint = ctx.clone();
                joint[pos] = Some(val);
                prop_assert!((c * m - d.marginal(&joint).unwrap()).abs() < 1e-12);
                row += c;
            }
            prop_assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_are_special_cases(d in positive_table()) {
        let n = d.seq_len();
        let ends = [Permutation::make(PermKind::Forward, n).unwrap(), Permutation::make(PermKind::Backward, n).unwrap()];
        let all = enumerate_permutations(n, 120, 0).unwrap();
        for seq in assignments(&d) {
            let full = d.verify_invariance(&seq, &all, 1e-9).unwrap();
            let special = d.verify_invariance(&seq, &ends, 1e-9).unwrap();
            prop_assert!(full.passed() && special.passed());
        }
    }

    #[test]
    fn perplexity_is_a_function_of_the_joint(d in positive_table(), k in 0usize..81) {
        let seq = d.assignment_of(k % d.probs().len());
        let joint = d.joint_probability(&seq).unwrap();
        let want = (-joint.ln() / d.seq_len() as f64).exp();
        prop_assert!((d.perplexity_via_joint(&seq).unwrap() - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn negative_control_separates_on_some_seed() {
    let unequal = (0..10u64).any(|seed| {
        let d = Tabular::random(3, 4, seed).unwrap();
        let (f, b) = d.negative_control_drop_bos(&d.assignment_of(5)).unwrap();
        (f - b).abs() > 1e-6
    });
    assert!(unequal);
}

#[test]
fn sampled_regime_checks_six_positions() {
    let d = Tabular::random(2, 6, 42).unwrap();
    let sigmas = enumerate_permutations(6, 200, 9).unwrap();
    assert_eq!(sigmas.len(), 200);
    for k in [0, 17, 63] {
        let r = d.verify_invariance(&d.assignment_of(k), &sigmas, 1e-9).unwrap();
        assert!(r.passed(), "{}", r.max_rel_dev);
    }
}

#[test]
fn markov_source_matches_its_table() {
    let src = Markov::random(2, 3, 0.5, 4).unwrap();
    let table = src.to_tabular(5).unwrap();
    assert!((table.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for k in [0, 31, 242] {
        let seq = table.assignment_of(k);
        let lp = src.log_prob(seq.values()).unwrap();
        assert!((lp.exp() - table.joint_probability(&seq).unwrap()).abs() < 1e-14);
    }
    let all = enumerate_permutations(5, 120, 0).unwrap();
    assert!(table.verify_invariance(&table.assignment_of(100), &all, 1e-9).unwrap().passed());
}

#[test]
fn markov_bigram_frequencies_match_transitions() {
    let src = Markov::random(1, 4, 1.0, 8).unwrap();
    let stream = src.sample_stream(100_000, 3).unwrap();
    let mut counts = [[0usize; 4]; 4];
    for w in stream.windows(2) {
        counts[w[0] as usize][w[1] as usize] += 1;
    }
    for a in 0..4u32 {
        let total: usize = counts[a as usize].iter().sum();
        for b in 0..4 {
            let freq = counts[a as usize][b] as f64 / total as f64;
            assert!((freq - src.transition_row(&[a])[b]).abs() < 0.01, "{a}->{b}");
        }
    }
}
