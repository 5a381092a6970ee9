use factorix::diagnostics::pearson_r;
use factorix::eval::{difficulty_correlation, sequence_perplexity, two_afc, TwoAfcItem};
use factorix::{Markov, PermKind, Permutation, Tabular};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn tabular_scorer_is_order_free() {
    let d = Tabular::normalize(&[0.4, 0.1, 0.2, 0.3], 2, 2).unwrap();
    for kind in [PermKind::Forward, PermKind::Backward] {
        let r = sequence_perplexity(&d, 0, &[0, 1], &Permutation::make(kind, 2).unwrap()).unwrap();
        assert!((r.perplexity - 10f64.sqrt()).abs() < 1e-12);
        assert!(!r.flagged);
    }
}

#[test]
fn afc_prefers_the_likelier_sequence() {
    let d = Tabular::normalize(&[0.4, 0.1, 0.2, 0.3], 2, 2).unwrap();
    let item = TwoAfcItem::new("a", vec![1, 1], vec![0, 1], "").unwrap();
    let out = two_afc(&d, &[item], &Permutation::identity(2).unwrap()).unwrap();
    assert_eq!(out.accuracy, 1.0);
    assert!(out.rows[0].signed_diff > 0.0);
}

#[test]
fn markov_oracle_on_generated_items() {
    let src = Markov::random(2, 5, 0.3, 2).unwrap();
    let seqs = src.sample_sequences(50, 12, 1).unwrap();
    let items: Vec<TwoAfcItem> = seqs
        .iter()
        .enumerate()
        .filter_map(|(k, s)| {
            let mut alt = s.clone();
            alt[6] = (alt[6] + 2) % 5;
            let to_ids = |v: &[u32]| v.iter().map(|x| x + 1).collect::<Vec<_>>();
            let (lo, la) = (src.log_prob(s).unwrap(), src.log_prob(&alt).unwrap());
            (lo != la).then(|| {
                let (o, a) = if lo > la { (s, &alt) } else { (&alt, s) };
                TwoAfcItem::new(format!("i{k}"), to_ids(o), to_ids(a), "").unwrap()
            })
        })
        .collect();
    let out = two_afc(&src, &items, &Permutation::identity(12).unwrap()).unwrap();
    assert_eq!(out.accuracy, 1.0);
}

#[test]
fn independent_noise_is_uncorrelated() {
    let mut below = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        if pearson_r(&a, &b).unwrap().abs() < 0.2 {
            below += 1;
        }
    }
    assert!(below >= 198, "{below}/200");
}

#[test]
fn difficulty_matrix_basics() {
    let a = vec![1.0, -2.0, 0.5, 3.0];
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    let m = difficulty_correlation(&[("a".to_string(), a), ("n".to_string(), neg)], None).unwrap();
    assert!((m.get("a", "a").unwrap() - 1.0).abs() < 1e-12);
    assert!((m.get("a", "n").unwrap() + 1.0).abs() < 1e-12);
}
