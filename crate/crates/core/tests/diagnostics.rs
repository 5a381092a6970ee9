use factorix::diagnostics::{
    build_rdm, cohens_d, compare, ln_gamma, normalized_entropy, normalized_ranks, paired_t, pearson, reg_inc_beta, rsa,
    spearman, student_t_two_sided,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::{beta, gamma};

fn probability_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 1..32).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|x| x / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        }
    })
}

#[test]
fn special_functions_match_statrs() {
    for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 33.3, 170.0] {
        assert!((ln_gamma(x) - gamma::ln_gamma(x)).abs() < 1e-10 * gamma::ln_gamma(x).abs().max(1.0), "{x}");
    }
    for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (2.5, 7.5), (15.0, 0.5), (40.0, 40.0)] {
        for &x in &[0.0, 0.01, 0.3, 0.5, 0.77, 0.99, 1.0] {
            let want = beta::beta_reg(a, b, x);
            assert!((reg_inc_beta(a, b, x) - want).abs() < 1e-10, "I_{x}({a},{b})");
        }
    }
}

#[test]
fn p_values_match_statrs() {
    for &dof in &[1.0, 2.0, 5.0, 29.0, 63.0, 500.0] {
        let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
        for &t in &[-8.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5] {
            let want = 2.0 * (1.0 - dist.cdf(f64::abs(t)));
            assert!((student_t_two_sided(t, dof) - want).abs() < 1e-10, "t={t} dof={dof}");
        }
    }
    let x = [2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.9];
    let y = [1.8, 3.9, 2.2, 4.7, 4.1, 3.9, 2.2, 5.3];
    let c = pearson(&x, &y).unwrap();
    let t = c.r * (6.0 / (1.0 - c.r * c.r)).sqrt();
    let want = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 6.0).unwrap().cdf(t.abs()));
    assert!((c.p - want).abs() < 1e-10);
}

#[test]
fn comparison_stats_worked_cases() {
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().r;
    assert!((r - 0.8).abs() < 1e-12);
    let s = compare(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    assert!((s.t_stat + 1.0).abs() < 1e-12);
    assert!((s.cohens_d - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!(paired_t(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err().to_string().contains("zero-variance differences"));
    assert!(cohens_d(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).is_err());
}

proptest! {
    #[test]
    fn entropy_and_ranks_stay_in_unit_interval(row in probability_row(), shift in 0usize..32) {
        let h = normalized_entropy(&row).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        let mut rotated = row.clone();
        rotated.rotate_left(shift % row.len());
        prop_assert!((normalized_entropy(&rotated).unwrap() - h).abs() < 1e-12);
        let ranks = normalized_ranks(&row).unwrap();
        prop_assert!(ranks.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn ranks_ignore_rescaling(raw in prop::collection::vec(0.01f64..1.0, 2..20), c in 0.1f64..10.0) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let a = normalized_ranks(&norm(&raw)).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|x| x * c).collect();
        prop_assert_eq!(a, normalized_ranks(&norm(&scaled)).unwrap());
    }

    #[test]
    fn rdm_and_rsa_properties(
        rows in prop::collection::vec(-1.0f64..1.0, 5 * 4),
        other in prop::collection::vec(-1.0f64..1.0, 5 * 4),
        scale in prop::collection::vec(0.1f64..5.0, 5),
    ) {
        prop_assume!(rows.chunks(4).chain(other.chunks(4)).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let a = build_rdm(&rows, 4).unwrap();
        let b = build_rdm(&other, 4).unwrap();
        for i in 0..5 {
            prop_assert!(a.get(i, i).abs() < 1e-6);
            for j in 0..5 {
                prop_assert!((a.get(i, j) - a.get(j, i)).abs() < 1e-15);
                prop_assert!((-1e-12..=2.0 + 1e-12).contains(&a.get(i, j)));
            }
        }
        let scaled: Vec<f64> = rows.chunks(4).zip(&scale).flat_map(|(r, s)| r.iter().map(move |x| x * s)).collect();
        let a2 = build_rdm(&scaled, 4).unwrap();
        for (x, y) in a.upper_triangle().iter().zip(a2.upper_triangle()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((rsa(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        if let (Ok(ab), Ok(ba)) = (rsa(&a, &b), rsa(&b, &a)) {
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn t_flips_and_d_is_symmetric(x in prop::collection::vec(-5.0f64..5.0, 3..30), noise in prop::collection::vec(-1.0f64..1.0, 30)) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a + e).collect();
        if let (Ok(t1), Ok(t2)) = (paired_t(&x, &y), paired_t(&y, &x)) {
            prop_assert!((t1.t + t2.t).abs() < 1e-12);
            prop_assert!((cohens_d(&x, &y).unwrap() - cohens_d(&y, &x).unwrap()).abs() < 1e-12);
        }
        if let Ok(rho) = spearman(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
    }
}
