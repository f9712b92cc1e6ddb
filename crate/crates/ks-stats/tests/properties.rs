//! Structural properties of the statistic, plus the empirical behaviour of
//! the decision rule under the null hypothesis.

use ks_stats::{ks_decide, ks_statistic, SampleWindow, Verdict, WindowKind};
use quickcheck::{quickcheck, TestResult};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clean(values: &[f64]) -> Option<Vec<f64>> {
    if values.len() < 2 {
        return None;
    }
    let v: Vec<f64> = values.iter().map(|x| x.abs() % 1e6).collect();
    if v.iter().all(|x| x.is_finite()) {
        Some(v)
    } else {
        None
    }
}

fn win(values: Vec<f64>) -> SampleWindow {
    SampleWindow::new(values, WindowKind::Monitored, 0.0).unwrap()
}

quickcheck! {
    fn statistic_is_in_unit_interval(a: Vec<f64>, b: Vec<f64>) -> TestResult {
        let (a, b) = match (clean(&a), clean(&b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return TestResult::discard(),
        };
        let d = ks_statistic(&win(a), &win(b));
        TestResult::from_bool((0.0..=1.0).contains(&d))
    }

    fn statistic_zero_on_identical(a: Vec<f64>) -> TestResult {
        let a = match clean(&a) {
            Some(a) => a,
            None => return TestResult::discard(),
        };
        TestResult::from_bool(ks_statistic(&win(a.clone()), &win(a)) == 0.0)
    }

    fn statistic_invariant_under_permutation(a: Vec<f64>, b: Vec<f64>) -> TestResult {
        let (a, b) = match (clean(&a), clean(&b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return TestResult::discard(),
        };
        let d1 = ks_statistic(&win(a.clone()), &win(b.clone()));
        let mut ar = a.clone();
        ar.reverse();
        let mut br = b.clone();
        br.reverse();
        let d2 = ks_statistic(&win(ar), &win(br));
        TestResult::from_bool(d1 == d2)
    }

    fn statistic_invariant_under_joint_monotone_map(a: Vec<f64>, b: Vec<f64>) -> TestResult {
        let (a, b) = match (clean(&a), clean(&b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return TestResult::discard(),
        };
        let d1 = ks_statistic(&win(a.clone()), &win(b.clone()));
        let f = |x: f64| 3.0 * x + 7.0;
        let d2 = ks_statistic(
            &win(a.iter().map(|&x| f(x)).collect()),
            &win(b.iter().map(|&x| f(x)).collect()),
        );
        TestResult::from_bool((d1 - d2).abs() < 1e-12)
    }
}

#[test]
fn statistic_one_on_disjoint_supports() {
    let lo = win(vec![0.0, 1.0, 2.0]);
    let hi = win(vec![10.0, 11.0]);
    assert_eq!(ks_statistic(&lo, &hi), 1.0);
    assert_eq!(ks_statistic(&hi, &lo), 1.0);
}

/// Under the null (both windows drawn i.i.d. from the same distribution) the
/// rejection rate at alpha = 0.001, n = 100 stays at or below 0.005. The
/// asymptotic critical value is conservative for discrete data, so the
/// observed rate is far lower in practice.
#[test]
fn null_rejection_rate_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd157);
    let trials = 10_000;
    let mut rejects = 0usize;
    for _ in 0..trials {
        // Integer-valued counter-like samples with heavy ties.
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..100).map(|_| rng.gen_range(0..40) as f64).collect()
        };
        let m = SampleWindow::new(draw(&mut rng), WindowKind::Monitored, 0.0).unwrap();
        let r = SampleWindow::new(draw(&mut rng), WindowKind::Reference, 0.0).unwrap();
        if ks_decide(&m, &r, 0.001).unwrap().verdict == Verdict::Reject {
            rejects += 1;
        }
    }
    let rate = rejects as f64 / trials as f64;
    assert!(rate <= 0.005, "null rejection rate {rate} exceeds 0.005");
}

/// Same-distribution draws accept in at least 99% of 1000 trials.
#[test]
fn same_distribution_accepts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut accepts = 0usize;
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..100).map(|_| (rng.gen_range(0..25) + rng.gen_range(0..25)) as f64).collect()
        };
        let m = SampleWindow::new(draw(&mut rng), WindowKind::Monitored, 0.0).unwrap();
        let r = SampleWindow::new(draw(&mut rng), WindowKind::Reference, 0.0).unwrap();
        if ks_decide(&m, &r, 0.001).unwrap().verdict == Verdict::Accept {
            accepts += 1;
        }
    }
    assert!(accepts >= 990, "only {accepts}/1000 accepted under the null");
}
