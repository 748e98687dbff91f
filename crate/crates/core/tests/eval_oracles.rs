use std::collections::BTreeSet;

use phaseflow::data::default_label_names;
use phaseflow::eval::{aggregate_runs, frame_accuracy, macro_f1, ribbon_svg, MetricOptions, RibbonPair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class precision/recall from explicit TP/FP/FN loops.
fn brute_f1(pred: &[usize], gt: &[usize], k: usize) -> f64 {
    let mut scores = Vec::new();
    for c in 0..k {
        let tp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count() as f64;
        let fp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g != c).count() as f64;
        let fn_ = pred.iter().zip(gt).filter(|(p, g)| **p != c && **g == c).count() as f64;
        if tp + fn_ == 0.0 {
            continue;
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = tp / (tp + fn_);
        scores.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    100.0 * scores.iter().sum::<f64>() / scores.len() as f64
}

fn random_pair(rng: &mut ChaCha8Rng, t: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let gt: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
    // correlated predictions so F1 is not trivially near chance
    let pred = gt
        .iter()
        .map(|&g| if rng.random_bool(0.6) { g } else { rng.random_range(0..k) })
        .collect();
    (pred, gt)
}

#[test]
fn metrics_match_brute_force_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = MetricOptions::default();
    for i in 0..100 {
        let k = if i % 2 == 0 { 3 } else { 9 };
        let (pred, gt) = random_pair(&mut rng, 1000, k);
        let hits = pred.iter().zip(&gt).filter(|(p, g)| p == g).count();
        assert_eq!(frame_accuracy(&pred, &gt, opts).unwrap(), 100.0 * hits as f64 / 1000.0);
        let f = macro_f1(&pred, &gt, opts).unwrap();
        assert!((f - brute_f1(&pred, &gt, 9)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pred, gt) = random_pair(&mut rng, 200, 9);
        let mut perm: Vec<usize> = (0..9).collect();
        for i in (1..9).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pp: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
        let pg: Vec<usize> = gt.iter().map(|&l| perm[l]).collect();
        let o = MetricOptions::default();
        prop_assert_eq!(frame_accuracy(&pred, &gt, o).unwrap(), frame_accuracy(&pp, &pg, o).unwrap());
        prop_assert!((macro_f1(&pred, &gt, o).unwrap() - macro_f1(&pp, &pg, o).unwrap()).abs() < 1e-9);
        let f = macro_f1(&pred, &gt, o).unwrap();
        prop_assert!((0.0..=100.0).contains(&f));
    }

    #[test]
    fn aggregate_translation(xs in prop::collection::vec(-100.0f64..100.0, 1..10), c in -50.0f64..50.0) {
        let a = aggregate_runs(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = aggregate_runs(&shifted).unwrap();
        prop_assert!((b.mean - (a.mean + c)).abs() < 1e-9);
        prop_assert!((b.std - a.std).abs() < 1e-9);
        prop_assert!(a.std >= 0.0);
    }
}

#[test]
fn svg_uses_at_most_nine_fill_colors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<(Vec<usize>, Vec<usize>)> = (0..4).map(|_| random_pair(&mut rng, 600, 9)).collect();
    let titles: Vec<String> = (0..4).map(|i| format!("op{i}")).collect();
    let pairs: Vec<RibbonPair> = data
        .iter()
        .zip(&titles)
        .map(|((p, g), t)| RibbonPair { pred: p, gt: g, title: t })
        .collect();
    let svg = ribbon_svg(&pairs, &default_label_names()).unwrap();
    let fills: BTreeSet<&str> = svg
        .split("fill=\"")
        .skip(1)
        .map(|s| &s[..s.find('"').unwrap()])
        .collect();
    assert!(fills.len() <= 9, "{fills:?}");
    assert_eq!(svg.matches("class=\"ribbon\"").count(), 8);
}
