use std::cmp::Ordering;

use proptest::prelude::*;
use wlembed_core::tuner::{KnobCategory, KnobDef};
use wlembed_core::{enumerate_grid, recommend_with, CoreError, KnobSpace, TunerOptions};

fn space(lists: &[Vec<f64>]) -> KnobSpace {
    KnobSpace {
        knobs: lists
            .iter()
            .enumerate()
            .map(|(i, c)| KnobDef { name: format!("k{i}"), category: KnobCategory::Parallelism, candidates: c.clone() })
            .collect(),
    }
}

/// Every grid point by explicit odometer over candidate indices.
fn brute_force(lists: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; lists.len()];
    loop {
        out.push(idx.iter().zip(lists).map(|(&i, l)| l[i]).collect());
        let mut q = lists.len();
        loop {
            if q == 0 {
                return out;
            }
            q -= 1;
            idx[q] += 1;
            if idx[q] < lists[q].len() {
                break;
            }
            idx[q] = 0;
        }
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap() {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Coarse objective with many exact ties.
fn bumpy(c: &[f64]) -> f64 {
    let s: f64 = c.iter().enumerate().map(|(i, v)| ((i + 1) as f64 * v).sin()).sum();
    1.0 + (s * 2.0).round().abs()
}

fn lists_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::btree_set(-50i32..50, 1..5), 1..5)
        .prop_map(|sets| sets.into_iter().map(|s| s.into_iter().map(|v| v as f64 / 4.0).collect()).collect())
}

fn batch<F: Fn(&[f64]) -> f64>(f: F) -> impl FnMut(&[Vec<f64>]) -> wlembed_core::Result<Vec<f64>> {
    move |cs: &[Vec<f64>]| Ok(cs.iter().map(|c| f(c)).collect())
}

#[test]
fn two_knob_grid_in_lexicographic_order() {
    let s = space(&[vec![1.0, 2.0], vec![10.0, 20.0, 30.0]]);
    let got: Vec<Vec<f64>> = enumerate_grid(&s, 100).unwrap().collect();
    let want = vec![vec![1.0, 10.0], vec![1.0, 20.0], vec![1.0, 30.0], vec![2.0, 10.0], vec![2.0, 20.0], vec![2.0, 30.0]];
    assert_eq!(got, want);
}

#[test]
fn single_candidate_grid_recommends_it() {
    let s = space(&[vec![3.0], vec![7.0]]);
    let rec = recommend_with(batch(|_| 5.0), &s, &[1.0, 1.0], 9.0, TunerOptions::default()).unwrap();
    assert_eq!(rec.chosen_config, vec![3.0, 7.0]);
    assert_eq!(rec.grid_size, 1);
}

#[test]
fn cap_error_mentions_coarser_grids() {
    let s = space(&vec![vec![0.0, 1.0, 2.0, 3.0]; 4]);
    match enumerate_grid(&s, 255) {
        Err(e @ CoreError::GridTooLarge { .. }) => assert!(e.to_string().contains("coarser")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(recommend_with(batch(bumpy), &s, &[0.0; 4], 1.0, TunerOptions { grid_cap: 255, ..TunerOptions::default() }).is_err());
}

#[test]
fn all_non_finite_predictions_is_error() {
    let s = space(&[vec![1.0, 2.0]]);
    assert!(recommend_with(batch(|_| f64::NAN), &s, &[1.0], 1.0, TunerOptions::default()).is_err());
}

proptest! {
    #[test]
    fn grid_length_is_product(lists in lists_strategy()) {
        let s = space(&lists);
        let got: Vec<Vec<f64>> = enumerate_grid(&s, u128::MAX).unwrap().collect();
        let product: usize = lists.iter().map(Vec::len).product();
        prop_assert_eq!(got.len(), product);
        prop_assert_eq!(s.grid_size(), product as u128);
        prop_assert_eq!(&got, &brute_force(&lists));
        for w in got.windows(2) {
            prop_assert_eq!(lex(&w[0], &w[1]), Ordering::Less);
        }
    }

    #[test]
    fn argmin_matches_brute_force_with_ties(lists in lists_strategy(), chunk in 1usize..7) {
        let s = space(&lists);
        let init: Vec<f64> = lists.iter().map(|l| l[0]).collect();
        let opts = TunerOptions { chunk, top_m: 3, ..TunerOptions::default() };
        let rec = recommend_with(batch(bumpy), &s, &init, 2.0, opts).unwrap();
        let mut all = brute_force(&lists);
        all.sort_by(|a, b| bumpy(a).partial_cmp(&bumpy(b)).unwrap().then_with(|| lex(a, b)));
        prop_assert_eq!(&rec.chosen_config, &all[0]);
        prop_assert_eq!(rec.predicted_latency, bumpy(&all[0]));
        let top: Vec<Vec<f64>> = rec.top.iter().map(|t| t.config.clone()).collect();
        prop_assert_eq!(top, all.iter().take(3).cloned().collect::<Vec<_>>());
        prop_assert!(rec.predicted_latency <= bumpy(&init));
    }

    #[test]
    fn argmin_survives_increasing_affine_maps(lists in lists_strategy(), a in 0.01f64..100.0, b in -10.0f64..10.0) {
        let s = space(&lists);
        let init: Vec<f64> = lists.iter().map(|l| l[0]).collect();
        let f = |c: &[f64]| c.iter().enumerate().map(|(i, v)| (v - i as f64).powi(2)).sum::<f64>();
        let base = recommend_with(batch(f), &s, &init, 1.0, TunerOptions::default()).unwrap();
        let mapped = recommend_with(batch(move |c| a * f(c) + b), &s, &init, 1.0, TunerOptions::default()).unwrap();
        prop_assert_eq!(base.chosen_config, mapped.chosen_config);
    }

    #[test]
    fn recommendation_is_deterministic(lists in lists_strategy()) {
        let s = space(&lists);
        let init: Vec<f64> = lists.iter().map(|l| l[0]).collect();
        let a = recommend_with(batch(bumpy), &s, &init, 3.0, TunerOptions::default()).unwrap();
        let b = recommend_with(batch(bumpy), &s, &init, 3.0, TunerOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
