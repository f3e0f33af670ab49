mod common;

use std::collections::{BTreeMap, BTreeSet};

use claid_core::eval::{
    average_precision, default_recall_thresholds, evaluate, iou, localization_miou, recall_at_iou, QueryGroundTruth,
};
use claid_core::{BBox, RankedEntry, RankedResult};
use common::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

#[test]
fn ap_matches_direct_formula_on_random_rankings() {
    let mut r = rng(40);
    for _ in 0..200 {
        let mut items: Vec<String> = (0..30).map(|i| format!("x{i}")).collect();
        items.shuffle(&mut r);
        let relevant: BTreeSet<String> = items.choose_multiple(&mut r, 5).cloned().collect();
        let ranking: Vec<String> = items.iter().take(r.random_range(1..=30)).cloned().collect();
        for cutoff in [None, Some(3), Some(10), Some(50)] {
            let got = average_precision(&ranking, &relevant, cutoff).unwrap().unwrap();
            assert!((got - brute_ap(&ranking, &relevant, cutoff)).abs() < 1e-12);
        }
        let full = average_precision(&ranking, &relevant, Some(ranking.len().max(relevant.len()))).unwrap();
        assert_eq!(full, average_precision(&ranking, &relevant, None).unwrap());
    }
}

#[test]
fn ap_closed_forms() {
    let rel: BTreeSet<String> = ["b".to_string()].into();
    assert_eq!(average_precision(&["a", "b", "c"], &rel, None).unwrap(), Some(0.5));
    let rel: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
    assert_eq!(average_precision(&["a", "b", "c"], &rel, None).unwrap(), Some(1.0));
    assert_eq!(average_precision(&["a"], &BTreeSet::new(), None).unwrap(), None);
}

#[test]
fn iou_matches_oracle() {
    let mut r = rng(41);
    for _ in 0..1000 {
        let (a, b) = (random_box(&mut r, 50.0), random_box(&mut r, 50.0));
        assert!((iou(&a, &b) - brute_iou(&a, &b)).abs() < 1e-9);
    }
    let u = BBox::new(0.0, 0.0, 1.0, 1.0);
    assert!((iou(&u, &BBox::new(0.5, 0.0, 1.5, 1.0)) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(iou(&u, &BBox::new(0.0, 0.0, 0.0, 1.0)), 0.0);
}

fn random_image_boxes(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<BBox>, Vec<BBox>) {
    let n_gt = r.random_range(0..=6);
    let n_p = r.random_range(0..=6);
    let gt: Vec<BBox> = (0..n_gt).map(|_| random_box(r, 40.0)).collect();
    let props: Vec<BBox> = (0..n_p)
        .map(|_| {
            if !gt.is_empty() && r.random_bool(0.6) {
                let g = gt[r.random_range(0..gt.len())];
                let j = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(-4.0f32..4.0);
                BBox::new(g.x0 + j(r), g.y0 + j(r), g.x1 + j(r), g.y1 + j(r))
            } else {
                random_box(r, 40.0)
            }
        })
        .collect();
    (gt, props)
}

#[test]
fn recall_matches_exhaustive_matching_oracle() {
    let mut r = rng(42);
    let ts = default_recall_thresholds();
    for _ in 0..300 {
        let (gt, props) = random_image_boxes(&mut r);
        let got = recall_at_iou(std::slice::from_ref(&props), std::slice::from_ref(&gt), &ts).unwrap();
        let (lex_best, max_card) = exhaustive_matchings(&gt, &props, &ts);
        for (k, &(t, rec)) in got.iter().enumerate() {
            let want = if gt.is_empty() { 0.0 } else { lex_best.iter().filter(|&&v| v >= t).count() as f64 / gt.len() as f64 };
            assert!((rec - want).abs() < 1e-12, "t={t}: {rec} vs {want}");
            // greedy is a maximal matching: at least half the maximum
            let count = (rec * gt.len() as f64).round() as usize;
            assert!(count <= max_card[k] && 2 * count >= max_card[k]);
        }
    }
}

#[test]
fn recall_curve_is_monotone() {
    let mut r = rng(43);
    let ts = default_recall_thresholds();
    for _ in 0..100 {
        let images = r.random_range(1..5);
        let (mut ps, mut gs) = (Vec::new(), Vec::new());
        for _ in 0..images {
            let (g, p) = random_image_boxes(&mut r);
            gs.push(g);
            ps.push(p);
        }
        let curve = recall_at_iou(&ps, &gs, &ts).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    }
}

#[test]
fn recall_trivial_cases() {
    let gt = vec![vec![BBox::new(0.0, 0.0, 5.0, 5.0), BBox::new(10.0, 10.0, 20.0, 15.0)]];
    let ts = default_recall_thresholds();
    assert!(recall_at_iou(&gt, &gt, &ts).unwrap().iter().all(|&(_, v)| v == 1.0));
    assert!(recall_at_iou(&[vec![]], &gt, &ts).unwrap().iter().all(|&(_, v)| v == 0.0));
}

#[test]
fn localization_is_mean_over_relevant_pairs() {
    let mut r = rng(44);
    let mut results = BTreeMap::new();
    let mut gt = BTreeMap::new();
    let mut oracle = Vec::new();
    for q in 0..10 {
        let qid = format!("q{q}");
        let mut entries = Vec::new();
        let mut g = QueryGroundTruth {
            query_id: qid.clone(),
            ..Default::default()
        };
        for i in 0..5 {
            let id = format!("img{i}");
            let b = random_box(&mut r, 60.0);
            entries.push(RankedEntry {
                image_id: id.clone(),
                score: 1.0 - i as f32 * 0.1,
                best_region_id: 0,
                best_bbox: b,
            });
            if r.random_bool(0.4) {
                let gb = random_box(&mut r, 60.0);
                g.relevant_image_ids.insert(id.clone());
                g.gt_boxes.insert(id, gb);
                oracle.push(brute_iou(&b, &gb));
            }
        }
        results.insert(qid.clone(), RankedResult { entries });
        gt.insert(qid, g);
    }
    let rep = localization_miou(&results, &gt);
    let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    assert_eq!(rep.pairs, oracle.len());
    assert!((rep.miou - mean).abs() < 1e-12);
    let above: Vec<f64> = oracle.iter().copied().filter(|&v| v >= 0.5).collect();
    assert!((rep.hit_rate - above.len() as f64 / oracle.len() as f64).abs() < 1e-12);
    let full = evaluate(&results, &gt, vec![]).unwrap();
    assert_eq!(full.localization, rep);
}
