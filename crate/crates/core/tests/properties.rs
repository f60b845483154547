//! Randomized invariants checked with proptest.

mod common;

use crisp_nam::data::{stratified_kfold, Preprocessor, RawFeatures};
use crisp_nam::hazard::{breslow, predict_cif};
use crisp_nam::interpret::importance;
use crisp_nam::loss::{neg_log_partial_likelihood, RiskWeights};
use crisp_nam::metrics::{brier, td_auc, td_concordance};
use crisp_nam::model::{Architecture, ModelParams};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

/// Scores on a lattice of multiples of 1/64 so cubing is exact and keeps every tie.
fn lattice_scores(r: &mut impl Rng, n: usize, lo: i32, hi: i32) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..=hi) as f64 / 64.0).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn loss_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k_risks = r.random_range(1..=2);
        let n = r.random_range(k_risks.max(2)..=6);
        let (times, events) = outcomes(&mut r, n, k_risks);
        let eta = normal_matrix(&mut r, n, k_risks);
        let weights = RiskWeights::compute(&events, k_risks).unwrap();
        let (_, grad) = neg_log_partial_likelihood(eta.view(), &times, &events, &weights).unwrap();
        let h = 1e-4;
        for i in 0..n {
            for k in 0..k_risks {
                let at = |d: f64| {
                    let mut e = eta.clone();
                    e[[i, k]] += d;
                    neg_log_partial_likelihood(e.view(), &times, &events, &weights).unwrap().0.total
                };
                let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
                prop_assert!(relative_error(grad[[i, k]], numeric) < 1e-7,
                    "({i},{k}): {} vs {numeric}", grad[[i, k]]);
            }
        }
    }

    #[test]
    fn loss_is_shift_invariant_and_weighted_sum_of_oracle(seed in any::<u64>(), shift in -10.0..10.0f64) {
        let mut r = rng(seed);
        let k_risks = r.random_range(1..=3);
        let n = r.random_range(k_risks.max(2)..=12);
        let (times, events) = outcomes(&mut r, n, k_risks);
        let eta = normal_matrix(&mut r, n, k_risks);
        let weights = RiskWeights::compute(&events, k_risks).unwrap();
        let (base, grad) = neg_log_partial_likelihood(eta.view(), &times, &events, &weights).unwrap();
        let (moved, _) = neg_log_partial_likelihood((&eta + shift).view(), &times, &events, &weights).unwrap();
        let oracle = cox_loss(&eta, &times, &events);
        prop_assert!((weights.0.iter().sum::<f64>() - k_risks as f64).abs() < 1e-12);
        for (k, ok) in oracle.iter().enumerate() {
            prop_assert!((base.per_risk[k] - moved.per_risk[k]).abs() < 1e-10);
            prop_assert!((base.per_risk[k] - weights.0[k] * ok).abs() < 1e-10);
            prop_assert!(grad.column(k).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn breslow_increments_are_nonnegative_on_event_grid(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k_risks = r.random_range(1..=3);
        let n = r.random_range(k_risks..=20);
        let (times, events) = outcomes(&mut r, n, k_risks);
        let eta = normal_matrix(&mut r, n, k_risks);
        let bh = breslow(eta.view(), &times, &events).unwrap();
        let (grid, inc) = common::breslow(&eta, &times, &events);
        prop_assert_eq!(&bh.times, &grid);
        prop_assert!(bh.increments.iter().all(|&v| v >= 0.0));
        for (a, b) in bh.increments.iter().zip(inc.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cif_is_monotone_bounded_and_ordered_by_score(seed in any::<u64>(), bump in 0.01..3.0f64) {
        let mut r = rng(seed);
        let k_risks = r.random_range(1..=3);
        let n = r.random_range(k_risks..=15);
        let (times, events) = outcomes(&mut r, n, k_risks);
        let eta = normal_matrix(&mut r, n, k_risks);
        let bh = breslow(eta.view(), &times, &events).unwrap();
        let row = eta.row(0).to_owned();
        let c = predict_cif(&bh, row.view(), f64::INFINITY).unwrap();
        prop_assert!(c.survival.iter().all(|&s| s > 0.0 && s <= 1.0));
        prop_assert!(c.survival.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(c.survival_at(0.0), 1.0);
        for k in 0..k_risks {
            prop_assert!(c.cif.row(k).iter().all(|&v| v >= 0.0));
            prop_assert!(c.cif.row(k).windows(2).into_iter().all(|w| w[0] <= w[1]));
            // raising eta_k with the other risks fixed cannot lower F_k
            let mut higher = row.clone();
            higher[k] += bump;
            let ch = predict_cif(&bh, higher.view(), f64::INFINITY).unwrap();
            for m in 0..c.times.len() {
                prop_assert!(ch.cif[[k, m]] >= c.cif[[k, m]] - 1e-15);
            }
        }
        for m in 0..c.times.len() {
            let total: f64 = c.cif.column(m).sum();
            prop_assert!(total >= 1.0 - c.survival[m] - 1e-15);
        }
    }

    #[test]
    fn metrics_are_rank_based(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k_risks = r.random_range(1..=2);
        let n = r.random_range(k_risks.max(2)..=20);
        let (times, events) = outcomes(&mut r, n, k_risks);
        let risk = r.random_range(1..=k_risks);
        let t = r.random_range(1..=6) as f64 * 0.5;
        let scores = lattice_scores(&mut r, n, -128, 128);
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        for ipcw in [false, true] {
            prop_assert_eq!(
                td_auc(&scores, &times, &events, t, risk, ipcw).unwrap(),
                td_auc(&cubed, &times, &events, t, risk, ipcw).unwrap()
            );
        }
        let grid: Vec<f64> = (1..=6).map(|j| j as f64 * 0.5).collect();
        let cif = Array2::from_shape_fn((n, grid.len()), |_| r.random_range(0..=64) as f64 / 64.0);
        let cif_cubed = cif.mapv(|v| v * v * v);
        prop_assert_eq!(
            td_concordance(cif.view(), &grid, &times, &events, risk, Some(t)).unwrap(),
            td_concordance(cif_cubed.view(), &grid, &times, &events, risk, Some(t)).unwrap()
        );
    }

    #[test]
    fn additivity_on_random_models(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = r.random_range(1..=5);
        let k_risks = r.random_range(1..=3);
        let bn = r.random_bool(0.5);
        let arch = small_arch(&mut r, bn, 0.2, 0.2);
        let params = ModelParams::init(p, k_risks, &arch, &mut r).unwrap();
        let x = normal_matrix(&mut r, 8, p);
        let scores = params.predict(x.view()).unwrap();
        let summed = scores.contributions.sum_axis(Axis(1));
        for (a, b) in scores.eta.iter().zip(summed.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        // changing one feature moves eta by exactly that feature's contribution delta
        let j = r.random_range(0..p);
        let mut moved = x.clone();
        moved.column_mut(j).mapv_inplace(|v| v + 0.7);
        let other = params.predict(moved.view()).unwrap();
        for n in 0..8 {
            for k in 0..k_risks {
                let lhs = scores.eta[[n, k]] - other.eta[[n, k]];
                let rhs = scores.contributions[[n, j, k]] - other.contributions[[n, j, k]];
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
        // eval mode is a pure function
        prop_assert_eq!(params.predict(x.view()).unwrap().eta, scores.eta);
    }

    #[test]
    fn effective_projections_have_unit_norm(seed in any::<u64>(), scale in 1e-3..1e3f64) {
        let mut r = rng(seed);
        let arch = small_arch(&mut r, false, 0.0, 0.0);
        let mut params = ModelParams::init(3, 2, &arch, &mut r).unwrap();
        params.projections.mapv_inplace(|v| v * scale);
        let unit = params.unit_projections();
        for lane in unit.lanes(Axis(2)) {
            let norm = lane.dot(&lane).sqrt();
            prop_assert!((1.0 - 1e-6..=1.0).contains(&norm), "norm {norm}");
        }
    }

    #[test]
    fn importance_is_nonnegative_and_order_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = r.random_range(1..=4);
        let arch = small_arch(&mut r, false, 0.0, 0.0);
        let params = ModelParams::init(p, 2, &arch, &mut r).unwrap();
        let x = normal_matrix(&mut r, 10, p);
        let names: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        let table = importance(&params, x.view(), &names).unwrap();
        prop_assert!(table.importance.iter().all(|&v| v >= 0.0));
        for ranking in &table.rankings {
            let mut sorted = ranking.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..p).collect::<Vec<_>>());
        }
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut r);
        let shuffled = x.select(Axis(0), &order);
        let again = importance(&params, shuffled.view(), &names).unwrap();
        prop_assert_eq!(again.rankings, table.rankings);
        for (a, b) in again.importance.iter().zip(table.importance.iter()) {
            prop_assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn preprocessing_standardizes_fitting_data(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=50);
        let mut x = normal_matrix(&mut r, n, 3);
        x.column_mut(0).mapv_inplace(|v| 100.0 + 7.0 * v);
        x.column_mut(2).fill(4.0);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let raw = RawFeatures::from_matrix(&x, &names);
        let pre = Preprocessor::fit(&raw).unwrap();
        let z = pre.transform_features(&raw).unwrap();
        for j in 0..2 {
            let col = z.column(j);
            let mean = col.sum() / n as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if x.column(j).iter().any(|&v| v != x[[0, j]]) {
                prop_assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, "col {j}: {mean} {std}");
            }
        }
        prop_assert!(z.column(2).iter().all(|&v| v == 0.0));
        prop_assert_eq!(pre.transform_features(&raw).unwrap(), z);
    }

    #[test]
    fn folds_partition_and_balance_classes(seed in any::<u64>(), folds in 2..=6usize) {
        let mut r = rng(seed);
        let n = r.random_range(folds * 3..=80);
        let events: Vec<usize> = (0..n).map(|i| if i < 3 * folds { i % 3 } else { r.random_range(0..=2) }).collect();
        let split = stratified_kfold(&events, folds, seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in &split {
            for &i in &f.test {
                seen[i] += 1;
            }
            let mut all: Vec<usize> = f.train.iter().chain(&f.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for class in 0..=2 {
            let sizes: Vec<usize> = split.iter().map(|f| f.test.iter().filter(|&&i| events[i] == class).count()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "class {class}: {sizes:?}");
        }
        prop_assert_eq!(stratified_kfold(&events, folds, seed).unwrap(), split);
    }
}

#[test]
fn brier_is_not_rank_based() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let n = 20;
        let (times, events) = outcomes(&mut r, n, 2);
        let scores = lattice_scores(&mut r, n, 1, 63);
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        for ipcw in [false, true] {
            let a = brier(&scores, &times, &events, 2.0, 1, ipcw).unwrap();
            let b = brier(&cubed, &times, &events, 2.0, 1, ipcw).unwrap();
            assert_ne!(a, b, "seed {seed}");
        }
    }
}

#[test]
fn random_scores_give_chance_concordance() {
    for seed in 0..5 {
        let mut r = rng(500 + seed);
        let n = 3000;
        let times: Vec<f64> = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
        let events: Vec<usize> = (0..n).map(|_| r.random_range(0..=2)).collect();
        let cif = Array2::from_shape_fn((n, 1), |_| r.random::<f64>());
        for risk in 1..=2 {
            let c = td_concordance(cif.view(), &[0.0], &times, &events, risk, None)
                .unwrap()
                .unwrap();
            assert!((c - 0.5).abs() < 0.05, "seed {seed} risk {risk}: {c}");
        }
    }
}

#[test]
fn uninformative_model_has_chance_concordance() {
    // all-zero projections make every eta zero, so every subject ties
    let ds = crisp_nam::synth::generate(&crisp_nam::synth::SynthConfig {
        n: 500,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let mut params = ModelParams::init(ds.num_features(), 2, &Architecture::default(), &mut rng(0)).unwrap();
    params.projections.fill(0.0);
    let eta = params.predict(ds.features.view()).unwrap().eta;
    assert!(eta.iter().all(|&v| v == 0.0));
    let bh = breslow(eta.view(), &ds.times, &ds.events).unwrap();
    for k in 0..2 {
        let cif = crisp_nam::hazard::cif_matrix(&bh, eta.view(), k).unwrap();
        let c = td_concordance(cif.view(), &bh.times, &ds.times, &ds.events, k + 1, None)
            .unwrap()
            .unwrap();
        assert_eq!(c, 0.5);
    }
}

#[test]
fn synthetic_covariates_are_standard_normal() {
    let ds = crisp_nam::synth::generate(&crisp_nam::synth::SynthConfig {
        n: 10_000,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let n = ds.len() as f64;
    for (j, col) in ds.features.columns().into_iter().enumerate() {
        // two-pass moments, independent of any library helper
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "column {j}: mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "column {j}: variance {var}");
    }
    assert!(ds.times.iter().all(|&t| t > 0.0));
}

#[test]
fn synthetic_causes_are_symmetric() {
    // swapping the x1/x2 groups and the labels 1 <-> 2 gives the same law,
    // so the two causes must occur equally often on average
    let seeds = 40;
    let (mut c1, mut c2) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let ds = crisp_nam::synth::generate(&crisp_nam::synth::SynthConfig {
            n: 2000,
            seed: 700 + seed,
            ..Default::default()
        })
        .unwrap();
        let counts = ds.event_counts();
        c1.push(counts[1] as f64 / ds.len() as f64);
        c2.push(counts[2] as f64 / ds.len() as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    assert!((mean(&c1) - mean(&c2)).abs() < 0.02, "{} vs {}", mean(&c1), mean(&c2));
    assert!((sd(&c1) - sd(&c2)).abs() < 0.02, "{} vs {}", sd(&c1), sd(&c2));
}
