//! Randomized property checks over the library's contracts: warping
//! invariants, softmax stochasticity, loss positivity, optimizer
//! symmetry, sampler determinism, and the rank-only nature of the
//! evaluation statistics.

use std::collections::BTreeMap;

use proptest::prelude::*;

use attwarp_core::attention::{outer_concat, warp, ArchConfig, AttentionModel};
use attwarp_core::autodiff::Graph;
use attwarp_core::data::{split, Dataset, SplitSpec};
use attwarp_core::dtw::{
    dtw, local_cost_matrix, soft_dtw, Metric, SoftDtwConfig, WarpConstraints,
};
use attwarp_core::eval::{
    eer, knn_classify, mcnemar, ContingencyTable2x2, DistanceMatrix, McnemarMode,
};
use attwarp_core::loss::loss_contrastive_s;
use attwarp_core::optim::{Adam, AdamConfig};
use attwarp_core::rng::Rng;
use attwarp_core::sampler::sample_pairs;
use attwarp_core::series::TimeSeries;
use attwarp_core::tensor::Tensor;

fn series_strategy(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = TimeSeries> {
    prop::collection::vec(-3.0f64..3.0, len)
        .prop_map(|v| TimeSeries::univariate(v).unwrap())
}

fn series_pair() -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
    (series_strategy(2..=10), series_strategy(2..=10))
}

proptest! {
    #[test]
    fn dtw_is_symmetric((a, b) in series_pair()) {
        let (d_ab, _) = dtw(&a, &b, WarpConstraints::unlimited(), Metric::SqEuclid).unwrap();
        let (d_ba, _) = dtw(&b, &a, WarpConstraints::unlimited(), Metric::SqEuclid).unwrap();
        let scale = f64::max(1.0, d_ab.abs());
        prop_assert!((d_ab - d_ba).abs() <= 1e-12 * scale, "{d_ab} vs {d_ba}");
    }

    #[test]
    fn soft_dtw_is_symmetric_and_below_dtw((a, b) in series_pair(), gamma in 0.05f64..5.0) {
        let cfg = SoftDtwConfig::new(gamma).unwrap();
        let s_ab = soft_dtw(&a, &b, cfg, Metric::SqEuclid).unwrap();
        let s_ba = soft_dtw(&b, &a, cfg, Metric::SqEuclid).unwrap();
        let scale = f64::max(1.0, s_ab.abs());
        prop_assert!((s_ab - s_ba).abs() <= 1e-9 * scale, "{s_ab} vs {s_ba}");
        let (hard, _) = dtw(&a, &b, WarpConstraints::unlimited(), Metric::SqEuclid).unwrap();
        prop_assert!(s_ab <= hard + 1e-9, "soft {s_ab} exceeds hard {hard}");
    }

    #[test]
    fn narrower_windows_never_shrink_the_distance(
        (a, b) in series_pair(),
        w in 1usize..=6,
        extra in 1usize..=4,
    ) {
        let narrow = dtw(&a, &b, WarpConstraints::window(w), Metric::SqEuclid);
        if let Ok((d_narrow, _)) = narrow {
            // Widening admits a superset of paths: still feasible, and
            // the minimum can only stay or drop.
            let (d_wide, _) =
                dtw(&a, &b, WarpConstraints::window(w + extra), Metric::SqEuclid).unwrap();
            prop_assert!(d_wide <= d_narrow + 1e-12, "{d_wide} > {d_narrow}");
        }
    }

    #[test]
    fn warp_path_is_a_monotone_staircase_whose_costs_sum_to_the_distance(
        (a, b) in series_pair()
    ) {
        let (dist, path) = dtw(&a, &b, WarpConstraints::unlimited(), Metric::SqEuclid).unwrap();
        let steps = path.steps();
        prop_assert_eq!(steps.first().copied(), Some((1, 1)));
        prop_assert_eq!(steps.last().copied(), Some((a.len(), b.len())));
        for w in steps.windows(2) {
            let di = w[1].0 as i64 - w[0].0 as i64;
            let dj = w[1].1 as i64 - w[0].1 as i64;
            prop_assert!(
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1)),
                "illegal move {:?} -> {:?}",
                w[0],
                w[1]
            );
        }
        let matrix = path.matrix_form(a.len(), b.len());
        let ones = matrix.iter().filter(|&&v| v == 1.0).count();
        prop_assert_eq!(ones, steps.len());
        prop_assert!(matrix.iter().all(|&v| v == 0.0 || v == 1.0));

        let cost = local_cost_matrix(&a, &b, Metric::SqEuclid).unwrap();
        let total: f64 = steps.iter().map(|&(i, j)| cost[(i - 1) * b.len() + (j - 1)]).sum();
        let scale = f64::max(1.0, dist.abs());
        prop_assert!((total - dist).abs() <= 1e-9 * scale, "path {total} vs dp {dist}");
    }

    #[test]
    fn row_softmax_rows_are_stochastic(
        rows in 1usize..=6,
        cols in 1usize..=6,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed);
        // Bounded logits: beyond a ~37-unit gap the largest entry rounds
        // to exactly 1.0 in f64, so strict openness is only meaningful
        // for non-saturating rows.
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-8.0, 8.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[rows, cols], data).unwrap());
        let s = g.row_softmax(x).unwrap();
        let out = g.value(s);
        for r in 0..rows {
            let row = &out.data()[r * cols..(r + 1) * cols];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row {r} sums to {sum}");
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || cols == 1 && v == 1.0));
        }
    }

    #[test]
    fn contrastive_loss_is_nonnegative_and_hinges_at_the_margin(
        (a, b) in series_pair(),
        tau_scale in 0.1f64..3.0,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed);
        let mut g = Graph::new();
        let logits_data: Vec<f64> = (0..a.len() * b.len()).map(|_| rng.normal()).collect();
        let logits = g.constant(Tensor::from_vec(&[a.len(), b.len()], logits_data).unwrap());
        let p_s = g.row_softmax(logits).unwrap();
        let an = g.constant(a.to_tensor());
        let bn = g.constant(b.to_tensor());

        let same = loss_contrastive_s(&mut g, an, bn, p_s, true, 1.0).unwrap();
        let same_val = g.value(same).item();
        prop_assert!(same_val >= 0.0);

        // Margin pinned to a fraction of the actual reconstruction
        // error: at or below it the different-class hinge must close.
        let tau = f64::max(same_val * tau_scale, 1e-9);
        let diff = loss_contrastive_s(&mut g, an, bn, p_s, false, tau).unwrap();
        let diff_val = g.value(diff).item();
        prop_assert!(diff_val >= 0.0);
        if tau <= same_val {
            prop_assert_eq!(diff_val, 0.0, "hinge open: err {} tau {}", same_val, tau);
        } else {
            let expect = tau - same_val;
            prop_assert!((diff_val - expect).abs() <= 1e-12 * f64::max(1.0, expect.abs()));
        }
    }

    #[test]
    fn adam_step_commutes_with_sign_reflection(seed in 0u64..1000, lr in 1e-5f64..1e-1) {
        // Reflecting parameters and gradients together mirrors the
        // trajectory bit-for-bit: the first moment flips sign exactly,
        // the second is sign-blind, and negation is exact in floats.
        let mut rng = Rng::new(seed);
        let shape = [3usize, 2];
        let p0 = Tensor::randn(&shape, 1.0, &mut rng);
        let grad_data: Vec<f64> = (0..6).map(|_| rng.normal()).collect();

        let run = |params_init: &Tensor, grad_data: Vec<f64>| -> Vec<f64> {
            let mut params = BTreeMap::new();
            params.insert("w".to_string(), params_init.clone());
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::from_vec(&shape, grad_data).unwrap());
            let mut adam = Adam::new(AdamConfig::with_lr(lr)).unwrap();
            adam.step(&mut params, &grads).unwrap();
            params["w"].data().to_vec()
        };
        let p0_neg = Tensor::from_vec(&shape, p0.data().iter().map(|v| -v).collect()).unwrap();
        let after_pos = run(&p0, grad_data.clone());
        let after_neg = run(&p0_neg, grad_data.iter().map(|v| -v).collect());
        for (pp, pn) in after_pos.iter().zip(&after_neg) {
            prop_assert_eq!(*pp, -*pn, "trajectory not mirrored: {} vs {}", pp, pn);
        }
    }

    #[test]
    fn pair_sampling_is_seed_deterministic(seed in 0u64..1000, batch in 3usize..=24) {
        let mut data_rng = Rng::new(7);
        let ds = attwarp_core::data::synth_warped_classes(&mut data_rng, 3, 4, 8, 0.3, 0.05)
            .unwrap();
        let draw = |seed: u64| {
            let mut rng = Rng::new(seed);
            (0..3)
                .map(|_| {
                    sample_pairs(&ds, &mut rng, batch, (1, 2))
                        .unwrap()
                        .iter()
                        .map(|p| (p.a, p.b, p.same_class))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(seed), draw(seed));
    }

    #[test]
    fn knn_is_invariant_under_monotone_distance_transforms(
        seed in 0u64..1000,
        k in 0usize..=2,
    ) {
        // Odd k over two classes: no vote ties, so predictions are a
        // pure function of neighbor ranks. (A tied vote falls back to
        // summed distance, which is deliberately rank-sensitive.)
        let k = 2 * k + 1;
        let mut rng = Rng::new(seed);
        let (nq, nr) = (6, 8);
        // Quantized distances keep the float image of the transforms
        // injective (grid spacing dwarfs the output ulp), so ranks are
        // preserved exactly.
        let raw: Vec<f64> = (0..nq * nr)
            .map(|_| (5.0 * rng.uniform() * 1e6).round() / 1e6)
            .collect();
        let labels: Vec<usize> = (0..nr).map(|_| (rng.uniform() * 2.0) as usize).collect();
        let base = DistanceMatrix::new(nq, nr, raw.clone()).unwrap();
        let affine =
            DistanceMatrix::new(nq, nr, raw.iter().map(|v| 2.0 * v + 1.0).collect()).unwrap();
        let exp = DistanceMatrix::new(nq, nr, raw.iter().map(|v| v.exp()).collect()).unwrap();
        let p0 = knn_classify(&base, &labels, k).unwrap();
        prop_assert_eq!(&p0, &knn_classify(&affine, &labels, k).unwrap());
        prop_assert_eq!(&p0, &knn_classify(&exp, &labels, k).unwrap());
    }

    #[test]
    fn eer_is_invariant_under_monotone_score_transforms(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        // Quantized scores keep strict monotonicity exactly
        // representable after the affine map.
        let quant = |v: f64| (v * 1e6).round() / 1e6;
        let genuine: Vec<f64> = (0..20).map(|_| quant(2.0 * rng.uniform())).collect();
        let forgery: Vec<f64> = (0..25).map(|_| quant(2.0 * rng.uniform() + 0.5)).collect();
        let e0 = eer(&genuine, &forgery).unwrap();
        let map = |v: f64| 2.0 * v + 3.0;
        let e1 = eer(
            &genuine.iter().copied().map(map).collect::<Vec<_>>(),
            &forgery.iter().copied().map(map).collect::<Vec<_>>(),
        )
        .unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-12, "{e0} vs {e1}");
        prop_assert!((0.0..=1.0).contains(&e0));
    }

    #[test]
    fn mcnemar_is_symmetric_with_p_in_unit_interval(n01 in 0usize..=40, n10 in 0usize..=40) {
        prop_assume!(n01 + n10 > 0);
        for mode in [McnemarMode::Exact, McnemarMode::CorrectedChi2] {
            let a = mcnemar(
                ContingencyTable2x2 { n00: 5, n01, n10, n11: 7 },
                mode,
            )
            .unwrap();
            let b = mcnemar(
                ContingencyTable2x2 { n00: 5, n01: n10, n10: n01, n11: 7 },
                mode,
            )
            .unwrap();
            prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0, "p = {}", a.p_value);
            prop_assert_eq!(a.p_value, b.p_value);
        }
    }

    #[test]
    fn splits_partition_the_dataset(
        seed in 0u64..1000,
        train_frac in 0.0f64..1.0,
        val_scale in 0.0f64..1.0,
        stratified in any::<bool>(),
    ) {
        let mut data_rng = Rng::new(11);
        let ds = attwarp_core::data::synth_warped_classes(&mut data_rng, 3, 7, 8, 0.3, 0.05)
            .unwrap();
        let spec = SplitSpec {
            train_fraction: train_frac,
            val_fraction: val_scale * (1.0 - train_frac),
            seed,
            stratified,
        };
        let parts = split(&ds, spec).unwrap();
        let mut ids: Vec<&str> = parts
            .train
            .samples()
            .iter()
            .chain(parts.val.samples())
            .chain(parts.test.samples())
            .map(|s| s.id.as_deref().unwrap())
            .collect();
        prop_assert_eq!(ids.len(), ds.len());
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), ds.len(), "duplicate ids across parts");
    }
}

proptest! {
    // The attention checks run a real (tiny) network forward pass, so a
    // reduced case count keeps the suite quick.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attend_is_row_stochastic_pure_and_extent_preserving(
        seed in 0u64..1000,
        i_len in 2usize..=9,
        j_len in 2usize..=9,
    ) {
        let mut rng = Rng::new(seed);
        let arch = ArchConfig { dim: 1, levels: 2, channels: vec![3, 5], kernel: 3 };
        let model = AttentionModel::new(arch, &mut rng).unwrap();
        let a = TimeSeries::univariate((0..i_len).map(|_| rng.normal()).collect()).unwrap();
        let b = TimeSeries::univariate((0..j_len).map(|_| rng.normal()).collect()).unwrap();

        let stats_before = model.stats().clone();
        let out = model.attend(&a, &b).unwrap();
        prop_assert_eq!(model.stats(), &stats_before, "eval pass mutated running stats");

        prop_assert_eq!(out.logits.shape(), [i_len, j_len]);
        prop_assert_eq!(out.p_s.shape(), [i_len, j_len]);
        prop_assert_eq!(out.p_t.shape(), [j_len, i_len]);
        for (m, rows, cols) in [(&out.p_s, i_len, j_len), (&out.p_t, j_len, i_len)] {
            for r in 0..rows {
                let row = &m.data()[r * cols..(r + 1) * cols];
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        let d = model.pair_distance(&a, &b).unwrap();
        prop_assert!(d >= 0.0 && d.is_finite());

        // Row-stochastic warping is a per-coordinate convex combination:
        // every warped value stays inside the source's value envelope.
        let warped = warp(&out.p_s, &b).unwrap();
        let (lo, hi) = b
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        prop_assert!(warped
            .data()
            .iter()
            .all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));

        let oc = outer_concat(&a, &b).unwrap();
        prop_assert_eq!(oc.shape(), [2, i_len, j_len]);
    }
}
