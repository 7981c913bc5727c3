use std::sync::Arc;

use super::*;
use crate::data::{make_synthetic, Corruption, CorruptionKind, DatasetSpec, DistRole, DistributionSpec, SyntheticKind};
use crate::net::{LayerSpec, NetworkSpec};

fn mlp_spec(dims: &[usize]) -> NetworkSpec {
    let mut layers = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        layers.push(LayerSpec::Dense { fan_in: pair[0], fan_out: pair[1] });
        if i + 2 < dims.len() {
            layers.push(LayerSpec::Relu);
        }
    }
    NetworkSpec { input_shape: vec![dims[0]], layers, classes: *dims.last().unwrap() }
}

fn mlp(dims: &[usize], seed: u64) -> MaskedNetwork {
    MaskedNetwork::init(&mlp_spec(dims), seed).unwrap()
}

fn set_weights(net: &mut MaskedNetwork, layer: usize, values: &[f64]) {
    net.params_mut()[layer].weight.weights_mut().data_mut().copy_from_slice(values);
}

fn samples_1d(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
}

#[test]
fn criterion_descriptors_follow_the_method_table() {
    for criterion in Criterion::ALL {
        let structured = matches!(criterion, Criterion::Ft | Criterion::Pfp);
        assert_eq!(criterion.structured(), structured);
        assert_eq!(
            criterion.scope(),
            if structured { Scope::Local } else { Scope::Global }
        );
        assert_eq!(
            criterion.granularity(),
            if structured { Granularity::PerOutputUnit } else { Granularity::PerWeight }
        );
        assert_eq!(
            criterion.data_informed(),
            matches!(criterion, Criterion::Sipp | Criterion::Pfp)
        );
    }
    assert_eq!(PruneMethod::new(Criterion::Sipp).sample_size, 64);
}

#[test]
fn wt_scores_are_absolute_values() {
    let mut net = mlp(&[4, 2], 0);
    set_weights(&mut net, 0, &[0.5, -2.0, 0.1, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let map = sensitivity_wt(&net);
    assert_eq!(&map.layers[0].scores[..4], &[0.5, 2.0, 0.1, 0.0]);

    let mut negated = net.clone();
    for v in negated.params_mut()[0].weight.weights_mut().data_mut() {
        *v = -*v;
    }
    assert_eq!(sensitivity_wt(&negated).layers[0].scores, map.layers[0].scores);
}

#[test]
fn wt_equal_weights_give_equal_scores() {
    let mut net = mlp(&[3, 2], 0);
    set_weights(&mut net, 0, &[0.7; 6]);
    let map = sensitivity_wt(&net);
    assert!(map.layers[0].scores.iter().all(|&s| s == 0.7));
}

#[test]
fn sipp_is_weight_times_mean_abs_activation() {
    // single sample, w = 2, a = 0.5 -> score 1.0
    let mut net = mlp(&[1, 2], 0);
    set_weights(&mut net, 0, &[2.0, 0.0]);
    let map = sensitivity_sipp(&net, &samples_1d(&[0.5])).unwrap();
    assert_eq!(map.layers[0].scores[0], 1.0);

    // zero activation annihilates every score
    let map = sensitivity_sipp(&net, &samples_1d(&[0.0])).unwrap();
    assert_eq!(map.layers[0].scores, vec![0.0, 0.0]);

    // two samples a in {1, 3}, w = 1 -> mean(|1|, |3|) = 2
    set_weights(&mut net, 0, &[1.0, 0.0]);
    let map = sensitivity_sipp(&net, &samples_1d(&[1.0, 3.0])).unwrap();
    let oracle = ((1.0f64 * 1.0).abs() + (1.0f64 * 3.0).abs()) / 2.0;
    assert_eq!(map.layers[0].scores[0], oracle);
}

#[test]
fn sipp_requires_samples() {
    let net = mlp(&[2, 2], 0);
    let empty = Tensor::zeros(vec![0, 2]);
    assert!(matches!(sensitivity_sipp(&net, &empty), Err(PruneError::EmptySampleSet)));
    assert!(matches!(
        sensitivities(&net, &PruneMethod::new(Criterion::Sipp), None),
        Err(PruneError::NeedsSamples(Criterion::Sipp))
    ));
}

#[test]
fn ft_scores_are_unit_l1_norms() {
    let mut net = mlp(&[2, 2, 2], 0);
    set_weights(&mut net, 0, &[1.0, -1.0, 0.1, 0.2]);
    let map = sensitivity_ft(&net);
    assert_eq!(map.layers[0].scores, vec![2.0, 0.30000000000000004]);
    assert!(map.layers[0].prunable);
    assert!(!map.layers[1].prunable, "classifying layer stays out of structured pruning");

    let mut zeroed = net.clone();
    set_weights(&mut zeroed, 0, &[0.0; 4]);
    assert_eq!(sensitivity_ft(&zeroed).layers[0].scores, vec![0.0, 0.0]);
}

#[test]
fn ft_scaling_scales_scores_but_not_the_pruned_set() {
    let mut net = mlp(&[4, 6, 3], 3);
    let mut scaled = net.clone();
    for v in scaled.params_mut()[0].weight.weights_mut().data_mut() {
        *v *= 3.0;
    }
    let base_map = sensitivity_ft(&net);
    let scaled_map = sensitivity_ft(&scaled);
    for (a, b) in base_map.layers[0].scores.iter().zip(&scaled_map.layers[0].scores) {
        assert!((a * 3.0 - b).abs() < 1e-12);
    }
    let method = PruneMethod::new(Criterion::Ft);
    prune(&mut net, &method, 0.5, None).unwrap();
    prune(&mut scaled, &method, 0.5, None).unwrap();
    assert_eq!(
        net.params()[0].weight.mask().data(),
        scaled.params()[0].weight.mask().data()
    );
}

#[test]
fn pfp_scores_follow_the_downstream_sup_norm() {
    // one hidden unit with downstream weights {2, 0}, activation 0.5 -> 1.0
    let mut net = mlp(&[1, 1, 2], 0);
    set_weights(&mut net, 0, &[1.0]);
    set_weights(&mut net, 1, &[2.0, 0.0]);
    let map = sensitivity_pfp(&net, &samples_1d(&[0.5])).unwrap();
    assert_eq!(map.layers[0].scores, vec![1.0]);

    // zero activation on all samples -> 0
    let map = sensitivity_pfp(&net, &samples_1d(&[0.0])).unwrap();
    assert_eq!(map.layers[0].scores, vec![0.0]);

    // downstream weights {1, -3}, activation 1 -> 3 by enumerating the sup
    set_weights(&mut net, 1, &[1.0, -3.0]);
    let map = sensitivity_pfp(&net, &samples_1d(&[1.0])).unwrap();
    let oracle = [1.0f64, -3.0].iter().map(|w| (w * 1.0f64).abs()).fold(0.0, f64::max);
    assert_eq!(map.layers[0].scores, vec![oracle]);
}

#[test]
fn pfp_final_layer_falls_back_to_own_weighted_activations() {
    let mut net = mlp(&[2, 2], 0);
    set_weights(&mut net, 0, &[1.0, -2.0, 0.5, 0.5]);
    let samples = Tensor::new(vec![2, 2], vec![1.0, 0.5, -3.0, 0.2]).unwrap();
    let map = sensitivity_pfp(&net, &samples).unwrap();
    // unit j: max over samples and inputs of |w_ji * x_i|
    let w: [[f64; 2]; 2] = [[1.0, -2.0], [0.5, 0.5]];
    let xs: [[f64; 2]; 2] = [[1.0, 0.5], [-3.0, 0.2]];
    for (j, w_row) in w.iter().enumerate() {
        let mut oracle = 0.0f64;
        for x in &xs {
            for (wv, xv) in w_row.iter().zip(x) {
                oracle = oracle.max((wv * xv).abs());
            }
        }
        assert_eq!(map.layers[0].scores[j], oracle);
    }
}

#[test]
fn global_allocation_keeps_the_top_scores() {
    let net = mlp(&[2, 2], 0);
    let map = SensitivityMap {
        granularity: Granularity::PerWeight,
        layers: vec![LayerScores {
            param_index: 0,
            scores: vec![4.0, 3.0, 2.0, 1.0],
            prunable: true,
        }],
    };
    let alloc = allocate_budgets(&net, &map, 0.5, AllocationPolicy::GlobalThreshold).unwrap();
    let mut selected = alloc.selected.clone();
    selected.sort();
    assert_eq!(selected, vec![(0, 2), (0, 3)]);
    assert_eq!(alloc.requested, 2);
    assert!(alloc.warnings.is_empty());
}

#[test]
fn uniform_allocation_prunes_the_same_ratio_per_layer() {
    let net = mlp(&[4, 4, 4], 1);
    let map = SensitivityMap {
        granularity: Granularity::PerOutputUnit,
        layers: vec![
            LayerScores { param_index: 0, scores: vec![0.9, 0.1, 0.5, 0.4], prunable: true },
            LayerScores { param_index: 1, scores: vec![0.2, 0.8, 0.3, 0.7], prunable: true },
        ],
    };
    let alloc = allocate_budgets(&net, &map, 0.5, AllocationPolicy::UniformPerLayer).unwrap();
    for budget in &alloc.budgets {
        assert_eq!(budget.newly_pruned, 2);
        assert_eq!(budget.kept_after, 2);
    }
    let mut selected = alloc.selected.clone();
    selected.sort();
    assert_eq!(selected, vec![(0, 1), (0, 3), (1, 0), (1, 2)]);
}

#[test]
fn normalized_allocation_matches_a_threshold_sweep_oracle() {
    let net = mlp(&[4, 4, 4], 2);
    let layer_scores = [vec![1.0, 0.9, 0.1, 0.05], vec![1.0, 0.2, 0.15, 0.1]];
    let map = SensitivityMap {
        granularity: Granularity::PerOutputUnit,
        layers: layer_scores
            .iter()
            .enumerate()
            .map(|(p, scores)| LayerScores { param_index: p, scores: scores.clone(), prunable: true })
            .collect(),
    };
    let r = 0.5;
    let alloc = allocate_budgets(&net, &map, r, AllocationPolicy::NormalizedGlobal).unwrap();

    // oracle: sweep every candidate threshold over layer-max-normalized
    // scores, pick the smallest one whose pruned count meets the budget
    let requested = (r * 8.0).floor() as usize;
    let mut normalized: Vec<(f64, usize, usize)> = Vec::new();
    for (l, scores) in layer_scores.iter().enumerate() {
        let max = scores.iter().fold(0.0f64, |m, &s| m.max(s));
        for (u, &s) in scores.iter().enumerate() {
            normalized.push((s / max, l, u));
        }
    }
    let mut thresholds: Vec<f64> = normalized.iter().map(|&(s, _, _)| s).collect();
    thresholds.sort_by(f64::total_cmp);
    let mut oracle_counts = vec![0usize; 2];
    'sweep: for &t in &thresholds {
        let pruned: Vec<&(f64, usize, usize)> =
            normalized.iter().filter(|&&(s, _, _)| s <= t).collect();
        if pruned.len() == requested {
            for &&(_, l, _) in &pruned {
                oracle_counts[l] += 1;
            }
            break 'sweep;
        }
    }
    assert_eq!(oracle_counts, vec![2, 2]);
    for (budget, oracle) in alloc.budgets.iter().zip(&oracle_counts) {
        assert_eq!(budget.newly_pruned, *oracle);
    }
}

#[test]
fn prune_removes_exactly_the_requested_count() {
    let mut net = mlp(&[5, 2], 4);
    let method = PruneMethod::new(Criterion::Wt);
    let outcome = prune(&mut net, &method, 0.5, None).unwrap();
    assert_eq!(outcome.requested, 5);
    assert_eq!(outcome.newly_masked, 5);
    assert_eq!(net.prune_ratio(), 0.5);
}

#[test]
fn two_half_prunes_reach_three_quarters() {
    let mut net = mlp(&[8, 2], 4);
    let method = PruneMethod::new(Criterion::Wt);
    prune(&mut net, &method, 0.5, None).unwrap();
    prune(&mut net, &method, 0.5, None).unwrap();
    assert_eq!(net.prune_ratio(), 0.75);
}

#[test]
fn wt_pruned_set_equals_the_bottom_k_of_a_full_sort() {
    for seed in 0..20 {
        let mut net = mlp(&[6, 5, 3], seed);
        let r = 0.4;
        // oracle: rank every weight by (|w|, layer, index) and take the bottom k
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (p, lp) in net.params().iter().enumerate() {
            for (i, w) in lp.weight.weights().data().iter().enumerate() {
                ranked.push((w.abs(), p, i));
            }
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let k = (r * ranked.len() as f64).floor() as usize;
        let mut oracle: Vec<(usize, usize)> = ranked[..k].iter().map(|&(_, p, i)| (p, i)).collect();
        oracle.sort();

        prune(&mut net, &PruneMethod::new(Criterion::Wt), r, None).unwrap();
        let mut masked = Vec::new();
        for (p, lp) in net.params().iter().enumerate() {
            for i in 0..lp.weight.total() {
                if lp.weight.is_entry_masked(i) {
                    masked.push((p, i));
                }
            }
        }
        assert_eq!(masked, oracle, "seed {seed}");
    }
}

#[test]
fn global_pruning_clamps_rather_than_emptying_a_layer() {
    let mut net = mlp(&[3, 2, 2], 7);
    // make the first layer uniformly the weakest so the global walk wants all of it
    set_weights(&mut net, 0, &[1e-6; 6]);
    let outcome = prune(&mut net, &PruneMethod::new(Criterion::Wt), 0.8, None).unwrap();
    assert!(!outcome.warnings.is_empty());
    assert!(net.params()[0].weight.kept() >= 1);
    assert_eq!(outcome.requested, 8);
    assert_eq!(outcome.newly_masked, 8, "budget still met from the other layer");
}

#[test]
fn weight_criteria_ignore_samples_but_data_informed_ones_do_not() {
    let net = mlp(&[2, 3, 2], 9);
    let s1 = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let s2 = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();

    let wt = sensitivity_wt(&net);
    let ft = sensitivity_ft(&net);
    // recompute with a different world: identical maps
    assert_eq!(wt.layers[0].scores, sensitivity_wt(&net).layers[0].scores);
    assert_eq!(ft.layers[0].scores, sensitivity_ft(&net).layers[0].scores);

    let sipp1 = sensitivity_sipp(&net, &s1).unwrap();
    let sipp2 = sensitivity_sipp(&net, &s2).unwrap();
    assert_ne!(sipp1.layers[0].scores, sipp2.layers[0].scores);

    let pfp1 = sensitivity_pfp(&net, &s1).unwrap();
    let pfp2 = sensitivity_pfp(&net, &s2).unwrap();
    assert_ne!(pfp1.layers[0].scores, pfp2.layers[0].scores);
}

#[test]
fn wt_selection_is_invariant_under_positive_scaling() {
    for seed in 0..10 {
        let base = mlp(&[5, 4, 2], 100 + seed);
        let mut a = base.clone();
        let mut b = base.clone();
        for lp in b.params_mut() {
            for v in lp.weight.weights_mut().data_mut() {
                *v *= 3.0;
            }
        }
        let method = PruneMethod::new(Criterion::Wt);
        prune(&mut a, &method, 0.3, None).unwrap();
        prune(&mut b, &method, 0.3, None).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.weight.mask().data(), pb.weight.mask().data());
        }
    }
}

fn cluster_dist(n: usize, dim: usize, classes: usize, seed: u64) -> DistributionSpec {
    let data = make_synthetic(&DatasetSpec {
        kind: SyntheticKind::GaussianClusters { dim, separation: 10.0 },
        n,
        classes,
        seed,
    })
    .unwrap();
    DistributionSpec::new(Arc::new(data), DistRole::TrainDist, vec![])
}

fn quick_schedule(n_cycles: usize, r_prune: f64, n_train: usize) -> PruneSchedule {
    PruneSchedule {
        n_cycles,
        r_prune,
        n_train,
        train: TrainHyper {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            nesterov: false,
            batch_size: 16,
            warmup_epochs: 2,
            milestones: vec![n_train * 2 / 3],
            lr_decay: 0.1,
        },
    }
}

#[test]
fn zero_cycles_returns_the_trained_unpruned_net() {
    let dist = cluster_dist(200, 4, 2, 0);
    let spec = mlp_spec(&[4, 6, 2]);
    let run =
        prune_retrain(&spec, &PruneMethod::new(Criterion::Wt), &quick_schedule(0, 0.5, 6), &dist, 1)
            .unwrap();
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.records[0].prune_ratio, 0.0);
    assert_eq!(run.checkpoints.len(), 1);
}

#[test]
fn two_half_cycles_land_near_three_quarters() {
    let dist = cluster_dist(200, 4, 2, 0);
    let spec = mlp_spec(&[4, 8, 2]);
    let run =
        prune_retrain(&spec, &PruneMethod::new(Criterion::Wt), &quick_schedule(2, 0.5, 5), &dist, 2)
            .unwrap();
    let total = run.final_net().prunable_total() as f64;
    let final_ratio = run.records.last().unwrap().prune_ratio;
    assert!((final_ratio - 0.75).abs() <= 2.0 / total, "ratio {final_ratio}");
}

#[test]
fn masks_are_monotone_and_masked_weights_stay_zero() {
    let dist = cluster_dist(240, 4, 3, 5);
    let spec = mlp_spec(&[4, 10, 3]);
    for criterion in [Criterion::Wt, Criterion::Sipp, Criterion::Ft, Criterion::Pfp] {
        let run = prune_retrain(
            &spec,
            &PruneMethod::new(criterion),
            &quick_schedule(3, 0.4, 5),
            &dist,
            3,
        )
        .unwrap();
        for pair in run.checkpoints.windows(2) {
            for (before, after) in pair[0].params().iter().zip(pair[1].params()) {
                for (m0, m1) in before.weight.mask().data().iter().zip(after.weight.mask().data())
                {
                    assert!(!(*m0 == 0.0 && *m1 == 1.0), "{criterion:?}: resurrected mask entry");
                }
            }
        }
        let last = run.final_net();
        for lp in last.params() {
            for (w, m) in lp.weight.weights().data().iter().zip(lp.weight.mask().data()) {
                if *m == 0.0 {
                    assert_eq!(*w, 0.0, "{criterion:?}: masked weight drifted");
                }
            }
        }
        assert!(run.records.last().unwrap().prune_ratio > 0.0);
    }
}

#[test]
fn separable_task_keeps_accuracy_within_the_margin_after_three_cycles() {
    let dist = cluster_dist(400, 2, 2, 11);
    let spec = mlp_spec(&[2, 8, 2]);
    let run = prune_retrain(
        &spec,
        &PruneMethod::new(Criterion::Wt),
        &quick_schedule(3, 0.3, 12),
        &dist,
        7,
    )
    .unwrap();
    let unpruned_err = run.records[0].traindist_error;
    let final_err = run.records.last().unwrap().traindist_error;
    assert!(
        final_err - unpruned_err <= 0.005,
        "error drift {unpruned_err} -> {final_err} exceeds the 0.5% margin"
    );
    // geometric schedule up to one floored weight per cycle
    let total = run.final_net().prunable_total() as f64;
    let ratio = run.records.last().unwrap().prune_ratio;
    assert!((ratio - (1.0 - 0.7f64.powi(3))).abs() <= 3.0 / total);
}

#[test]
fn divergence_reports_the_failing_cycle() {
    let dist = cluster_dist(200, 4, 2, 0);
    let spec = mlp_spec(&[4, 6, 2]);
    let mut schedule = quick_schedule(1, 0.5, 4);
    schedule.train.lr = 1e8;
    schedule.train.warmup_epochs = 0;
    let err = prune_retrain(&spec, &PruneMethod::new(Criterion::Wt), &schedule, &dist, 1)
        .unwrap_err();
    assert!(matches!(err, PruneError::Diverged { cycle: 0, .. }), "got {err:?}");
}

#[test]
fn robust_training_mixes_corruptions_without_breaking_masks() {
    let data = make_synthetic(&DatasetSpec {
        kind: SyntheticKind::TexturedPatches8x8,
        n: 150,
        classes: 3,
        seed: 4,
    })
    .unwrap();
    let dist = DistributionSpec::new(
        Arc::new(data),
        DistRole::TrainDist,
        vec![Corruption::new(CorruptionKind::GaussianNoise, 2).unwrap()],
    );
    let spec = NetworkSpec {
        input_shape: vec![1, 8, 8],
        layers: vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 3, padding: crate::net::PaddingSpec::Same },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { fan_in: 256, fan_out: 3 },
        ],
        classes: 3,
    };
    let run = prune_retrain(
        &spec,
        &PruneMethod::new(Criterion::Wt),
        &quick_schedule(1, 0.3, 3),
        &dist,
        9,
    )
    .unwrap();
    assert_eq!(run.records.len(), 2);
    let last = run.final_net();
    for lp in last.params() {
        for (w, m) in lp.weight.weights().data().iter().zip(lp.weight.mask().data()) {
            if *m == 0.0 {
                assert_eq!(*w, 0.0);
            }
        }
    }
}
