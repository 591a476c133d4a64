mod common;

use common::*;
use numcore::{Graph, Tensor};
use proptest::prelude::*;
use vitalcast::models::{bind, forward, init_params, is_aux_head, is_seq_module, Architecture, Batch, Mode};
use vitalcast::training::{
    adam_step, cross_validate, focal_loss, focal_loss_scalar, phase1, phase2, phase3, stratified_kfold, AdamState,
    TrainConfig,
};

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: epochs,
        lr_phase12: 1e-2,
        lr_phase3: 1e-3,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn loss_of(params: &vitalcast::models::ModelParams, batch: &Batch, labels: &[bool]) -> (f64, numcore::Gradients) {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, &|n| !is_aux_head(n));
    let p = forward(&mut g, &bound, params, batch, Mode::Fused).unwrap();
    let y = g.constant(Tensor::new(vec![labels.len(), 1], labels.iter().map(|&l| f64::from(u8::from(l))).collect()).unwrap());
    let loss = focal_loss(&mut g, p, y, 2.0, 0.75).unwrap();
    (g.value(loss).data()[0], g.backward(loss).unwrap())
}

#[test]
fn one_adam_step_lowers_the_batch_loss() {
    let mut failures = 0;
    for inst in 0..100u64 {
        let arch = Architecture::ALL[inst as usize % 3];
        let mut params = random_params(arch, tiny_config(4, 8), inst, 0.5);
        let samples = random_samples(6, 8, 1000 + inst);
        let refs: Vec<_> = samples.iter().collect();
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        let batch = Batch::from_samples(&refs).unwrap();
        let (before, grads) = loss_of(&params, &batch, &labels);
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut st, 1e-4, TrainConfig::default().hyper(), &|n| !is_aux_head(n)).unwrap();
        let (after, _) = loss_of(&params, &batch, &labels);
        if after >= before {
            failures += 1;
        }
    }
    assert!(failures <= 2, "{failures} of 100 steps did not lower the loss");
}

#[test]
fn graph_focal_loss_matches_scalar_route() {
    let ps = [0.01, 0.2, 0.5, 0.77, 0.999];
    let ys = [true, false, true, false, true];
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![5, 1], ps.to_vec()).unwrap());
    let y = g.constant(Tensor::new(vec![5, 1], ys.iter().map(|&l| f64::from(u8::from(l))).collect()).unwrap());
    let l = focal_loss(&mut g, p, y, 2.0, 0.75).unwrap();
    let want = ps.iter().zip(&ys).map(|(&p, &y)| focal_loss_scalar(p, y, 2.0, 0.75)).sum::<f64>() / 5.0;
    assert!((g.value(l).data()[0] - want).abs() < 1e-15);
}

#[test]
fn phases_respect_their_freeze_contracts() {
    let cfg = quick_cfg(3);
    let data = separable_samples(60, 16, 1);
    let (tr, va): (Vec<_>, Vec<_>) = data.iter().partition(|s| s.window_id.len() % 2 == 0 || s.label);
    for arch in [Architecture::Svs, Architecture::Mlvs] {
        let mut p = init_params(arch, tiny_config(4, 16), 9).unwrap();
        let start = p.clone();
        let o1 = phase1(&mut p, &tr, &va, &cfg).unwrap();
        for (name, t) in p.tensors() {
            if !is_seq_module(name) && !is_aux_head(name) {
                assert_eq!(t, start.get(name).unwrap(), "{name} moved in phase 1");
                assert_eq!(o1.adam.get(name).unwrap().t, 0);
            }
        }
        let after1 = p.clone();
        let o2 = phase2(&mut p, &tr, &va, &cfg).unwrap();
        assert!(!p.has_aux_head());
        assert!(p.names().all(|n| !is_aux_head(n)));
        for (name, t) in p.tensors() {
            if is_seq_module(name) {
                let before = after1.get(name).unwrap();
                assert!(t.data().iter().zip(before.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
                let m = o2.adam.get(name).unwrap();
                assert_eq!(m.t, 0);
                assert!(m.m.iter().chain(&m.v).all(|&x| x.to_bits() == 0));
            }
        }
        phase3(&mut p, &tr, &va, &cfg).unwrap();
        assert!(!p.has_aux_head());
        // phase 3 refuses a model that still has the aux head
        let mut fresh = init_params(arch, tiny_config(4, 16), 9).unwrap();
        assert!(phase3(&mut fresh, &tr, &va, &cfg).is_err());
    }
    let mut n = init_params(Architecture::Nshs, tiny_config(4, 16), 9).unwrap();
    assert!(phase1(&mut n, &tr, &va, &cfg).is_err());
}

#[test]
fn zero_learning_rate_stops_after_patience_plus_one_epochs() {
    let data = separable_samples(30, 8, 2);
    let refs: Vec<_> = data.iter().collect();
    let (tr, va) = refs.split_at(20);
    for patience in [1, 3, 5] {
        let cfg = TrainConfig { epochs: 50, patience, lr_phase12: 0.0, ..quick_cfg(50) };
        let mut p = init_params(Architecture::Svs, tiny_config(4, 8), 1).unwrap();
        let o = phase1(&mut p, tr, va, &cfg).unwrap();
        assert_eq!(o.summary.epochs_run, patience + 1);
        assert_eq!(o.summary.best_epoch, 1);
    }
}

#[test]
fn pretraining_loss_falls_on_separable_data() {
    let data = separable_samples(90, 16, 3);
    let refs: Vec<_> = data.iter().collect();
    let (tr, va) = refs.split_at(60);
    let mut p = init_params(Architecture::Svs, tiny_config(8, 16), 2).unwrap();
    let o = phase1(&mut p, tr, va, &quick_cfg(5)).unwrap();
    let losses: Vec<f64> = o.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
}

#[test]
fn best_snapshot_is_restored() {
    let data = separable_samples(45, 8, 4);
    let refs: Vec<_> = data.iter().collect();
    let (tr, va) = refs.split_at(30);
    let p = init_params(Architecture::Nshs, tiny_config(4, 8), 3).unwrap();
    let cfg = TrainConfig { lr_phase12: 0.2, ..quick_cfg(8) };
    let (params, hist) = vitalcast::training::train_single_phase(p, tr, va, &cfg).unwrap();
    let best = hist.phases[0].best_epoch;
    let rec = &hist.records[best - 1];
    let scores = vitalcast::models::predict(&params, va, Mode::Fused, 8).unwrap();
    let loss = scores.iter().zip(va).map(|(&s, x)| focal_loss_scalar(s, x.label, 2.0, 0.75)).sum::<f64>() / va.len() as f64;
    assert_eq!(loss, rec.val_loss);
    assert!(hist.records.iter().all(|r| r.val_loss >= rec.val_loss));
}

#[test]
fn cross_validation_is_reproducible_and_averages_its_folds() {
    let data = separable_samples(48, 8, 5);
    let cfg = quick_cfg(2);
    for arch in Architecture::ALL {
        let a = cross_validate(&data, arch, &tiny_config(4, 8), &cfg, 1).unwrap();
        let b = cross_validate(&data, arch, &tiny_config(4, 8), &cfg, 2).unwrap();
        assert_eq!(a.folds.len(), 3);
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.params, fb.params);
            assert_eq!(fa.val_scores, fb.val_scores);
        }
        let r = a.report();
        let mean = r.per_fold.iter().map(|f| f.metrics.auroc).sum::<f64>() / 3.0;
        assert!((r.average.auroc - mean).abs() < 1e-15);
        let mean_acc = r.per_fold.iter().map(|f| f.metrics.accuracy).sum::<f64>() / 3.0;
        assert!((r.average.accuracy - mean_acc).abs() < 1e-15);
    }
}

#[test]
fn folds_keep_prevalence_at_full_cohort_size() {
    let (n, pos) = (37_006, 6_104);
    let labels: Vec<bool> = (0..n).map(|i| (i * 7919) % n < pos).collect();
    assert_eq!(labels.iter().filter(|&&l| l).count(), pos);
    let folds = stratified_kfold(&labels, 3, 42).unwrap();
    let mut seen = vec![false; n];
    for f in &folds {
        let p = f.iter().filter(|&&i| labels[i]).count();
        assert!(p == 2034 || p == 2035, "{p}");
        assert!(f.len() == 12_335 || f.len() == 12_336);
        for &i in f {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

proptest! {
    #[test]
    fn fold_class_counts_differ_by_at_most_one(labels in prop::collection::vec(any::<bool>(), 10..200), k in 2usize..6, seed in any::<u64>()) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos >= k && labels.len() - pos >= k);
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i]).count()).collect();
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        prop_assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), labels.len());
    }
}
