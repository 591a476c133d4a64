//! Shared fixtures and plain-loop reference implementations.
#![allow(dead_code)]

use numcore::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitalcast::cohort::{Horizon, NonSeqVector};
use vitalcast::dataset::Sample;
use vitalcast::models::{bind, forward, Architecture, Batch, Mode, ModelConfig, ModelParams};
use vitalcast::preprocess::SeqGrid;
use vitalcast::training::focal_loss;

pub fn tiny_config(hidden: usize, seq_len: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        dilations: vec![1, 2, 4].into_iter().filter(|&d| d < seq_len).collect(),
        seq_len,
        seq_proj: 5,
        nonseq_proj: 4,
        fusion: 3,
        ..ModelConfig::default()
    }
}

/// Random parameters with every entry in `[-scale, scale)`.
pub fn random_params(arch: Architecture, cfg: ModelConfig, seed: u64, scale: f64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(arch, cfg).unwrap();
    for (_, t) in p.iter_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
    p
}

pub fn random_sample(rng: &mut ChaCha8Rng, len: usize, label: bool) -> Sample {
    let rows = (0..len)
        .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
        .collect();
    let mut ns = [0.0; 9];
    ns[0] = f64::from(rng.gen_range(0..2u8));
    ns[1] = f64::from(rng.gen_range(0..4u8));
    ns[2 + rng.gen_range(0..3usize)] = 1.0;
    ns[5] = f64::from(rng.gen_range(0..2u8));
    ns[6] = f64::from(rng.gen_range(0..2u8));
    ns[7] = rng.gen_range(-12.0..12.0);
    ns[8] = f64::from(rng.gen_range(0..2u8));
    Sample {
        window_id: format!("r{}", rng.gen::<u32>()),
        horizon: Horizon::new(24).unwrap(),
        label,
        nonseq: NonSeqVector(ns),
        grid: SeqGrid::new(rows).unwrap(),
    }
}

pub fn random_samples(n: usize, len: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_sample(&mut rng, len, i % 2 == 0)).collect()
}

fn loss_value(params: &ModelParams, samples: &[&Sample], mode: Mode, trainable: bool) -> (f64, Option<numcore::Gradients>) {
    let batch = Batch::from_samples(samples).unwrap();
    let mut g = Graph::new();
    let bound = bind(&mut g, params, &|_| trainable);
    let p = forward(&mut g, &bound, params, &batch, mode).unwrap();
    let y = g.constant(
        Tensor::new(vec![samples.len(), 1], samples.iter().map(|s| f64::from(u8::from(s.label))).collect()).unwrap(),
    );
    let loss = focal_loss(&mut g, p, y, 2.0, 0.75).unwrap();
    let v = g.value(loss).data()[0];
    (v, trainable.then(|| g.backward(loss).unwrap()))
}

/// Largest relative error between backward-pass and central-difference
/// gradients of the focal loss with respect to every parameter entry.
pub fn model_grad_error(params: &ModelParams, samples: &[&Sample], mode: Mode, step: f64) -> f64 {
    let (_, grads) = loss_value(params, samples, mode, true);
    let grads = grads.unwrap();
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let n = params.get(name).unwrap().len();
        for j in 0..n {
            let x0 = params.get(name).unwrap().data()[j];
            work.get_mut(name).unwrap().data_mut()[j] = x0 + step;
            let (fp, _) = loss_value(&work, samples, mode, false);
            work.get_mut(name).unwrap().data_mut()[j] = x0 - step;
            let (fm, _) = loss_value(&work, samples, mode, false);
            work.get_mut(name).unwrap().data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            let analytic = grads.param(name).map_or(0.0, |g| g[j]);
            worst = worst.max(numcore::gradcheck::relative_error(analytic, numeric));
        }
    }
    worst
}

// ---- plain-loop reference network ----

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W·x + b` with `W` stored `[out, in]`.
pub fn dense(params: &ModelParams, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w = params.get(&format!("{prefix}.weight")).unwrap();
    let b = params.get(&format!("{prefix}.bias")).unwrap();
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    assert_eq!(inp, x.len());
    (0..out)
        .map(|o| b.data()[o] + (0..inp).map(|i| w.data()[o * inp + i] * x[i]).sum::<f64>())
        .collect()
}

fn gate(params: &ModelParams, layer: usize, gate: char, x: &[f64], h: &[f64]) -> Vec<f64> {
    let w = params.get(&format!("lstm.{layer}.w_{gate}")).unwrap();
    let u = params.get(&format!("lstm.{layer}.u_{gate}")).unwrap();
    let b = params.get(&format!("lstm.{layer}.b_{gate}")).unwrap();
    let hid = b.len();
    (0..hid)
        .map(|k| {
            let wx: f64 = (0..x.len()).map(|i| w.data()[k * x.len() + i] * x[i]).sum();
            let uh: f64 = (0..hid).map(|i| u.data()[k * hid + i] * h[i]).sum();
            b.data()[k] + wx + uh
        })
        .collect()
}

/// One LSTM step written gate by gate.
pub fn ref_cell(params: &ModelParams, layer: usize, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let i: Vec<f64> = gate(params, layer, 'i', x, h).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = gate(params, layer, 'f', x, h).into_iter().map(sigmoid).collect();
    let gg: Vec<f64> = gate(params, layer, 'g', x, h).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = gate(params, layer, 'o', x, h).into_iter().map(sigmoid).collect();
    let c2: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * gg[k]).collect();
    let h2: Vec<f64> = (0..c.len()).map(|k| o[k] * c2[k].tanh()).collect();
    (h2, c2)
}

/// Dilated stack on one sequence; top-layer hidden state at the last step.
pub fn ref_lstm(params: &ModelParams, seq: &[[f64; 3]]) -> Vec<f64> {
    let hid = params.config.hidden;
    let mut inputs: Vec<Vec<f64>> = seq.iter().map(|r| r.to_vec()).collect();
    for (l, &d) in params.config.dilations.iter().enumerate() {
        let mut hs: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<Vec<f64>> = Vec::new();
        for t in 0..inputs.len() {
            let (h0, c0) = if t >= d {
                (hs[t - d].clone(), cs[t - d].clone())
            } else {
                (vec![0.0; hid], vec![0.0; hid])
            };
            let (h, c) = ref_cell(params, l, &inputs[t], &h0, &c0);
            hs.push(h);
            cs.push(c);
        }
        inputs = hs;
    }
    inputs.pop().unwrap()
}

fn tanh_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

pub fn ref_seq_features(params: &ModelParams, grid: &SeqGrid) -> Vec<f64> {
    match params.arch {
        Architecture::Svs => tanh_all(dense(params, "fc_seq", &ref_lstm(params, grid.rows()))),
        Architecture::Mlvs => {
            let h = tanh_all(dense(params, "mlp.0", &grid.last_row()));
            tanh_all(dense(params, "mlp.1", &h))
        }
        Architecture::Nshs => unreachable!(),
    }
}

pub fn ref_forward(params: &ModelParams, s: &Sample, mode: Mode) -> f64 {
    if params.arch == Architecture::Nshs {
        let h = tanh_all(dense(params, "fc_nonseq", &s.nonseq.0));
        return sigmoid(dense(params, "fc_out2", &h)[0]);
    }
    let seq = ref_seq_features(params, &s.grid);
    match mode {
        Mode::Phase1Aux => sigmoid(dense(params, "aux_head", &seq)[0]),
        Mode::Fused => {
            let mut z = seq;
            z.extend(tanh_all(dense(params, "fc_nonseq", &s.nonseq.0)));
            let f = tanh_all(dense(params, "fc_fusion", &z));
            sigmoid(dense(params, "fc_out", &f)[0])
        }
    }
}

// ---- metric oracles ----

/// Random scores (coarsely quantized so ties occur) and labels with both classes.
pub fn random_scored(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.gen_range(2..=50);
        let levels = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels - 1)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// Pairwise count: 1 per correctly ordered (pos, neg) pair, 1/2 per tie.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Precision/recall at every distinct threshold, taken from the top.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let chosen: Vec<bool> = scores.iter().zip(labels).filter(|(&s, _)| s >= t).map(|(_, &l)| l).collect();
        let tp = chosen.iter().filter(|&&l| l).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * (tp / chosen.len() as f64);
        prev_recall = recall;
    }
    area
}

pub fn hand_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    let mut hits = 0usize;
    for i in 0..scores.len() {
        let predicted = scores[i] >= 0.5;
        if predicted == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / scores.len() as f64
}

// ---- spline oracle ----

/// Random strictly increasing knots in `[-24, 0]` with random values.
pub fn random_knots(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(2..=30);
    let mut t: Vec<f64> = Vec::with_capacity(n);
    let mut x = rng.gen_range(-24.0..-20.0);
    for _ in 0..n {
        t.push(x);
        x += rng.gen_range(0.05..2.0);
    }
    let v = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    (t, v)
}

/// Second derivatives at the knots from the full natural-spline system,
/// solved by dense Gaussian elimination with partial pivoting.
pub fn dense_second_derivatives(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        a[i][i - 1] = h0 / 6.0;
        a[i][i] = (h0 + h1) / 3.0;
        a[i][i + 1] = h1 / 6.0;
        a[i][n] = (v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// Samples whose label shifts the heart-rate channel upward over the second
/// half of the window.
pub fn separable_samples(n: usize, len: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 3 == 0;
            let mut s = random_sample(&mut rng, len, label);
            for (t, r) in s.grid.rows_mut().iter_mut().enumerate() {
                for v in r.iter_mut() {
                    *v *= 0.3;
                }
                if label && t >= len / 2 {
                    r[1] += 1.0;
                }
            }
            s.window_id = format!("w{i}");
            s
        })
        .collect()
}
