//! Trajectory-level guarantees: seeded runs are bit-reproducible, the
//! incremental loop with a zero distillation weight is exactly plain
//! cross-entropy training, and one full SGD step matches a hand-rolled
//! forward/backward/update written directly against f64 arrays.

use incrlearn_core::{
    cross_entropy_loss, fit_classifier, incremental_train, ClassifierNet, LabeledBatch,
    LossConfig, RngState, Sgd, SgdConfig, SourceTag, Tensor,
};

fn clusters(per_class: usize, centers: &[(f64, f64)], seed: u64) -> LabeledBatch {
    let mut r = RngState::new(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &(cx, cy)) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(vec![cx + r.normal(), cy + r.normal()]);
            labels.push(c + 1);
        }
    }
    LabeledBatch::from_rows(&rows, labels, SourceTag::NewData).unwrap()
}

fn params_bits(net: &ClassifierNet) -> Vec<Vec<u64>> {
    net.params()
        .iter()
        .map(|p| p.tensor().to_vec().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn same_seed_same_trajectory_different_seed_diverges() {
    let data = clusters(25, &[(-4.0, 0.0), (4.0, 0.0), (0.0, 4.0)], 1);
    let opt = SgdConfig::new(0.05).unwrap().with_momentum(0.9);
    let run = |train_seed: u64| {
        let net = ClassifierNet::new(&[2, 16, 3], &mut RngState::new(7)).unwrap();
        let net = fit_classifier(net, &data, &opt, 12, 16, &mut RngState::new(train_seed)).unwrap();
        params_bits(&net)
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn zero_lambda_incremental_run_equals_plain_training_on_the_union() {
    let old_data = clusters(20, &[(-5.0, 0.0), (5.0, 0.0)], 2);
    let new_data = {
        let b = clusters(20, &[(0.0, 5.0)], 3);
        let labels: Vec<usize> = b.labels().iter().map(|_| 3).collect();
        LabeledBatch::new(b.inputs().clone(), labels, SourceTag::NewData).unwrap()
    };
    let opt = SgdConfig::default();
    let base = ClassifierNet::new(&[2, 16, 2], &mut RngState::new(11)).unwrap();
    let base = fit_classifier(base, &old_data, &opt, 10, 16, &mut RngState::new(12)).unwrap();
    let teacher = base.snapshot();
    let memory = old_data.select(&(0..10).collect::<Vec<_>>());

    // Two bitwise-identical expanded copies: same base, same expansion seed.
    let incremental = {
        let net = base.expand_head(1, &mut RngState::new(13)).unwrap();
        let cfg = LossConfig::new(0.0, 2, 1).unwrap();
        incremental_train(&teacher, net, &new_data, &memory, &cfg, &opt, 8, 16, &mut RngState::new(14))
            .unwrap()
    };
    let plain = {
        let net = base.expand_head(1, &mut RngState::new(13)).unwrap();
        let union = memory.concat(&new_data).unwrap();
        fit_classifier(net, &union, &opt, 8, 16, &mut RngState::new(14)).unwrap()
    };
    assert_eq!(params_bits(&incremental), params_bits(&plain));
}

/// Transcription of one forward/backward/update against plain arrays. Loop
/// orders mirror the library's kernels so the comparison is exact, not
/// approximate.
struct HandStep {
    w0: Vec<f64>,
    b0: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
}

#[allow(clippy::needless_range_loop)]
fn hand_step(
    x: &[f64],
    labels: &[usize],
    dims: (usize, usize, usize, usize),
    start: &HandStep,
    lr: f64,
    wd: f64,
) -> HandStep {
    let (batch, d, h, k) = dims;
    let matmul = |a: &[f64], b: &[f64], m: usize, kk: usize, n: usize| {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..kk {
                let aip = a[i * kk + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * b[p * n + j];
                }
            }
        }
        out
    };

    // Forward.
    let mut pre = matmul(x, &start.w0, batch, d, h);
    for i in 0..batch {
        for j in 0..h {
            pre[i * h + j] += start.b0[j];
        }
    }
    let hid: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let mut logits = matmul(&hid, &start.w1, batch, h, k);
    for i in 0..batch {
        for j in 0..k {
            logits[i * k + j] += start.b1[j];
        }
    }
    let mut logp = vec![0.0; batch * k];
    for i in 0..batch {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        for j in 0..k {
            logp[i * k + j] = row[j] - lse;
        }
    }

    // Backward. The scalar loss is sum(onehot * logp) * (-1/B); the gradient
    // arriving at logp is the one-hot mask times -1/B, and the log-softmax
    // rule turns it into g - exp(logp) * rowsum(g).
    let gscale = -1.0 / batch as f64;
    let mut g_logp = vec![0.0; batch * k];
    for (i, &label) in labels.iter().enumerate() {
        g_logp[i * k + (label - 1)] = gscale;
    }
    let mut g_logits = vec![0.0; batch * k];
    for i in 0..batch {
        let gsum: f64 = g_logp[i * k..(i + 1) * k].iter().sum();
        for j in 0..k {
            g_logits[i * k + j] = g_logp[i * k + j] - logp[i * k + j].exp() * gsum;
        }
    }
    let mut g_b1 = vec![0.0; k];
    for i in 0..batch {
        for j in 0..k {
            g_b1[j] += g_logits[i * k + j];
        }
    }
    // d(hid) = g_logits · w1^T, iterated as the library does.
    let mut g_hid = vec![0.0; batch * h];
    for i in 0..batch {
        for j in 0..k {
            let g = g_logits[i * k + j];
            if g == 0.0 {
                continue;
            }
            for p in 0..h {
                g_hid[i * h + p] += g * start.w1[p * k + j];
            }
        }
    }
    // d(w1) = hid^T · g_logits.
    let mut g_w1 = vec![0.0; h * k];
    for i in 0..batch {
        for p in 0..h {
            let aip = hid[i * h + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..k {
                g_w1[p * k + j] += aip * g_logits[i * k + j];
            }
        }
    }
    let g_pre: Vec<f64> = g_hid
        .iter()
        .zip(&pre)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    let mut g_b0 = vec![0.0; h];
    for i in 0..batch {
        for j in 0..h {
            g_b0[j] += g_pre[i * h + j];
        }
    }
    let mut g_w0 = vec![0.0; d * h];
    for i in 0..batch {
        for p in 0..d {
            let aip = x[i * d + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..h {
                g_w0[p * h + j] += aip * g_pre[i * h + j];
            }
        }
    }

    // SGD with zero initial velocity: v = g + wd*p; p -= lr*v.
    let apply = |vals: &[f64], grads: &[f64]| -> Vec<f64> {
        vals.iter()
            .zip(grads)
            .map(|(&p, &g)| {
                let gg = g + wd * p;
                p - lr * gg
            })
            .collect()
    };
    HandStep {
        w0: apply(&start.w0, &g_w0),
        b0: apply(&start.b0, &g_b0),
        w1: apply(&start.w1, &g_w1),
        b1: apply(&start.b1, &g_b1),
    }
}

#[test]
fn one_sgd_step_matches_a_hand_rolled_array_implementation_bitwise() {
    let mut rng = RngState::new(17);
    let (batch, d, h, k) = (6, 2, 8, 3);
    let net = ClassifierNet::new(&[d, h, k], &mut rng).unwrap();
    let x: Vec<f64> = (0..batch * d).map(|_| rng.normal()).collect();
    let labels = vec![1, 2, 3, 1, 2, 3];
    let (lr, wd) = (0.1, 2e-4);

    let start = HandStep {
        w0: net.params()[0].tensor().to_vec(),
        b0: net.params()[1].tensor().to_vec(),
        w1: net.params()[2].tensor().to_vec(),
        b1: net.params()[3].tensor().to_vec(),
    };
    let want = hand_step(&x, &labels, (batch, d, h, k), &start, lr, wd);

    let inputs = Tensor::new(x, &[batch, d]);
    let loss = cross_entropy_loss(&net.forward(&inputs), &labels).unwrap();
    loss.backward();
    let mut sgd = Sgd::new(SgdConfig::new(lr).unwrap().with_weight_decay(wd)).unwrap();
    sgd.step(net.params()).unwrap();

    let got = [
        net.params()[0].tensor().to_vec(),
        net.params()[1].tensor().to_vec(),
        net.params()[2].tensor().to_vec(),
        net.params()[3].tensor().to_vec(),
    ];
    for (g, w) in got.iter().zip([&want.w0, &want.b0, &want.w1, &want.b1]) {
        assert_eq!(g.len(), w.len());
        for (a, b) in g.iter().zip(w.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "library {a} vs oracle {b}");
        }
    }
}
