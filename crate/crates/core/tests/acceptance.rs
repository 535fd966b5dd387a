//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime.
//!
//! Runs as part of `cargo test`; `cargo test -p signphono --test acceptance`
//! runs it alone. Set `SIGNPHONO_REAL_CONFIG` to an experiment config over
//! the real extracted corpus to also run the optional real-data check.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signphono::classifiers::{Cell, Family, MlpModel, ModelSpec, Pooling, RecurrentModel};
use signphono::dataset::{LabelSpace, LabeledDataset, PhonoClass};
use signphono::engine::{
    batch_norm_backward, batch_norm_forward, dense_backward, dense_forward, gradient_check, gru_sequence_backward,
    gru_sequence_forward, lstm_sequence_backward, lstm_sequence_forward, softmax_cross_entropy, BatchNormState,
    GruParams, LstmParams, TrainConfig,
};
use signphono::evaluation::{metrics, repeated_runs, RunSummary, StdKind};
use signphono::experiment::{cmd_synth, cmd_train_eval, ExperimentConfig};
use signphono::preprocess::{build_tensors, stratified_kfold, stratified_split, t_max_for, PaddedTensorSet};
use signphono::synth::{benchmark_spec, synth_generate};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// One distinct feature per sample; only the labels matter to the
/// baselines. (Stratified draws are keyed on sample content, so identical
/// rows would share one draw.)
fn label_only_set(y: Vec<usize>) -> PaddedTensorSet {
    let n = y.len();
    PaddedTensorSet {
        x_seq: Array3::from_shape_fn((n, 1, 1), |(i, _, _)| i as f64),
        x_flat: Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
        y,
        t_max: 1,
        mask: Array2::from_elem((n, 1), true),
        lengths: vec![1; n],
        truncated: vec![],
    }
}

fn from_counts(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect()
}

fn space_for(class: PhonoClass, y: &[usize], k: usize) -> LabelSpace {
    let names = class_names(k);
    let labels: Vec<&str> = y.iter().map(|&i| names[i].as_str()).collect();
    LabelSpace::from_labels(class, &labels).unwrap()
}

fn baseline_exactness() -> Check {
    let seeds: Vec<u64> = (0..10).collect();
    let mut detail = Vec::new();
    // Major location 34.9%, sign type 38.5%, each on a mirrored 1000-sample split.
    for (class, counts, expected) in [
        (PhonoClass::MajorLocation, [349, 230, 181, 140, 100], "34.9"),
        (PhonoClass::SignType, [385, 250, 150, 115, 100], "38.5"),
    ] {
        let y = from_counts(&counts);
        let space = space_for(class, &y, 5);
        let set = label_only_set(y);
        let spec = ModelSpec::new(Family::MajorityBaseline, class);
        let (s, _) = repeated_runs(
            &spec,
            &set,
            &set,
            &space,
            &TrainConfig::default(),
            &seeds,
            StdKind::Population,
            false,
        )
        .map_err(err)?;
        let prevalence = counts[0] as f64 / 1000.0;
        ensure((s.micro_f1_mean - prevalence).abs() <= 1e-12, || {
            format!("{class}: micro {} vs prevalence {prevalence}", s.micro_f1_mean)
        })?;
        let shown = format!("{:.1}", 100.0 * s.micro_f1_mean);
        ensure(shown == expected, || {
            format!("{class}: shows {shown}%, expected {expected}%")
        })?;
        ensure(s.micro_f1_std == 0.0, || format!("{class}: std {}", s.micro_f1_std))?;
        detail.push(format!("{class} {shown}% ± {:.1}", 100.0 * s.micro_f1_std));
    }

    // Random fixtures where test and train distributions differ.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let k = rng.gen_range(2..=6);
        let train: Vec<usize> = (0..rng.gen_range(5..200)).map(|_| rng.gen_range(0..k)).collect();
        let test: Vec<usize> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0..k)).collect();
        let all: Vec<usize> = train.iter().chain(&test).copied().chain(0..k).collect();
        let space = space_for(PhonoClass::SignType, &all, k);
        let mut tcounts = vec![0usize; k];
        train.iter().for_each(|&c| tcounts[c] += 1);
        let majority = (0..k).rev().max_by_key(|&c| tcounts[c]).unwrap();
        let prevalence = test.iter().filter(|&&c| c == majority).count() as f64 / test.len() as f64;
        let spec = ModelSpec::new(Family::MajorityBaseline, PhonoClass::SignType);
        let (s, _) = repeated_runs(
            &spec,
            &label_only_set(train),
            &label_only_set(test),
            &space,
            &TrainConfig::default(),
            &seeds[..3],
            StdKind::Population,
            false,
        )
        .map_err(err)?;
        ensure(
            (s.micro_f1_mean - prevalence).abs() <= 1e-12 && s.micro_f1_std == 0.0,
            || format!("random fixture: micro {} vs prevalence {prevalence}", s.micro_f1_mean),
        )?;
    }
    detail.push("50 random fixtures exact".into());
    Ok(detail.join("; "))
}

fn stratified_statistics() -> Check {
    let counts = [80, 50, 30, 24, 16];
    let n: usize = counts.iter().sum();
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let sum_p2: f64 = p.iter().map(|v| v * v).sum();
    let y = from_counts(&counts);
    let space = space_for(PhonoClass::MajorLocation, &y, 5);
    let set = label_only_set(y.clone());
    let seeds: Vec<u64> = (0..1000).collect();
    let spec = ModelSpec::new(Family::StratifiedBaseline, PhonoClass::MajorLocation);
    let (s, _) = repeated_runs(
        &spec,
        &set,
        &set,
        &space,
        &TrainConfig::default(),
        &seeds,
        StdKind::Population,
        false,
    )
    .map_err(err)?;

    // Oracle: draw labels from p directly and count matches.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trials = 2000;
    let mut matches = 0usize;
    for _ in 0..trials {
        for &truth in &y {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let draw = p.iter().position(|&pk| {
                acc += pk;
                u < acc
            });
            if draw.unwrap_or(p.len() - 1) == truth {
                matches += 1;
            }
        }
    }
    let simulated = matches as f64 / (trials * n) as f64;

    ensure((s.macro_f1_mean - 0.20).abs() <= 0.02, || {
        format!("macro {} not in 0.20 ± 0.02", s.macro_f1_mean)
    })?;
    ensure((s.micro_f1_mean - sum_p2).abs() <= 0.01, || {
        format!("micro {} vs Σp² {sum_p2}", s.micro_f1_mean)
    })?;
    ensure((simulated - sum_p2).abs() <= 0.01, || {
        format!("oracle simulation {simulated} vs Σp² {sum_p2}")
    })?;
    ensure((s.micro_f1_mean - simulated).abs() <= 0.01, || {
        format!("micro {} vs simulation {simulated}", s.micro_f1_mean)
    })?;
    ensure(s.macro_f1_std > 0.0, || "zero macro std".into())?;
    Ok(format!(
        "1000 seeds: macro {:.4} ± {:.4}, micro {:.4} (Σp² {:.4}, simulated {:.4})",
        s.macro_f1_mean, s.macro_f1_std, s.micro_f1_mean, sum_p2, simulated
    ))
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Finite-difference check of a loss over several matrices at once.
fn check_blocks<F>(blocks: &[Array2<f64>], grads: &[Array2<f64>], mut loss: F) -> Result<f64, String>
where
    F: FnMut(&[Array2<f64>]) -> f64,
{
    let flat: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
    let mut probe = blocks.to_vec();
    gradient_check(
        |p| {
            let mut off = 0;
            for b in probe.iter_mut() {
                for v in b.iter_mut() {
                    *v = p[off];
                    off += 1;
                }
            }
            loss(&probe)
        },
        &flat,
        &analytic,
        1e-5,
    )
    .map_err(err)
}

fn weighted_sum(a: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (a * r).sum()
}

fn gradient_integrity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut report = Vec::new();
    let mut worst_nonlinear = 0.0f64;

    // Dense (linear): tolerance 1e-6.
    let (x, w, b) = (random(4, 3, &mut rng), random(3, 5, &mut rng), random(1, 5, &mut rng));
    let r = random(4, 5, &mut rng);
    let g = dense_backward(&x, &w, &r).map_err(err)?;
    let dense = check_blocks(&[x.clone(), w.clone(), b.clone()], &[g.dx, g.dw, g.db], |p| {
        weighted_sum(&dense_forward(&p[0], &p[1], &p[2]).unwrap(), &r)
    })?;
    ensure(dense < 1e-6, || format!("dense rel err {dense:e}"))?;
    report.push(format!("dense {dense:.1e}"));

    // Batch norm in training mode.
    let (x, gamma, beta) = (random(6, 4, &mut rng), random(1, 4, &mut rng), random(1, 4, &mut rng));
    let r = random(6, 4, &mut rng);
    let (_, cache) = batch_norm_forward(&x, &gamma, &beta, &mut BatchNormState::new(4), true).map_err(err)?;
    let (dx, dg, db) = batch_norm_backward(&cache.unwrap(), &r).map_err(err)?;
    let bn = check_blocks(&[x, gamma, beta], &[dx, dg, db], |p| {
        let (y, _) = batch_norm_forward(&p[0], &p[1], &p[2], &mut BatchNormState::new(4), true).unwrap();
        weighted_sum(&y, &r)
    })?;
    report.push(format!("batch-norm {bn:.1e}"));
    worst_nonlinear = worst_nonlinear.max(bn);

    // Softmax cross-entropy.
    let logits = random(5, 4, &mut rng);
    let y = [0, 3, 1, 2, 3];
    let (_, dlogits) = softmax_cross_entropy(&logits, &y).map_err(err)?;
    let ce = check_blocks(&[logits], &[dlogits], |p| softmax_cross_entropy(&p[0], &y).unwrap().0)?;
    report.push(format!("softmax-CE {ce:.1e}"));
    worst_nonlinear = worst_nonlinear.max(ce);

    // Single LSTM and GRU steps, through inputs, weights and both states.
    let (batch, dim, hidden) = (3, 2, 4);
    let x = Array3::from_shape_fn((batch, 1, dim), |_| rng.gen_range(-1.0..1.0));
    let (h0, c0) = (random(batch, hidden, &mut rng), random(batch, hidden, &mut rng));
    let (rh, rc) = (random(batch, hidden, &mut rng), random(batch, hidden, &mut rng));
    let lstm_blocks = [
        random(dim, 4 * hidden, &mut rng),
        random(hidden, 4 * hidden, &mut rng),
        random(1, 4 * hidden, &mut rng),
    ];
    let lstm_loss = |p: &[Array2<f64>], x: &Array3<f64>, h0: &Array2<f64>, c0: &Array2<f64>| {
        let params = LstmParams {
            wx: &p[0],
            wh: &p[1],
            b: &p[2],
        };
        let (hs, c, _) = lstm_sequence_forward(x, &params, Some((h0, c0)), None).unwrap();
        weighted_sum(&hs.index_axis(ndarray::Axis(1), 0).to_owned(), &rh) + weighted_sum(&c, &rc)
    };
    let params = LstmParams {
        wx: &lstm_blocks[0],
        wh: &lstm_blocks[1],
        b: &lstm_blocks[2],
    };
    let (_, _, cache) = lstm_sequence_forward(&x, &params, Some((&h0, &c0)), None).map_err(err)?;
    let dhs = rh.clone().insert_axis(ndarray::Axis(1));
    let g = lstm_sequence_backward(&params, &cache, &dhs, Some(&rc)).map_err(err)?;
    let x2 = x.index_axis(ndarray::Axis(1), 0).to_owned();
    let mut all = lstm_blocks.to_vec();
    all.extend([x2.clone(), h0.clone(), c0.clone()]);
    let lstm = check_blocks(
        &all,
        &[
            g.dwx,
            g.dwh,
            g.db,
            g.dx.index_axis(ndarray::Axis(1), 0).to_owned(),
            g.dh0,
            g.dc0.unwrap(),
        ],
        |p| lstm_loss(&p[..3], &p[3].clone().insert_axis(ndarray::Axis(1)), &p[4], &p[5]),
    )?;
    report.push(format!("LSTM cell {lstm:.1e}"));
    worst_nonlinear = worst_nonlinear.max(lstm);

    let gru_blocks = [
        random(dim, 3 * hidden, &mut rng),
        random(hidden, 3 * hidden, &mut rng),
        random(1, 3 * hidden, &mut rng),
    ];
    let params = GruParams {
        wx: &gru_blocks[0],
        wh: &gru_blocks[1],
        b: &gru_blocks[2],
    };
    let (_, cache) = gru_sequence_forward(&x, &params, Some(&h0), None).map_err(err)?;
    let g = gru_sequence_backward(&params, &cache, &dhs).map_err(err)?;
    let mut all = gru_blocks.to_vec();
    all.extend([x2, h0]);
    let gru = check_blocks(
        &all,
        &[
            g.dwx,
            g.dwh,
            g.db,
            g.dx.index_axis(ndarray::Axis(1), 0).to_owned(),
            g.dh0,
        ],
        |p| {
            let params = GruParams {
                wx: &p[0],
                wh: &p[1],
                b: &p[2],
            };
            let x = p[3].clone().insert_axis(ndarray::Axis(1));
            let (hs, _) = gru_sequence_forward(&x, &params, Some(&p[4]), None).unwrap();
            weighted_sum(&hs.index_axis(ndarray::Axis(1), 0).to_owned(), &rh)
        },
    )?;
    report.push(format!("GRU cell {gru:.1e}"));
    worst_nonlinear = worst_nonlinear.max(gru);

    // Full MLP, with and without batch norm.
    let x = random(8, 6, &mut rng);
    let y = [0, 1, 2, 2, 1, 0, 1, 2];
    let mut mlp_worst = 0.0f64;
    for bn in [false, true] {
        let mut model = MlpModel::new(6, 3, &[7, 5], bn, 0.0, &mut rng).map_err(err)?;
        let (_, grads) = model.loss_and_gradients(x.view(), &y, None).map_err(err)?;
        let mut probe = model.clone();
        let e = gradient_check(
            |p| {
                probe.store.set_flat(p).unwrap();
                probe.loss_and_gradients(x.view(), &y, None).unwrap().0
            },
            &model.store.flatten(),
            &grads.iter().flat_map(|g| g.iter().copied()).collect::<Vec<_>>(),
            1e-5,
        )
        .map_err(err)?;
        mlp_worst = mlp_worst.max(e);
    }
    report.push(format!("MLP {mlp_worst:.1e}"));
    worst_nonlinear = worst_nonlinear.max(mlp_worst);

    // Full recurrent models over padded sequences.
    let lengths = [5, 2, 4, 3];
    let xs = Array3::from_shape_fn(
        (4, 5, 3),
        |(b, t, _)| if t < lengths[b] { rng.gen_range(-1.0..1.0) } else { 0.0 },
    );
    let ys = [0, 1, 2, 1];
    let mut seq_worst = 0.0f64;
    for cell in [Cell::Lstm, Cell::Gru] {
        for (pooling, masked, bn) in [
            (Pooling::Last, false, false),
            (Pooling::Last, true, true),
            (Pooling::Mean, true, false),
        ] {
            let mut model = RecurrentModel::new(cell, 3, 4, 3, pooling, masked, bn, 0.0, &mut rng).map_err(err)?;
            let (_, grads) = model.loss_and_gradients(xs.view(), &lengths, &ys, None).map_err(err)?;
            let mut probe = model.clone();
            let e = gradient_check(
                |p| {
                    probe.store.set_flat(p).unwrap();
                    probe.loss_and_gradients(xs.view(), &lengths, &ys, None).unwrap().0
                },
                &model.store.flatten(),
                &grads.iter().flat_map(|g| g.iter().copied()).collect::<Vec<_>>(),
                1e-5,
            )
            .map_err(err)?;
            seq_worst = seq_worst.max(e);
        }
    }
    report.push(format!("recurrent sequence {seq_worst:.1e}"));
    worst_nonlinear = worst_nonlinear.max(seq_worst);

    ensure(worst_nonlinear < 1e-4, || {
        format!("max rel err {worst_nonlinear:e}: {}", report.join(", "))
    })?;
    Ok(report.join(", "))
}

/// Per-class F1 and micro F1 recounted from scratch, with no confusion matrix.
fn brute_force(truth: &[usize], pred: &[usize], k: usize) -> (f64, Vec<f64>) {
    let mut per = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for c in 0..k {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count();
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count();
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count();
        per.push(if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        });
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let micro = 2.0 * tp_all as f64 / (2 * tp_all + fp_all + fn_all) as f64;
    (micro, per)
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=60);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let space = LabelSpace::from_labels(PhonoClass::SignType, &class_names(k)).map_err(err)?;
        let m = metrics(&truth, &pred, &space).map_err(err)?;
        let (micro, per) = brute_force(&truth, &pred, k);
        let macro_ = per.iter().sum::<f64>() / k as f64;
        worst = worst.max((m.micro_f1 - micro).abs()).max((m.macro_f1 - macro_).abs());
        for c in 0..k {
            worst = worst.max((m.per_class_f1[c] - per[c]).abs());
            for (q, row) in m.confusion.counts.iter().enumerate() {
                let recount = truth.iter().zip(&pred).filter(|(t, p)| **t == q && **p == c).count() as u64;
                ensure(row[c] == recount, || {
                    format!("confusion[{q}][{c}] = {} vs {recount}", row[c])
                })?;
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;

    let space = LabelSpace::from_labels(PhonoClass::SignType, &["A", "B", "C"]).map_err(err)?;
    let m = metrics(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 2], &space).map_err(err)?;
    let expected_macro = (2.0 / 3.0 + 0.8 + 1.0) / 3.0;
    ensure(m.micro_f1 == 0.8, || format!("hand example micro {}", m.micro_f1))?;
    ensure(
        (m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15 && m.per_class_f1[1] == 0.8 && m.per_class_f1[2] == 1.0,
        || format!("hand example per-class {:?}", m.per_class_f1),
    )?;
    ensure((m.macro_f1 - expected_macro).abs() < 1e-15, || {
        format!("hand example macro {}", m.macro_f1)
    })?;
    Ok(format!(
        "1000 instances, max deviation {worst:.1e}; hand example micro {} macro {:.4}",
        m.micro_f1, m.macro_f1
    ))
}

fn split_fold_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..100 {
        let k = rng.gen_range(2..=6);
        let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(2..=40)).collect();
        let mut y = from_counts(&counts);
        // shuffle so classes are interleaved in index order
        for i in (1..y.len()).rev() {
            y.swap(i, rng.gen_range(0..=i));
        }
        let space = space_for(PhonoClass::SignType, &y, k);
        let ratio = rng.gen_range(0.05..0.5);
        let seed = rng.gen();
        let plan = stratified_split(&y, &space, ratio, seed).map_err(err)?;
        ensure(plan == stratified_split(&y, &space, ratio, seed).map_err(err)?, || {
            format!("case {case}: split not deterministic")
        })?;
        let mut seen: Vec<usize> = plan.train_indices.iter().chain(&plan.test_indices).copied().collect();
        seen.sort_unstable();
        ensure(seen == (0..y.len()).collect::<Vec<_>>(), || {
            format!("case {case}: split is not a partition")
        })?;
        for c in 0..k {
            let got = plan.test_indices.iter().filter(|&&i| y[i] == c).count() as f64;
            let exact = ratio * counts[c] as f64;
            ensure((got - exact).abs() <= 1.0, || {
                format!("case {case}: class {c} test {got} vs exact {exact:.3}")
            })?;
        }

        let folds_k = rng.gen_range(2..=5).min(plan.train_indices.len());
        let fold_seed = rng.gen();
        let folds = stratified_kfold(&plan.train_indices, &y, folds_k, fold_seed).map_err(err)?;
        ensure(
            folds == stratified_kfold(&plan.train_indices, &y, folds_k, fold_seed).map_err(err)?,
            || format!("case {case}: folds not deterministic"),
        )?;
        let mut all: Vec<usize> = folds.folds.concat();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        all.sort_unstable();
        ensure(unique.len() == all.len() && all == plan.train_indices, || {
            format!("case {case}: folds do not partition")
        })?;
        for c in 0..k {
            let per: Vec<usize> = folds
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| y[i] == c).count())
                .collect();
            let spread = per.iter().max().unwrap() - per.iter().min().unwrap();
            ensure(spread <= 1, || format!("case {case}: class {c} fold counts {per:?}"))?;
        }
    }
    Ok("100 random datasets: apportionment within 1, partitions, deterministic".into())
}

fn synthetic_benchmark() -> Check {
    let spec = benchmark_spec();
    let class = PhonoClass::MajorLocation;
    let samples = synth_generate(&spec.profiles, spec.n_per_class, 0).map_err(err)?;
    let ds = LabeledDataset::new(samples).map_err(err)?;
    let y = ds.label_indices(class).map_err(err)?;
    let space = ds.label_space(class).map_err(err)?.clone();
    ensure(space.len() == 5 && space.counts.iter().all(|&c| c == 120), || {
        format!("counts {:?}", space.counts)
    })?;
    let plan = stratified_split(&y, &space, 0.15, 0).map_err(err)?;
    let t_max = t_max_for(&ds, &plan.train_indices).map_err(err)?;
    let all = build_tensors(&ds, class, t_max, false).map_err(err)?;
    let (train, test) = (all.subset(&plan.train_indices), all.subset(&plan.test_indices));
    let config = TrainConfig::default();

    let mut scores = Vec::new();
    for family in [
        Family::MajorityBaseline,
        Family::Logistic,
        Family::Svm,
        Family::Mlp,
        Family::Lstm,
        Family::Gru,
    ] {
        let (s, _) = repeated_runs(
            &ModelSpec::new(family, class),
            &train,
            &test,
            &space,
            &config,
            &[0],
            StdKind::Population,
            false,
        )
        .map_err(err)?;
        scores.push((family, s.micro_f1_mean));
    }
    let line = scores
        .iter()
        .map(|(f, s)| format!("{} {:.3}", f.as_str(), s))
        .collect::<Vec<_>>()
        .join(", ");
    let majority = scores[0].1;
    for &(family, score) in &scores[1..] {
        match family {
            Family::Logistic | Family::Svm => ensure(score >= majority + 0.20, || {
                format!("{} below baseline + 20 pts: {line}", family.as_str())
            })?,
            _ => ensure(score >= 0.95, || format!("{} below 0.95: {line}", family.as_str()))?,
        }
    }
    Ok(line)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let root = dir.path();
    let mut synth = ExperimentConfig::default();
    synth
        .set("paths.out", &root.join("syn").to_string_lossy())
        .map_err(err)?;
    synth.set("synth.n_per_class", "20").map_err(err)?;
    cmd_synth(&synth).map_err(err)?;
    let text = format!(
        "paths.out = {}\npaths.lexicon = {}\npaths.keypoints = {}\nmodel.family = mlp\n\
         model.dropout_rate = 0.2\nrun.seeds = 0-2\ntrain.epochs = 20\n",
        root.join("out").display(),
        root.join("syn/lexicon.csv").display(),
        root.join("syn/keypoints").display(),
    );
    let cfg = ExperimentConfig::from_text(&text, root).map_err(err)?;
    let a = cmd_train_eval(&cfg).map_err(err)?;
    let first = std::fs::read(a.dir.join("metrics.json")).map_err(err)?;
    let b = cmd_train_eval(&cfg).map_err(err)?;
    let second = std::fs::read(b.dir.join("metrics.json")).map_err(err)?;
    ensure(first == second, || "metrics.json differs between runs".into())?;
    Ok(format!("{} bytes identical (mlp, 3 seeds, dropout 0.2)", first.len()))
}

/// Optional: needs the real corpus, so it only runs when a config is given.
fn real_corpus() -> Option<Check> {
    let path = std::env::var_os("SIGNPHONO_REAL_CONFIG")?;
    Some((|| {
        let base = ExperimentConfig::load(&path).map_err(err)?;
        let mut table: Vec<(PhonoClass, Family, RunSummary)> = Vec::new();
        for class in PhonoClass::ALL {
            for family in Family::ALL {
                let mut cfg = base.clone();
                cfg.class_name = class;
                cfg.family = family;
                table.push((class, family, cmd_train_eval(&cfg).map_err(err)?.summary));
            }
        }
        let get = |c: PhonoClass, f: Family| &table.iter().find(|(tc, tf, _)| *tc == c && *tf == f).unwrap().2;
        for class in PhonoClass::ALL {
            let base_micro = get(class, Family::MajorityBaseline)
                .micro_f1_mean
                .max(get(class, Family::StratifiedBaseline).micro_f1_mean);
            let base_macro = get(class, Family::MajorityBaseline)
                .macro_f1_mean
                .max(get(class, Family::StratifiedBaseline).macro_f1_mean);
            for f in Family::ALL.into_iter().filter(|f| !f.is_baseline()) {
                let s = get(class, f);
                ensure(s.micro_f1_mean > base_micro && s.macro_f1_mean > base_macro, || {
                    format!("{} on {class} does not beat both baselines", f.as_str())
                })?;
                if class == PhonoClass::SignType {
                    let other = get(PhonoClass::MajorLocation, f).micro_f1_mean;
                    ensure(s.micro_f1_mean > other, || {
                        format!(
                            "{}: sign type {} <= major location {other}",
                            f.as_str(),
                            s.micro_f1_mean
                        )
                    })?;
                }
            }
        }
        let mlp = 100.0 * get(PhonoClass::MajorLocation, Family::Mlp).micro_f1_mean;
        let lstm = 100.0 * get(PhonoClass::SignType, Family::Lstm).micro_f1_mean;
        ensure((mlp - 58.1).abs() <= 2.0 * 3.6, || {
            format!("MLP major location {mlp:.1} outside 58.1 ± 7.2")
        })?;
        ensure((lstm - 70.2).abs() <= 2.0 * 3.5, || {
            format!("LSTM sign type {lstm:.1} outside 70.2 ± 7.0")
        })?;
        Ok(format!("MLP major location {mlp:.1}, LSTM sign type {lstm:.1}"))
    })())
}

fn main() -> ExitCode {
    // `cargo test -- --list` and friends: nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 7] = [
        ("baseline exactness", baseline_exactness, Some(Duration::from_secs(1))),
        (
            "stratified-baseline statistics",
            stratified_statistics,
            Some(Duration::from_secs(10)),
        ),
        ("gradient integrity", gradient_integrity, Some(Duration::from_secs(30))),
        ("metric oracle", metric_oracle, None),
        ("split/fold properties", split_fold_properties, None),
        (
            "end-to-end synthetic benchmark",
            synthetic_benchmark,
            Some(Duration::from_secs(300)),
        ),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    let mut print = |name: &str, result: Check, elapsed: Duration, limit: Option<Duration>| {
        let result = result.and_then(|d| match limit {
            Some(l) if elapsed > l => Err(format!(
                "took {:.2} s, limit {} s; {d}",
                elapsed.as_secs_f64(),
                l.as_secs()
            )),
            _ => Ok(d),
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("{tag}  {name:<32} [{:>7.2} s]  {detail}", elapsed.as_secs_f64());
    };
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        print(name, result, start.elapsed(), limit);
    }
    let start = Instant::now();
    match real_corpus() {
        Some(result) => print("real corpus (optional)", result, start.elapsed(), None),
        None => println!(
            "SKIP  {:<32} [   0.00 s]  set SIGNPHONO_REAL_CONFIG to run",
            "real corpus (optional)"
        ),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
