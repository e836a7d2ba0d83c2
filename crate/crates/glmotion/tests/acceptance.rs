//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single pass/fail line (visible with --nocapture).

use glmotion::analysis::{attended_distance_row, mean_attended_distance};
use glmotion::data::{
    disentangle, parse_canonical, synth_generate, write_canonical, DisentangledSequence,
    RawSequence, SynthSpec,
};
use glmotion::model::{
    forward_sequence, init_model_params, load_checkpoint, pooled_representation, spatial_mha,
    Checkpoint, ModelConfig, PositionalMode, SequenceInput,
};
use glmotion::mpdp::{
    add_head_params, build_targets, heads_forward, mpdp_loss, MpdpConfig, C_DELTA,
};
use glmotion::tensor::Tape;
use glmotion::train::{full_gradcheck, linear_probe, pretrain, RunConfig};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, passed: bool) {
    println!(
        "ACCEPTANCE {criterion}: {}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion failed: {criterion}");
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        joints: 3,
        persons: 1,
        embed_dim: 4,
        blocks: 1,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 8,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    }
}

fn toy_mpdp() -> MpdpConfig {
    MpdpConfig {
        intervals: vec![1, 2],
        c_sigma: 3,
        eps_dir: 0.005,
        magnitude_edges: vec![0.02, 0.2],
        lambda_delta: 1.0,
        lambda_sigma: 1.0,
    }
}

fn synth(classes: usize, per_class: usize, seed: u64, t_range: (usize, usize)) -> Vec<RawSequence> {
    let spec = SynthSpec {
        n_classes: classes,
        n_per_class: per_class,
        t_range,
        ..SynthSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_generate(&mut rng, &spec).unwrap()
}

#[test]
fn criterion_01_gradient_integrity() {
    // T=4 with 1 PAD frame, P=1, K=3, D=4, N=1, h_s=2, h_t=2, intervals {1,2}
    let r = full_gradcheck(&toy_model(), &toy_mpdp(), 11, 3, 1, 1e-3).unwrap();
    println!(
        "  max relative error {:.3e} over {} scalars",
        r.max_rel_error, r.checked
    );
    report("01 gradient integrity", r.passed());
}

#[test]
fn criterion_02_mask_correctness() {
    let model = ModelConfig {
        joints: 5,
        persons: 1,
        embed_dim: 4,
        blocks: 2,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 64,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let frames = 6;
    let g: Vec<f64> = (0..frames * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let r: Vec<f64> = (0..frames * 4 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let width = model.token_width();

    let run = |pad: usize, capture: bool| {
        let total = frames + pad;
        let mut g_p = g.clone();
        let mut r_p = r.clone();
        g_p.resize(total * 3, 0.0);
        r_p.resize(total * 4 * 3, 0.0);
        let valid: Vec<bool> = (0..total).map(|t| t < frames).collect();
        let mut tape = Tape::new();
        let tp = ps.register(&mut tape);
        let input = SequenceInput { g: &g_p, r: &r_p, valid: &valid };
        let out = forward_sequence(&mut tape, &tp, &model, &input, capture).unwrap();
        let f = tape.data(out.f).to_vec();
        let pooled = pooled_representation(&mut tape, out.f, &valid).unwrap();
        (f, tape.data(pooled).to_vec(), out.temporal_attention)
    };

    let (f0, p0, _) = run(0, false);
    let mut ok = true;
    for pad in [1usize, 7, 25, 50] {
        let (f, p, attn) = run(pad, true);
        let df = f[..frames * width]
            .iter()
            .zip(&f0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let dp = p
            .iter()
            .zip(&p0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ok &= df <= 1e-9 && dp <= 1e-12;
        // PAD key columns must carry exactly zero attention
        let total = frames + pad;
        for block in attn.unwrap() {
            for map in block {
                for t in 0..total {
                    for k in frames..total {
                        ok &= map[t * total + k] == 0.0;
                    }
                }
            }
        }
    }
    report("02 mask correctness", ok);
}

fn naive_direction(d: [f64; 3], eps: f64) -> usize {
    let s = |v: f64| -> usize {
        if v < -eps {
            0
        } else if v > eps {
            2
        } else {
            1
        }
    };
    9 * s(d[0]) + 3 * s(d[1]) + s(d[2])
}

fn naive_magnitude(d: [f64; 3], edges: &[f64]) -> usize {
    let m = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let mut bin = 0;
    for &e in edges {
        if m > e {
            bin += 1;
        }
    }
    bin
}

#[test]
fn criterion_03_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_loss_err = 0.0f64;
    let mut targets_ok = true;

    for case in 0..100 {
        let t_n = rng.gen_range(2..=12usize);
        let p_n = rng.gen_range(1..=2usize);
        let k_n = rng.gen_range(2..=4usize); // joints including the global slot
        let intervals: Vec<usize> = match case % 3 {
            0 => vec![1],
            1 => vec![1, 2],
            _ => vec![1, 3, 5],
        };
        let cfg = MpdpConfig {
            intervals: intervals.clone(),
            c_sigma: 3,
            eps_dir: 0.01,
            magnitude_edges: vec![0.05, 0.3],
            lambda_delta: rng.gen_range(0.1..2.0),
            lambda_sigma: rng.gen_range(0.1..2.0),
        };
        let g: Vec<f64> = (0..t_n * p_n * 3).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let r: Vec<f64> = (0..t_n * p_n * (k_n - 1) * 3)
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        let d = DisentangledSequence {
            id: format!("case{case}"),
            label: None,
            frames: t_n,
            persons: p_n,
            joints_local: k_n - 1,
            g: g.clone(),
            r: r.clone(),
        };
        let mut targets = build_targets(&d, &cfg);

        // independent scalar-loop target oracle
        let at = |x: &[f64], t: usize, p: usize, k: usize| -> [f64; 3] {
            if k == 0 {
                let i = (t * p_n + p) * 3;
                [g[i], g[i + 1], g[i + 2]]
            } else {
                let i = ((t * p_n + p) * (k_n - 1) + (k - 1)) * 3;
                [x[i], x[i + 1], x[i + 2]]
            }
        };
        for t in 0..t_n {
            for p in 0..p_n {
                for k in 0..k_n {
                    for (ni, &n) in intervals.iter().enumerate() {
                        let (want_dir, want_mag) = if t + 1 <= n {
                            (13, 0)
                        } else {
                            let a = at(if k == 0 { &g } else { &r }, t, p, k);
                            let b = at(if k == 0 { &g } else { &r }, t - n, p, k);
                            let disp = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                            (
                                naive_direction(disp, cfg.eps_dir),
                                naive_magnitude(disp, &cfg.magnitude_edges),
                            )
                        };
                        let idx = targets.idx(t, p, k, ni);
                        targets_ok &= targets.dir_class[idx] == want_dir
                            && targets.mag_class[idx] == want_mag;
                    }
                }
            }
        }

        // random logits through mpdp_loss vs a scalar cross-entropy loop
        let pad = rng.gen_range(0..3usize);
        let total = t_n + pad;
        targets.pad_to(total);
        let groups = p_n * k_n;
        let mut tape = Tape::new();
        let mut logits = Vec::new();
        let mut raw = Vec::new();
        for _ in &intervals {
            let dir: Vec<f64> = (0..total * groups * C_DELTA)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let mag: Vec<f64> = (0..total * groups * cfg.c_sigma)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let dir_id = tape.leaf(dir.clone(), vec![total, groups * C_DELTA], false).unwrap();
            let mag_id = tape.leaf(mag.clone(), vec![total, groups * cfg.c_sigma], false).unwrap();
            logits.push((dir_id, mag_id));
            raw.push((dir, mag));
        }
        let loss = mpdp_loss(&mut tape, &logits, &targets, &cfg).unwrap();
        let got = tape.value(loss);

        let ce = |row: &[f64], target: usize| -> f64 {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            -(row[target] - m - z.ln())
        };
        let mut want = 0.0;
        for (ni, (dir, mag)) in raw.iter().enumerate() {
            for t in 0..t_n {
                for p in 0..p_n {
                    for k in 0..k_n {
                        let row = t * groups + p * k_n + k;
                        let idx = targets.idx(t, p, k, ni);
                        want += cfg.lambda_delta / k_n as f64
                            * ce(&dir[row * C_DELTA..(row + 1) * C_DELTA], targets.dir_class[idx]);
                        want += cfg.lambda_sigma / k_n as f64
                            * ce(
                                &mag[row * cfg.c_sigma..(row + 1) * cfg.c_sigma],
                                targets.mag_class[idx],
                            );
                    }
                }
            }
        }
        want /= (t_n * p_n * intervals.len()) as f64;
        max_loss_err = max_loss_err.max((got - want).abs());
    }
    println!("  max loss deviation from scalar oracle: {max_loss_err:.3e}");
    report(
        "03 oracle equivalence",
        targets_ok && max_loss_err < 1e-10,
    )
}

#[test]
fn criterion_04_uniform_logit_loss_closed_form() {
    let model = ModelConfig { t_max: 16, ..toy_model() };
    let mpdp = MpdpConfig::default(); // intervals {1,5,10}, C_sigma = 8
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = init_model_params(&model, &mut rng).unwrap();
    add_head_params(&model, &mpdp, &mut ps, &mut rng);
    for p in ps.iter_mut() {
        if p.name.starts_with("head.") {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let frames = 12;
    let g: Vec<f64> = (0..frames * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let r: Vec<f64> = (0..frames * 2 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let d = DisentangledSequence {
        id: "uniform".into(),
        label: None,
        frames,
        persons: 1,
        joints_local: 2,
        g: g.clone(),
        r: r.clone(),
    };
    let mut tape = Tape::new();
    let tp = ps.register(&mut tape);
    let valid = vec![true; frames];
    let input = SequenceInput { g: &g, r: &r, valid: &valid };
    let out = forward_sequence(&mut tape, &tp, &model, &input, false).unwrap();
    let logits = heads_forward(&mut tape, &tp, &mpdp, out.f).unwrap();
    let targets = build_targets(&d, &mpdp);
    let loss = mpdp_loss(&mut tape, &logits, &targets, &mpdp).unwrap();
    let want = (27f64).ln() + (8f64).ln();
    let got = tape.value(loss);
    println!("  uniform-logit loss {got:.9}, closed form {want:.9}");
    report(
        "04 uniform-logit loss closed form",
        (got - want).abs() < 1e-9,
    );
}

#[test]
fn criterion_05_overfit_small_dataset() {
    let data = synth(2, 16, 55, (10, 16)); // 32 sequences
    let model = ModelConfig {
        joints: 9,
        persons: 1,
        embed_dim: 6,
        blocks: 2,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 48,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    };
    let mpdp = MpdpConfig {
        intervals: vec![1],
        c_sigma: 3,
        eps_dir: 0.005,
        magnitude_edges: vec![0.02, 0.2],
        lambda_delta: 1.0,
        lambda_sigma: 1.0,
    };
    let run = RunConfig {
        epochs: 1000,
        max_steps: Some(200),
        batch_size: 32,
        seed: 3,
        lr: 1e-2,
        lr_decay: 1.0,
        augment: false,
        ..RunConfig::default()
    };
    let t0 = std::time::Instant::now();
    let result = pretrain(&data, &model, &mpdp, &run, None).unwrap();
    let initial = result.metrics.first().unwrap().loss;
    let last = result.metrics.last().unwrap().loss;
    println!(
        "  {} steps in {:.1}s: loss {initial:.4} -> {last:.4} (target <= {:.4})",
        result.steps,
        t0.elapsed().as_secs_f64(),
        0.1 * initial
    );
    report(
        "05 overfit 32 sequences in 200 steps",
        result.steps == 200 && last <= 0.1 * initial && t0.elapsed().as_secs() < 300,
    );
}

fn probe_accuracy(
    train: &[RawSequence],
    test: &[RawSequence],
    ckpt: &Checkpoint,
    seed: u64,
) -> f64 {
    let run = RunConfig {
        epochs: 100,
        batch_size: 64,
        seed,
        augment: false,
        ..RunConfig::default()
    };
    linear_probe(train, test, ckpt, &run).unwrap().accuracy
}

#[test]
fn criterion_06_representation_quality() {
    let train = synth(4, 100, 600, (20, 40));
    let test = synth(4, 50, 601, (20, 40));
    let model = ModelConfig {
        joints: 9,
        persons: 1,
        embed_dim: 6,
        blocks: 2,
        spatial_heads: 2,
        temporal_heads: 4,
        t_max: 48,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    };
    let mpdp = MpdpConfig::default();
    let run = RunConfig {
        epochs: 30,
        batch_size: 64,
        seed: 6,
        lr: 1e-3,
        augment: false,
        ..RunConfig::default()
    };
    let t0 = std::time::Instant::now();
    let result = pretrain(&train, &model, &mpdp, &run, None).unwrap();
    let pretrained = Checkpoint {
        model: model.clone(),
        meta: serde_json::Value::Null,
        params: result.params,
    };
    let acc_pre = probe_accuracy(&train, &test, &pretrained, run.seed);

    // same probe on an untrained backbone, same probe seed
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let random = Checkpoint {
        model: model.clone(),
        meta: serde_json::Value::Null,
        params: init_model_params(&model, &mut rng).unwrap(),
    };
    let acc_rand = probe_accuracy(&train, &test, &random, run.seed);

    println!(
        "  probe accuracy: pretrained {acc_pre:.3}, random backbone {acc_rand:.3} ({:.0}s)",
        t0.elapsed().as_secs_f64()
    );
    report(
        "06 representation quality (probe >= 0.90, gap >= 0.10)",
        acc_pre >= 0.90 && acc_pre - acc_rand >= 0.10 && t0.elapsed().as_secs() < 900,
    );
}

#[test]
fn criterion_07_ablation_direction_report() {
    let train = synth(4, 30, 700, (24, 32));
    let test = synth(4, 15, 701, (24, 32));
    let model = ModelConfig {
        joints: 9,
        persons: 1,
        embed_dim: 6,
        blocks: 1,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 32,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    };
    let configs: [(&str, Vec<usize>, bool); 3] = [
        ("disentangled, intervals {1,5,10}", vec![1, 5, 10], true),
        ("disentangled, interval {1}", vec![1], true),
        ("entangled, interval {1}", vec![1], false),
    ];
    let mut means = Vec::new();
    for (name, intervals, disentangled) in &configs {
        let mpdp = MpdpConfig {
            intervals: intervals.clone(),
            ..MpdpConfig::default()
        };
        let mut accs = Vec::new();
        for seed in 0..3u64 {
            let run = RunConfig {
                epochs: 40,
                batch_size: 32,
                seed,
                lr: 2e-3,
                augment: false,
                disentangle: *disentangled,
                ..RunConfig::default()
            };
            let result = pretrain(&train, &model, &mpdp, &run, None).unwrap();
            let ckpt = Checkpoint {
                model: model.clone(),
                meta: serde_json::Value::Null,
                params: result.params,
            };
            let probe_run = RunConfig {
                epochs: 100,
                batch_size: 32,
                seed,
                augment: false,
                disentangle: *disentangled,
                ..RunConfig::default()
            };
            accs.push(linear_probe(&train, &test, &ckpt, &probe_run).unwrap().accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("  {name}: mean probe accuracy {mean:.3} over 3 seeds");
        means.push(mean);
    }
    let ordered = means[0] >= means[1] && means[1] >= means[2];
    println!(
        "  ordering {} (report-only, not asserted)",
        if ordered { "holds" } else { "does NOT hold" }
    );
    // soft criterion: logged, never hard-failed
    report("07 ablation ordering (report-only)", true);
}

#[test]
fn criterion_08_p2p_isolation() {
    let model = ModelConfig {
        joints: 4,
        persons: 2,
        embed_dim: 4,
        blocks: 1,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 8,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let rows = model.token_rows();
    let mut tape = Tape::new();
    let tp = ps.register(&mut tape);
    let tokens: Vec<f64> = (0..rows * model.embed_dim)
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    let x = tape.leaf(tokens, vec![rows, model.embed_dim], true).unwrap();
    let out = spatial_mha(&mut tape, x, &tp, &model, 0, None).unwrap();
    // scalar function of person-1 outputs only
    let person1 = tape.slice_rows(out, 0, model.joints).unwrap();
    let s = tape.sum(person1).unwrap();
    tape.backward(s).unwrap();
    let grad = tape.grad(x).unwrap();
    let person2_grad = &grad[model.joints * model.embed_dim..];
    report(
        "08 p2p isolation (zero gradient across persons)",
        person2_grad.iter().all(|&v| v == 0.0),
    );
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(2, 6, 99, (8, 12));
    let model = toy_model();
    let model = ModelConfig { joints: 9, t_max: 16, ..model };
    let mpdp = toy_mpdp();
    let run = RunConfig {
        epochs: 2,
        batch_size: 4,
        seed: 12,
        ..RunConfig::default()
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let res_a = pretrain(&data, &model, &mpdp, &run, Some(&dir_a)).unwrap();
    let _res_b = pretrain(&data, &model, &mpdp, &run, Some(&dir_b)).unwrap();

    // metrics logs identical apart from the wall-clock column
    let strip = |path: &std::path::Path| -> String {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map(|(rest, _)| rest.to_string()).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let logs_equal = strip(&dir_a.join("metrics.csv")) == strip(&dir_b.join("metrics.csv"));

    // save/load round trip reproduces the forward pass bit-exactly
    let loaded = load_checkpoint(&dir_a.join("model.ckpt")).unwrap();
    let d = disentangle(&data[0]);
    let forward_bits = |ps: &glmotion::model::ParamSet| -> Vec<u64> {
        let mut tape = Tape::new();
        let tp = ps.register(&mut tape);
        let valid = vec![true; d.frames];
        let input = SequenceInput { g: &d.g, r: &d.r, valid: &valid };
        let out = forward_sequence(&mut tape, &tp, &model, &input, false).unwrap();
        tape.data(out.f).iter().map(|v| v.to_bits()).collect()
    };
    let ckpt_equal = forward_bits(&res_a.params) == forward_bits(&loaded.params);

    // canonical format round trip is exact
    let round = parse_canonical(&write_canonical(&data[0])).unwrap();
    let canon_equal = round == data[0];

    report(
        "09 determinism and persistence",
        logs_equal && ckpt_equal && canon_equal,
    );
}

#[test]
fn criterion_10_analysis_correctness() {
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let ok_identity = mean_attended_distance(&identity, 3) == 0.0;
    let uniform3 = [1.0 / 3.0; 3];
    let ok_uniform = (attended_distance_row(&uniform3, 0) - 1.0).abs() < 1e-12;

    // brute-force cross-check on a random 4x4 map
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut map = vec![0.0; 16];
    for row in map.chunks_mut(4) {
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        row.copy_from_slice(&raw.iter().map(|v| v / s).collect::<Vec<_>>());
    }
    let mut brute = 0.0;
    for t in 0..4 {
        for k in 0..4 {
            brute += map[t * 4 + k] * (t as f64 - k as f64).abs();
        }
    }
    brute /= 4.0;
    let ok_brute = (mean_attended_distance(&map, 4) - brute).abs() < 1e-12;

    report(
        "10 analysis correctness",
        ok_identity && ok_uniform && ok_brute,
    );
}
