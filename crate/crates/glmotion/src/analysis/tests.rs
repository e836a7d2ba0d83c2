use super::*;
use crate::data::{synth_generate, SynthSpec};
use crate::model::{init_model_params, PositionalMode};
use crate::train::InputMode;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        joints: 9,
        persons: 1,
        embed_dim: 2,
        blocks: 2,
        spatial_heads: 1,
        temporal_heads: 2,
        t_max: 48,
        ln_eps: 1e-5,
        positional_mode: PositionalMode::TrainableTight,
        p2p_attention: true,
    }
}

fn synth_data(n: usize, seed: u64) -> Vec<RawSequence> {
    let spec = SynthSpec {
        n_classes: 2,
        n_per_class: n.div_ceil(2),
        t_range: (10, 16),
        ..SynthSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = synth_generate(&mut rng, &spec).unwrap();
    all.truncate(n);
    all
}

fn eval_run() -> RunConfig {
    RunConfig { augment: false, ..RunConfig::default() }
}

#[test]
fn attended_distance_hand_cases() {
    // identity attention never leaves the query frame
    assert_eq!(attended_distance_row(&[0.0, 1.0, 0.0], 1), 0.0);
    // uniform over 3 frames from query 0: (0 + 1 + 2) / 3
    assert!((attended_distance_row(&[1.0 / 3.0; 3], 0) - 1.0).abs() < 1e-12);
    // strict attention on t-1
    assert_eq!(attended_distance_row(&[0.0, 1.0, 0.0, 0.0], 2), 1.0);

    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(mean_attended_distance(&identity, 3), 0.0);
}

#[test]
fn uniform_attention_distance_matches_brute_force() {
    for w in 1..=10usize {
        let map = vec![1.0 / w as f64; w * w];
        let mut brute = 0.0;
        for t in 0..w {
            for k in 0..w {
                brute += (t as f64 - k as f64).abs() / w as f64;
            }
        }
        brute /= w as f64;
        assert!((mean_attended_distance(&map, w) - brute).abs() < 1e-12, "w={w}");
    }
}

#[test]
fn single_sample_summary_equals_that_samples_maps() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let data = synth_data(3, 5);
    let run = eval_run();
    let window = 8;

    let summary = average_attention(&ps, &model, &run, &data, 1, window).unwrap();
    assert_eq!(summary.samples, 1);

    // recompute the same forward with capture
    let d = crate::train::prepare_eval_sequence(&data[0], &run, model.t_max).unwrap();
    let mut tape = Tape::new();
    let tp = ps.register(&mut tape);
    let valid = vec![true; d.frames];
    let input = SequenceInput { g: &d.g, r: &d.r, valid: &valid };
    let out = forward_sequence(&mut tape, &tp, &model, &input, true).unwrap();

    let spatial = out.spatial_attention.unwrap();
    for b in 0..model.blocks {
        for h in 0..model.spatial_heads {
            assert_eq!(summary.spatial[b][h], spatial[b][h]);
        }
    }
    let temporal = out.temporal_attention.unwrap();
    let l = d.frames.min(window);
    for b in 0..model.blocks {
        for h in 0..model.temporal_heads {
            for t in 0..l {
                for k in 0..l {
                    assert_eq!(
                        summary.temporal[b][h][t * window + k],
                        temporal[b][h][t * d.frames + k]
                    );
                }
            }
        }
    }
}

#[test]
fn full_window_rows_stay_stochastic_after_averaging() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let data = synth_data(4, 7);
    // force every sequence to exactly the window length so no attention
    // mass falls outside the exported map
    let window = 12;
    let run = RunConfig {
        input_mode: InputMode::Sampled(window),
        ..eval_run()
    };
    let summary = average_attention(&ps, &model, &run, &data, 4, window).unwrap();

    for b in 0..model.blocks {
        for h in 0..model.temporal_heads {
            for t in 0..window {
                let s: f64 = summary.temporal[b][h][t * window..(t + 1) * window].iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row {t} sums to {s}");
            }
        }
        for h in 0..model.spatial_heads {
            let rows = model.token_rows();
            for t in 0..rows {
                let s: f64 = summary.spatial[b][h][t * rows..(t + 1) * rows].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
    // attended distance within a 12-frame window stays below the window
    for heads in &summary.mean_distance {
        for &v in heads {
            assert!(v >= 0.0 && v < window as f64);
        }
    }
}

#[test]
fn average_attention_is_deterministic_and_rejects_empty_data() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let data = synth_data(3, 9);
    let run = eval_run();
    let a = average_attention(&ps, &model, &run, &data, 3, 8).unwrap();
    let b = average_attention(&ps, &model, &run, &data, 3, 8).unwrap();
    assert_eq!(a.spatial, b.spatial);
    assert_eq!(a.temporal, b.temporal);
    assert_eq!(a.mean_distance, b.mean_distance);

    assert!(average_attention(&ps, &model, &run, &[], 3, 8).is_err());
}

#[test]
fn posemb_similarity_basics() {
    // 2 frames x 2 tokens x d=2, one zero row
    let m = vec![
        1.0, 0.0, // (0,0)
        0.0, 2.0, // (0,1)
        -1.0, 0.0, // (1,0)
        0.0, 0.0, // (1,1) zero
    ];
    let sim = posemb_similarity(&m, 2, 2, 2);
    assert_eq!(sim.n, 4);
    for a in 0..3 {
        assert!((sim.sims[a * 4 + a] - 1.0).abs() < 1e-12);
    }
    // symmetry
    for a in 0..4 {
        for b in 0..4 {
            let (x, y) = (sim.sims[a * 4 + b], sim.sims[b * 4 + a]);
            assert!(x.to_bits() == y.to_bits());
        }
    }
    assert!((sim.sims[2] + 1.0).abs() < 1e-12); // opposite vectors
    assert!(sim.sims[1].abs() < 1e-12); // orthogonal
    // zero row is sentinel everywhere, including against itself
    for b in 0..4 {
        assert!(sim.sims[3 * 4 + b].is_nan());
    }
}

#[test]
fn zero_initialized_m_is_all_sentinel() {
    let m = vec![0.0; 3 * 2 * 4];
    let sim = posemb_similarity(&m, 3, 2, 4);
    assert!(sim.sims.iter().all(|v| v.is_nan()));
}

#[test]
fn csv_and_svg_exports() {
    let map = vec![0.0, 1.0, 0.5, f64::NAN];
    let csv = matrix_csv(&map, 2);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "key0,key1");
    assert_eq!(lines.next().unwrap(), "0,1");
    assert_eq!(lines.next().unwrap(), "0.5,NaN");

    let svg = heatmap_svg(&map, 2, "test map");
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("range [0.0000, 1.0000]"));
    assert!(svg.contains("rgb(128,128,128)")); // NaN cell
    assert!(svg.trim_end().ends_with("</svg>"));

    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ps = init_model_params(&model, &mut rng).unwrap();
    let data = synth_data(2, 11);
    let summary = average_attention(&ps, &model, &eval_run(), &data, 2, 6).unwrap();
    export_attention(&summary, dir.path()).unwrap();
    assert!(dir.path().join("spatial_b0_h0.csv").exists());
    assert!(dir.path().join("spatial_b1_h0.svg").exists());
    assert!(dir.path().join("temporal_b1_h1.csv").exists());
    assert!(dir.path().join("attended_distance.csv").exists());

    let sim = posemb_similarity(&ps.get("pos.m").data[..6 * model.token_width()], 6, model.token_rows(), model.embed_dim);
    export_posemb(&sim, dir.path()).unwrap();
    assert!(dir.path().join("posemb_similarity.csv").exists());
    assert!(dir.path().join("posemb_similarity.svg").exists());
}
