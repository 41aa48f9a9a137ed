//! End-to-end acceptance gate. One test per criterion; each prints a single
//! PASS line with the measured numbers when it succeeds. Heavy desk-scale
//! artifacts (two trained models) are built once and shared.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use glsl_core::dataset::{window_at, zscore_fit, SynthSpec, UniformGrid};
use glsl_core::gnn::{
    gat_layer_forward, gcn_layer_forward, normalize_adjacency, Activation, GatHead, HeadMerge,
    KernelKind,
};
use glsl_core::inject::{
    correlation_gate, inject_intermodal, inject_internode, inject_negation, inject_random,
    pearson_checked, rollback, AnomalyKind, InjectionContext,
};
use glsl_core::model::{blended_loss, cross_entropy, GlslModel, GraphCtx, LatentState, ModelConfig};
use glsl_core::rng::rng_for;
use glsl_core::tape::Tape;
use glsl_core::tensor::Tensor;
use glsl_core::topology::{build_complete, distance_matrix, Adjacency, NodeLayout};
use glsl_core::train::{evaluate, ConstantDetector, EvalConfig, PerfectDetector};

// ------------------------------------------------------------- CLI harness

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_glsl")
}

fn tmp_root() -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn glsl");
    assert!(
        out.status.success(),
        "glsl {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_metrics(dir: &Path) -> (f64, f64, f64, f64) {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let m = &v["metrics"];
    (
        m["precision"].as_f64().unwrap(),
        m["recall"].as_f64().unwrap(),
        m["f1"].as_f64().unwrap(),
        m["accuracy"].as_f64().unwrap(),
    )
}

// ------------------------------------------------ shared desk-scale fixture

const DESK_FLAGS: &[&str] = &[
    "--synthetic", "--nodes", "10", "--modes", "3", "--ticks", "2000",
    "--window", "20", "--embed", "32", "--latent", "16", "--heads", "2",
    "--epochs", "100", "--lr", "0.001", "--seed", "1",
    "--T", "100", "--tau", "10", "--p", "40",
];

struct DeskRun {
    gat_dir: PathBuf,
    gat: (f64, f64, f64, f64),
    gcn: (f64, f64, f64, f64),
    elapsed_secs: f64,
}

static DESK: OnceLock<DeskRun> = OnceLock::new();

fn desk() -> &'static DeskRun {
    DESK.get_or_init(|| {
        let root = tmp_root();
        let started = Instant::now();
        let mut dirs = Vec::new();
        for kernel in ["gat", "gcn"] {
            let train_dir = root.join(format!("desk_{kernel}"));
            let eval_dir = root.join(format!("desk_{kernel}_eval"));
            let mut args = vec!["train", "--kernel", kernel];
            args.extend_from_slice(DESK_FLAGS);
            args.extend(["--out-dir", leak(train_dir.to_str().unwrap().into())]);
            run_cli(&args);

            let ckpt = train_dir.join("model.ckpt");
            let mut args = vec![
                "eval",
                "--kernel",
                kernel,
                "--checkpoint",
                leak(ckpt.to_str().unwrap().into()),
            ];
            args.extend_from_slice(DESK_FLAGS);
            args.extend(["--out-dir", leak(eval_dir.to_str().unwrap().into())]);
            run_cli(&args);
            dirs.push((train_dir, eval_dir));
        }
        let elapsed_secs = started.elapsed().as_secs_f64();
        DeskRun {
            gat: read_metrics(&dirs[0].1),
            gcn: read_metrics(&dirs[1].1),
            gat_dir: dirs.remove(0).0,
            elapsed_secs,
        }
    })
}

/// Leak small strings so flag slices can stay &'static str.
fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

// --------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let cfg = ModelConfig {
        modes: 2,
        nodes: 3,
        window: 5,
        embed: 4,
        latent: 4,
        kernel: KernelKind::Gat,
        heads: 2,
        leaky_slope: 0.2,
    };
    let mut model = GlslModel::new(cfg.clone(), 1234).unwrap();
    let graph = GraphCtx::new(build_complete(cfg.nodes, true), cfg.kernel);
    let mut rng = rng_for(777, "acc.gradcheck");
    let mut grid = UniformGrid::zeros(cfg.modes, cfg.nodes, cfg.window + 2, 1.0);
    for m in 0..cfg.modes {
        for n in 0..cfg.nodes {
            for t in 0..grid.ticks {
                grid.set(m, n, t, rng.gen_range(-1.2..1.2));
            }
        }
    }
    let window = window_at(&grid, grid.ticks - 1, cfg.window).unwrap();
    let mut rnd = |r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap()
    };
    // non-zero recurrent state so every GRU parameter carries gradient
    let state = LatentState {
        enc1: rnd(cfg.nodes, cfg.latent),
        enc2: rnd(cfg.nodes, cfg.latent),
        dec1: rnd(cfg.nodes, cfg.latent),
        dec2: rnd(cfg.nodes, cfg.embed),
    };
    let (label, epoch) = (1.0, 3);

    let loss_value = |model: &GlslModel| -> f64 {
        let mut fwd = model.forward(&window, &graph, &state).unwrap();
        let ce = cross_entropy(&mut fwd.tape, fwd.prob, label).unwrap();
        let loss = blended_loss(&mut fwd.tape, fwd.l_rec, ce, epoch).unwrap();
        fwd.tape.value(loss).item()
    };
    let analytic: Vec<Tensor> = {
        let mut fwd = model.forward(&window, &graph, &state).unwrap();
        let ce = cross_entropy(&mut fwd.tape, fwd.prob, label).unwrap();
        let loss = blended_loss(&mut fwd.tape, fwd.l_rec, ce, epoch).unwrap();
        let grads = fwd.tape.backward(loss).unwrap();
        model.params.collect_grads(&fwd.param_ids, &grads)
    };
    let step = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for pi in 0..analytic.len() {
        for k in 0..analytic[pi].numel() {
            let orig = model.params.get(pi).data()[k];
            model.params.tensors_mut()[pi].data_mut()[k] = orig + step;
            let fp = loss_value(&model);
            model.params.tensors_mut()[pi].data_mut()[k] = orig - step;
            let fm = loss_value(&model);
            model.params.tensors_mut()[pi].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi].data()[k];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            assert!(err < 1e-4, "param {pi} entry {k}: analytic {a} vs numeric {numeric}");
            worst = worst.max(err);
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient check took {secs:.1}s, budget is 60s");
    println!(
        "PASS criterion 1: {checked} parameter gradients within 1e-4 of finite differences (worst {worst:.2e}, {secs:.1}s)"
    );
}

// --------------------------------------------------------------- criterion 2

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 { x } else { slope * x }
}

fn random_adjacency(n: usize, rng: &mut ChaCha8Rng) -> Adjacency {
    let mut mask = build_complete(n, true).mask().to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let on = rng.gen_bool(0.6);
            mask[i * n + j] = on;
            mask[j * n + i] = on;
        }
    }
    Adjacency::from_mask(n, mask, true).unwrap()
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn criterion_2_kernel_oracles() {
    let mut rng = rng_for(99, "acc.kernels");
    let mut worst_row = 0.0f64;
    for _ in 0..25 {
        let n = rng.gen_range(2..=6);
        let f_in = rng.gen_range(2..=5);
        let f_out = rng.gen_range(1..=4);
        let adj = random_adjacency(n, &mut rng);
        let h = random_matrix(n, f_in, &mut rng);

        // GAT: one head, loop oracle
        let b = random_matrix(f_out, f_in, &mut rng);
        let a: Vec<f64> = (0..2 * f_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q = vec![vec![0.0; f_out]; n];
        for i in 0..n {
            for r in 0..f_out {
                q[i][r] = (0..f_in).map(|c| b.at(r, c) * h.at(i, c)).sum();
            }
        }
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut scores = vec![f64::NEG_INFINITY; n];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if adj.get(i, j) {
                    let e: f64 = (0..f_out)
                        .map(|r| a[r] * q[i][r] + a[f_out + r] * q[j][r])
                        .sum();
                    scores[j] = leaky(e, 0.2);
                    mx = mx.max(scores[j]);
                }
            }
            let denom: f64 = (0..n)
                .filter(|j| adj.get(i, *j))
                .map(|j| (scores[j] - mx).exp())
                .sum();
            for j in 0..n {
                if adj.get(i, j) {
                    alpha[i][j] = (scores[j] - mx).exp() / denom;
                }
            }
            let s: f64 = alpha[i].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "attention row sum {s}");
            worst_row = worst_row.max((s - 1.0).abs());
        }
        let mut tape = Tape::new();
        let h_id = tape.leaf(h.clone());
        let heads = vec![GatHead {
            b: tape.leaf(b.clone()),
            a: tape.leaf(Tensor::vector(a.clone())),
        }];
        let out = gat_layer_forward(&mut tape, h_id, &adj, &heads, 0.2, Activation::Tanh, HeadMerge::Concat).unwrap();
        let got = tape.value(out);
        for i in 0..n {
            for r in 0..f_out {
                let expect: f64 = (0..n).map(|j| alpha[i][j] * q[j][r]).sum::<f64>().tanh();
                assert!(
                    (got.at(i, r) - expect).abs() < 1e-10,
                    "gat node {i} feat {r}: {} vs {expect}",
                    got.at(i, r)
                );
            }
        }

        // GCN: explicit normalized-adjacency matrix oracle
        let w = random_matrix(f_out, f_in, &mut rng);
        let mut aa = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j || adj.get(i, j) {
                    aa[i][j] = 1.0;
                }
            }
        }
        let deg: Vec<f64> = aa.iter().map(|row| row.iter().sum()).collect();
        let mut tape = Tape::new();
        let h_id = tape.leaf(h.clone());
        let a_hat = tape.leaf(normalize_adjacency(&adj));
        let w_id = tape.leaf(w.clone());
        let out = gcn_layer_forward(&mut tape, h_id, a_hat, w_id, Activation::Tanh).unwrap();
        let got = tape.value(out);
        for i in 0..n {
            for r in 0..f_out {
                let mut s = 0.0;
                for j in 0..n {
                    if aa[i][j] == 0.0 {
                        continue;
                    }
                    let hw: f64 = (0..f_in).map(|c| h.at(j, c) * w.at(r, c)).sum();
                    s += aa[i][j] / (deg[i] * deg[j]).sqrt() * hw;
                }
                assert!(
                    (got.at(i, r) - s.tanh()).abs() < 1e-10,
                    "gcn node {i} feat {r}"
                );
            }
        }
    }
    println!(
        "PASS criterion 2: gat/gcn match loop oracles on 25 random graphs to 1e-10; attention rows sum to 1 within 1e-9 (worst {worst_row:.2e})"
    );
}

// --------------------------------------------------------------- criterion 3

fn accounting_fixture() -> (UniformGrid, InjectionContext) {
    let spec = SynthSpec {
        nodes: 5,
        modes: 3,
        ticks: 400,
        layout: None,
        noise: 0.05,
        seed: 9,
    };
    let (grid, layout) = glsl_core::dataset::synth_generate(&spec);
    let bounds = zscore_fit(&grid, 0..grid.ticks).unwrap();
    let ictx = InjectionContext::new(bounds, 40.0, 2, distance_matrix(&layout));
    (grid, ictx)
}

#[test]
fn criterion_3_evaluation_accounting() {
    let (grid, ictx) = accounting_fixture();
    let ec = EvalConfig { samples: 20, tau: 5, delay: 8, threshold: 0.5, seed: 3 };

    let mut perfect = PerfectDetector::new(grid.clone());
    let r = evaluate(&mut perfect, &grid, 10, &ictx, &ec).unwrap();
    assert_eq!((r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn_), (10, 0, 10, 0));
    assert_eq!(
        (r.metrics.precision, r.metrics.recall, r.metrics.f1, r.metrics.accuracy),
        (1.0, 1.0, 1.0, 1.0)
    );

    let mut always = ConstantDetector(1.0);
    let r1 = evaluate(&mut always, &grid, 10, &ictx, &ec).unwrap();
    assert_eq!((r1.counts.tp, r1.counts.fp, r1.counts.tn, r1.counts.fn_), (10, 10, 0, 0));
    assert_eq!(r1.metrics.recall, 1.0);
    assert_eq!(r1.metrics.precision, 0.5);
    assert_eq!(r1.metrics.accuracy, 0.5);

    let mut never = ConstantDetector(0.0);
    let r0 = evaluate(&mut never, &grid, 10, &ictx, &ec).unwrap();
    assert_eq!((r0.counts.tp, r0.counts.fp, r0.counts.tn, r0.counts.fn_), (0, 0, 10, 10));
    assert_eq!(r0.metrics.precision, 0.0);
    assert_eq!(r0.metrics.recall, 0.0);
    assert_eq!(r0.metrics.f1, 0.0);
    assert_eq!(r0.metrics.accuracy, 0.5);

    println!(
        "PASS criterion 3: perfect detector scores all-ones; constant detectors match hand-traced counts (10/10/0/0 and 0/0/10/10)"
    );
}

// --------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_desk_scale_f1() {
    let d = desk();
    let (gp, gr, gf, ga) = d.gat;
    let (cp, cr, cf, ca) = d.gcn;
    assert!(gf >= 0.75, "GLSL(GAT) F1 {gf:.4} < 0.75");
    assert!(cf >= 0.75, "GLSL(GCN) F1 {cf:.4} < 0.75");
    assert!(
        d.elapsed_secs <= 900.0,
        "desk-scale runs took {:.0}s, budget 900s",
        d.elapsed_secs
    );
    println!("desk-scale vs published full-scale reference:");
    println!("  model       precision  recall  f1      accuracy");
    println!("  GAT (desk)  {gp:.3}      {gr:.3}   {gf:.3}   {ga:.3}");
    println!("  GAT (ref)   0.945      0.870   0.906   -");
    println!("  GCN (desk)  {cp:.3}      {cr:.3}   {cf:.3}   {ca:.3}");
    println!("  GCN (ref)   -          -       0.879   -");
    println!(
        "PASS criterion 4: GAT F1 {gf:.3} and GCN F1 {cf:.3} both >= 0.75 in {:.0}s",
        d.elapsed_secs
    );
}

// --------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_sensitivity_trend() {
    let d = desk();
    let dir = tmp_root().join("sweep");
    let ckpt = d.gat_dir.join("model.ckpt");
    let mut args = vec![
        "sweep",
        "--kernel",
        "gat",
        "--checkpoint",
        leak(ckpt.to_str().unwrap().into()),
        "--p-values",
        "10,20,40,80",
    ];
    args.extend_from_slice(DESK_FLAGS);
    args.extend(["--out-dir", leak(dir.to_str().unwrap().into())]);
    run_cli(&args);

    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let recalls: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(recalls.len(), 4);
    let mut inversions = 0;
    for w in recalls.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            assert!(
                w[1] - w[0] <= 0.05,
                "recall inversion {:.3} -> {:.3} exceeds 0.05",
                w[0],
                w[1]
            );
        }
    }
    assert!(inversions <= 1, "{inversions} recall inversions, at most 1 allowed");
    println!(
        "PASS criterion 5: recall over p=10/20/40/80 is {:?} ({} inversion(s))",
        recalls, inversions
    );
}

// --------------------------------------------------------------- criterion 6

const CLUSTER_FLAGS: &[&str] = &[
    "--synthetic", "--nodes", "12", "--modes", "3", "--ticks", "2000",
    "--window", "20", "--embed", "8", "--latent", "4", "--heads", "2",
    "--kernel", "gat", "--epochs", "100", "--lr", "0.001", "--seed", "1",
    "--T", "200", "--tau", "12", "--p", "10",
];

// Nodes evenly spaced on a line, so every node correlates with its
// neighbors and splitting into more clusters costs graph information.
fn line_layout_file() -> PathBuf {
    let path = tmp_root().join("layout12.txt");
    let mut text = String::new();
    for i in 0..12 {
        text.push_str(&format!("{} {} 50\n", i + 1, 8 * i + 6));
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn clustered_run(k: usize, paa: Option<&str>, layout: &Path) -> (f64, f64) {
    let dir = tmp_root().join(format!("cl_k{}_{}", k, paa.unwrap_or("none").replace('/', "-")));
    let kk = leak(k.to_string());
    let mut args = vec!["clustered", "--k", kk];
    if let Some(r) = paa {
        args.extend(["--paa", r]);
    }
    args.extend_from_slice(CLUSTER_FLAGS);
    args.extend(["--layout", leak(layout.to_str().unwrap().into())]);
    args.extend(["--out-dir", leak(dir.to_str().unwrap().into())]);
    run_cli(&args);

    let agg = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    let f1: f64 = agg.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    let timing = std::fs::read_to_string(dir.join("timing.txt")).unwrap();
    let secs: f64 = timing.split_whitespace().nth(1).unwrap().parse().unwrap();
    (f1, secs)
}

#[test]
fn criterion_6_clustered_trends() {
    let layout = line_layout_file();
    let mut f1s = Vec::new();
    let mut times = Vec::new();
    for k in 1..=4 {
        let (f1, secs) = clustered_run(k, None, &layout);
        f1s.push(f1);
        times.push(secs);
    }
    for w in times.windows(2) {
        assert!(
            w[1] < w[0],
            "per-checkpoint time must strictly decrease with k: {:?}",
            times
        );
    }
    for w in f1s.windows(2) {
        assert!(
            w[1] <= w[0] + 0.02,
            "F1 rose by more than 0.02 across k: {:?}",
            f1s
        );
    }

    let base = f1s[2]; // k = 3, no PAA
    let (f1_25, _) = clustered_run(3, Some("2/5"), &layout);
    let (f1_45, _) = clustered_run(3, Some("4/5"), &layout);
    assert!(
        base - f1_25 >= 0.05,
        "PAA 2/5 must cost >= 5 F1 points (no-PAA {base:.3}, 2/5 {f1_25:.3})"
    );
    assert!(
        (base - f1_45).abs() <= 0.03,
        "PAA 4/5 must stay within 3 F1 points (no-PAA {base:.3}, 4/5 {f1_45:.3})"
    );
    println!(
        "PASS criterion 6: F1 over k=1..4 {:?} with per-checkpoint seconds {:?}; k=3 PAA 2/5 {f1_25:.3} vs {base:.3}, 4/5 {f1_45:.3}",
        f1s, times
    );
}

// --------------------------------------------------------------- criterion 7

fn noisy_grid(modes: usize, nodes: usize, ticks: usize, seed: u64) -> (UniformGrid, NodeLayout) {
    let mut rng = rng_for(seed, "acc.grid");
    let coords: Vec<(f64, f64)> = (0..nodes)
        .map(|_| (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)))
        .collect();
    let layout = NodeLayout::from_coords(coords);
    let mut g = UniformGrid::zeros(modes, nodes, ticks, 1.0);
    for m in 0..modes {
        let freq = rng.gen_range(0.05..0.4);
        let coef = rng.gen_range(-2.0..2.0);
        for n in 0..nodes {
            let phase = rng.gen_range(0.0..1.0);
            for t in 0..ticks {
                let v = coef * (t as f64 * freq + phase).sin() + 0.3 * rng.gen_range(-1.0..1.0);
                g.set(m, n, t, v);
            }
        }
    }
    (g, layout)
}

fn pearson_brute(p: &[f64], q: &[f64]) -> (f64, bool) {
    let n = p.len() as f64;
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let spq: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let spp: f64 = p.iter().map(|a| a * a).sum();
    let sqq: f64 = q.iter().map(|a| a * a).sum();
    let var_p = n * spp - sp * sp;
    let var_q = n * sqq - sq * sq;
    if var_p <= 0.0 || var_q <= 0.0 {
        return (0.0, true);
    }
    let r = (n * spq - sp * sq) / (var_p * var_q).sqrt();
    (r.clamp(-1.0, 1.0), false)
}

#[test]
fn criterion_7_injector_properties() {
    // locality + rollback, 200 cases
    for seed in 0..200u64 {
        let (grid, layout) = noisy_grid(3, 5, 100, seed);
        let bounds = zscore_fit(&grid, 0..grid.ticks).unwrap();
        let ictx = InjectionContext::new(bounds, 40.0, 2, distance_matrix(&layout));
        let mut rng = rng_for(seed, "acc.loc");
        let t_s = rng.gen_range(2..40usize);
        let t_e = (t_s + rng.gen_range(2..30usize)).min(99);
        let mut work = grid.clone();
        let r = inject_random(&mut work, t_s, t_e, &ictx, &mut rng).unwrap();
        for m in 0..3 {
            for n in 0..5 {
                for t in 0..100 {
                    let inside = m == r.mode && n == r.node && (r.t_s..=r.t_e).contains(&t);
                    if !inside {
                        assert_eq!(
                            work.get(m, n, t).to_bits(),
                            grid.get(m, n, t).to_bits(),
                            "seed {seed}: cell ({m},{n},{t}) changed outside target"
                        );
                    }
                }
            }
        }
        rollback(&mut work, &r);
        assert!(work
            .raw()
            .iter()
            .zip(grid.raw())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    // negation involution, 200 cases
    for seed in 0..200u64 {
        let (grid, _) = noisy_grid(2, 4, 100, seed);
        let mut rng = rng_for(seed, "acc.neg");
        let t_s = rng.gen_range(0..50usize);
        let t_e = (t_s + rng.gen_range(1..40usize)).min(99);
        let mut work = grid.clone();
        inject_negation(&mut work, 1, 2, t_s, t_e).unwrap();
        inject_negation(&mut work, 1, 2, t_s, t_e).unwrap();
        assert!(work
            .raw()
            .iter()
            .zip(grid.raw())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    // trend-reversal sign pattern, 200 cases
    for seed in 0..200u64 {
        let mut rng = rng_for(seed, "acc.trend");
        let rising = rng.gen_bool(0.5);
        let slope: f64 = if rising { 1.0 } else { -1.0 };
        let ticks = 60;
        let mut grid = UniformGrid::zeros(2, 1, ticks, 1.0);
        for t in 0..ticks {
            let base = slope * t as f64;
            grid.set(0, 0, t, base + rng.gen_range(-0.01..0.01));
            grid.set(1, 0, t, 2.0 * base + rng.gen_range(-0.01..0.01));
        }
        let bounds = zscore_fit(&grid, 0..ticks).unwrap();
        let (t_s, t_e) = (10usize, 30usize);
        let mut work = grid.clone();
        let mut inj = rng_for(seed, "acc.trend.inject");
        let r = inject_intermodal(&mut work, t_s, t_e, &bounds, 40.0, &mut inj).unwrap();
        assert_eq!(r.kind_applied, AnomalyKind::Intermodal, "seed {seed}: gate should pass");
        let s = work.series(r.mode, 0);
        let mid = t_s + (t_e - t_s) / 2;
        for t in t_s..mid {
            assert!(
                if rising { s[t] < s[t - 1] } else { s[t] > s[t - 1] },
                "seed {seed}: first half must oppose the trend at t={t}"
            );
        }
        for t in mid..=t_e {
            assert!(
                if rising { s[t] > s[t - 1] } else { s[t] < s[t - 1] },
                "seed {seed}: second half must follow the trend at t={t}"
            );
        }
    }

    // correlation gate vs brute force, 200 cases
    for seed in 0..200u64 {
        let (grid, layout) = noisy_grid(3, 5, 100, seed);
        let bounds = zscore_fit(&grid, 0..grid.ticks).unwrap();
        let dist = distance_matrix(&layout);
        let (t_s, t_e) = (20usize, 45usize);
        let k = 2usize;
        let mut work = grid.clone();
        let mut rng = rng_for(seed, "acc.gate");
        let internode = seed % 2 == 0;
        let (r, requested) = if internode {
            (
                inject_internode(&mut work, t_s, t_e, &bounds, 40.0, k, &dist, &mut rng).unwrap(),
                AnomalyKind::Internode,
            )
        } else {
            (
                inject_intermodal(&mut work, t_s, t_e, &bounds, 40.0, &mut rng).unwrap(),
                AnomalyKind::Intermodal,
            )
        };
        let target = &grid.series(r.mode, r.node)[r.t_s..=r.t_e];
        let passes = |other: &[f64]| {
            let (rr, degenerate) = pearson_brute(target, other);
            !degenerate && correlation_gate(rr)
        };
        let any_pass = if internode {
            dist.k_nearest(r.node, k)
                .into_iter()
                .any(|nb| passes(&grid.series(r.mode, nb)[r.t_s..=r.t_e]))
        } else {
            (0..3)
                .filter(|m| *m != r.mode)
                .any(|m| passes(&grid.series(m, r.node)[r.t_s..=r.t_e]))
        };
        if any_pass {
            assert_eq!(r.kind_applied, requested, "seed {seed}: gate passed but walk not applied");
        } else {
            assert!(
                matches!(
                    r.kind_applied,
                    AnomalyKind::Scale | AnomalyKind::Negation | AnomalyKind::Sudden
                ),
                "seed {seed}: gate failed but no fallback recorded"
            );
        }
        // the library Pearson agrees with the raw-sums formula
        let other = &grid.series(0, r.node)[r.t_s..=r.t_e];
        let (lib_r, lib_d) = pearson_checked(target, other).unwrap();
        let (bru_r, bru_d) = pearson_brute(target, other);
        assert_eq!(lib_d, bru_d);
        if !lib_d {
            assert!((lib_r - bru_r).abs() < 1e-9);
        }
    }

    println!(
        "PASS criterion 7: locality, negation involution, trend sign pattern and gate equivalence hold on 200 randomized cases each"
    );
}

// --------------------------------------------------------------- criterion 8

const TINY_FLAGS: &[&str] = &[
    "--synthetic", "--nodes", "5", "--modes", "3", "--ticks", "300",
    "--window", "10", "--embed", "8", "--latent", "8", "--heads", "2",
    "--epochs", "4", "--lr", "0.001", "--seed", "11",
    "--T", "12", "--tau", "5", "--p", "20",
];

fn tiny_pass(label: &str) -> PathBuf {
    let root = tmp_root().join(format!("det_{label}"));
    let train_dir = root.join("train");
    let eval_dir = root.join("eval");
    let mut args = vec!["train"];
    args.extend_from_slice(TINY_FLAGS);
    args.extend(["--out-dir", leak(train_dir.to_str().unwrap().into())]);
    run_cli(&args);
    let ckpt = train_dir.join("model.ckpt");
    let mut args = vec!["eval", "--checkpoint", leak(ckpt.to_str().unwrap().into())];
    args.extend_from_slice(TINY_FLAGS);
    args.extend(["--out-dir", leak(eval_dir.to_str().unwrap().into())]);
    run_cli(&args);
    let cl_dir = root.join("clustered");
    let mut args = vec!["clustered", "--k", "2"];
    args.extend_from_slice(TINY_FLAGS);
    args.extend(["--out-dir", leak(cl_dir.to_str().unwrap().into())]);
    run_cli(&args);
    root
}

#[test]
fn criterion_8_determinism() {
    let a = tiny_pass("a");
    let b = tiny_pass("b");
    // everything except wall-clock timing must be byte-identical
    for rel in [
        "train/model.ckpt",
        "train/loss_history.csv",
        "train/config.toml",
        "eval/metrics.json",
        "eval/decisions.csv",
        "eval/config.toml",
        "clustered/clustered.json",
        "clustered/aggregate.csv",
    ] {
        let fa = std::fs::read(a.join(rel)).unwrap();
        let fb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(fa, fb, "{rel} differs between identical runs");
    }
    println!(
        "PASS criterion 8: repeated train/eval/clustered runs with the same config and seeds are byte-identical across all metric outputs"
    );
}
