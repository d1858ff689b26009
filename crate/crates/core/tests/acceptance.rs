//! Acceptance suite: the nine release criteria, one test per criterion,
//! each printing a `[acceptance]` pass line with its measured numbers.
//! Training-based criteria share cached runs through OnceLocks so the
//! suite stays within its runtime budgets.

use std::sync::OnceLock;
use std::time::Instant;

use mkhnet_core::array::{Array, BoolArray};
use mkhnet_core::autodiff::Tape;
use mkhnet_core::checkpoint::Checkpoint;
use mkhnet_core::dataset::{
    chronological_split, make_synthetic, simulate_point_missing, MtsDataset, NormalizationStats,
    Split,
};
use mkhnet_core::graph::{dht_transform, extract_patches, ExplicitGraph};
use mkhnet_core::model::{hgi, hgrl, temporal, LossKind, MkhNet, Mode, ModelConfig};
use mkhnet_core::rng::Rng;
use mkhnet_core::training::{
    evaluate, gaussian_nll_loss, historical_average_baseline, prepare, train, MetricsAccumulator,
    PlateauScheduler, PreparedData, TrainConfig,
};
use mkhnet_core::verify::full_model_grad_err;

// ---- shared synthetic benchmark -------------------------------------------

const SEEDS: [u64; 3] = [42, 43, 44];

fn bench_graph(n: usize, seed: u64) -> ExplicitGraph {
    let mut rng = Rng::new(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n / 2 {
        let u = rng.index(n);
        let v = rng.index(n);
        if u != v {
            edges.push((u.min(v), u.max(v)));
        }
    }
    ExplicitGraph::new(n, edges).unwrap()
}

fn bench_config(n: usize, upsilon: usize, loss: LossKind, spatial: bool) -> ModelConfig {
    ModelConfig {
        n_nodes: n,
        tau: 12,
        upsilon,
        d: 12,
        m_hyperedges: 8,
        k_patches: 4,
        p_hops: 2,
        hgat_heads: 4,
        hgat_layers: 1,
        hgt_heads: 4,
        hgt_layers: 2,
        dropout: 0.1,
        gamma: 0.05,
        hard_sampling: true,
        ln_eps: 1e-5,
        loss_kind: loss,
        spatial,
    }
}

/// The 20-node diffusion benchmark: T=2000, 6/2/2 split.
fn benchmark_data() -> &'static (ExplicitGraph, MtsDataset<f64>, PreparedData<f64>) {
    static DATA: OnceLock<(ExplicitGraph, MtsDataset<f64>, PreparedData<f64>)> = OnceLock::new();
    DATA.get_or_init(|| {
        let g = bench_graph(20, 500);
        let ds = make_synthetic::<f64>(20, 2000, &g, 0.1, 1.0, &mut Rng::new(501)).unwrap();
        let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
        (g, ds, prepared)
    })
}

#[derive(Debug, Clone)]
struct RunSummary {
    val0: f64,
    best_val: f64,
    test_mae: f64,
}

fn run_benchmark(seed: u64, spatial: bool, data_override: Option<&PreparedData<f64>>) -> RunSummary {
    let (g, _, prepared) = benchmark_data();
    let prepared = data_override.unwrap_or(prepared);
    let mut rng = Rng::new(seed);
    let mut model =
        MkhNet::<f64>::new(bench_config(20, 12, LossKind::Mae, spatial), g.clone(), &mut rng)
            .unwrap();
    let tcfg = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
    let outcome = train(&mut model, &prepared.clone(), &tcfg, &mut rng).unwrap();
    let test = evaluate(&model, prepared, Split::Test, 64).unwrap().metrics;
    RunSummary {
        val0: outcome.history[0].val_mae,
        best_val: outcome.best_val_mae,
        test_mae: test.mae,
    }
}

fn full_run(idx: usize) -> &'static RunSummary {
    static RUNS: [OnceLock<RunSummary>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    RUNS[idx].get_or_init(|| run_benchmark(SEEDS[idx], true, None))
}

fn ablated_run(idx: usize) -> &'static RunSummary {
    static RUNS: [OnceLock<RunSummary>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    RUNS[idx].get_or_init(|| run_benchmark(SEEDS[idx], false, None))
}

// ---- criterion 1: gradient suite ------------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();

    // per-primitive spot checks at the tighter 1e-6 tolerance
    let prim_err = primitive_grad_errors();
    assert!(prim_err < 1e-6, "primitive gradient error {prim_err}");

    // full composed model, both heads, on the pinned 5-node toy
    let mae_err = full_model_grad_err::<f64>(LossKind::Mae, 7, 1e-4).unwrap();
    let nll_err = full_model_grad_err::<f64>(LossKind::GaussianNll, 7, 1e-4).unwrap();
    assert!(mae_err < 1e-4, "full model (MAE) gradient error {mae_err}");
    assert!(nll_err < 1e-4, "full model (NLL) gradient error {nll_err}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient suite took {elapsed:.1} s");
    println!(
        "[acceptance] criterion 1 (gradient suite): PASS - primitives {prim_err:.2e}, \
         full model MAE {mae_err:.2e} / NLL {nll_err:.2e}, {elapsed:.1} s"
    );
}

fn primitive_grad_errors() -> f64 {
    use mkhnet_core::autodiff::{grad_check, ParamMap};
    use std::collections::BTreeMap;
    let mut rng = Rng::new(76);
    let mut params = ParamMap::new();
    params.insert(
        "a".into(),
        Array::new(vec![4, 3], (0..12).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap(),
    );
    params.insert(
        "b".into(),
        Array::new(vec![3, 4], (0..12).map(|_| 1.5 + rng.uniform()).collect::<Vec<f64>>())
            .unwrap(),
    );
    params.insert(
        "gain".into(),
        Array::new(vec![1, 4], (0..4).map(|_| 1.0 + 0.2 * rng.normal()).collect::<Vec<f64>>())
            .unwrap(),
    );
    params.insert(
        "bias".into(),
        Array::new(vec![1, 4], (0..4).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap(),
    );
    // one chain exercising matmul, elementwise, softmax, reduce, layer_norm
    // and concat with their registered gradients
    let build = |p: &ParamMap<f64>, t: &mut Tape<f64>| {
        let a = t.leaf(p["a"].clone())?;
        let b = t.leaf(p["b"].clone())?;
        let gain = t.leaf(p["gain"].clone())?;
        let bias = t.leaf(p["bias"].clone())?;
        let prod = t.matmul(a, b)?;
        let ln = t.layer_norm(prod, gain, bias, 1e-5)?;
        let sm = t.softmax_rows(ln, None)?;
        let sig = t.sigmoid(prod)?;
        let cat = t.concat(sm, sig, 1)?;
        let sp = t.softplus(cat)?;
        let lg = t.log(sp)?;
        let ex = t.exp(lg)?;
        let row = t.mean(ex, Some(0))?;
        let loss = t.sum(row, None)?;
        Ok((
            loss,
            BTreeMap::from([
                ("a".to_string(), a),
                ("b".to_string(), b),
                ("gain".to_string(), gain),
                ("bias".to_string(), bias),
            ]),
        ))
    };
    grad_check(&build, &params, 1e-5).unwrap()
}

// ---- criterion 2: structural invariants ------------------------------------

#[test]
fn criterion_2_structural_invariants() {
    let start = Instant::now();
    let mut rng = Rng::new(200);

    // attention rows sum to 1 over their support
    let cfg = bench_config(7, 4, LossKind::Mae, true);
    let cfg = ModelConfig { n_nodes: 7, tau: 4, d: 8, k_patches: 2, ..cfg };
    let g = bench_graph(7, 201);
    let model = MkhNet::<f64>::new(cfg.clone(), g.clone(), &mut rng).unwrap();
    let mut tape = Tape::<f64>::new();
    let bound = model.bind(&mut tape).unwrap();
    let structure = model.sample_structure(&mut tape, &bound, Mode::Train, &mut rng).unwrap();
    let x = tape
        .leaf(Array::new(vec![7, 8], (0..56).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap())
        .unwrap();
    let out =
        hgrl::hgat_encode(&mut tape, &bound, x, &structure, &cfg, Mode::Eval, &mut rng).unwrap();
    for alpha in &out.alphas {
        let a = tape.value(*alpha);
        for j in 0..a.rows() {
            if (0..a.cols()).any(|i| structure.support.at2(i, j)) {
                let s: f64 = (0..a.cols()).map(|i| a.at2(j, i)).sum();
                assert!((s - 1.0).abs() < 1e-9, "alpha row {j} sums to {s}");
            }
        }
    }
    for beta in &out.betas {
        let b = tape.value(*beta);
        for i in 0..b.rows() {
            if (0..b.cols()).any(|j| structure.support.at2(i, j)) {
                let s: f64 = (0..b.cols()).map(|j| b.at2(i, j)).sum();
                assert!((s - 1.0).abs() < 1e-9, "beta row {i} sums to {s}");
            }
        }
    }

    // DHT double-transpose identity, bitwise
    for gseed in [202u64, 203, 204] {
        let g = bench_graph(9, gseed);
        let feats = Array::<f64>::zeros(vec![9, 3]);
        let dual = dht_transform(&g, &feats).unwrap();
        assert_eq!(dual.incidence.transpose(), g.incidence());
    }

    // patch cores partition V; patch edges are induced-correct
    for (n, k, p) in [(9usize, 3usize, 1usize), (10, 4, 2), (6, 6, 0)] {
        let g = bench_graph(n, n as u64 + 300);
        let patches = extract_patches(&g, k, p).unwrap();
        let mut cores: Vec<usize> = patches.iter().flat_map(|p| p.core_nodes.clone()).collect();
        cores.sort_unstable();
        assert_eq!(cores, (0..n).collect::<Vec<_>>(), "cores must partition V");
        for patch in &patches {
            for &(u, v) in &g.edges {
                let inside =
                    patch.expanded_nodes.contains(&u) && patch.expanded_nodes.contains(&v);
                assert_eq!(inside, patch.edge_list.contains(&(u, v)), "induced edge set");
            }
        }
    }

    // Gumbel two-channel softmax sums to 1
    let mut t2 = Tape::<f64>::new();
    for _ in 0..50 {
        let s = rng.uniform();
        let sv = t2.leaf(Array::new(vec![1, 1], vec![s]).unwrap()).unwrap();
        let (p0, p1) = hgi::hyperedge_probabilities(&mut t2, sv).unwrap();
        let g0 = rng.gumbel();
        let g1 = rng.gumbel();
        let n01 = (Array::full(vec![1, 1], g0), Array::full(vec![1, 1], g1));
        let n10 = (Array::full(vec![1, 1], g1), Array::full(vec![1, 1], g0));
        let a = hgi::gumbel_sample_incidence(&mut t2, p0, p1, 0.05, false, Some(&n01)).unwrap();
        let b = hgi::gumbel_sample_incidence(&mut t2, p1, p0, 0.05, false, Some(&n10)).unwrap();
        let total =
            t2.value(a.incidence).item().unwrap() + t2.value(b.incidence).item().unwrap();
        assert!((total - 1.0).abs() < 1e-9, "channel sum {total}");
    }

    // every gate output lies strictly inside (0, 1)
    let mut t3 = Tape::<f64>::new();
    // moderate scales: in the network every gate input is sigma- or
    // ReLU-bounded, so pre-activations never reach the f64 saturation point
    let rand_mat = |t: &mut Tape<f64>, r: usize, c: usize, rng: &mut Rng| {
        let data: Vec<f64> = (0..r * c).map(|_| rng.normal()).collect();
        t.leaf(Array::new(vec![r, c], data).unwrap()).unwrap()
    };
    let h = rand_mat(&mut t3, 4, 6, &mut rng);
    let xg = rand_mat(&mut t3, 4, 6, &mut rng);
    let fs = rand_mat(&mut t3, 6, 6, &mut rng);
    let fg = rand_mat(&mut t3, 6, 6, &mut rng);
    let (gated, gate) = hgrl::gate_combine(&mut t3, h, xg, fs, fg).unwrap();
    let dht = rand_mat(&mut t3, 4, 6, &mut rng);
    let (fused, moe_gate) = temporal::moe_fuse(&mut t3, h, xg, dht, fs, fg).unwrap();
    for id in [gated, gate, fused, moe_gate] {
        for &v in t3.value(id).data() {
            assert!(v > 0.0 && v < 1.0, "gate output {v} outside (0,1)");
        }
    }
    let moe_vals = tape.value(out.h_nodes);
    for &v in moe_vals.data() {
        assert!(v > 0.0 && v < 1.0, "hgat gated output {v} outside (0,1)");
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "structural suite took {elapsed:.1} s");
    println!(
        "[acceptance] criterion 2 (structural invariants): PASS - {elapsed:.2} s"
    );
}

// ---- criterion 3: oracle equivalence ----------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mm(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for j in 0..bc {
            for k in 0..ac {
                out[i * bc + j] += a[i * ac + k] * b[k * bc + j];
            }
        }
    }
    out
}

#[test]
fn criterion_3_oracle_equivalence() {
    const TOL: f64 = 1e-10;
    let mut rng = Rng::new(300);
    let randn = |rng: &mut Rng, n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
    let mut worst: f64 = 0.0;

    // GLU
    {
        let (n, tau, d) = (5, 6, 4);
        let (x, w0, w1, w2) = (
            randn(&mut rng, n * tau),
            randn(&mut rng, tau * d),
            randn(&mut rng, tau * d),
            randn(&mut rng, d * d),
        );
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(Array::new(vec![n, tau], x.clone()).unwrap()).unwrap();
        let w0v = t.leaf(Array::new(vec![tau, d], w0.clone()).unwrap()).unwrap();
        let w1v = t.leaf(Array::new(vec![tau, d], w1.clone()).unwrap()).unwrap();
        let w2v = t.leaf(Array::new(vec![d, d], w2.clone()).unwrap()).unwrap();
        let y = mkhnet_core::model::projection::glu_project(&mut t, xv, w0v, w1v, w2v).unwrap();
        let xw0 = mm(&x, n, tau, &w0, d);
        let xw1 = mm(&x, n, tau, &w1, d);
        let gated: Vec<f64> = xw0.iter().zip(&xw1).map(|(&g, &v)| sigmoid(g) * v).collect();
        let want = mm(&gated, n, d, &w2, d);
        for (got, want) in t.value(y).data().iter().zip(&want) {
            worst = worst.max((got - want).abs());
        }
    }

    // HgAT intra + inter on a random hard incidence
    {
        let (n, m, d) = (5, 3, 4);
        let cfg = mkhnet_core::model::test_support::oracle_config(n, m, d);
        let h = randn(&mut rng, n * d);
        let he = randn(&mut rng, m * d);
        let w0 = randn(&mut rng, d * d);
        let w1 = randn(&mut rng, d * d);
        let w2 = randn(&mut rng, d * d);
        let w3 = randn(&mut rng, 2 * d);
        let inc: Vec<bool> = vec![
            true, false, true, //
            true, true, false, //
            false, true, false, //
            true, false, true, //
            false, true, true,
        ];
        let support = BoolArray::new(vec![n, m], inc.clone()).unwrap();
        let support_t = support.transpose();

        let mut t = Tape::<f64>::new();
        let mut dummy = Rng::new(0);
        let hv = t.leaf(Array::new(vec![n, d], h.clone()).unwrap()).unwrap();
        let w0v = t.leaf(Array::new(vec![d, d], w0.clone()).unwrap()).unwrap();
        let (edge_var, alpha_var, hw0v) = hgrl::hgat_intra_head(
            &mut t, hv, w0v, &support_t, None, &cfg, Mode::Eval, &mut dummy,
        )
        .unwrap();

        let hw0 = mm(&h, n, d, &w0, d);
        let e: Vec<f64> =
            (0..n).map(|i| (0..d).map(|k| hw0[i * d + k].max(0.0)).sum()).collect();
        for j in 0..m {
            let members: Vec<usize> = (0..n).filter(|&i| inc[i * m + j]).collect();
            let maxe = members.iter().map(|&i| e[i]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = members.iter().map(|&i| (e[i] - maxe).exp()).sum();
            let mut agg = vec![0.0; d];
            for &i in &members {
                let a = (e[i] - maxe).exp() / denom;
                worst = worst.max((t.value(alpha_var).at2(j, i) - a).abs());
                for k in 0..d {
                    agg[k] += a * hw0[i * d + k];
                }
            }
            for k in 0..d {
                worst = worst.max((t.value(edge_var).at2(j, k) - sigmoid(agg[k])).abs());
            }
        }

        let hev = t.leaf(Array::new(vec![m, d], he.clone()).unwrap()).unwrap();
        let w1v = t.leaf(Array::new(vec![d, d], w1.clone()).unwrap()).unwrap();
        let w2v = t.leaf(Array::new(vec![d, d], w2.clone()).unwrap()).unwrap();
        let w3v = t.leaf(Array::new(vec![2 * d, 1], w3.clone()).unwrap()).unwrap();
        let (node_var, beta_var) = hgrl::hgat_inter_head(
            &mut t, hw0v, hv, hev, w1v, w2v, w3v, &support, None, &cfg, Mode::Eval, &mut dummy,
        )
        .unwrap();
        let hw2 = mm(&h, n, d, &w2, d);
        let hew2 = mm(&he, m, d, &w2, d);
        let hew1 = mm(&he, m, d, &w1, d);
        for i in 0..n {
            let edges: Vec<usize> = (0..m).filter(|&j| inc[i * m + j]).collect();
            let phi: Vec<f64> = edges
                .iter()
                .map(|&j| {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += w3[k] * hw2[i * d + k] + w3[d + k] * hew2[j * d + k];
                    }
                    s.max(0.0)
                })
                .collect();
            let maxp = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = phi.iter().map(|&p| (p - maxp).exp()).sum();
            let mut msg = vec![0.0; d];
            for (idx, &j) in edges.iter().enumerate() {
                let b = (phi[idx] - maxp).exp() / denom;
                worst = worst.max((t.value(beta_var).at2(i, j) - b).abs());
                for k in 0..d {
                    msg[k] += b * hew1[j * d + k];
                }
            }
            for k in 0..d {
                let want = (hw0[i * d + k] + msg[k]).max(0.0);
                worst = worst.max((t.value(node_var).at2(i, k) - want).abs());
            }
        }
    }

    // HgT layer vs dense attention oracle
    {
        let (n, d, heads) = (4, 8, 2);
        let dh = d / heads;
        let mut cfg = mkhnet_core::model::test_support::oracle_config(n, 3, d);
        cfg.hgt_heads = heads;
        let g = ExplicitGraph::new(n, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let model = MkhNet::<f64>::new(cfg.clone(), g, &mut rng).unwrap();
        let x = randn(&mut rng, n * d);
        let mut t = Tape::<f64>::new();
        let bound = model.bind(&mut t).unwrap();
        let xv = t.leaf(Array::new(vec![n, d], x.clone()).unwrap()).unwrap();
        let got = hgrl::hgt_layer(&mut t, &bound, 0, xv, xv, &cfg).unwrap();

        let p = |name: &str| model.params[name].data().to_vec();
        let ln = |x: &[f64], gain: &[f64], bias: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; x.len()];
            for i in 0..n {
                let row = &x[i * d..(i + 1) * d];
                let mu: f64 = row.iter().sum::<f64>() / d as f64;
                let var: f64 =
                    row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + cfg.ln_eps).sqrt();
                for k in 0..d {
                    out[i * d + k] = (row[k] - mu) * s * gain[k] + bias[k];
                }
            }
            out
        };
        let normed = ln(&x, &p("hgt.l0.ln1.gain"), &p("hgt.l0.ln1.bias"));
        let mut cat = vec![0.0; n * d];
        for z in 0..heads {
            let q = mm(&normed, n, d, &p(&format!("hgt.l0.h{z}.wq")), dh);
            let k = mm(&normed, n, d, &p(&format!("hgt.l0.h{z}.wk")), dh);
            let v = mm(&normed, n, d, &p(&format!("hgt.l0.h{z}.wv")), dh);
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|s| q[i * dh + s] * k[j * dh + s]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let maxs = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = scores.iter().map(|&s| (s - maxs).exp()).sum();
                for s in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += (scores[j] - maxs).exp() / denom * v[j * dh + s];
                    }
                    cat[i * d + z * dh + s] = acc;
                }
            }
        }
        let msa = mm(&cat, n, d, &p("hgt.l0.wo"), d);
        let h1: Vec<f64> = msa.iter().zip(&x).map(|(&a, &b)| a + b).collect();
        let normed2 = ln(&h1, &p("hgt.l0.ln2.gain"), &p("hgt.l0.ln2.bias"));
        let (w1, b1, w2, b2) = (
            p("hgt.l0.mlp.w1"),
            p("hgt.l0.mlp.b1"),
            p("hgt.l0.mlp.w2"),
            p("hgt.l0.mlp.b2"),
        );
        let mut m1 = mm(&normed2, n, d, &w1, 4 * d);
        for i in 0..n {
            for k in 0..4 * d {
                m1[i * 4 * d + k] = (m1[i * 4 * d + k] + b1[k]).max(0.0);
            }
        }
        let mut m2 = mm(&m1, n, 4 * d, &w2, d);
        for i in 0..n {
            for k in 0..d {
                m2[i * d + k] += b2[k] + x[i * d + k];
            }
        }
        for (got, want) in t.value(got).data().iter().zip(&m2) {
            worst = worst.max((got - want).abs());
        }
    }

    // GCN layer
    {
        let (v, d) = (6, 4);
        let edges = vec![(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)];
        let h = randn(&mut rng, v * d);
        let w = randn(&mut rng, d * d);
        let mut t = Tape::<f64>::new();
        let hv = t.leaf(Array::new(vec![v, d], h.clone()).unwrap()).unwrap();
        let av = t
            .leaf(mkhnet_core::graph::normalized_adjacency::<f64>(v, &edges))
            .unwrap();
        let wv = t.leaf(Array::new(vec![d, d], w.clone()).unwrap()).unwrap();
        let got = mkhnet_core::model::sgrl::gcn_layer(&mut t, hv, av, wv).unwrap();

        let mut a = vec![0.0; v * v];
        for i in 0..v {
            a[i * v + i] = 1.0;
        }
        for &(x, y) in &edges {
            a[x * v + y] = 1.0;
            a[y * v + x] = 1.0;
        }
        let deg: Vec<f64> = (0..v).map(|i| (0..v).map(|j| a[i * v + j]).sum()).collect();
        let mut a_hat = vec![0.0; v * v];
        for i in 0..v {
            for j in 0..v {
                a_hat[i * v + j] = a[i * v + j] / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
        let ahw = mm(&mm(&a_hat, v, v, &h, d), v, d, &w, d);
        for (got, want) in t.value(got).data().iter().zip(ahw.iter().map(|&x| x.max(0.0))) {
            worst = worst.max((got - want).abs());
        }
    }

    // MoE fusion
    {
        let (n, d) = (5, 4);
        let (imp, sub, dht, fs, fg) = (
            randn(&mut rng, n * d),
            randn(&mut rng, n * d),
            randn(&mut rng, n * d),
            randn(&mut rng, d * d),
            randn(&mut rng, d * d),
        );
        let mut t = Tape::<f64>::new();
        let iv = t.leaf(Array::new(vec![n, d], imp.clone()).unwrap()).unwrap();
        let sv = t.leaf(Array::new(vec![n, d], sub.clone()).unwrap()).unwrap();
        let dv = t.leaf(Array::new(vec![n, d], dht.clone()).unwrap()).unwrap();
        let fsv = t.leaf(Array::new(vec![d, d], fs.clone()).unwrap()).unwrap();
        let fgv = t.leaf(Array::new(vec![d, d], fg.clone()).unwrap()).unwrap();
        let (hv, _) = temporal::moe_fuse(&mut t, iv, sv, dv, fsv, fgv).unwrap();
        let s: Vec<f64> = imp.iter().zip(&sub).map(|(&a, &b)| a + b).collect();
        let sp = mm(&s, n, d, &fs, d);
        let dp = mm(&dht, n, d, &fg, d);
        for i in 0..n * d {
            let g = sigmoid(sp[i] + dp[i]);
            let want = sigmoid(g * s[i] + (1.0 - g) * dht[i]);
            worst = worst.max((t.value(hv).data()[i] - want).abs());
        }
    }

    assert!(worst < TOL, "oracle equivalence max abs diff {worst}");
    println!("[acceptance] criterion 3 (oracle equivalence): PASS - max abs diff {worst:.2e}");
}

// ---- criterion 4: learning check -------------------------------------------

#[test]
fn criterion_4_learning_check() {
    let start = Instant::now();
    let (_, _, prepared) = benchmark_data();
    let run = full_run(0);
    let ha = historical_average_baseline(prepared, Split::Test, 12, 12).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    assert!(
        run.test_mae < ha.mae,
        "model test MAE {} must beat HA {}",
        run.test_mae,
        ha.mae
    );
    assert!(
        run.best_val <= 0.70 * run.val0,
        "final val MAE {} must be <= 70% of untrained {}",
        run.best_val,
        run.val0
    );
    assert!(elapsed < 900.0, "learning check took {elapsed:.0} s");
    println!(
        "[acceptance] criterion 4 (learning check): PASS - test MAE {:.4} vs HA {:.4}, \
         val {:.4} -> {:.4} ({:.1}%), {elapsed:.0} s",
        run.test_mae,
        ha.mae,
        run.val0,
        run.best_val,
        100.0 * run.best_val / run.val0
    );
}

// ---- criterion 5: ablation direction ----------------------------------------

#[test]
fn criterion_5_ablation_direction() {
    let mut holds = 0;
    let mut detail = String::new();
    for idx in 0..3 {
        let full = full_run(idx);
        let ablated = ablated_run(idx);
        let ok = ablated.test_mae >= full.test_mae;
        if ok {
            holds += 1;
        }
        detail.push_str(&format!(
            "seed {}: full {:.4} vs ablated {:.4} ({}); ",
            SEEDS[idx],
            full.test_mae,
            ablated.test_mae,
            if ok { "holds" } else { "violated" }
        ));
    }
    assert!(holds >= 2, "ablation direction holds on {holds}/3 seeds: {detail}");
    println!("[acceptance] criterion 5 (ablation direction): PASS - {holds}/3 seeds; {detail}");
}

// ---- criterion 6: missingness monotonicity ----------------------------------

#[test]
fn criterion_6_missingness_monotonicity() {
    let (g, base, _) = benchmark_data();
    let mut holds = 0;
    let mut detail = String::new();
    for &seed in &SEEDS {
        let mut maes = Vec::new();
        for ratio in [0.1, 0.3, 0.5] {
            let mut mrng = Rng::new(seed ^ 0x4D49_5353);
            let corrupted = simulate_point_missing(base, ratio, &mut mrng).unwrap();
            let prepared = prepare(&corrupted, [0.6, 0.2, 0.2]).unwrap();
            let mut rng = Rng::new(seed);
            let mut model = MkhNet::<f64>::new(
                bench_config(20, 12, LossKind::Mae, true),
                g.clone(),
                &mut rng,
            )
            .unwrap();
            let tcfg =
                TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
            train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
            maes.push(evaluate(&model, &prepared, Split::Test, 64).unwrap().metrics.mae);
        }
        let eps = 0.05 * maes[0];
        let ok = maes[0] <= maes[1] + eps && maes[1] + eps <= maes[2] + 2.0 * eps;
        if ok {
            holds += 1;
        }
        detail.push_str(&format!(
            "seed {seed}: 10% {:.4} / 30% {:.4} / 50% {:.4} ({}); ",
            maes[0],
            maes[1],
            maes[2],
            if ok { "monotone" } else { "violated" }
        ));
    }
    assert!(holds >= 2, "missingness monotone on {holds}/3 seeds: {detail}");
    println!(
        "[acceptance] criterion 6 (missingness monotonicity): PASS - {holds}/3 seeds; {detail}"
    );
}

// ---- criterion 7: uncertainty calibration -----------------------------------

#[test]
fn criterion_7_uncertainty_calibration() {
    // NLL at mu = target, variance = 1 is exactly zero
    let mut t = Tape::<f64>::new();
    let target = Array::new(vec![2, 2], vec![1.5, -0.5, 3.0, 0.0]).unwrap();
    let mu = t.leaf(target.clone()).unwrap();
    let var = t.leaf(Array::full(vec![2, 2], 1.0)).unwrap();
    let mask = BoolArray::filled(vec![2, 2], true);
    let nll = gaussian_nll_loss(&mut t, mu, var, &target, &mask).unwrap();
    assert_eq!(t.value(nll).item().unwrap(), 0.0, "NLL at exact fit, unit variance");

    // known noise 0.5: the 1-step conditional noise is exactly sigma_0, so
    // calibration is judged on a 1-step horizon
    let n = 10;
    let g = bench_graph(n, 700);
    let ds = make_synthetic::<f64>(n, 2500, &g, 0.5, 1.0, &mut Rng::new(701)).unwrap();
    let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
    let mut rng = Rng::new(42);
    let mut model =
        MkhNet::<f64>::new(bench_config(n, 1, LossKind::GaussianNll, true), g, &mut rng).unwrap();
    let tcfg = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
    train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
    let out = evaluate(&model, &prepared, Split::Test, 64).unwrap();
    let mut sigmas = out.sigmas.expect("nll model emits sigmas");
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sigmas[sigmas.len() / 2];
    assert!(
        (0.4..=0.625).contains(&median),
        "median predicted sigma {median} outside [0.4, 0.625]"
    );
    println!(
        "[acceptance] criterion 7 (uncertainty calibration): PASS - median sigma {median:.4} \
         in [0.4, 0.625], exact-fit NLL = 0"
    );
}

// ---- criterion 8: protocol conformance --------------------------------------

#[test]
fn criterion_8_protocol_conformance() {
    // scheduler: exactly five stagnant epochs halve 1e-3 to 5e-4
    let mut s = PlateauScheduler::new(5, 0.5, 1e-6);
    let mut lr = 1e-3;
    lr = s.observe(1.0, lr);
    for _ in 0..4 {
        lr = s.observe(1.0, lr);
        assert_eq!(lr, 1e-3, "halved too early");
    }
    lr = s.observe(1.0, lr);
    assert_eq!(lr, 5e-4, "must halve after exactly 5 stagnant epochs");

    // split boundaries
    let ds100 = MtsDataset::<f64> {
        values: Array::zeros(vec![1, 100]),
        mask: BoolArray::filled(vec![1, 100], true),
        variable_names: vec!["v".into()],
        granularity: String::new(),
    };
    let s622 = chronological_split(&ds100, [0.6, 0.2, 0.2]).unwrap();
    assert_eq!(
        (s622.segment(Split::Train), s622.segment(Split::Validation), s622.segment(Split::Test)),
        (0..60, 60..80, 80..100)
    );
    let s712 = chronological_split(&ds100, [0.7, 0.1, 0.2]).unwrap();
    assert_eq!(
        (s712.segment(Split::Train), s712.segment(Split::Validation), s712.segment(Split::Test)),
        (0..70, 70..80, 80..100)
    );

    // metric oracle on the hand-computed example
    let mut acc = MetricsAccumulator::new(2);
    acc.add(
        &Array::new(vec![1, 2], vec![110.0, 180.0]).unwrap(),
        &Array::new(vec![1, 2], vec![100.0, 200.0]).unwrap(),
        &BoolArray::filled(vec![1, 2], true),
    );
    let m = acc.finalize().unwrap();
    assert!((m.mae - 15.0).abs() < 1e-12);
    assert!((m.rmse - 250.0f64.sqrt()).abs() < 1e-12);
    assert!((m.mape - 10.0).abs() < 1e-12);

    println!(
        "[acceptance] criterion 8 (protocol conformance): PASS - scheduler 1e-3 -> 5e-4 \
         after 5 stagnant epochs; splits 6/2/2 and 7/1/2 exact; MAE 15 / RMSE {:.4} / MAPE 10%",
        m.rmse
    );
}

// ---- criterion 9: determinism ------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let n = 8;
    let g = bench_graph(n, 900);
    let ds = make_synthetic::<f64>(n, 260, &g, 0.1, 1.0, &mut Rng::new(901)).unwrap();

    let run = |seed: u64| -> (Vec<u8>, String) {
        let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
        let mut rng = Rng::new(seed);
        let cfg = ModelConfig {
            n_nodes: n,
            tau: 6,
            upsilon: 4,
            d: 8,
            m_hyperedges: 4,
            k_patches: 2,
            p_hops: 1,
            hgat_heads: 2,
            hgat_layers: 1,
            hgt_heads: 2,
            hgt_layers: 1,
            dropout: 0.1,
            gamma: 0.05,
            hard_sampling: true,
            ln_eps: 1e-5,
            loss_kind: LossKind::Mae,
            spatial: true,
        };
        let mut model = MkhNet::<f64>::new(cfg, g.clone(), &mut rng).unwrap();
        let tcfg = TrainConfig { epochs: 3, batch_size: 16, lr: 1e-3, ..TrainConfig::default() };
        train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
        let ck = Checkpoint::<f64> {
            config_text: "seed snapshot".into(),
            n_nodes: n,
            params: model.params.clone(),
            stats: NormalizationStats {
                mean: prepared.stats.mean.clone(),
                std: prepared.stats.std.clone(),
            },
            seed,
        };
        // forecast CSV from the final look-back window
        let t_total = prepared.normalized.cols();
        let mut window = Array::zeros(vec![n, 6]);
        for v in 0..n {
            for k in 0..6 {
                window.set2(v, k, prepared.normalized.at2(v, t_total - 6 + k));
            }
        }
        let mut tape = Tape::<f64>::new();
        let bound = model.bind(&mut tape).unwrap();
        let mut eval_rng = Rng::new(0);
        let structure =
            model.sample_structure(&mut tape, &bound, Mode::Eval, &mut eval_rng).unwrap();
        let fwd = model
            .forward_window(&mut tape, &bound, &structure, &window, Mode::Eval, &mut eval_rng)
            .unwrap();
        let pred =
            mkhnet_core::dataset::invert_normalizer(tape.value(fwd.point), &prepared.stats);
        let mut csv = String::new();
        for v in 0..n {
            for h in 0..4 {
                csv.push_str(&format!("{:?},", pred.at2(v, h)));
            }
            csv.push('\n');
        }
        (ck.to_bytes(), csv)
    };

    let (ck_a, fc_a) = run(31);
    let (ck_b, fc_b) = run(31);
    let (ck_c, fc_c) = run(32);
    assert_eq!(ck_a, ck_b, "identical seeds must give bitwise-identical checkpoints");
    assert_eq!(fc_a, fc_b, "identical seeds must give identical forecast CSVs");
    assert!(ck_a != ck_c || fc_a != fc_c, "different seeds should diverge");
    println!(
        "[acceptance] criterion 9 (determinism): PASS - {} checkpoint bytes and {} forecast \
         chars identical across reruns",
        ck_a.len(),
        fc_a.len()
    );
}
