use mkhnet_core::dataset::{make_synthetic, simulate_point_missing, Split};
use mkhnet_core::graph::ExplicitGraph;
use mkhnet_core::model::{LossKind, MkhNet, ModelConfig};
use mkhnet_core::rng::Rng;
use mkhnet_core::training::{evaluate, prepare, train, TrainConfig};

fn graph(n: usize, seed: u64) -> ExplicitGraph {
    let mut rng = Rng::new(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n / 2 {
        let u = rng.index(n); let v = rng.index(n);
        if u != v { edges.push((u.min(v), u.max(v))); }
    }
    ExplicitGraph::new(n, edges).unwrap()
}

fn cfg(n: usize, d: usize, upsilon: usize, loss: LossKind, spatial: bool) -> ModelConfig {
    ModelConfig { n_nodes: n, tau: 12, upsilon, d, m_hyperedges: 8, k_patches: 4, p_hops: 2,
        hgat_heads: 4, hgat_layers: 1, hgt_heads: 4, hgt_layers: 2, dropout: 0.1, gamma: 0.05,
        hard_sampling: true, ln_eps: 1e-5, loss_kind: loss, spatial }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "c5" || which.is_empty() {
        // ablation over 3 seeds
        let n = 20;
        let g = graph(n, 500);
        let ds = make_synthetic::<f64>(n, 2000, &g, 0.1, 1.0, &mut Rng::new(501)).unwrap();
        let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
        for seed in [42u64, 43, 44] {
            let mut res = vec![];
            for spatial in [true, false] {
                let mut rng = Rng::new(seed);
                let mut model = MkhNet::<f64>::new(cfg(n, 12, 12, LossKind::Mae, spatial), g.clone(), &mut rng).unwrap();
                let tcfg = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
                train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
                let m = evaluate(&model, &prepared, Split::Test, 64).unwrap().metrics;
                res.push(m.mae);
            }
            println!("c5 seed {seed}: full {:.4} ablated {:.4} ablated>=full {}", res[0], res[1], res[1] >= res[0]);
        }
    }
    if which == "c6" || which.is_empty() {
        let n = 20;
        let g = graph(n, 500);
        let base = make_synthetic::<f64>(n, 2000, &g, 0.1, 1.0, &mut Rng::new(501)).unwrap();
        for seed in [42u64, 43, 44] {
            let mut maes = vec![];
            for ratio in [0.1, 0.3, 0.5] {
                let mut mrng = Rng::new(seed ^ 0x4D495353);
                let ds = simulate_point_missing(&base, ratio, &mut mrng).unwrap();
                let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
                let mut rng = Rng::new(seed);
                let mut model = MkhNet::<f64>::new(cfg(n, 12, 12, LossKind::Mae, true), g.clone(), &mut rng).unwrap();
                let tcfg = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
                train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
                let m = evaluate(&model, &prepared, Split::Test, 64).unwrap().metrics;
                maes.push(m.mae);
            }
            let eps = 0.05 * maes[0];
            let ok = maes[0] <= maes[1] + eps && maes[1] <= maes[2] + eps;
            println!("c6 seed {seed}: 10% {:.4} 30% {:.4} 50% {:.4} monotone(eps {:.4}) {}", maes[0], maes[1], maes[2], eps, ok);
        }
    }
    if which == "c7" || which.is_empty() {
        // NLL calibration: 1-step horizon, known noise 0.5
        let n = 10;
        let g = graph(n, 700);
        let ds = make_synthetic::<f64>(n, 2500, &g, 0.5, 1.0, &mut Rng::new(701)).unwrap();
        let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();
        let mut rng = Rng::new(42);
        let mut model = MkhNet::<f64>::new(cfg(n, 12, 1, LossKind::GaussianNll, true), g.clone(), &mut rng).unwrap();
        let tcfg = TrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
        train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
        let out = evaluate(&model, &prepared, Split::Test, 64).unwrap();
        let mut sigmas = out.sigmas.unwrap();
        sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sigmas[sigmas.len() / 2];
        println!("c7: test MAE {:.4} median sigma {:.4} in [0.4,0.625] {}", out.metrics.mae, median, (0.4..=0.625).contains(&median));
    }
}
