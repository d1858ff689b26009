use mkhnet_core::dataset::{make_synthetic, Split};
use mkhnet_core::graph::ExplicitGraph;
use mkhnet_core::model::{LossKind, MkhNet, ModelConfig};
use mkhnet_core::rng::Rng;
use mkhnet_core::training::{evaluate, historical_average_baseline, prepare, train, TrainConfig};
use std::time::Instant;

fn main() {
    let n = 20usize;
    let mut grng = Rng::new(500);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n / 2 {
        let u = grng.index(n); let v = grng.index(n);
        if u != v { edges.push((u.min(v), u.max(v))); }
    }
    let g = ExplicitGraph::new(n, edges).unwrap();
    let ds = make_synthetic::<f64>(n, 2000, &g, 0.1, 1.0, &mut grng).unwrap();
    let prepared = prepare(&ds, [0.6, 0.2, 0.2]).unwrap();

    let d = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(12);
    let epochs = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(30);
    let cfg = ModelConfig { n_nodes: n, tau: 12, upsilon: 12, d, m_hyperedges: 8, k_patches: 4, p_hops: 2,
        hgat_heads: 4, hgat_layers: 1, hgt_heads: 4, hgt_layers: 2, dropout: 0.1, gamma: 0.05,
        hard_sampling: true, ln_eps: 1e-5, loss_kind: LossKind::Mae, spatial: true };
    let mut rng = Rng::new(42);
    let mut model = MkhNet::<f64>::new(cfg, g, &mut rng).unwrap();
    let tcfg = TrainConfig { epochs, batch_size: 32, lr: 1e-3, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&mut model, &prepared, &tcfg, &mut rng).unwrap();
    let train_time = t0.elapsed();
    let test = evaluate(&model, &prepared, Split::Test, 64).unwrap().metrics;
    let ha = historical_average_baseline(&prepared, Split::Test, 12, 12).unwrap();
    let h = &out.history;
    println!("d={d} epochs={} time={:.1}s val0={:.4} best_val={:.4} test_mae={:.4} ha_mae={:.4} ratio={:.3}",
        h.len()-1, train_time.as_secs_f64(), h[0].val_mae, out.best_val_mae, test.mae, ha.mae,
        out.best_val_mae / h[0].val_mae);
}
