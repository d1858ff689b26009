//! The forecasting network: GLU projection, three spatial encoders
//! (implicit hypergraph, explicit subgraph, dual hypergraph), gated
//! mixture-of-experts fusion and the temporal head.

pub mod hgi;
pub mod hgrl;
pub mod projection;
pub mod sgrl;
pub mod temporal;

use std::collections::BTreeMap;

use crate::array::{Array, BoolArray};
use crate::autodiff::{ParamMap, Tape, VarId};
use crate::error::{Error, Result};
use crate::graph::{self, ExplicitGraph, SubgraphPatch};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

/// Training objective; also selects which readout head exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mae,
    GaussianNll,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::GaussianNll => "nll",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "nll" | "gaussian_nll" => Ok(LossKind::GaussianNll),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Forward-pass mode. Train samples Gumbel noise and applies dropout;
/// Eval thresholds the structure deterministically and disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub tau: usize,
    pub upsilon: usize,
    /// Embedding width d shared by every branch.
    pub d: usize,
    pub m_hyperedges: usize,
    pub k_patches: usize,
    pub p_hops: usize,
    pub hgat_heads: usize,
    pub hgat_layers: usize,
    pub hgt_heads: usize,
    pub hgt_layers: usize,
    pub dropout: f64,
    /// Gumbel-softmax temperature.
    pub gamma: f64,
    /// Straight-through hard sampling during training.
    pub hard_sampling: bool,
    pub ln_eps: f64,
    pub loss_kind: LossKind,
    /// When false the three spatial branches pass the projected features
    /// through unchanged (the "without spatial inference" ablation).
    pub spatial: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.tau == 0 || self.upsilon == 0 || self.d == 0 {
            return Err(Error::Config("n, tau, upsilon and d must be positive".into()));
        }
        if self.m_hyperedges == 0 {
            return Err(Error::Config("need at least one hyperedge".into()));
        }
        if self.k_patches == 0 || self.k_patches > self.n_nodes {
            return Err(Error::Config(format!(
                "k_patches {} outside 1..={}",
                self.k_patches, self.n_nodes
            )));
        }
        if self.hgat_heads == 0 || self.hgt_heads == 0 {
            return Err(Error::Config("head counts must be positive".into()));
        }
        if !self.d.is_multiple_of(self.hgt_heads) {
            return Err(Error::Config(format!(
                "embedding size {} not divisible by {} attention heads",
                self.d, self.hgt_heads
            )));
        }
        if self.p_hops == 0 {
            return Err(Error::Config("p_hops must be at least 1".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("gumbel temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameter ids bound onto one tape for a forward pass.
pub struct BoundParams {
    ids: BTreeMap<String, VarId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> VarId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn ids(&self) -> &BTreeMap<String, VarId> {
        &self.ids
    }
}

/// Discrete structure drawn for one forward pass.
pub struct StructureSample {
    /// Incidence on the tape: hard 0/1 forward values with straight-through
    /// gradients (or the soft relaxation when hard sampling is off).
    pub incidence: VarId,
    /// Hard membership used as the attention support set.
    pub support: BoolArray,
}

/// Everything a forward pass produces for one window.
pub struct ForwardOutput {
    /// n x upsilon point forecast (the mean head under the NLL objective).
    pub point: VarId,
    /// n x upsilon predicted variance; present only for NLL models.
    pub variance: Option<VarId>,
    /// Mixture-of-experts gate values, n x d.
    pub moe_gate: VarId,
    /// Per-head intra-edge attention (m x n), implicit branch, final layer.
    pub alphas: Vec<VarId>,
    /// Per-head inter-edge attention (n x m), implicit branch, final layer.
    pub betas: Vec<VarId>,
}

/// The full network: configuration, named parameters, and the static graph
/// structures shared by every forward pass.
pub struct MkhNet<F: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamMap<F>,
    pub graph: ExplicitGraph,
    pub patches: Vec<SubgraphPatch>,
    patch_adj: Vec<Array<F>>,
    /// 1 / (number of patches covering each node), replicated across d.
    pool_weights: Array<F>,
    /// |E| x |V| dual incidence (transpose of the source incidence).
    dual_incidence: BoolArray,
    edge_endpoints: (Vec<usize>, Vec<usize>),
}

impl<F: Scalar> MkhNet<F> {
    pub fn new(cfg: ModelConfig, graph: ExplicitGraph, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if graph.n_nodes != cfg.n_nodes {
            return Err(Error::Config(format!(
                "graph has {} nodes, config wants {}",
                graph.n_nodes, cfg.n_nodes
            )));
        }
        if graph.n_edges() == 0 {
            return Err(Error::Structure(
                "explicit graph needs at least one edge for the dual branch".into(),
            ));
        }
        let params = init_params(&cfg, rng);
        Self::with_params(cfg, graph, params)
    }

    /// Rebuild a model around existing parameter values (checkpoint load).
    pub fn with_params(
        cfg: ModelConfig,
        graph: ExplicitGraph,
        params: ParamMap<F>,
    ) -> Result<Self> {
        cfg.validate()?;
        let patches = graph::extract_patches(&graph, cfg.k_patches, cfg.p_hops)?;
        let patch_adj: Vec<Array<F>> =
            patches.iter().map(graph::patch_normalized_adjacency).collect();

        let mut counts = vec![0usize; graph.n_nodes];
        for p in &patches {
            for &u in &p.expanded_nodes {
                counts[u] += 1;
            }
        }
        // cores cover every node, so no count can be zero
        debug_assert!(counts.iter().all(|&c| c > 0));
        let mut pool_weights = Array::zeros(vec![graph.n_nodes, cfg.d]);
        for (u, &c) in counts.iter().enumerate() {
            for j in 0..cfg.d {
                pool_weights.set2(u, j, F::one() / lit::<F>(c as f64));
            }
        }

        let dual_incidence = graph.incidence().transpose();
        let edge_endpoints = (
            graph.edges.iter().map(|&(u, _)| u).collect(),
            graph.edges.iter().map(|&(_, v)| v).collect(),
        );
        Ok(MkhNet {
            cfg,
            params,
            graph,
            patches,
            patch_adj,
            pool_weights,
            dual_incidence,
            edge_endpoints,
        })
    }

    /// Register every parameter on a fresh tape.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<BoundParams> {
        bind_map(tape, &self.params)
    }

    /// Draw the hypergraph structure for one forward pass (one sample per
    /// tape; every window in a batch shares it).
    pub fn sample_structure(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<StructureSample> {
        let sim = hgi::pairwise_similarity(tape, bound.id("hgi.z_node"), bound.id("hgi.z_edge"))?;
        let (p0, p1) = hgi::hyperedge_probabilities(tape, sim)?;
        let noise = match mode {
            Mode::Train => Some(hgi::draw_gumbel_noise(
                self.cfg.n_nodes,
                self.cfg.m_hyperedges,
                rng,
            )),
            Mode::Eval => None,
        };
        hgi::gumbel_sample_incidence(
            tape,
            p0,
            p1,
            lit(self.cfg.gamma),
            self.cfg.hard_sampling,
            noise.as_ref(),
        )
    }

    /// Full forward pass for one look-back window (n x tau, normalized).
    pub fn forward_window(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        structure: &StructureSample,
        window: &Array<F>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        if window.shape() != [self.cfg.n_nodes, self.cfg.tau] {
            return Err(Error::Shape {
                op: "forward_window",
                detail: format!(
                    "window {:?}, expected [{}, {}]",
                    window.shape(),
                    self.cfg.n_nodes,
                    self.cfg.tau
                ),
            });
        }
        let x = tape.leaf(window.clone())?;
        let x_bar = projection::glu_project(
            tape,
            x,
            bound.id("proj.w0"),
            bound.id("proj.w1"),
            bound.id("proj.w2"),
        )?;

        let (h_imp, h_sub, h_dht, alphas, betas) = if self.cfg.spatial {
            let hgat = hgrl::hgat_encode(tape, bound, x_bar, structure, &self.cfg, mode, rng)?;
            let h_hgt = hgrl::hgt_encode(tape, bound, x_bar, &self.cfg)?;
            let h_imp = hgrl::fuse_imp(
                tape,
                h_hgt,
                hgat.h_nodes,
                bound.id("fuse.fs"),
                bound.id("fuse.fg"),
            )?;
            let h_sub = sgrl::encode(
                tape,
                bound,
                x_bar,
                &self.patches,
                &self.patch_adj,
                &self.pool_weights,
                &self.cfg,
            )?;
            let h_dht = hgrl::encode_dual(
                tape,
                bound,
                x_bar,
                &self.edge_endpoints,
                &self.dual_incidence,
                &self.cfg,
            )?;
            (h_imp, h_sub, h_dht, hgat.alphas, hgat.betas)
        } else {
            (x_bar, x_bar, x_bar, Vec::new(), Vec::new())
        };

        let (h, gate) = temporal::moe_fuse(
            tape,
            h_imp,
            h_sub,
            h_dht,
            bound.id("moe.fs"),
            bound.id("moe.fg"),
        )?;
        let feats = temporal::conv_stack(tape, h, bound.id("temp.conv1"))?;

        let (point, variance) = match self.cfg.loss_kind {
            LossKind::Mae => {
                let p = temporal::point_forecast(tape, feats, bound.id("temp.conv2"))?;
                (p, None)
            }
            LossKind::GaussianNll => {
                let (mu, var) = temporal::uncertainty_forecast(
                    tape,
                    feats,
                    bound.id("temp.unc"),
                    self.cfg.upsilon,
                )?;
                (mu, Some(var))
            }
        };

        Ok(ForwardOutput { point, variance, moe_gate: gate, alphas, betas })
    }

    pub fn patch_adjacencies(&self) -> &[Array<F>] {
        &self.patch_adj
    }

    pub fn pool_weights_ref(&self) -> &Array<F> {
        &self.pool_weights
    }

    #[cfg(test)]
    pub(crate) fn shuffle_patches_for_test(&mut self) {
        self.patches.reverse();
        self.patch_adj.reverse();
    }

    /// Deterministic hard incidence from the learned embeddings (no noise).
    pub fn eval_incidence(&self) -> Result<BoolArray> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let s = self.sample_structure(&mut tape, &bound, Mode::Eval, &mut Rng::new(0))?;
        Ok(s.support)
    }
}

/// Register arbitrary parameter values on a tape (used by gradient checks,
/// which rebuild the forward pass from perturbed copies).
pub fn bind_map<F: Scalar>(tape: &mut Tape<F>, params: &ParamMap<F>) -> Result<BoundParams> {
    let mut ids = BTreeMap::new();
    for (name, value) in params {
        ids.insert(name.clone(), tape.leaf(value.clone())?);
    }
    Ok(BoundParams { ids })
}

/// Glorot-uniform matrix; draws consumed row-major.
fn glorot<F: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Array<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<F> = (0..rows * cols).map(|_| lit(rng.uniform_in(-limit, limit))).collect();
    Array::new(vec![rows, cols], data).expect("glorot shape")
}

/// Standard normal scaled by 1/sqrt(d).
fn embedding_init<F: Scalar>(rows: usize, d: usize, rng: &mut Rng) -> Array<F> {
    let scale = 1.0 / (d as f64).sqrt();
    let data: Vec<F> = (0..rows * d).map(|_| lit(rng.normal() * scale)).collect();
    Array::new(vec![rows, d], data).expect("embedding shape")
}

/// Create all trainable parameters. Draw order is fixed by this function,
/// so a seed pins the whole initialization.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, rng: &mut Rng) -> ParamMap<F> {
    let (d, tau, upsilon) = (cfg.d, cfg.tau, cfg.upsilon);
    let mut p = ParamMap::new();
    let put = |map: &mut ParamMap<F>, name: String, value: Array<F>| {
        map.insert(name, value);
    };

    put(&mut p, "proj.w0".into(), glorot(tau, d, rng));
    put(&mut p, "proj.w1".into(), glorot(tau, d, rng));
    put(&mut p, "proj.w2".into(), glorot(d, d, rng));

    put(&mut p, "hgi.z_node".into(), embedding_init(cfg.n_nodes, d, rng));
    put(&mut p, "hgi.z_edge".into(), embedding_init(cfg.m_hyperedges, d, rng));

    for l in 0..cfg.hgat_layers {
        for z in 0..cfg.hgat_heads {
            put(&mut p, format!("hgat.l{l}.h{z}.w0"), glorot(d, d, rng));
            put(&mut p, format!("hgat.l{l}.h{z}.w1"), glorot(d, d, rng));
            put(&mut p, format!("hgat.l{l}.h{z}.w2"), glorot(d, d, rng));
            put(&mut p, format!("hgat.l{l}.h{z}.w3"), glorot(2 * d, 1, rng));
        }
        put(&mut p, format!("hgat.l{l}.fs"), glorot(d, d, rng));
        put(&mut p, format!("hgat.l{l}.fg"), glorot(d, d, rng));
    }

    let dh = d / cfg.hgt_heads;
    for l in 0..cfg.hgt_layers {
        for z in 0..cfg.hgt_heads {
            put(&mut p, format!("hgt.l{l}.h{z}.wq"), glorot(d, dh, rng));
            put(&mut p, format!("hgt.l{l}.h{z}.wk"), glorot(d, dh, rng));
            put(&mut p, format!("hgt.l{l}.h{z}.wv"), glorot(d, dh, rng));
        }
        put(&mut p, format!("hgt.l{l}.wo"), glorot(d, d, rng));
        put(&mut p, format!("hgt.l{l}.mlp.w1"), glorot(d, 4 * d, rng));
        put(&mut p, format!("hgt.l{l}.mlp.b1"), Array::zeros(vec![1, 4 * d]));
        put(&mut p, format!("hgt.l{l}.mlp.w2"), glorot(4 * d, d, rng));
        put(&mut p, format!("hgt.l{l}.mlp.b2"), Array::zeros(vec![1, d]));
        put(&mut p, format!("hgt.l{l}.ln1.gain"), Array::full(vec![1, d], F::one()));
        put(&mut p, format!("hgt.l{l}.ln1.bias"), Array::zeros(vec![1, d]));
        put(&mut p, format!("hgt.l{l}.ln2.gain"), Array::full(vec![1, d], F::one()));
        put(&mut p, format!("hgt.l{l}.ln2.bias"), Array::zeros(vec![1, d]));
    }

    put(&mut p, "fuse.fs".into(), glorot(d, d, rng));
    put(&mut p, "fuse.fg".into(), glorot(d, d, rng));

    for z in 0..cfg.hgat_heads {
        put(&mut p, format!("dual.h{z}.w0"), glorot(d, d, rng));
    }

    for l in 0..cfg.p_hops {
        put(&mut p, format!("sgrl.l{l}.w"), glorot(d, d, rng));
    }

    put(&mut p, "moe.fs".into(), glorot(d, d, rng));
    put(&mut p, "moe.fg".into(), glorot(d, d, rng));

    put(&mut p, "temp.conv1".into(), glorot(d, d, rng));
    match cfg.loss_kind {
        LossKind::Mae => put(&mut p, "temp.conv2".into(), glorot(d, upsilon, rng)),
        LossKind::GaussianNll => put(&mut p, "temp.unc".into(), glorot(d, 2 * upsilon, rng)),
    }
    p
}

/// Ready-made small architectures for oracle and acceptance tests.
pub mod test_support {
    use super::{LossKind, ModelConfig};

    /// Minimal config for driving single blocks; `d` must be even.
    pub fn oracle_config(n: usize, m: usize, d: usize) -> ModelConfig {
        ModelConfig {
            n_nodes: n,
            tau: 4,
            upsilon: 4,
            d,
            m_hyperedges: m,
            k_patches: 1.max(n / 2),
            p_hops: 1,
            hgat_heads: 2,
            hgat_layers: 1,
            hgt_heads: 2,
            hgt_layers: 2,
            dropout: 0.0,
            gamma: 0.05,
            hard_sampling: true,
            ln_eps: 1e-5,
            loss_kind: LossKind::Mae,
            spatial: true,
        }
    }
}

#[cfg(test)]
pub(crate) fn test_config(n: usize, loss_kind: LossKind) -> ModelConfig {
    ModelConfig {
        n_nodes: n,
        tau: 4,
        upsilon: 4,
        d: 4,
        m_hyperedges: 3,
        k_patches: 2,
        p_hops: 1,
        hgat_heads: 2,
        hgat_layers: 1,
        hgt_heads: 2,
        hgt_layers: 2,
        dropout: 0.0,
        gamma: 0.05,
        hard_sampling: true,
        ln_eps: 1e-5,
        loss_kind,
        spatial: true,
    }
}
