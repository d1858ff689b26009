//! Verification helpers shared by the gradient and acceptance test suites:
//! a fixed 5-node toy architecture and an end-to-end central-difference
//! check over every parameter of the composed model.

use crate::array::{Array, BoolArray};
use crate::autodiff::{grad_check, ParamMap, Tape};
use crate::error::Result;
use crate::graph::ExplicitGraph;
use crate::model::{bind_map, hgi, LossKind, MkhNet, Mode, ModelConfig};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};
use crate::training::{gaussian_nll_loss, mae_loss};

/// The 5-node toy: d=4, m=3, k=2, p=1, tau=upsilon=4. Soft sampling and a
/// moderate temperature keep every path differentiable.
pub fn toy_config(loss_kind: LossKind) -> ModelConfig {
    ModelConfig {
        n_nodes: 5,
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
        gamma: 0.5,
        hard_sampling: false,
        ln_eps: 1e-5,
        loss_kind,
        spatial: true,
    }
}

pub fn toy_graph() -> ExplicitGraph {
    ExplicitGraph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap()
}

/// Gumbel noise whose channel gaps stay away from the 0.5 support
/// threshold, so a finite-difference step cannot flip an attention mask.
pub fn safe_noise<F: Scalar>(model: &MkhNet<F>, rng: &mut Rng) -> (Array<F>, Array<F>) {
    let (n, m) = (model.cfg.n_nodes, model.cfg.m_hyperedges);
    'outer: for _ in 0..100 {
        let noise = hgi::draw_gumbel_noise::<F>(n, m, rng);
        let mut tape = Tape::<F>::new();
        let bound = bind_map(&mut tape, &model.params).expect("bind");
        let sim =
            hgi::pairwise_similarity(&mut tape, bound.id("hgi.z_node"), bound.id("hgi.z_edge"))
                .expect("similarity");
        let (p0, p1) = hgi::hyperedge_probabilities(&mut tape, sim).expect("probabilities");
        let gap = tape
            .value(p0)
            .zip(tape.value(p1), |a, b| a - b)
            .expect("same shape");
        for (g, (&g0, &g1)) in gap
            .data()
            .iter()
            .zip(noise.0.data().iter().zip(noise.1.data()))
        {
            if (*g + g0 - g1).abs() < lit(0.05) {
                continue 'outer;
            }
        }
        return noise;
    }
    panic!("no safe noise draw found");
}

/// Max relative gradient error of the full composed model (structure
/// inference, all spatial branches, fusion, head, loss) against central
/// finite differences at the given step.
pub fn full_model_grad_err<F: Scalar>(loss_kind: LossKind, seed: u64, eps: F) -> Result<F> {
    let cfg = toy_config(loss_kind);
    let mut rng = Rng::new(seed);
    let model = MkhNet::<F>::new(cfg.clone(), toy_graph(), &mut rng)?;

    let normal_mat = |rows: usize, cols: usize, rng: &mut Rng| -> Array<F> {
        let data: Vec<F> = (0..rows * cols).map(|_| lit(rng.normal())).collect();
        Array::new(vec![rows, cols], data).expect("shape")
    };
    let window = normal_mat(5, 4, &mut rng);
    let target = normal_mat(5, 4, &mut rng);
    let mask = BoolArray::filled(vec![5, 4], true);
    let noise = safe_noise(&model, &mut rng);

    let model_ref = &model;
    let build = |p: &ParamMap<F>, tape: &mut Tape<F>| {
        let bound = bind_map(tape, p)?;
        let sim =
            hgi::pairwise_similarity(tape, bound.id("hgi.z_node"), bound.id("hgi.z_edge"))?;
        let (p0, p1) = hgi::hyperedge_probabilities(tape, sim)?;
        let structure =
            hgi::gumbel_sample_incidence(tape, p0, p1, lit(cfg.gamma), false, Some(&noise))?;
        let mut eval_rng = Rng::new(0);
        let out = model_ref.forward_window(
            tape,
            &bound,
            &structure,
            &window,
            Mode::Eval,
            &mut eval_rng,
        )?;
        let loss = match cfg.loss_kind {
            LossKind::Mae => mae_loss(tape, out.point, &target, &mask)?,
            LossKind::GaussianNll => {
                let var = out.variance.expect("nll head");
                gaussian_nll_loss(tape, out.point, var, &target, &mask)?
            }
        };
        Ok((loss, bound.ids().clone()))
    };
    grad_check(&build, &model.params, eps)
}
