//! End-to-end gradient verification: the complete network (structure
//! inference, all three spatial branches, fusion, temporal head, loss) is
//! checked against central finite differences on a 5-node toy.

use mkhnet_core::array::{Array, BoolArray};
use mkhnet_core::autodiff::{grad_check, Tape};
use mkhnet_core::model::{bind_map, hgi, init_params, LossKind, MkhNet, Mode};
use mkhnet_core::rng::Rng;
use mkhnet_core::training::mae_loss;
use mkhnet_core::verify::{full_model_grad_err, toy_config, toy_graph};

// step 1e-4: large enough that rounding noise stays below the 1e-8
// relative-error floor on near-zero coordinates, small enough that no ReLU
// kink falls inside the central-difference window at this seed
const FD_STEP: f64 = 1e-4;

#[test]
fn full_model_mae_gradients_match_finite_differences() {
    let err = full_model_grad_err::<f64>(LossKind::Mae, 7, FD_STEP).unwrap();
    assert!(err < 1e-4, "full model (MAE) max rel err {err}");
}

#[test]
fn full_model_nll_gradients_match_finite_differences() {
    let err = full_model_grad_err::<f64>(LossKind::GaussianNll, 7, FD_STEP).unwrap();
    assert!(err < 1e-4, "full model (NLL) max rel err {err}");
}

#[test]
fn ablated_model_gradients_match_finite_differences() {
    // spatial branches disabled: projection feeds the head directly
    let mut cfg = toy_config(LossKind::Mae);
    cfg.spatial = false;
    let mut rng = Rng::new(77);
    let params = init_params::<f64>(&cfg, &mut rng);
    let model = MkhNet::<f64>::with_params(cfg.clone(), toy_graph(), params).unwrap();
    let window =
        Array::new(vec![5, 4], (0..20).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap();
    let target =
        Array::new(vec![5, 4], (0..20).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap();
    let mask = BoolArray::filled(vec![5, 4], true);

    let model_ref = &model;
    let window_ref = &window;
    let target_ref = &target;
    let mask_ref = &mask;
    let build = move |p: &mkhnet_core::autodiff::ParamMap<f64>, tape: &mut Tape<f64>| {
        let bound = bind_map(tape, p)?;
        let sim =
            hgi::pairwise_similarity(tape, bound.id("hgi.z_node"), bound.id("hgi.z_edge"))?;
        let (p0, p1) = hgi::hyperedge_probabilities(tape, sim)?;
        let structure = hgi::gumbel_sample_incidence(tape, p0, p1, cfg.gamma, false, None)?;
        let mut eval_rng = Rng::new(0);
        let out = model_ref.forward_window(
            tape,
            &bound,
            &structure,
            window_ref,
            Mode::Eval,
            &mut eval_rng,
        )?;
        let loss = mae_loss(tape, out.point, target_ref, mask_ref)?;
        Ok((loss, bound.ids().clone()))
    };
    let err = grad_check(&build, &model.params, 1e-5).unwrap();
    assert!(err < 1e-4, "ablated model max rel err {err}");
}
