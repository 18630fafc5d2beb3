mod common;

use common::{loss_grad_error, LossKind, ALL_LOSSES, GRAD_SEEDS, GRAD_TOL};

fn check(kind: LossKind) {
    for seed in 0..GRAD_SEEDS {
        let err = loss_grad_error(kind, seed);
        assert!(err < GRAD_TOL, "{kind:?} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn custom_ae_gradient() {
    check(LossKind::CustomAe);
}

#[test]
fn contractive_gradient() {
    check(LossKind::Contractive);
}

#[test]
fn beta_vae_gradient() {
    check(LossKind::BetaVae);
}

#[test]
fn triplet_gradient() {
    check(LossKind::Triplet);
}

#[test]
fn hybrid1_gradient() {
    check(LossKind::Hybrid1);
}

#[test]
fn hybrid2_gradient() {
    check(LossKind::Hybrid2);
}

#[test]
fn embedding_arch_gradient() {
    check(LossKind::EmbeddingArch);
}

#[test]
fn regressor_gradient() {
    check(LossKind::RegressorMse);
}

#[test]
fn every_loss_is_covered() {
    assert_eq!(ALL_LOSSES.len(), 8);
}

#[test]
fn triplet_ignores_shared_shift() {
    for seed in 0..GRAD_SEEDS {
        let g = common::triplet_shift_gradient(seed);
        assert!(g < 1e-12, "seed {seed}: {g:e}");
    }
}
