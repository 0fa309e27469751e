//! Reverse-mode gradients against central finite differences.

mod common;

use common::gradcheck::*;

fn check(path: fn() -> f64, label: &str) {
    let worst = path();
    assert!(worst < REL_TOL, "{label}: worst relative error {worst:e} over {SEEDS} seeds");
}

#[test]
fn temporal_to_spatial_gradients() {
    check(temporal_to_spatial, "t2s");
}

#[test]
fn spatial_to_temporal_gradients() {
    check(spatial_to_temporal, "s2t");
}

#[test]
fn fusion_gradients() {
    check(fusion, "fusion");
}

#[test]
fn decoder_block_gradients() {
    check(decoder_block, "decoder block");
}

#[test]
fn query_pointer_gradients() {
    check(query_pointer, "query pointer");
}

#[test]
fn caption_pointer_gradients() {
    check(caption_pointer, "caption pointer");
}

#[test]
fn generation_loss_gradients_through_the_model() {
    check(generation_loss_through_the_model, "generation loss");
}

#[test]
fn hinge_loss_gradients() {
    check(hinge_loss, "hinge loss");
}

#[test]
fn count_loss_gradients() {
    check(count_loss, "count loss");
}

#[test]
fn frame_loss_gradients() {
    check(frame_loss, "frame loss");
}
