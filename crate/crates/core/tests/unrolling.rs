//! One unrolled layer with solver-mimicking parameters against one
//! iteration of the literal ADMM reference.

mod common;

use common::unroll_suite as suite;

#[test]
fn uedip_layer_reproduces_one_admm_iteration() {
    suite::uedip_layer_reproduces_one_admm_iteration();
}

#[test]
fn uedip_layer_with_identity_mixer_on_orthogonal_instance() {
    suite::uedip_layer_with_identity_mixer_on_orthogonal_instance();
}

#[test]
fn uadip_layer_reproduces_one_admm_iteration() {
    suite::uadip_layer_reproduces_one_admm_iteration();
}
