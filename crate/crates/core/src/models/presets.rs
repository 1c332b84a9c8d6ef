//! Named, seeded instances shared by tests, the verifier and the CLI.

use super::{CodecModel, CodecParams, QuadraticModel, QuadraticParams};
use crate::graph::LatentDag;

/// Seeds of the codec suite, in suite order.
pub const CODEC_SUITE_SEEDS: [u64; 5] = [7, 11, 13, 17, 19];
/// Frame counts of the codec suite, in suite order.
pub const CODEC_SUITE_FRAMES: [usize; 5] = [2, 3, 2, 3, 2];
/// Step size for suite runs, below the inverse of the largest curvature at
/// the initialization across the suite.
pub const CODEC_SUITE_ALPHA: f64 = 0.05;
/// Ascent steps per latent for suite runs.
pub const CODEC_SUITE_STEPS: usize = 10;

/// Q1: three-node chain, blocks of dimension 2.
pub fn quadratic_chain_q1() -> QuadraticModel {
    let dag = LatentDag::chain(vec![2, 2, 2]).expect("valid chain");
    QuadraticModel::random(
        dag,
        &QuadraticParams {
            seed: 1,
            ..Default::default()
        },
    )
    .expect("valid quadratic")
    .with_name("q1")
}

/// Q2: two-level instance, `w` (node 1) feeding `y` (node 2).
pub fn quadratic_two_level_q2() -> QuadraticModel {
    quadratic_two_level(2, 2, 2)
}

pub fn quadratic_two_level(seed: u64, dim_w: usize, dim_y: usize) -> QuadraticModel {
    let dag = LatentDag::chain(vec![dim_w, dim_y]).expect("valid chain");
    QuadraticModel::random(
        dag,
        &QuadraticParams {
            seed,
            ..Default::default()
        },
    )
    .expect("valid quadratic")
    .with_name("q2")
}

/// Q3: three-node chain with stronger coupling and initializer gain.
pub fn quadratic_chain_q3() -> QuadraticModel {
    let dag = LatentDag::chain(vec![2, 2, 2]).expect("valid chain");
    QuadraticModel::random(
        dag,
        &QuadraticParams {
            seed: 3,
            coupling: 0.6,
            favi_scale: 0.8,
        },
    )
    .expect("valid quadratic")
    .with_name("q3")
}

/// Edgeless instance; with no edges `A` is block diagonal and the objective separable.
pub fn quadratic_separable(seed: u64, dims: Vec<usize>) -> QuadraticModel {
    let dag = LatentDag::edgeless(dims).expect("valid dims");
    QuadraticModel::random(
        dag,
        &QuadraticParams {
            seed,
            ..Default::default()
        },
    )
    .expect("valid quadratic")
    .with_name("separable")
}

pub fn codec_suite_params(index: usize) -> CodecParams {
    assert!((1..=5).contains(&index), "codec suite has members 1..=5");
    CodecParams {
        frames: CODEC_SUITE_FRAMES[index - 1],
        dim: 2,
        lambda0: 1.0,
        seed: CODEC_SUITE_SEEDS[index - 1],
        ..Default::default()
    }
}

/// Member `index` (1-based) of the codec suite C1..C5.
pub fn codec_suite(index: usize) -> CodecModel {
    CodecModel::new(codec_suite_params(index))
        .expect("valid codec")
        .with_name(format!("c{index}"))
}
