//! Seeded random LTV systems with analytic, uniformly contractive dynamics.
//!
//! `A(t) = K0 + K1 sin(ω t + φ) - μ I` with `μ` chosen so that the symmetric
//! part of `A(t)` stays below `-margin · I`; `B` and `C` get the same kind of
//! smooth time variation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ltv::LtvSystem;
use crate::timegrid::{MatrixTrajectory, TimeGrid};

/// Shape and smoothness of generated systems.
#[derive(Clone, Copy, Debug)]
pub struct RandomSystemSpec {
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// Lower bound on `-λ_max((A + Aᵀ)/2)`.
    pub margin: f64,
    /// Amplitude of the time-varying parts relative to the constant parts.
    pub variation: f64,
}

impl RandomSystemSpec {
    pub fn new(order: usize, inputs: usize, outputs: usize) -> Self {
        RandomSystemSpec {
            order,
            inputs,
            outputs,
            margin: 0.5,
            variation: 0.5,
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn varying(
    grid: TimeGrid,
    base: DMatrix<f64>,
    wobble: DMatrix<f64>,
    omega: f64,
    phase: f64,
) -> MatrixTrajectory {
    MatrixTrajectory::from_fn(grid, move |t| &base + &wobble * (omega * t + phase).sin())
}

/// Draws one system from a generator seeded with `seed`.
pub fn random_stable_system(grid: TimeGrid, spec: &RandomSystemSpec, seed: u64) -> LtvSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.order;
    let k0 = random_matrix(&mut rng, n, n);
    let k1 = random_matrix(&mut rng, n, n) * spec.variation;
    let bound = k0.norm() + k1.norm();
    let shift = DMatrix::identity(n, n) * (bound + spec.margin);
    let a = varying(
        grid,
        k0 - shift,
        k1,
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.0..6.3),
    );
    let b0 = random_matrix(&mut rng, n, spec.inputs);
    let b1 = random_matrix(&mut rng, n, spec.inputs) * spec.variation;
    let b = varying(
        grid,
        b0,
        b1,
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.0..6.3),
    );
    let c0 = random_matrix(&mut rng, spec.outputs, n);
    let c1 = random_matrix(&mut rng, spec.outputs, n) * spec.variation;
    let c = varying(
        grid,
        c0,
        c1,
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.0..6.3),
    );
    LtvSystem::new(a, b, c).expect("generated shapes are consistent")
}
