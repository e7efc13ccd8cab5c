//! Few-shot training of neural networks by imitation of a Gaussian-process
//! reference model.
//!
//! A small labeled set trains an RBF-kernel GP ensemble (the *reference*).
//! A fully-connected target network is then fitted to the reference's
//! predictions on a growing set of *pseudo examples*: synthetic inputs that
//! carry the reference's soft predictions as supervision and are themselves
//! moved by gradient ascent towards regions where target and reference still
//! disagree. Pseudo examples with uncertain reference predictions are
//! down-weighted (*fidelity weighting*).
//!
//! The crate is `no_std` + `alloc`; all numerics are `f64`. IO, file formats
//! and the experiment CLI live in the companion `imitation-cli` crate.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices, Cholesky factorization, triangular/SPD solves
//! - [`optim`]: Adam and Nadam steppers (descent and ascent)
//! - [`net`]: the target MLP, softmax/KL/hinge losses, reverse-mode gradients
//! - [`gp`]: RBF-kernel GP reference models and ensembles
//! - [`data`]: datasets, random linear embeddings, few-shot splits, grids
//! - [`engine`]: the imitation loss, fidelity weights, pseudo-example
//!   optimization and the staged training loop

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod engine;
pub mod gp;
pub mod linalg;
pub mod net;
pub mod optim;

/// Derives an independent stream seed from a run seed and a fixed tag.
///
/// One experiment seed fans out into separate RNG streams (split, net init,
/// pseudo init, shuffling) so that consumers of one stream cannot perturb
/// another. SplitMix64 finalizer; stable across platforms.
#[must_use]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(tag.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
