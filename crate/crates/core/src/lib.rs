//! Shapley-valued contrastive alignment for multimodal batches.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: minimal dense f64 vector/matrix kernels (cosine, softmax,
//!   affine) that everything else shares.
//! * [`rng`]: SplitMix64 streams, Fisher-Yates shuffling and Box-Muller
//!   gaussians. Fully documented so seeded outputs are portable.
//! * [`game`]: coalition utilities over similarity scores and Shapley
//!   valuation (exact subset/permutation enumeration, the cyclic
//!   permutation estimator, naive Monte Carlo).
//! * [`loss`]: Shapley-contrastive losses over context/text/image batches,
//!   with analytic gradients under frozen permutation schedules.
//! * [`fusion`]: bridged, gated single-head cross-attention between image
//!   queries and text keys/values, with a full parameter backward pass.
//! * [`decoders`]: linear-chain CRF (forward NLL, Viterbi) and the
//!   word-pair relation head with distribution refinement.
//! * [`harness`]: synthetic batches, estimator convergence benches, a toy
//!   alignment trainer with an InfoNCE comparator, and an alpha/beta sweep.
//! * [`gradcheck`]: central finite differences used to validate every
//!   analytic gradient in the crate.

pub mod decoders;
pub mod fusion;
pub mod game;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod rng;
pub mod tensor;
