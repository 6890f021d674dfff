//! Polynomial-time estimation of extended-IQP amplitudes, probabilities,
//! gradients and two-body expectations by sampling the bipartite
//! factorisation of `Φ = ⟨0|H U_2 H U_1 H|0⟩`.

mod estimate;
mod expectation;
pub mod latent;
pub mod phase_poly;

pub use estimate::{
    estimate_forrelation, estimate_p_bitstring, estimate_p_zero, grad_forrelation, grad_p, grad_p_bitstring,
    samples_for_precision, ComplexEstimate, ForrelationGradient, ForrelationProblem, GradMoments, Moments,
    ProbabilityGradient, RealEstimate, SampleTerms,
};
pub use expectation::{
    estimate_gamma, estimate_insertion, estimate_zz_expectation, two_qubit_flip_element, Mat2, MAX_INSERTION_SUPPORT,
};
pub use latent::{alpha_amplitude, beta_amplitude, sample_p, HalfHadamard, LatentState, Which};
pub use phase_poly::{phase_polynomial, PhasePolynomial};
