//! Finite differences, moduli of smoothness and Besov seminorms on uniform
//! grids, plus test functions of known smoothness.

mod closure;
mod grid;
mod modulus;
mod synth;

pub use closure::{diagnose_dynamic_closure, ClosureEntry, ClosureReport, DEFAULT_CLOSURE_RESOLUTION};
pub use grid::{discrete_p_norm, FunctionOnGrid, MIN_RESOLUTION};
pub use modulus::{
    besov_norm, besov_seminorm, besov_seminorm_detail, default_t_grid, difference_weights,
    estimate_smoothness_exponent, fit_smoothness_exponent, log_t_grid, modulus_of_smoothness, translation_difference,
    BesovParams, Difference, ExponentFit, ModulusCurve, Seminorm, SmoothnessExponent, DEFAULT_T_POINTS, OMEGA_FLOOR,
};
pub use synth::{
    default_resolution, synth_function, synth_function_on, weierstrass, SynthKind, WEIERSTRASS_BASE, WEIERSTRASS_TERMS,
};
