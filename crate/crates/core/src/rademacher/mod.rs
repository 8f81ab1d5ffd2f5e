//! Rademacher averages of network classes and the fixed-point calculus
//! behind localized rates.

mod complexity;
mod subroot;

pub use complexity::{
    empirical_rademacher, localized_rademacher, AscentConfig, DifferenceClass, FiniteClass, FunctionClass,
    NetworkClass, RademacherEstimate, SupMethod, DEFAULT_MU_SAMPLES, TRAINED_SUP_NOTE,
};
pub use subroot::{rate_exponent, sub_root_fixed_point, theoretical_psi, RateExponents, SubRootSpec};
