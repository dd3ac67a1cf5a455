//! Escaping active sets: the reduced ODE `ẇ = −g_t(θ)`, `θ̇ = −J_{g_t}(θ)ᵀ w`
//! and constructions of escape / stable sets.

mod field;
mod local;
mod ode;
mod sampling;
mod scalar;
mod vector;

pub use field::{
    estimate_sup_norms, hessian_vector_field, AsymptoticField, ClosedFormField, EnsembleField, FieldG, Negated, SupNorms, TiltedLimit,
};
pub use local::{analyze_maximizer, local_constants, LocalConstants, MaximizerAnalysis, C2_MESH, C2_STARTS};
pub use ode::{escape_ode_run, EscapeTrajectory, OdeConfig, PerturbationFamily, PerturbationKind};
pub use sampling::{ball_point, boundary_points, interior_points, level_meets_sphere, ray_crossing, sphere_boundary_points};
pub use scalar::{
    build_escape_set_scalar, excursions, linear_fit, regime, verify_escape_rate, EscapeCase, EscapeReport, EscapeSetScalar, EscapeTrial,
    Excursion, Regime, ScalarBuildOptions, UnboundedLedger,
};
pub use vector::{
    cond_refined_check, verify_stable_set_from, verify_stable_set_vector, CondOptions, CondReport, StableReport, StableSetVector,
    StableTrial,
};
