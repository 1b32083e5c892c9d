//! Survey-weighted generalized linear models.
//!
//! Coefficients are fitted by pseudo-maximum likelihood with a ridge-stabilized
//! Newton-Raphson iteration. Their covariance is the Taylor-linearization
//! sandwich `Q̂⁻¹ĜQ̂⁻¹`, which accounts for strata, clustering into PSUs and
//! finite population corrections. Groups of coefficients are tested with
//! design-based Wald F statistics.
//!
//! ```no_run
//! use svyglm::{
//!     build_model_frame, fit_pseudo_mle, sandwich_variance, DesignBindings, Family, FitConfig,
//!     Link, ModelSpec, SurveyDataset, VarianceOptions,
//! };
//!
//! let bindings = DesignBindings::new().weight("w").stratum("stratum").psu("psu");
//! let data = SurveyDataset::from_path("sample.csv", &bindings)?;
//! let frame = build_model_frame(&data, &ModelSpec::parse("y ~ 1 + x + C(group)")?)?;
//! let fit = fit_pseudo_mle(&frame, &Family::poisson(), Link::LOG, &FitConfig::default())?;
//! let vc = sandwich_variance(&fit, &frame, &frame.design_summary(), VarianceOptions::default())?;
//! println!("{} {}", fit.beta, vc.std_errors());
//! # Ok::<(), svyglm::Error>(())
//! ```

pub mod design;
pub mod error;
pub mod family;
pub mod frame;
pub mod linearization;
pub mod pmle;
pub mod simulate;
pub mod special;
pub mod wald;

pub use design::{DesignBindings, DesignSummary, StratumSummary, SurveyDataset};
pub use error::{Error, Result};
pub use family::{DispersionRule, Family, FamilyKind, Link, LinkKind};
pub use frame::{build_model_frame, Centering, ModelFrame, ModelSpec, Term};
pub use linearization::{
    psu_score_sums, sandwich_variance, SingletonPolicy, SmallSample, VarianceComponents,
    VarianceOptions,
};
pub use pmle::{fit_pseudo_mle, hessian_matrix, score_vector, weighted_loglik, FitConfig, FitResult};
pub use simulate::{simulate, SimSpec, SimTruth, SimulatedData, WeightScheme};
pub use wald::{
    coefficient_table, f_survival, t_critical, t_two_sided_p, wald_test, CoefficientRow,
    CoefficientTable, ContrastMatrix, DfMode, WaldResult,
};
