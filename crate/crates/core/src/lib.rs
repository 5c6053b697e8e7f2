//! Time-varying spectral density operators of functional time series on a
//! discretized grid, deviation-from-structure measures, and self-normalized
//! inference for them.
//!
//! The numerical core is generic over the real scalar ([`Real`], implemented
//! for `f32` and `f64`); the aliases below fix the common choice.
//!
//! ```
//! use specnorm::{estimate_sequential_sdo, default_bandwidth_plan, tvdfpca_sequential};
//! use specnorm::{simulate, KernelSpec, PlanOverrides, ProcessKind, ProcessSpec};
//!
//! let sigma = vec![4.0, 0.0, 0.0, 1.0];
//! let x = simulate(&ProcessSpec::new(ProcessKind::Iid { sigma }, 1024, 7)).unwrap();
//! let plan = default_bandwidth_plan(x.len(), &PlanOverrides::default()).unwrap();
//! let sdo = estimate_sequential_sdo(&x, &plan, &KernelSpec::default(), (0.0, std::f64::consts::PI), 4).unwrap();
//! let share = tvdfpca_sequential(&sdo, 1).unwrap().point_estimate;
//! assert!(share > 0.6 && share < 0.95);
//! ```

pub mod error;
pub mod estimator;
pub mod hermitian;
pub mod inference;
pub mod measures;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use estimator::{
    default_bandwidth_plan, estimate_sequential_sdo, local_weight, midpoint_grid, sequential_estimate_at,
    BandwidthPlan, FrequencyGrid, KernelKind, KernelSpec, PlanOverrides, SequentialSdo, TimeSeriesSample,
};
pub use hermitian::{
    eigh_descending, frechet_derivative, kron_rearrange, matrix_sqrt_psd, psd_project, svd, CMatrix, EigenSystem,
    HermitianOperator, MatrixFunction, ProductStructure, SingularSystem,
};
pub use inference::{
    cached_mc_quantiles, confidence_interval, estimate_dstar, joint_statistic, mc_joint_quantiles, mc_quantiles,
    relevant_test, self_norm_v, test_order_lower, test_order_upper, ConfidenceInterval, JointPivotLaw, PivotLaw,
    SelectedOrder, SelfNormV,
};
pub use measures::{
    coherence_sequential, evaluate, measure_population, rank_restrict, stationarity_sequential, tvdfpca_sequential,
    tvdpsca_sequential, DeviationResult, MeasureKind, SequentialFunctional,
};
pub use scalar::Real;
pub use simulation::{simulate, true_sdo, MatrixPath, ProcessKind, ProcessSpec};

pub type HermitianOperatorF64 = HermitianOperator<f64>;
pub type HermitianOperatorF32 = HermitianOperator<f32>;
pub type SampleF64 = TimeSeriesSample<f64>;
pub type SampleF32 = TimeSeriesSample<f32>;
pub type SdoF64 = SequentialSdo<f64>;
pub type SdoF32 = SequentialSdo<f32>;
