//! Sum-rate maximization for RIS-aided multi-user MIMO broadcast channels.
//!
//! The broadcast problem is solved in its dual uplink form, where the
//! objective `log2 det(I + sum_k H_k^H S_k H_k)` is concave in the
//! covariances, and the result is mapped back to downlink covariances. Three
//! drivers are provided: exact alternating optimization ([`drivers::run_ao`]),
//! a cheaper variant that replaces the per-element phase sweep with a
//! projected gradient step ([`drivers::run_approx_ao`]), and a fully
//! gradient-based method ([`drivers::run_apgm`]).
//!
//! ```
//! use ris_bc::prelude::*;
//!
//! let config = SystemConfig { elements_per_surface: 16, ..SystemConfig::default() };
//! let instance = Instance::random(&config, &PlacementSpec::default(), 7, 0)?;
//! let trace = run_apgm(&instance, &DriverOptions::default())?;
//! assert!(trace.final_objective_bits() > 0.0);
//! # Ok::<(), ris_bc::Error>(())
//! ```

pub mod drivers;
pub mod duality;
pub mod error;
pub mod linalg;
pub mod mac_covariance;
pub mod model;
pub mod projections;
pub mod ris_phase;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

/// Common imports for driving the solvers.
pub mod prelude {
    pub use crate::drivers::{
        predict_complexity, run_algorithm, run_ao, run_apgm, run_approx_ao, Algorithm, ComplexityParams,
        DriverOptions, Instance, RunTrace,
    };
    pub use crate::duality::{mac_to_bc, verify_duality};
    pub use crate::error::{Error, Result};
    pub use crate::model::{composite_channel, mac_sum_rate, CovarianceSet, Domain, PhaseVector};
    pub use crate::rng::SeededRng;
    pub use crate::scenario::{ChannelSet, PlacementSpec, SystemConfig};
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/system-model.md")]
    mod system_model {}
    #[doc = include_str!("../../../book/src/duality.md")]
    mod duality {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/phases.md")]
    mod phases {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/complexity.md")]
    mod complexity {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
