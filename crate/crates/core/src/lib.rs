//! Sharp upper bounds for the expected occupation density of one-dimensional
//! Itô processes `dX = β dt + σ dW` whose coefficients satisfy `σ ∈ [a, b]`
//! and `|β| ≤ k σ²`.
//!
//! The crate is organised bottom-up:
//!
//! * [`special`] and [`quadrature`]: normal pdf/cdf and adaptive Gauss–Kronrod.
//! * [`bounds`]: the occupation bound `G(x, y, T) = H_T(|x − y|)`, its rate
//!   kernel, r-derivatives, the exponentially stopped value `Q_λ` and the
//!   Laplace-consistency functional.
//! * [`control`] and [`sim`]: admissible feedback controls (including the
//!   near-optimal mollified control) and a deterministic parallel
//!   Euler–Maruyama Monte Carlo engine with occupation-density estimators.
//! * [`integral`]: disintegration bounds for `E ∫ f(X_s) ds` and
//!   `E ∫ f(s, X_s) ds`, with a Monte Carlo counterpart.
//! * [`verify`]: orchestrated analytic and Monte Carlo check suites.
//!
//! Units: `a`, `b` carry length/√time, `k` carries 1/length, the bound `G`
//! carries time/length. Nothing is enforced at runtime.

pub mod bounds;
pub mod control;
pub mod error;
pub mod integral;
pub mod quadrature;
pub mod sim;
pub mod special;
pub mod verify;

pub use bounds::{BoundReport, CoefficientBox, Query};
pub use control::{FeedbackControl, MollificationParams};
pub use error::{Error, Result};
pub use sim::{EstimatorKind, OccupationEstimate, SimConfig};
