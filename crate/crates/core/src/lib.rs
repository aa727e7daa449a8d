//! Nonsmooth stochastic optimization laboratory.
//!
//! Subgradient sampling `w_{k+1} = w_k - alpha_k v(w_k, xi_k)` driven by a
//! reverse-mode oracle over piecewise-smooth expression graphs, Monte-Carlo
//! estimates of set-valued expectations, differential-inclusion flows and a
//! diagnostics suite (criticality, chain rule, interchange, semismoothness,
//! noise extinction).

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod par;
pub mod problems;
pub mod sampling;
pub mod setvalued;
pub mod tape;
pub mod types;

pub use error::{Error, Result};
pub use types::{classify_schedule, ParamVector, RngSpec, ScheduleFamily, ScheduleFlags, StepSchedule, Trajectory};
