//! Stability of transmitter cooperation on a Gaussian multiple access channel.
//!
//! Transmitters form coalitions that signal jointly. For every partition of
//! the transmitters, the coalitions play a non-cooperative game whose Nash
//! equilibrium fixes each coalition's rate (in nats). Those partition-form
//! utilities feed the linear programs that decide whether the grand coalition
//! has a nonempty core under rational, merging, cautious or singleton
//! expectations about outsiders.
//!
//! Module map:
//! - [`model`]: users, receivers, coalitions, partitions and decoding orders.
//! - [`capacity`]: log-det rates, waterfilling, per-antenna maximization, closed forms.
//! - [`equilibrium`]: equilibria for single-user and successive decoding, utility tables.
//! - [`lp`]: dense simplex solver over `f64` or exact rationals.
//! - [`cores`]: core, least core, balancedness certificates, 3-user core regions.
//! - [`analysis`]: property checks and sweeps.

pub mod analysis;
pub mod capacity;
pub mod cores;
pub mod equilibrium;
pub mod error;
mod linalg;
pub mod lp;
pub mod model;

pub use error::{Error, Result};
pub use model::{Coalition, Partition, PowerConstraint, ReceiverModel, Scenario, UserSpec};
