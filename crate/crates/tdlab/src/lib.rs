//! Value-learning lab: finite-horizon Monte Carlo and n-step TD agents,
//! trained asynchronously on controlled gridworld environments.
//!
//! The crate is organized along the data path:
//!
//! - [`returns`]: pure return and target arithmetic,
//! - [`gridworld`]: the health-gathering environment family and its wrappers,
//! - [`neural`]: MLP forward/backward, dueling and policy-value heads, RMSProp,
//! - [`agents`]: the three algorithms as experience-in, gradients-out policies,
//! - [`trainer`]: shared parameter store, async/sequential loops, evaluation,
//! - [`harness`]: configs, sweeps, and report files behind the `tdlab` CLI.

pub mod agents;
pub mod gridworld;
pub mod harness;
pub mod neural;
pub mod returns;
pub mod trainer;
