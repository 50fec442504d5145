//! Off-policy evaluation on tabular MDPs: a spectrum of importance-sampling
//! estimators between per-decision and stationary-distribution weighting,
//! with exact dynamic-programming oracles so every identity is
//! machine-checkable at desk scale.
//!
//! # What lives where
//!
//! - [`mdp`], [`envs`]: tabular MDPs, static policies, and the two
//!   benchmark environments (a two-chain graph and a 21-state mountain
//!   chain).
//! - [`sampling`]: seeded, reproducible rollouts annotated with per-step
//!   likelihood ratios.
//! - [`occupancy`], [`qvalue`]: exact DP oracles for visitation
//!   distributions, policy values, and q-functions.
//! - [`ratio`]: occupancy-correction ratios, exact and estimated
//!   (model-based DP and a tabular stationarity solve).
//! - [`enumerate`]: exhaustive trajectory enumeration, the independent
//!   second route behind the identity checks.
//! - [`estimators`]: IS, PDIS, SIS, CWPDIS, the interpolating spectrum, and
//!   its weighted and doubly-robust versions.
//! - [`harness`], [`report`]: seeded sweeps over spectrum index, batch
//!   size, and trial, with bias/variance/MSE aggregation, bootstrap
//!   confidence intervals, and CSV/SVG output.
//! - [`config`], [`checks`], [`cli`]: strict TOML experiment configs, the
//!   built-in verification suite, and the `sope` command-line front end.
//!
//! # Quick start
//!
//! ```
//! use sope::envs::{build_graph_env, make_static_policy};
//! use sope::estimators::{estimate_pdis, estimate_sope, RatioWindowMode};
//! use sope::occupancy::exact_j;
//! use sope::ratio::{oracle_ratio, RatioKind};
//! use sope::sampling::sample_dataset;
//!
//! let mdp = build_graph_env(6, 0.98)?;
//! let pi_b = make_static_policy(mdp.n_states(), 0.5)?;
//! let pi_e = make_static_policy(mdp.n_states(), 0.9)?;
//! let data = sample_dataset(&mdp, &pi_b, &pi_e, 128, 7)?;
//!
//! let truth = exact_j(&mdp, &pi_e)?;
//! let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage)?;
//! let pdis = estimate_pdis(&data)?.value;
//! let mid = estimate_sope(&data, 3, &ratio, RatioWindowMode::Average)?.value;
//! assert!((pdis - truth).abs() < 2.0 && (mid - truth).abs() < 2.0);
//! # Ok::<(), sope::Error>(())
//! ```

pub mod checks;
pub mod cli;
pub mod config;
pub mod enumerate;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mdp;
pub mod occupancy;
pub mod qvalue;
pub mod ratio;
pub mod report;
pub mod sampling;
pub mod tables;

pub use error::{Error, Result};
