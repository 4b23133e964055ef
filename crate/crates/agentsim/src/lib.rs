//! Deterministic discrete-event simulator of a multi-host mobile-agent
//! platform.
//!
//! Agents live on hosts, exchange messages according to scripted send
//! plans, and can migrate between hosts. Three coordination mechanisms
//! are modelled:
//!
//! * **interaction localization** — per-agent moving averages of where a
//!   given agent's traffic lands are folded into a dependency coefficient;
//!   agents whose remote dependency exceeds a threshold migrate toward
//!   their dominant communication partners ([`localization`]);
//! * **group load distribution** — an overloaded host clusters its
//!   residents into communication groups and negotiates the transfer of a
//!   whole group to the most dependent remote host that has room
//!   ([`distribution`]);
//! * **intermediary messaging** — attribute-addressed sends are resolved
//!   through an intermediary holding registered agent descriptions,
//!   either forwarding the payload (broker) or returning the address for
//!   a direct send (matchmaker) ([`intermediary`]).
//!
//! Runs are driven by [`engine::run`], which consumes a validated
//! scenario and a seed and produces an append-only trace. The trace is
//! the only hand-off to the metrics layer ([`metrics`]); the CLI binary
//! wraps both. Everything is deterministic: the same scenario and seed
//! produce byte-identical trace files.

pub mod batch;
pub mod dependency;
pub mod distribution;
pub mod engine;
pub mod intermediary;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod platform;
pub mod scenario;
pub mod trace;

pub use batch::{run_report, run_reports, run_reports_seq};
pub use engine::run;
pub use metrics::{compare_runs, compute_metrics};
pub use scenario::{load_scenario, parse_scenario};
