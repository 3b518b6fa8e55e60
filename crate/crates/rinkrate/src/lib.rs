//! Hockey player and team ratings from a censored competing-clocks model.
//!
//! Every 5-on-5 substitution interval is treated as a race between two
//! exponential goal clocks — one per side — censored when the interval ends.
//! Each clock's log-rate is a sum of score-state intercepts, per-player
//! scoring and suppression coefficients, and optional team and pair effects.
//! Coefficients are regularized toward zero by sparsity-inducing priors and
//! estimated either by penalized maximum likelihood or by a blocked MCMC
//! sampler that also learns the amount of shrinkage per positional group.
//!
//! The crate covers the full pipeline: CSV ingest ([`events`]), sparse design
//! construction ([`design`]), likelihood and gradients ([`likelihood`]),
//! shrinkage families ([`shrinkage`]), optimization and model search
//! ([`fit`]), posterior sampling ([`mcmc`]), applied summaries like goal
//! contributions and model comparison ([`metrics`]), and a generative
//! simulator used for end-to-end validation ([`simulate`]).
//!
//! ```
//! use rinkrate::events::{parse_events, Roster};
//! use rinkrate::design::{build_design, ModelSpec};
//! use rinkrate::likelihood::{total_loglik, Coefficients};
//!
//! let csv = "\
//! season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie
//! 2008,G1,40,0,NYR,PIT,TIED,h1;h2;h3;h4;h5,a1;a2;a3;a4;a5,hg,ag
//! 2008,G1,12.5,1,NYR,PIT,TIED,h1;h2;h3;h4;h6,a1;a2;a3;a4;a5,hg,ag
//! ";
//! let events = parse_events("inline", csv.as_bytes())?;
//! let design = build_design(&events, &Roster::new(), ModelSpec::Teams)?;
//! let baseline = Coefficients::with_intercepts(design.n_predictors(), -7.3);
//! assert!(total_loglik(&design, &baseline) < 0.0);
//! # Ok::<(), rinkrate::error::Error>(())
//! ```

pub mod cli;
pub mod design;
pub mod error;
pub mod events;
pub mod fit;
pub mod likelihood;
pub mod metrics;
pub mod mcmc;
pub mod numeric;
pub mod shrinkage;
pub mod simulate;

pub use error::{Error, Result};
