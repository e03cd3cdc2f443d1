//! Intent-driven radio control: OTM contract handling, a supervisory
//! interpreter, a constrained preference optimizer and a preference-conditioned
//! multi-objective Q-learning controller.

pub mod bo;
pub mod deql;
pub mod exec;
pub mod interpreter;
pub mod morl_env;
pub mod otm;
pub mod pareto_metrics;
pub mod replay;
pub mod simplex;
pub mod workflow;
