//! Symbolic household gridworld with a hierarchical agent planner, multimodal
//! evidence, learned count-based agent models and Monte Carlo "whodunit"
//! inference.
//!
//! The crate is organised bottom-up:
//!
//! - [`codebook`]: the published integer codes for rooms, furniture, objects,
//!   state flags and audio tokens.
//! - [`world`]: grid state, transition function, predicates, array and
//!   scene-graph encodings.
//! - [`behavior`]: missions, subgoals, the five inference scenarios.
//! - [`planner`]: mission sampling, subgoal FSM, A* action planning.
//! - [`evidence`]: the per-step visual/audio/language observation bundle.
//! - [`procgen`]: environment generation and dataset persistence.
//! - [`policy`]: count-based behavioural-cloning agent models and audio fusion.
//! - [`inference`]: Monte Carlo rollouts, softmax verdicts, LLM prompt tooling.
//! - [`bench`]: accuracy curves and the evaluation harness.

pub mod behavior;
pub mod bench;
pub mod codebook;
pub mod error;
pub mod evidence;
pub mod exec;
pub mod inference;
pub mod planner;
pub mod policy;
pub mod procgen;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
