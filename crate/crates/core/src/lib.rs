//! Energy-aware mode selection for an ambient backscatter tag.
//!
//! Each slot the tag either harvests RF energy into a finite battery or
//! spends energy to backscatter data to a receiver over a binary symmetric
//! channel whose crossover probability comes from an energy detector. The
//! crate provides the link physics, a Markov fading channel, an exact MDP
//! solver, a tabular Q-learning agent, a greedy baseline, a sample-level
//! detector simulation and an experiment harness.

pub mod agents;
pub mod channel;
pub mod config;
pub mod detector;
pub mod error;
pub mod mdp;
pub mod output;
pub mod rng;
pub mod sim;
pub mod system;

pub use channel::GainMarkov;
pub use error::{Error, Result};
pub use mdp::{MdpModel, Policy, ValueFunction};
pub use system::{Action, State, SystemParams};
