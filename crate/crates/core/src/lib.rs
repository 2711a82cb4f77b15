//! Simulation, expert planning, learning and closed-loop evaluation for
//! vision-guided underwater navigation.

pub mod dynamics;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod planner;
pub mod policy;
pub mod runtime;
pub mod world;
