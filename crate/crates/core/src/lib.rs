//! Cross-task in-context manipulation.

pub mod demo_store;
pub mod discretizer;
pub mod keyframe;
pub mod prompt;
pub mod dynamics;
pub mod seeds;
pub mod sim;
pub mod gateway;
pub mod pipeline;
pub mod bench;
