//! Policy-driven visual compliance verification: a planning agent gathers
//! evidence with analysis tools and a verification agent issues the final
//! Safe/Unsafe assessment. Includes routing and zero-shot baselines and an
//! evaluation harness.

pub mod extract;
pub mod image;
pub mod llm;
pub mod planner;
pub mod policy;
pub mod routing;
pub mod tools;
pub mod trace;
pub mod verifier;
pub mod eval;
pub mod config;
pub mod engine;
pub mod bundle;
pub mod cli;
