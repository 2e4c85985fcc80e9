//! Cognitive-load assessment engine: head pose, attention, kinematics,
//! instruction tracking, factor ledger and scoring for one assembly session.

pub mod attention;
pub mod config;
pub mod engine;
pub mod factors;
pub mod headpose;
pub mod instructions;
pub mod kinematics;
pub mod par;
pub mod record;
pub mod scoring;
pub mod types;
