//! Page-by-page document navigation with a group-relative policy optimizer.
//!
//! A policy sees one page of a document per step, keeps short notes, and
//! either scrolls to another page or answers. The crate provides the
//! navigation process, rewards and metrics, scripted and trainable policies,
//! the optimizer, a supervised-data generator, and image-token budget
//! arithmetic.

pub mod budget;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod egrpo;
pub mod episode_log;
pub mod nav;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod text;
pub mod trajgen;
