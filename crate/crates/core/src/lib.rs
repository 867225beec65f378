//! Intent-taxonomy engine: generate taxonomies from interaction logs with a
//! language model, check them against quality gates, annotate logs at scale
//! and measure inter-rater agreement.

pub mod agreement;
pub mod annotation;
pub mod clock;
pub mod context;
pub mod dataset;
pub mod fixtures;
pub mod gates;
pub mod generation;
pub mod insights;
pub mod llm;
pub mod review;
pub mod store;
pub mod synth;
pub mod taxonomy;
