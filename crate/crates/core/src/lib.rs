//! Knowledge-augmented model selection for tabular regression.
//!
//! The pipeline trains a grid of candidate models, ranks them by
//! cross-validated RMSE, explains the best of each family with exact
//! interventional Shapley values, and scores how well each model's
//! explanations agree with expert knowledge intervals.

pub mod agreement;
pub mod automl;
pub mod dataset;
pub mod explain;
pub mod knowledge;
pub mod modelzoo;
pub mod project;
pub mod seed;
