#![allow(dead_code)]

pub mod gradcheck;
pub mod minimax;
pub mod stats_oracle;
pub mod persistence;
