#![allow(dead_code)]

pub mod edit_oracle;
pub mod metric_oracles;
