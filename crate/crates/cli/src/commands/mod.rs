pub mod data;
pub mod experiment;
pub mod market;
pub mod train;
