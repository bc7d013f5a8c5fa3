//! Federated charging-demand learning for EV charging stations, size-bounded
//! station clustering, and a multi-principal one-agent energy contract market
//! solved by iterated best responses.

// NaN-rejecting checks read as !(x > 0.0) on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod federated;
pub mod ingest;
pub mod market;
pub mod neuralnet;
pub mod seed;

pub use clustering::{ClusterProblem, ClusterSolution};
pub use error::{Error, Result};
pub use federated::{FederationConfig, GradientUpdate, OverheadLedger, OverheadReport};
pub use ingest::{EncodedDataset, StationLocation, StationRegistry, TransactionRecord};
pub use market::{AllocationVector, ContractMenu, EquilibriumResult, MarketConfig, SgpTypeModel};
pub use neuralnet::{AdamConfig, AdamState, ModelParams};
