pub mod cli;
pub mod corpus;
pub mod eval;
pub mod grad;
pub mod http;
pub mod policy;
pub mod refine;
pub mod rl;
pub mod reward;
pub mod sft;
