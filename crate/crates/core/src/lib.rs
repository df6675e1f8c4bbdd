//! Assertion-failure debugging dataset toolchain.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod mutate;
pub mod pipeline;
pub mod toolchain;
pub mod trainmath;

pub use config::PipelineConfig;
pub use corpus::{SourceUnit, Token, TokenKind};
pub use dataset::{BugRecord, GoldenSolution, PtRecord, SplitPlan, SvaBugRecord};
pub use eval::{CaseResult, EvalCase, ModelResponse, PassAtKReport};
pub use mutate::{AssertionSpec, BugType, MutationRecord, Relation, SyntacticKind};
