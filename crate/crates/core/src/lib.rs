//! Automatic scoring of written responses by matching them against one
//! authored exemplar per grading level.
//!
//! The scoring pipeline has two stages. A response whose embedding is
//! farther from the perfect exemplar than the exemplars themselves are (on
//! average) is graded zero outright; everything else is paired with every
//! exemplar and handed to a next-sentence-prediction head, and the exemplar
//! judged the most plausible continuation decides the grade.
//!
//! Around that scorer the crate provides the data model ([`corpus`]), the
//! encoder contract and a deterministic mock ([`encoder`]), few-shot sample
//! selection ([`fewshot`]), classical TF-IDF baselines ([`baselines`]), and
//! the agreement metrics plus multi-seed experiment harness ([`eval`]).

pub mod baselines;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod fewshot;
pub mod mensp;

pub use corpus::{AssessmentItem, DatasetSplit, ExemplarSet, GradeLevel, LabeledResponse, ResponseToScore};
pub use encoder::{Embedding, EncodedPair, Encoder, EncoderError, MockEncoder, MockSpec};
pub use mensp::{MenspScorer, ScoreResult, ScorerOptions, Stage};
