pub mod artifact;
pub mod backend;
pub mod client;
pub mod corpus;
pub mod evaluation;
pub mod generation;
pub mod pipeline;
pub mod refinement;
pub mod retrieval;
pub mod survey;
