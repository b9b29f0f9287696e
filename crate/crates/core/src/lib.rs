pub mod envelope;
pub mod learning;
pub mod orchestrator;
pub mod pqc;
pub mod topology;
