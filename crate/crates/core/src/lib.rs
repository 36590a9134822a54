pub mod agents;
pub mod blueprint;
pub mod coordinator;
pub mod evaluation;
pub mod expand;
pub mod expr;
pub mod feasibility;
pub mod interchange;
pub mod memory;
pub mod model;
pub mod solution;
pub mod solver;
pub mod tensor;
