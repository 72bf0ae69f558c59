pub mod error;
pub mod lcs;
pub mod linprog;
pub mod model;
pub mod scalar;
pub mod diagnostics;
pub mod pipeline;
pub mod structured;
pub mod demand;
pub mod equilibrium;
