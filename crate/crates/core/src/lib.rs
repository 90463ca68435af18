pub mod baseline;
pub mod data;
pub mod inference;
pub mod lifetable;
pub mod model;
pub mod netsurv;
pub mod simulation;
