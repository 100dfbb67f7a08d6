pub mod autodiff;
pub mod cli;
pub mod datastore;
pub mod grid;
pub mod lbm;
pub mod metrics;
pub mod pinn;
pub mod rng;
pub mod surface;
