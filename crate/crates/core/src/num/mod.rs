//! Numerical building blocks shared by the model engine and the simulator.

pub mod linalg;
pub mod mvn;
pub mod optim;
pub mod rng;
pub mod special;

pub use linalg::{matrix_rank, DEFAULT_RANK_TOL};
pub use mvn::{mvn_all_above, mvn_all_above_compound, mvn_all_above_mc, MvnMethod};
pub use rng::{rng_normal, RngStream};
pub use special::{f_cdf, f_sf, normal_cdf, normal_quantile, t_cdf, t_quantile};
