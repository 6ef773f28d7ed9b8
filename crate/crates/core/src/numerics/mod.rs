//! Special functions, quadrature, random streams and optimization.

pub mod bvn;
pub mod ks;
pub mod linalg;
pub mod lmoments;
pub mod normal;
pub mod optim;
pub mod quad;
pub mod ranks;
pub mod rng;
pub mod root;
pub mod stable;

pub use bvn::{bivariate_normal_cdf, bvn_cdf, ln_bvn_cdf};
pub use ks::{kolmogorov_sf, ks_one_sample};
pub use linalg::{min_eigenvalue, psd_factor};
pub use lmoments::{l_moments, LMoments};
pub use normal::{
    ln_std_normal_cdf, ln_std_normal_pdf, std_normal_cdf, std_normal_isf, std_normal_pdf, std_normal_ppf,
    std_normal_sf,
};
pub use optim::{nelder_mead, nelder_mead_with, Constraint, NmOptions, OptimResult};
pub use quad::{gauss_laguerre, gauss_legendre, integrate_1d, ln_integral_exp};
pub use ranks::{average_ranks, pseudo_uniforms};
pub use rng::RngStream;
pub use root::brent;
pub use stable::{positive_stable, sample_positive_stable};
