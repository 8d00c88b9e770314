//! Gaussian probability kernels: scalar cdf/quantile families, bivariate normal
//! rectangle probabilities with analytic derivatives, and low-dimensional
//! multivariate normal rectangles via conditioning and adaptive quadrature.

mod bvn;
mod mvn;
pub mod quad;
mod univariate;

pub use bvn::{
    bvn_cdf, bvn_cell_table, bvn_pdf, bvn_rect, bvn_rect_dbound, bvn_rect_drho, Rect2, Side,
};
pub use mvn::{mvn_cdf, mvn_cell_array, mvn_rect, RectD};
pub use univariate::{
    logistic_cdf, logistic_pdf, logistic_quantile, norm_cdf, norm_pdf, norm_quantile, norm_sf,
    student_t_cdf, student_t_pdf, student_t_quantile,
};

/// Correlations this close to +-1 are pulled back to keep densities finite
/// during optimizer line searches.
pub const RHO_CAP: f64 = 1.0 - 1e-10;

/// Clamp a correlation to the open interval (-RHO_CAP, RHO_CAP).
/// The flag reports whether clamping occurred.
pub fn clamp_rho(rho: f64) -> (f64, bool) {
    if rho.abs() >= RHO_CAP {
        (rho.signum() * RHO_CAP, true)
    } else {
        (rho, false)
    }
}
