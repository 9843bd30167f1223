//! Correlation maps, peak integration, ratio curves, fits and noise budgets.

pub mod correlation;
pub mod covmap;
pub mod curve;
mod fft;
pub mod fit;
pub mod peaks;
pub mod ratios;
pub mod snr;

pub use correlation::{
    inter_image_correlation, inter_image_correlation_with, intra_image_correlation,
    intra_image_correlation_with, normalize_to_c0, CorrelationOptions,
};
pub use covmap::{
    covariance_map_2d, covariance_map_2d_with, map_difference, CovMapOptions, MeanModel, SpatialMap,
};
pub use curve::ScanCurve;
pub use fit::{fit_dip, fit_points, FitResult, FitShape};
pub use peaks::{integrate_peak, relative_ratio, PeakStats, Window};
pub use ratios::{
    analyze_point, analyze_reference, cross_peak_ratio, AnalysisOptions, CrossPeakRatio,
    PointAnalysis, PointMaps, ReferenceAnalysis,
};
pub use snr::{snr_budget, SnrBudget};
