//! Full-reference metrics, disentanglement diagnostics, test-set reports
//! and plot/grid artifacts.

mod artifacts;
mod diagnostics;
mod inference;
mod metrics;
mod report;

pub use artifacts::{
    emit_artifacts, image_grid, plot_loss_curves, summary_text, ArtifactPaths, GRID_CELL, GRID_FILE, LOSS_CURVES_FILE,
    SUMMARY_FILE,
};
pub use diagnostics::{disentanglement_diagnostics, manifest_diagnostics, DisentanglementDiagnostics};
pub use inference::{haze_free_features, haze_response, restore_image, RestoredImage};
pub use metrics::{gaussian_window, l1, mse, psnr, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate_manifest, evaluate_pair, fmt_db, parse_db, EvaluatedImage, ImageMetrics, MetricReport, ReportSummary,
    Stat,
};
