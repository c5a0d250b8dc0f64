//! Measurements over evaluation grids, checkpoint stores and model
//! checkpoints.

mod recovery;
mod similarity;
mod trajectory;

pub use recovery::{aligned_curves, peak_offsets, recovery_scores, AlignedCurves, EpochRecovery, RecoveryReport, RS_UNDEFINED_BELOW};
pub use similarity::{
    activation_similarity, consecutive_distances, cosine_matrix, default_gradient_selector, gradient_similarity,
    pairwise_recovery, residual_similarity, weight_residual_similarity, within_epoch_means, ActivationReport, MatrixKind,
    ResidualSet, SimilarityMatrix,
};
pub use trajectory::{circular_rank_correlation, toy_trajectory_pca, trajectory_pca, trend_slope, TrajectoryReport};
