//! Linear one-vs-rest SVM on fixed feature vectors with cross-validated C.

mod cv;
mod ovr;
mod solver;

pub use cv::{
    default_grid, fit_svm, grid_search_cv, stratified_folds, validate_grid, CvResult, CvRow, SvmConfig, DEFAULT_FOLDS,
};
pub use ovr::{class_count, train_ovr, MulticlassSvm, SVM_KIND};
pub use solver::{dot, hinge_loss, primal_objective, train_binary, BinarySolution, Samples, SolverControls};
