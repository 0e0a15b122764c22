//! Classification in model space.

mod incremental;
mod knn;
mod ocsvm;

pub use incremental::{incremental_diagnose, Assignment, IncrementalState, PENDING_LABEL};
pub use knn::{knn_classify, leave_one_out_accuracy, KnnModel};
pub use ocsvm::{
    dual_objective, kernel_matrix, median_gamma, ocsvm_classify, solve_dual, train_ocsvm,
    DualSolution, OcsvmModel, KKT_TOL,
};
