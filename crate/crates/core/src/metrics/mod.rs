//! Evaluation: Fréchet distances, AUC and the bag-level MIL classifier.

mod auc;
mod casefd;
mod frechet;
mod mil;

pub use auc::{accuracy, binary_auc, macro_auc};
pub use casefd::{case_fd, case_fd_by_case, CaseFdSummary};
pub use frechet::{fit_stats, frechet_distance, FrechetStats, COV_RIDGE};
pub use mil::{stratified_folds, Bag, ClassificationReport, MilConfig, MilEnsemble, MilModel};
