//! Contrastive and redundancy-reduction objectives with analytic gradients.
//!
//! Everything here is a pure function of its inputs and runs in `f64`.

mod barlow;
mod batch;
mod config;
mod contrastive;
mod similarity;
mod total;

pub use barlow::{barlow_twins_grad, barlow_twins_loss, cross_correlation, cross_correlation_with, BarlowGrad, CrossCorrMatrix};
pub use batch::ContrastBatch;
pub use config::{AnchorPolicy, BtPlacement, LossConfig, LossTerms};
pub use contrastive::{
    group_contrastive_grad, group_contrastive_loss, self_contrastive_grad, self_contrastive_loss, sup_loss,
    sup_loss_grad, view_loss, view_loss_grad, LossGrad,
};
pub use similarity::{similarity_logits, Similarity};
pub use total::{total_loss, BranchOutputs, LossComponents, TotalLoss};
