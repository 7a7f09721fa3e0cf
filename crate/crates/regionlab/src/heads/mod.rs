//! Per-RoI prediction heads and their losses: classification, box
//! regression, decoupled per-class sigmoid masks (plus the multinomial
//! softmax and class-agnostic variants), an MLP mask baseline, and
//! one-hot keypoint masks — together with training-target construction.

mod branches;
mod losses;
mod targets;

pub use branches::{build_mask_branch, BoxHead, KeypointBranch, MaskBranch};
pub use losses::{
    box_loss, cls_loss, keypoint_loss, mask_loss, mean_loss, total_loss, BoxLoss, ClsLoss,
    KeypointLoss, MaskSigmoidLoss, MaskSoftmaxLoss,
};
pub use targets::{make_keypoint_target, make_mask_target, KeypointTarget, MaskTarget};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskVariant {
    /// One binary mask per class under per-pixel sigmoid; the class
    /// branch, not the mask, decides the category.
    SigmoidPerClass,
    /// Per-pixel softmax across classes plus background; couples
    /// segmentation and classification.
    SoftmaxMultinomial,
    /// A single binary mask regardless of class.
    ClassAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Fcn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    /// Foreground classes K; labels are 1..=K with 0 background.
    pub num_classes: usize,
    /// Mask grid resolution m (even; the branch input is m/2).
    pub mask_resolution: usize,
    pub mask_variant: MaskVariant,
    pub branch_kind: BranchKind,
    /// Conv width of the FCN branches.
    pub channel_width: usize,
    /// Hidden width of the MLP mask baseline and the box head.
    pub mlp_hidden: usize,
    /// 0 disables the keypoint head.
    pub keypoint_count: usize,
    pub keypoint_resolution: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            num_classes: 3,
            mask_resolution: 14,
            mask_variant: MaskVariant::SigmoidPerClass,
            branch_kind: BranchKind::Fcn,
            channel_width: 32,
            mlp_hidden: 128,
            keypoint_count: 0,
            keypoint_resolution: 28,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("heads: num_classes must be >= 1".to_string()));
        }
        if self.mask_resolution < 2 || !self.mask_resolution.is_multiple_of(2) {
            return Err(Error::invalid(
                "heads: mask_resolution must be even and >= 2 (the branch doubles m/2)"
                    .to_string(),
            ));
        }
        if self.keypoint_count > 0 {
            if self.keypoint_resolution < self.mask_resolution {
                return Err(Error::invalid(
                    "heads: keypoint_resolution must be >= mask_resolution".to_string(),
                ));
            }
            if !self.keypoint_resolution.is_multiple_of(2) {
                return Err(Error::invalid("heads: keypoint_resolution must be even".to_string()));
            }
        }
        if self.channel_width == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("heads: widths must be positive".to_string()));
        }
        Ok(())
    }

    /// Output channels of the mask branch under the configured variant.
    pub fn mask_channels(&self) -> usize {
        match self.mask_variant {
            MaskVariant::SigmoidPerClass => self.num_classes,
            MaskVariant::SoftmaxMultinomial => self.num_classes + 1,
            MaskVariant::ClassAgnostic => 1,
        }
    }

    /// Channel holding class label k's mask under the configured variant.
    pub fn mask_channel_for(&self, label: usize) -> Result<usize> {
        if label == 0 || label > self.num_classes {
            return Err(Error::invalid(format!(
                "mask channel: label {label} out of range 1..={}",
                self.num_classes
            )));
        }
        Ok(match self.mask_variant {
            MaskVariant::SigmoidPerClass => label - 1,
            // channel 0 is background
            MaskVariant::SoftmaxMultinomial => label,
            MaskVariant::ClassAgnostic => 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_bad_configs() {
        let mut c = HeadConfig::default();
        assert!(c.validate().is_ok());
        c.mask_resolution = 13;
        assert!(c.validate().is_err());
        c.mask_resolution = 14;
        c.keypoint_count = 3;
        c.keypoint_resolution = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn channel_mapping_per_variant() {
        let mut c = HeadConfig { num_classes: 4, ..HeadConfig::default() };
        assert_eq!(c.mask_channels(), 4);
        assert_eq!(c.mask_channel_for(3).unwrap(), 2);
        c.mask_variant = MaskVariant::SoftmaxMultinomial;
        assert_eq!(c.mask_channels(), 5);
        assert_eq!(c.mask_channel_for(3).unwrap(), 3);
        c.mask_variant = MaskVariant::ClassAgnostic;
        assert_eq!(c.mask_channels(), 1);
        assert_eq!(c.mask_channel_for(4).unwrap(), 0);
        assert!(c.mask_channel_for(0).is_err());
        assert!(c.mask_channel_for(5).is_err());
    }
}
