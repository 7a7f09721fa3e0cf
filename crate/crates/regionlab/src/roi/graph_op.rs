//! Tape op wrapping RoI extraction. RoI coordinates are constants in the
//! backward pass; only the feature map receives gradient.

use std::any::Any;

use super::backward::roi_backward;
use super::forward::roi_extract;
use super::{Provenance, RoiOpSpec};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::{GraphOp, Tensor};

#[derive(Debug, Clone)]
pub struct RoiExtract {
    pub roi: BBox,
    pub spec: RoiOpSpec,
}

impl GraphOp for RoiExtract {
    fn name(&self) -> &'static str {
        "roi_extract"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let [feature] = inputs else {
            return Err(Error::invalid("roi_extract takes exactly one input".to_string()));
        };
        let out = roi_extract(feature, &self.roi, &self.spec)?;
        Ok((out.values, Some(Box::new(out.provenance))))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let provenance = saved
            .and_then(|s| s.downcast_ref::<Provenance>())
            .ok_or_else(|| Error::invalid("roi_extract: missing provenance".to_string()))?;
        let grad = roi_backward(grad_out, provenance, inputs[0].shape())?;
        Ok(vec![Some(grad)])
    }
}
