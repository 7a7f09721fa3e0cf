//! Box regression parameterization: offsets are expressed relative to an
//! anchor as (tx, ty, tw, th) with tx = (cx - cax)/wa, tw = log(w/wa).

use super::BBox;
use crate::error::{Error, Result};

pub type BoxDelta = [f64; 4];

pub fn encode_box(target: &BBox, anchor: &BBox) -> Result<BoxDelta> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::invalid("encode_box: anchor must have positive extent".to_string()));
    }
    if target.width() <= 0.0 || target.height() <= 0.0 {
        return Err(Error::invalid("encode_box: target must have positive extent".to_string()));
    }
    let (cx, cy) = target.center();
    let (cax, cay) = anchor.center();
    Ok([
        (cx - cax) / anchor.width(),
        (cy - cay) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ])
}

pub fn decode_box(delta: &BoxDelta, anchor: &BBox) -> Result<BBox> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::invalid("decode_box: anchor must have positive extent".to_string()));
    }
    let (cax, cay) = anchor.center();
    let cx = cax + delta[0] * anchor.width();
    let cy = cay + delta[1] * anchor.height();
    let w = anchor.width() * delta[2].exp();
    let h = anchor.height() * delta[3].exp();
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}
