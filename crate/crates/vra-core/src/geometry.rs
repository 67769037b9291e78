//! Face-crop geometry: expand a bounding box about its center by a scale
//! factor and clamp the result to the image. Coordinates stay real-valued;
//! integer pixel snapping is a separate step so the core math is exactly
//! testable.

use crate::error::{Result, VraError};

/// Default expansion factor applied to detector boxes before cropping.
pub const DEFAULT_BOX_SCALE: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BBox> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.x1, self.y1, self.x2, self.y2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(VraError::InvalidBBox("non-finite coordinate".into()));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(VraError::InvalidBBox(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Snap to integer pixels: floor the mins, ceil the maxes.
    pub fn to_pixels(&self) -> (i64, i64, i64, i64) {
        (
            self.x1.floor() as i64,
            self.y1.floor() as i64,
            self.x2.ceil() as i64,
            self.y2.ceil() as i64,
        )
    }
}

/// Scale `b` by `factor` about its center, then clamp to
/// `[0, image_w] x [0, image_h]`.
pub fn scale_bbox(b: &BBox, factor: f64, image_w: f64, image_h: f64) -> Result<BBox> {
    b.validate()?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(VraError::InvalidBBox(format!("bad scale factor {factor}")));
    }
    if !(image_w.is_finite() && image_w > 0.0 && image_h.is_finite() && image_h > 0.0) {
        return Err(VraError::InvalidBBox(format!(
            "bad image dimensions {image_w}x{image_h}"
        )));
    }

    let (cx, cy) = b.center();
    let hw = b.width() / 2.0 * factor;
    let hh = b.height() / 2.0 * factor;
    let scaled = BBox {
        x1: (cx - hw).clamp(0.0, image_w),
        y1: (cy - hh).clamp(0.0, image_h),
        x2: (cx + hw).clamp(0.0, image_w),
        y2: (cy + hh).clamp(0.0, image_h),
    };
    scaled.validate().map_err(|_| {
        VraError::InvalidBBox(format!(
            "box ({}, {}, {}, {}) scaled by {factor} falls outside the {image_w}x{image_h} image",
            b.x1, b.y1, b.x2, b.y2
        ))
    })?;
    Ok(scaled)
}
