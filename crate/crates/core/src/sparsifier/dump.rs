use std::fmt::Write as _;

use serde::Deserialize;

use crate::numerics::Tensor2D;

use super::{SparseTokens, SparsifierError, Variant};

/// JSON dump of one tokenization, floats written with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDump {
    pub scene_id: String,
    pub variant: Variant,
    pub roi: Option<Tensor2D>,
    pub scene_tokens: Tensor2D,
    /// Radius of the region search, when the prompt had a location.
    pub final_radius_m: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDump {
    scene_id: String,
    variant: Variant,
    roi_present: bool,
    roi: Option<Vec<Vec<f64>>>,
    scene_tokens: Vec<Vec<f64>>,
    final_radius_m: Option<f64>,
}

/// `d.ddddddddddddddddde±x`; enough digits to round-trip any `f64`.
pub fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(out: &mut String, t: &Tensor2D) {
    out.push('[');
    for r in 0..t.rows() {
        if r > 0 {
            out.push(',');
        }
        out.push('[');
        for (c, v) in t.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_sig17(*v));
        }
        out.push(']');
    }
    out.push(']');
}

impl TokenDump {
    pub fn new(scene_id: &str, variant: Variant, tokens: &SparseTokens) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            variant,
            roi: tokens.roi.clone(),
            scene_tokens: tokens.scene.clone(),
            final_radius_m: tokens.roi_radius,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let id = serde_json::to_string(&self.scene_id).expect("string serializes");
        let _ = write!(s, "{{\"scene_id\":{id},\"variant\":\"{}\",\"roi_present\":{},\"roi\":", self.variant, self.roi.is_some());
        match &self.roi {
            Some(r) => write_matrix(&mut s, r),
            None => s.push_str("null"),
        }
        s.push_str(",\"scene_tokens\":");
        write_matrix(&mut s, &self.scene_tokens);
        s.push_str(",\"final_radius_m\":");
        match self.final_radius_m {
            Some(r) => s.push_str(&format_sig17(r)),
            None => s.push_str("null"),
        }
        s.push_str("}\n");
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SparsifierError> {
        let bad = |m: String| SparsifierError::Config(format!("token dump: {m}"));
        let raw: RawDump = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if raw.roi_present != raw.roi.is_some() {
            return Err(bad("roi_present disagrees with roi".into()));
        }
        let roi = match raw.roi {
            Some(r) => Some(Tensor2D::from_rows(&r)?),
            None => None,
        };
        Ok(Self {
            scene_id: raw.scene_id,
            variant: raw.variant,
            roi,
            scene_tokens: Tensor2D::from_rows(&raw.scene_tokens)?,
            final_radius_m: raw.final_radius_m,
        })
    }
}
