//! Operation accounting for binarized layers.
//!
//! For a conv layer with C1 = out-pixels × out-channels and
//! C2 = kernel-area × in-channels, the bitwise work is C1×C2 XNOR/Bitcount
//! plus, with shift scalars, C1 shifts. The `float_ops` column counts only
//! the floating-point scalar multiplies a binarization scheme adds: zero for
//! shift-based and vanilla schemes, C1 for 32-bit-scalar schemes.
//! Full-precision layers are reported separately as MACs.

use crate::error::Result;
use crate::model::ModelSpec;
use serde::Serialize;

/// Scalar handling of the binarization scheme being accounted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ScalarScheme {
    /// Integer shift scalars: 0 float ops, C1×C2 + C1 bitwise.
    Imb,
    /// Per-layer 32-bit scalars: C1 float multiplies, C1×C2 bitwise.
    Xnor,
    /// No scalars at all: 0 float ops, C1×C2 bitwise.
    Vanilla,
}

impl ScalarScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScalarScheme::Imb => "imb",
            ScalarScheme::Xnor => "xnor",
            ScalarScheme::Vanilla => "vanilla",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerOps {
    pub layer: String,
    pub binarized: bool,
    pub c1: u64,
    pub c2: u64,
    /// Float scalar multiplies added by the binarization scheme.
    pub float_ops: u64,
    /// XNOR + Bitcount (+ Shift) operations.
    pub bitwise_ops: u64,
    /// MACs for full-precision layers, zero for binarized ones.
    pub full_precision_macs: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OpsReport {
    pub scheme: String,
    pub layers: Vec<LayerOps>,
    pub float_ops: u64,
    pub bitwise_ops: u64,
    pub full_precision_macs: u64,
}

pub fn count_ops(spec: &ModelSpec, scheme: ScalarScheme) -> Result<OpsReport> {
    let mut layers = Vec::new();
    let mut float_total = 0u64;
    let mut bitwise_total = 0u64;
    let mut fp_total = 0u64;
    for g in spec.param_layer_geometries()? {
        let (float_ops, bitwise_ops, fp_macs) = if g.binarized {
            match scheme {
                ScalarScheme::Imb => (0, g.c1 * g.c2 + g.c1, 0),
                ScalarScheme::Xnor => (g.c1, g.c1 * g.c2, 0),
                ScalarScheme::Vanilla => (0, g.c1 * g.c2, 0),
            }
        } else {
            (0, 0, g.c1 * g.c2)
        };
        float_total += float_ops;
        bitwise_total += bitwise_ops;
        fp_total += fp_macs;
        layers.push(LayerOps {
            layer: g.name,
            binarized: g.binarized,
            c1: g.c1,
            c2: g.c2,
            float_ops,
            bitwise_ops,
            full_precision_macs: fp_macs,
        });
    }
    Ok(OpsReport {
        scheme: scheme.as_str().to_string(),
        layers,
        float_ops: float_total,
        bitwise_ops: bitwise_total,
        full_precision_macs: fp_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::desk_cnn;

    #[test]
    fn imb_layers_need_zero_float_ops() {
        let spec = desk_cnn(1, 28, 28, 10);
        let report = count_ops(&spec, ScalarScheme::Imb).unwrap();
        assert_eq!(report.float_ops, 0);
        // bconv1: 16 ch × 14×14 out, 3×3×8 patch
        let b1 = report.layers.iter().find(|l| l.layer == "bconv1").unwrap();
        assert_eq!(b1.c1, 16 * 14 * 14);
        assert_eq!(b1.c2, 9 * 8);
        assert_eq!(b1.bitwise_ops, b1.c1 * b1.c2 + b1.c1);
        assert_eq!(b1.float_ops, 0);
    }

    #[test]
    fn xnor_scheme_charges_c1_floats() {
        let spec = desk_cnn(1, 28, 28, 10);
        let report = count_ops(&spec, ScalarScheme::Xnor).unwrap();
        let b1 = report.layers.iter().find(|l| l.layer == "bconv1").unwrap();
        assert_eq!(b1.float_ops, b1.c1);
        assert_eq!(b1.bitwise_ops, b1.c1 * b1.c2);
        assert!(report.float_ops > 0);
    }
}
