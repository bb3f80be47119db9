//! Analytic multiply-accumulate and parameter model.
//!
//! One MAC is one FLOP unit throughout: bias additions, activations,
//! pooling, resizing, and per-channel affines cost zero. A standard
//! convolution over an `out_h x out_w` output costs
//! `out_h * out_w * in_ch * k^2 * out_ch`, and the CSL block decomposes into
//! the five terms of [`csl_macs`]. These closed forms are the independent
//! oracle the empirical [`MacCounter`](crate::tensor::MacCounter) is checked
//! against.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{LayerOp, Network};
use crate::tensor::{MacCounter, Real, Shape};

/// Shape of a convolution-replacement query: an `in_ch -> out_ch` layer
/// producing an `out_h x out_w` map with kernel `k`, plus the expansion
/// ratio `t` used by the CSL decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvShapeQuery {
    pub out_h: usize,
    pub out_w: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub expansion: f64,
}

impl ConvShapeQuery {
    pub fn new(
        out_h: usize,
        out_w: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        expansion: f64,
    ) -> Self {
        ConvShapeQuery {
            out_h,
            out_w,
            in_ch,
            out_ch,
            kernel,
            expansion,
        }
    }

    fn validate(&self) -> Result<()> {
        for (context, value) in [
            ("query out_h", self.out_h),
            ("query out_w", self.out_w),
            ("query in_ch", self.in_ch),
            ("query out_ch", self.out_ch),
            ("query kernel", self.kernel),
        ] {
            if value == 0 {
                return Err(Error::InvalidDim { context, value });
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::EvenKernel {
                kernel: self.kernel,
            });
        }
        if self.expansion < 1.0 {
            return Err(Error::Constraint {
                name: "expansion",
                detail: format!("expansion {} must be >= 1", self.expansion),
            });
        }
        Ok(())
    }

    /// `out_ch / 2` and `t * out_ch / 2`, rejecting fractional splits.
    fn split(&self) -> Result<(u64, u64)> {
        let half = self.out_ch as f64 / 2.0;
        let expanded = self.expansion * half;
        if num_traits::Float::fract(half) != 0.0 || num_traits::Float::fract(expanded) != 0.0 {
            return Err(Error::ChannelSplit {
                out_ch: self.out_ch,
                expansion: self.expansion,
            });
        }
        Ok((half as u64, expanded as u64))
    }
}

/// MACs of a standard convolution: `out_h * out_w * in_ch * k^2 * out_ch`.
pub fn conv_macs(q: &ConvShapeQuery) -> u64 {
    let hw = (q.out_h * q.out_w) as u64;
    hw * q.in_ch as u64 * (q.kernel * q.kernel) as u64 * q.out_ch as u64
}

/// Human-readable names for the five CSL cost terms, in evaluation order.
pub const CSL_TERM_NAMES: [&str; 5] = [
    "skip pointwise",
    "candidate depthwise",
    "input depthwise",
    "fused depthwise",
    "projection pointwise",
];

/// The five-term CSL cost decomposition and its total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CslBreakdown {
    pub terms: [u64; 5],
    pub total: u64,
}

/// MACs of a CSL block replacing an `in_ch -> out_ch`, kernel-`k`
/// convolution at stride 1, split into its five terms:
/// skip pointwise `hw * c * n/2`, candidate depthwise `t * hw * k^2 * n/2`,
/// input depthwise `hw * c * k^2`, fused depthwise `hw * (c + t*n/2) * k^2`,
/// and projection pointwise `hw * (c + t*n/2) * n/2`.
pub fn csl_macs(q: &ConvShapeQuery) -> Result<CslBreakdown> {
    q.validate()?;
    let (half, expanded) = q.split()?;
    let hw = (q.out_h * q.out_w) as u64;
    let c = q.in_ch as u64;
    let k2 = (q.kernel * q.kernel) as u64;
    let fused_ch = c + expanded;
    let terms = [
        hw * c * half,
        hw * k2 * expanded,
        hw * c * k2,
        hw * fused_ch * k2,
        hw * fused_ch * half,
    ];
    Ok(CslBreakdown {
        terms,
        total: terms.iter().sum(),
    })
}

/// Exact ratio of standard-convolution MACs to CSL MACs for the same query.
/// For `in_ch = out_ch` and `k = 3` it approaches [`speedup_limit`] as the
/// channel count grows.
pub fn speedup_ratio(q: &ConvShapeQuery) -> Result<f64> {
    let csl = csl_macs(q)?;
    Ok(conv_macs(q) as f64 / csl.total as f64)
}

/// Asymptotic speed-up `9 / (1 + 0.25 t)` of the CSL block over a 3x3
/// convolution with equal input and output channels.
pub fn speedup_limit(expansion: f64) -> f64 {
    9.0 / (1.0 + 0.25 * expansion)
}

/// Footnote appended to cost reports: the speed-up the decomposition
/// actually yields at the common expansion ratios.
pub fn speedup_note() -> String {
    format!(
        "speed-up vs a 3x3 convolution (in_ch = out_ch, asymptotic 9/(1+0.25t)): \
         t=2 -> {:.2}x, t=3 -> {:.2}x. The 7.2x figure sometimes quoted for t=2 \
         does not follow from the closed form; the t=3 value matches the usual 5.1x.",
        speedup_limit(2.0),
        speedup_limit(3.0)
    )
}

/// One layer application in a cost report.
#[derive(Clone, Debug)]
pub struct CostRow {
    pub name: String,
    pub output_shape: Shape,
    pub analytic_macs: u64,
    pub empirical_macs: Option<u64>,
    /// Parameters first referenced by this row; shared parameters count at
    /// their first use only, so the column sums to the network total.
    pub params: u64,
}

/// Per-layer and aggregate cost of a fully shaped network.
#[derive(Clone, Debug)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub input_shape: Shape,
}

impl CostReport {
    pub fn total_analytic(&self) -> u64 {
        self.rows.iter().map(|r| r.analytic_macs).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    /// Total empirical MACs, present once every row has been verified.
    pub fn total_empirical(&self) -> Option<u64> {
        self.rows
            .iter()
            .map(|r| r.empirical_macs)
            .sum::<Option<u64>>()
    }

    /// Copies per-layer counts out of a forward-pass counter.
    pub fn attach_empirical(&mut self, counter: &MacCounter) {
        for row in &mut self.rows {
            row.empirical_macs = Some(counter.of(&row.name));
        }
    }

    /// Rows whose empirical count disagrees with the analytic model.
    pub fn mismatches(&self) -> Vec<&CostRow> {
        self.rows
            .iter()
            .filter(|r| r.empirical_macs.is_some_and(|e| e != r.analytic_macs))
            .collect()
    }

    /// Plain-text aligned table of every layer plus totals.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["layer".len(), "total".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_w$}  {:>18}  {:>14}  {:>14}  {:>12}\n",
            "layer", "output shape", "analytic MACs", "empirical", "params"
        ));
        for r in &self.rows {
            let emp = match r.empirical_macs {
                Some(e) => format!("{e}"),
                None => String::from("-"),
            };
            out.push_str(&format!(
                "{:<name_w$}  {:>18}  {:>14}  {:>14}  {:>12}\n",
                r.name,
                format!("{}", r.output_shape),
                r.analytic_macs,
                emp,
                r.params
            ));
        }
        let emp_total = match self.total_empirical() {
            Some(e) => format!("{e}"),
            None => String::from("-"),
        };
        out.push_str(&format!(
            "{:<name_w$}  {:>18}  {:>14}  {:>14}  {:>12}\n",
            "total",
            format!("input {}", self.input_shape),
            self.total_analytic(),
            emp_total,
            self.total_params()
        ));
        out.push_str(&format!(
            "totals: {:.2} MMACs, {:.3} Mparams\n",
            self.total_analytic() as f64 / 1e6,
            self.total_params() as f64 / 1e6
        ));
        out
    }

    /// CSV rendering with columns layer, analytic_macs, empirical_macs,
    /// params.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,analytic_macs,empirical_macs,params\n");
        for r in &self.rows {
            let emp = r.empirical_macs.map(|e| format!("{e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.name, r.analytic_macs, emp, r.params
            ));
        }
        out
    }
}

/// Closed-form MACs of one graph layer given its input/output shapes.
fn layer_macs(op: &LayerOp, in_ch: usize, out_shape: Shape) -> u64 {
    let hw = (out_shape.height * out_shape.width) as u64;
    match op {
        LayerOp::Conv { kernel, .. } => {
            hw * in_ch as u64 * (kernel * kernel) as u64 * out_shape.channels as u64
        }
        LayerOp::DepthwiseConv { kernel, .. } => {
            // out channels already include the multiplier
            hw * out_shape.channels as u64 * (kernel * kernel) as u64
        }
        LayerOp::Pointwise { .. } => hw * in_ch as u64 * out_shape.channels as u64,
        _ => 0,
    }
}

/// Walks a fully shaped network and prices every layer: analytic MACs per
/// batch item plus parameter counts (shared parameters counted once, at
/// first use).
pub fn network_cost<T: Real>(net: &Network<T>) -> CostReport {
    let mut rows = Vec::with_capacity(net.nodes().len());
    let mut seen = alloc::collections::BTreeSet::new();
    for node in net.nodes() {
        let in_ch = node
            .inputs
            .first()
            .map(|&id| net.node(id).out_shape.channels)
            .unwrap_or(0);
        let mut params = 0u64;
        for pid in node.op.param_ids() {
            if seen.insert(pid) {
                params += net.param(pid).value.shape().volume() as u64;
            }
        }
        rows.push(CostRow {
            name: node.name.clone(),
            output_shape: node.out_shape,
            analytic_macs: layer_macs(&node.op, in_ch, node.out_shape),
            empirical_macs: None,
            params,
        });
    }
    CostReport {
        rows,
        input_shape: net.input_shape(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_macs_reference_values() {
        assert_eq!(
            conv_macs(&ConvShapeQuery::new(32, 32, 16, 16, 3, 1.0)),
            2_359_296
        );
        assert_eq!(conv_macs(&ConvShapeQuery::new(1, 1, 1, 1, 1, 1.0)), 1);
        assert_eq!(
            conv_macs(&ConvShapeQuery::new(52, 52, 256, 256, 3, 1.0)),
            1_594_884_096
        );
    }

    #[test]
    fn csl_macs_reference_decompositions() {
        let b = csl_macs(&ConvShapeQuery::new(32, 32, 16, 16, 3, 2.0)).unwrap();
        assert_eq!(b.terms, [131_072, 147_456, 147_456, 294_912, 262_144]);
        assert_eq!(b.total, 983_040);

        let b = csl_macs(&ConvShapeQuery::new(1, 1, 2, 2, 1, 2.0)).unwrap();
        assert_eq!(b.terms, [2, 2, 2, 4, 4]);
        assert_eq!(b.total, 14);
    }

    #[test]
    fn csl_macs_rejects_fractional_split() {
        let err = csl_macs(&ConvShapeQuery::new(4, 4, 8, 7, 3, 2.0)).unwrap_err();
        assert!(matches!(err, Error::ChannelSplit { .. }));
        let err = csl_macs(&ConvShapeQuery::new(4, 4, 8, 2, 3, 1.5)).unwrap_err();
        assert!(matches!(err, Error::ChannelSplit { .. }));
    }

    #[test]
    fn speedup_matches_quotient_and_limit() {
        let q = ConvShapeQuery::new(32, 32, 16, 16, 3, 2.0);
        let r = speedup_ratio(&q).unwrap();
        assert!((r - 2.4).abs() < 1e-12);

        for (t, stated) in [(3.0, 5.142857142857143), (2.0, 6.0)] {
            let q = ConvShapeQuery::new(1, 1, 8192, 8192, 3, t);
            let r = speedup_ratio(&q).unwrap();
            assert!((r - stated).abs() / stated < 0.01, "t={t}: {r} vs {stated}");
            assert!((speedup_limit(t) - stated).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_reference_values() {
        use crate::graph::GraphBuilder;
        use crate::ops::Padding;
        use crate::tensor::Shape;

        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 16, 8, 8), 0);
        let x = b.input();
        let conv = b.conv("conv", x, 16, 3, 1, Padding::Same, true).unwrap();
        let dw = b.depthwise("dw", conv, 1, 3, 1, Padding::Same).unwrap();
        let pw = b.pointwise("pw", dw, 16, false).unwrap();
        let net = b.finish(alloc::vec![pw]);
        // 3x3 conv 16->16: 2304 weights + 16 bias.
        assert_eq!(net.node_params(conv), 2304 + 16);
        // depthwise 3x3 over 16 channels, multiplier 1: 144 weights.
        assert_eq!(net.node_params(dw), 144);
        // 1x1 conv with in = out = 16: 256 weights.
        assert_eq!(net.node_params(pw), 256);
        let report = network_cost(&net);
        assert_eq!(report.total_params(), net.total_params());
    }

    #[test]
    fn breakdown_total_is_term_sum() {
        for (h, c, n, k, t) in [(5, 6, 8, 3, 2.0), (7, 12, 10, 5, 3.0), (3, 4, 4, 1, 2.0)] {
            let b = csl_macs(&ConvShapeQuery::new(h, h, c, n, k, t)).unwrap();
            assert_eq!(b.total, b.terms.iter().sum::<u64>());
        }
    }
}
