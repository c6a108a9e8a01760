//! Reverse-mode automatic differentiation on an arena graph.
//!
//! Nodes live in a flat `Vec` inside [`Graph`]; construction order is
//! topological order, values are computed eagerly at construction, and
//! [`Graph::backward`] walks the arena once in reverse. A graph is built
//! per forward pass (one training pair at a time), so batching is the
//! caller's job: run one graph per pair and average the leaf gradients.
//!
//! Backward frees interior gradient buffers as soon as they have been
//! consumed and keeps gradients only for leaves; correspondence graphs
//! over long series would otherwise hold every intermediate map alive.

pub(crate) mod kernels;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;

/// Handle to a node in one [`Graph`]. Ids are only meaningful for the
/// graph that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv1dDims {
    b: usize,
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    pad: usize,
    l_out: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dims: ConvDims,
    },
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dims: Conv1dDims,
    },
    /// Batch statistics were computed from this forward's activations.
    BnTrain {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Running statistics entered as constants; only the affine map is live.
    BnEval {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        input: NodeId,
    },
    MaxPool2x2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2x2 {
        input: NodeId,
    },
    /// Zero padding on the bottom/right edges of the last two axes.
    PadBottomRight {
        input: NodeId,
    },
    /// Top-left crop of the last two axes.
    CropTo {
        input: NodeId,
    },
    RowSoftmax {
        input: NodeId,
    },
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
    },
    Transpose2d {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    AddConst {
        input: NodeId,
    },
    FrobeniusSq {
        input: NodeId,
    },
    SumAll {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
}

struct NodeData {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Result of a training-mode batch norm: the output node plus the batch
/// statistics the caller folds into its running estimates.
pub struct BnTrainOut {
    pub node: NodeId,
    pub batch_mean: Tensor,
    pub batch_var: Tensor,
}

/// Arena computation graph. Build ops against it, call
/// [`Graph::backward`] on a scalar loss once, then read leaf gradients
/// with [`Graph::grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward root w.r.t. this leaf; `None` before
    /// backward has run or for non-leaf/constant nodes.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Differentiable leaf (a parameter or an input under study).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(NodeData {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape_err(&self, context: &'static str, left: &[usize], right: &[usize]) -> CoreError {
        CoreError::ShapeMismatch {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// 2-D convolution of `[B,Cin,H,W]` with `[Cout,Cin,k,k]` weights.
    /// The padded extent minus the kernel must divide the stride exactly.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(self.shape_err("conv2d rank", xs, ws));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin || k != k2 {
            return Err(self.shape_err("conv2d weight", xs, ws));
        }
        if bs != [cout] {
            return Err(self.shape_err("conv2d bias", &[cout], bs));
        }
        if stride == 0 {
            return Err(CoreError::InvalidArgument {
                context: "conv2d",
                detail: alloc::format!("stride must be positive"),
            });
        }
        let h_pad = h + 2 * padding;
        let w_pad = w + 2 * padding;
        if h_pad < k || w_pad < k || (h_pad - k) % stride != 0 || (w_pad - k) % stride != 0 {
            return Err(CoreError::InvalidArgument {
                context: "conv2d",
                detail: alloc::format!(
                    "kernel {k} stride {stride} padding {padding} does not tile a {h}x{w} input exactly"
                ),
            });
        }
        let h_out = (h_pad - k) / stride + 1;
        let w_out = (w_pad - k) / stride + 1;
        let dims = ConvDims {
            b,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad: padding,
            h_out,
            w_out,
        };

        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let howo = h_out * w_out;
        let mut y = vec![0.0; b * cout * howo];
        for bi in 0..b {
            let col = kernels::im2col(
                &x[bi * cin * h * w..(bi + 1) * cin * h * w],
                cin,
                h,
                w,
                k,
                stride,
                padding,
                h_out,
                w_out,
            );
            let yb = &mut y[bi * cout * howo..(bi + 1) * cout * howo];
            kernels::matmul_acc(wd, &col, yb, cout, cin * k * k, howo);
            for co in 0..cout {
                let bias_v = bd[co];
                for v in &mut yb[co * howo..(co + 1) * howo] {
                    *v += bias_v;
                }
            }
        }
        let requires = self.requires(&[input, weight, bias]);
        Ok(self.push(
            Tensor::from_raw(vec![b, cout, h_out, w_out], y),
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            },
            requires,
        ))
    }

    /// 1-D convolution of `[B,Cin,L]` with `[Cout,Cin,k]` weights, stride 1.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, padding: usize) -> Result<NodeId> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(self.shape_err("conv1d rank", xs, ws));
        }
        let (b, cin, l) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(self.shape_err("conv1d weight", xs, ws));
        }
        if bs != [cout] {
            return Err(self.shape_err("conv1d bias", &[cout], bs));
        }
        if l + 2 * padding < k {
            return Err(CoreError::InvalidArgument {
                context: "conv1d",
                detail: alloc::format!("kernel {k} exceeds padded length {}", l + 2 * padding),
            });
        }
        let l_out = l + 2 * padding - k + 1;
        let dims = Conv1dDims {
            b,
            cin,
            l,
            cout,
            k,
            pad: padding,
            l_out,
        };
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut y = vec![0.0; b * cout * l_out];
        for bi in 0..b {
            let col = kernels::im2col1d(&x[bi * cin * l..(bi + 1) * cin * l], cin, l, k, padding, l_out);
            let yb = &mut y[bi * cout * l_out..(bi + 1) * cout * l_out];
            kernels::matmul_acc(wd, &col, yb, cout, cin * k, l_out);
            for co in 0..cout {
                let bias_v = bd[co];
                for v in &mut yb[co * l_out..(co + 1) * l_out] {
                    *v += bias_v;
                }
            }
        }
        let requires = self.requires(&[input, weight, bias]);
        Ok(self.push(
            Tensor::from_raw(vec![b, cout, l_out], y),
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            },
            requires,
        ))
    }

    fn bn_check(&self, input: NodeId, gamma: NodeId, beta: NodeId) -> Result<(usize, usize, usize)> {
        let xs = self.value(input).shape();
        if xs.len() < 3 {
            return Err(self.shape_err("batch_norm rank", xs, &[]));
        }
        let (b, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(self.shape_err("batch_norm affine", &[c], self.value(gamma).shape()));
        }
        Ok((b, c, inner))
    }

    /// Training-mode batch norm over the channel axis of `[B,C,...]`.
    /// Statistics are the biased moments of this forward's activations;
    /// errors with [`CoreError::UndefinedVariance`] when a channel sees
    /// fewer than two values. Running stats are the caller's to update
    /// from the returned batch moments (the training loop uses momentum
    /// 0.1).
    pub fn batch_norm_train(&mut self, input: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<BnTrainOut> {
        let (b, c, inner) = self.bn_check(input, gamma, beta)?;
        if b * inner < 2 {
            return Err(CoreError::UndefinedVariance);
        }
        let x = self.value(input).data();
        let (mean, var) = kernels::bn_stats(x, b, c, inner);
        let inv_std = kernels::inv_std_from_var(&var, eps);
        let y = kernels::bn_apply(
            x,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &inv_std,
            b,
            c,
            inner,
        );
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input, gamma, beta]);
        let batch_mean = Tensor::from_raw(vec![c], mean.clone());
        let batch_var = Tensor::from_raw(vec![c], var);
        let node = self.push(
            Tensor::from_raw(shape, y),
            Op::BnTrain {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
            requires,
        );
        Ok(BnTrainOut {
            node,
            batch_mean,
            batch_var,
        })
    }

    /// Inference-mode batch norm using frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<NodeId> {
        let (b, c, inner) = self.bn_check(input, gamma, beta)?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(self.shape_err("batch_norm running stats", &[c], running_mean.shape()));
        }
        let inv_std = kernels::inv_std_from_var(running_var.data(), eps);
        let mean = running_mean.data().to_vec();
        let y = kernels::bn_apply(
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &inv_std,
            b,
            c,
            inner,
        );
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::from_raw(shape, y),
            Op::BnEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
            requires,
        ))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let y: Vec<f64> = self.value(input).data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::Relu { input }, requires))
    }

    /// 2x2 max pooling with stride 2 over `[B,C,H,W]`. Both spatial
    /// extents must be even — callers pad first. Ties resolve to the
    /// first element in row-major scan order.
    pub fn maxpool2x2(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return Err(self.shape_err("maxpool2x2 rank", xs, &[]));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(CoreError::InvalidArgument {
                context: "maxpool2x2",
                detail: alloc::format!("spatial extents {h}x{w} must be even"),
            });
        }
        let x = self.value(input).data();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = vec![0.0; b * c * ho * wo];
        let mut argmax = vec![0u32; y.len()];
        for bc in 0..b * c {
            let xmap = &x[bc * h * w..(bc + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let at = (2 * i + di) * w + (2 * j + dj);
                        if xmap[at] > best {
                            best = xmap[at];
                            best_at = at;
                        }
                    }
                    let o = bc * ho * wo + i * wo + j;
                    y[o] = best;
                    argmax[o] = (bc * h * w + best_at) as u32;
                }
            }
        }
        let requires = self.requires(&[input]);
        Ok(self.push(
            Tensor::from_raw(vec![b, c, ho, wo], y),
            Op::MaxPool2x2 { input, argmax },
            requires,
        ))
    }

    /// Nearest-neighbor 2x upsampling of `[B,C,H,W]`; backward sums each
    /// output 2x2 block into its source element.
    pub fn upsample2x2(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return Err(self.shape_err("upsample2x2 rank", xs, &[]));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let x = self.value(input).data();
        let mut y = vec![0.0; b * c * 4 * h * w];
        for bc in 0..b * c {
            let xmap = &x[bc * h * w..(bc + 1) * h * w];
            let ymap = &mut y[bc * 4 * h * w..(bc + 1) * 4 * h * w];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    ymap[i * 2 * w + j] = xmap[(i / 2) * w + j / 2];
                }
            }
        }
        let requires = self.requires(&[input]);
        Ok(self.push(
            Tensor::from_raw(vec![b, c, 2 * h, 2 * w], y),
            Op::Upsample2x2 { input },
            requires,
        ))
    }

    /// Zero-pads the bottom and right edges of the last two axes.
    pub fn pad_bottom_right(&mut self, input: NodeId, bottom: usize, right: usize) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return Err(self.shape_err("pad_bottom_right rank", xs, &[]));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (hp, wp) = (h + bottom, w + right);
        let x = self.value(input).data();
        let mut y = vec![0.0; b * c * hp * wp];
        for bc in 0..b * c {
            for i in 0..h {
                let src = &x[bc * h * w + i * w..bc * h * w + (i + 1) * w];
                let dst = &mut y[bc * hp * wp + i * wp..bc * hp * wp + i * wp + w];
                dst.copy_from_slice(src);
            }
        }
        let requires = self.requires(&[input]);
        Ok(self.push(
            Tensor::from_raw(vec![b, c, hp, wp], y),
            Op::PadBottomRight { input },
            requires,
        ))
    }

    /// Keeps the top-left `h x w` window of the last two axes.
    pub fn crop_to(&mut self, input: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return Err(self.shape_err("crop_to rank", xs, &[]));
        }
        let (b, c, hi, wi) = (xs[0], xs[1], xs[2], xs[3]);
        if h > hi || w > wi || h == 0 || w == 0 {
            return Err(CoreError::InvalidArgument {
                context: "crop_to",
                detail: alloc::format!("crop {h}x{w} does not fit input {hi}x{wi}"),
            });
        }
        let x = self.value(input).data();
        let mut y = vec![0.0; b * c * h * w];
        for bc in 0..b * c {
            for i in 0..h {
                let src = &x[bc * hi * wi + i * wi..bc * hi * wi + i * wi + w];
                y[bc * h * w + i * w..bc * h * w + (i + 1) * w].copy_from_slice(src);
            }
        }
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(vec![b, c, h, w], y), Op::CropTo { input }, requires))
    }

    /// Softmax over the last axis of a rank-2 tensor; every row of the
    /// result sums to one.
    pub fn row_softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 2 {
            return Err(self.shape_err("row_softmax rank", xs, &[]));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let y = kernels::row_softmax(self.value(input).data(), rows, cols);
        let requires = self.requires(&[input]);
        Ok(self.push(
            Tensor::from_raw(vec![rows, cols], y),
            Op::RowSoftmax { input },
            requires,
        ))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let ls = self.value(lhs).shape();
        let rs = self.value(rhs).shape();
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(self.shape_err("matmul", ls, rs));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut y = vec![0.0; m * n];
        kernels::matmul_acc(self.value(lhs).data(), self.value(rhs).data(), &mut y, m, k, n);
        let requires = self.requires(&[lhs, rhs]);
        Ok(self.push(Tensor::from_raw(vec![m, n], y), Op::MatMul { lhs, rhs }, requires))
    }

    /// Rank-2 transpose.
    pub fn transpose2d(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape();
        if xs.len() != 2 {
            return Err(self.shape_err("transpose2d rank", xs, &[]));
        }
        let (m, n) = (xs[0], xs[1]);
        let y = kernels::transpose(self.value(input).data(), m, n);
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(vec![n, m], y), Op::Transpose2d { input }, requires))
    }

    /// Concatenates two `[B,C,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(self.shape_err("concat_channels", sa, sb));
        }
        let (bn, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut y = vec![0.0; bn * (ca + cb) * hw];
        for bi in 0..bn {
            let dst = &mut y[bi * (ca + cb) * hw..];
            dst[..ca * hw].copy_from_slice(&xa[bi * ca * hw..(bi + 1) * ca * hw]);
            dst[ca * hw..(ca + cb) * hw].copy_from_slice(&xb[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let shape = vec![bn, ca + cb, sa[2], sa[3]];
        let requires = self.requires(&[a, b]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::ConcatChannels { a, b }, requires))
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(self.shape_err("add", sa, sb));
        }
        let y: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &z)| x + z)
            .collect();
        let shape = sa.to_vec();
        let requires = self.requires(&[a, b]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::Add { a, b }, requires))
    }

    /// Elementwise difference of same-shape tensors.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(self.shape_err("sub", sa, sb));
        }
        let y: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &z)| x - z)
            .collect();
        let shape = sa.to_vec();
        let requires = self.requires(&[a, b]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::Sub { a, b }, requires))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let y: Vec<f64> = self.value(input).data().iter().map(|&v| v * factor).collect();
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::Scale { input, factor }, requires))
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, input: NodeId, offset: f64) -> Result<NodeId> {
        let y: Vec<f64> = self.value(input).data().iter().map(|&v| v + offset).collect();
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(shape, y), Op::AddConst { input }, requires))
    }

    /// Sum of squared elements, as a scalar node.
    pub fn frobenius_sq(&mut self, input: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(input).data().iter().map(|&v| v * v).sum();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::FrobeniusSq { input }, requires))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(input).data().iter().sum();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::SumAll { input }, requires))
    }

    /// Volume-preserving shape change.
    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(input).len() || shape.is_empty() || shape.len() > 4 {
            return Err(self.shape_err("reshape", self.value(input).shape(), shape));
        }
        let y = self.value(input).data().to_vec();
        let requires = self.requires(&[input]);
        Ok(self.push(Tensor::from_raw(shape.to_vec(), y), Op::Reshape { input }, requires))
    }

    /// Reverse-mode sweep from a scalar root. Visits each node once in
    /// reverse construction (= topological) order, accumulating into
    /// parents; afterwards every differentiable leaf holds a gradient —
    /// zeros when the root does not depend on it. A second call on the
    /// same graph errors with [`CoreError::BackwardConsumed`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.consumed {
            return Err(CoreError::BackwardConsumed);
        }
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(CoreError::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.dispatch(i, &gy, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.grad = Some(Tensor::from_raw(node.value.shape().to_vec(), data));
            }
        }
        Ok(())
    }

    /// Routes one node's output gradient into its parents' buffers.
    fn dispatch(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Allocates a parent's buffer on first touch; constants are
        // skipped so gradient work stops at non-differentiable frontiers.
        macro_rules! buf {
            ($id:expr) => {{
                let p = $id.0;
                if self.nodes[p].requires_grad {
                    Some(grads[p].get_or_insert_with(|| vec![0.0; self.nodes[p].value.len()]))
                } else {
                    None
                }
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaves are never dispatched"),
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            } => {
                let d = *dims;
                let howo = d.h_out * d.w_out;
                let ckk = d.cin * d.k * d.k;
                let x = self.nodes[input.0].value.data();
                let wd = self.nodes[weight.0].value.data();
                let want_dx = self.nodes[input.0].requires_grad;
                let want_dw = self.nodes[weight.0].requires_grad;
                let want_db = self.nodes[bias.0].requires_grad;
                let wt = if want_dx {
                    kernels::transpose(wd, d.cout, ckk)
                } else {
                    Vec::new()
                };
                for bi in 0..d.b {
                    let gyb = &gy[bi * d.cout * howo..(bi + 1) * d.cout * howo];
                    if want_db {
                        let db = grads[bias.0].get_or_insert_with(|| vec![0.0; d.cout]);
                        for co in 0..d.cout {
                            db[co] += gyb[co * howo..(co + 1) * howo].iter().sum::<f64>();
                        }
                    }
                    if want_dw || want_dx {
                        let xb = &x[bi * d.cin * d.h * d.w..(bi + 1) * d.cin * d.h * d.w];
                        if want_dw {
                            // dW = gY · colᵀ, built per batch item; the
                            // column buffer is recomputed rather than
                            // cached through the forward pass.
                            let col = kernels::im2col(xb, d.cin, d.h, d.w, d.k, d.stride, d.pad, d.h_out, d.w_out);
                            let colt = kernels::transpose(&col, ckk, howo);
                            let dw = grads[weight.0].get_or_insert_with(|| vec![0.0; d.cout * ckk]);
                            kernels::matmul_acc(gyb, &colt, dw, d.cout, howo, ckk);
                        }
                        if want_dx {
                            let mut dcol = vec![0.0; ckk * howo];
                            kernels::matmul_acc(&wt, gyb, &mut dcol, ckk, d.cout, howo);
                            let dx = grads[input.0].get_or_insert_with(|| vec![0.0; x.len()]);
                            kernels::col2im_acc(
                                &dcol,
                                d.cin,
                                d.h,
                                d.w,
                                d.k,
                                d.stride,
                                d.pad,
                                d.h_out,
                                d.w_out,
                                &mut dx[bi * d.cin * d.h * d.w..(bi + 1) * d.cin * d.h * d.w],
                            );
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            } => {
                let d = *dims;
                let ck = d.cin * d.k;
                let x = self.nodes[input.0].value.data();
                let wd = self.nodes[weight.0].value.data();
                let want_dx = self.nodes[input.0].requires_grad;
                let want_dw = self.nodes[weight.0].requires_grad;
                let want_db = self.nodes[bias.0].requires_grad;
                let wt = if want_dx {
                    kernels::transpose(wd, d.cout, ck)
                } else {
                    Vec::new()
                };
                for bi in 0..d.b {
                    let gyb = &gy[bi * d.cout * d.l_out..(bi + 1) * d.cout * d.l_out];
                    if want_db {
                        let db = grads[bias.0].get_or_insert_with(|| vec![0.0; d.cout]);
                        for co in 0..d.cout {
                            db[co] += gyb[co * d.l_out..(co + 1) * d.l_out].iter().sum::<f64>();
                        }
                    }
                    let xb = &x[bi * d.cin * d.l..(bi + 1) * d.cin * d.l];
                    if want_dw {
                        let col = kernels::im2col1d(xb, d.cin, d.l, d.k, d.pad, d.l_out);
                        let colt = kernels::transpose(&col, ck, d.l_out);
                        let dw = grads[weight.0].get_or_insert_with(|| vec![0.0; d.cout * ck]);
                        kernels::matmul_acc(gyb, &colt, dw, d.cout, d.l_out, ck);
                    }
                    if want_dx {
                        let mut dcol = vec![0.0; ck * d.l_out];
                        kernels::matmul_acc(&wt, gyb, &mut dcol, ck, d.cout, d.l_out);
                        let dx = grads[input.0].get_or_insert_with(|| vec![0.0; x.len()]);
                        kernels::col2im1d_acc(
                            &dcol,
                            d.cin,
                            d.l,
                            d.k,
                            d.pad,
                            d.l_out,
                            &mut dx[bi * d.cin * d.l..(bi + 1) * d.cin * d.l],
                        );
                    }
                }
            }
            Op::BnTrain {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xs = self.nodes[input.0].value.shape();
                let (b, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let m = (b * inner) as f64;
                let x = self.nodes[input.0].value.data();
                let g = self.nodes[gamma.0].value.data();
                // Channel sums first: dβ_c = Σ gy, dγ_c = Σ gy·x̂.
                let mut sum_gy = vec![0.0; c];
                let mut sum_gy_xhat = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * inner;
                        let (mu, s) = (mean[ci], inv_std[ci]);
                        for t in 0..inner {
                            let xhat = (x[base + t] - mu) * s;
                            sum_gy[ci] += gy[base + t];
                            sum_gy_xhat[ci] += gy[base + t] * xhat;
                        }
                    }
                }
                if let Some(dbeta) = buf!(beta) {
                    for ci in 0..c {
                        dbeta[ci] += sum_gy[ci];
                    }
                }
                if let Some(dgamma) = buf!(gamma) {
                    for ci in 0..c {
                        dgamma[ci] += sum_gy_xhat[ci];
                    }
                }
                if let Some(dx) = buf!(input) {
                    // dx = γ·s/m · (m·gy − Σgy − x̂·Σ(gy·x̂)), the batch
                    // statistics' own dependence on x included.
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * inner;
                            let (mu, s) = (mean[ci], inv_std[ci]);
                            let coef = g[ci] * s / m;
                            for t in 0..inner {
                                let xhat = (x[base + t] - mu) * s;
                                dx[base + t] += coef * (m * gy[base + t] - sum_gy[ci] - xhat * sum_gy_xhat[ci]);
                            }
                        }
                    }
                }
            }
            Op::BnEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xs = self.nodes[input.0].value.shape();
                let (b, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let x = self.nodes[input.0].value.data();
                let g = self.nodes[gamma.0].value.data();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * inner;
                        let (mu, s) = (mean[ci], inv_std[ci]);
                        for t in 0..inner {
                            let gyi = gy[base + t];
                            if let Some(dx) = buf!(input) {
                                dx[base + t] += gyi * g[ci] * s;
                            }
                            if let Some(dgamma) = buf!(gamma) {
                                dgamma[ci] += gyi * (x[base + t] - mu) * s;
                            }
                            if let Some(dbeta) = buf!(beta) {
                                dbeta[ci] += gyi;
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.nodes[input.0].value.data();
                if let Some(dx) = buf!(input) {
                    for (t, (&xv, &gv)) in x.iter().zip(gy).enumerate() {
                        if xv > 0.0 {
                            dx[t] += gv;
                        }
                    }
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                if let Some(dx) = buf!(input) {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src as usize] += gy[o];
                    }
                }
            }
            Op::Upsample2x2 { input } => {
                let xs = self.nodes[input.0].value.shape();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                if let Some(dx) = buf!(input) {
                    for bc in 0..b * c {
                        let gmap = &gy[bc * 4 * h * w..(bc + 1) * 4 * h * w];
                        let dmap = &mut dx[bc * h * w..(bc + 1) * h * w];
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                dmap[(i / 2) * w + j / 2] += gmap[i * 2 * w + j];
                            }
                        }
                    }
                }
            }
            Op::PadBottomRight { input } => {
                let xs = self.nodes[input.0].value.shape();
                let ys = self.nodes[i].value.shape();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (hp, wp) = (ys[2], ys[3]);
                if let Some(dx) = buf!(input) {
                    for bc in 0..b * c {
                        for r in 0..h {
                            let src = &gy[bc * hp * wp + r * wp..bc * hp * wp + r * wp + w];
                            let dst = &mut dx[bc * h * w + r * w..bc * h * w + (r + 1) * w];
                            for (dv, &sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                    }
                }
            }
            Op::CropTo { input } => {
                let xs = self.nodes[input.0].value.shape();
                let ys = self.nodes[i].value.shape();
                let (b, c, hi, wi) = (xs[0], xs[1], xs[2], xs[3]);
                let (h, w) = (ys[2], ys[3]);
                if let Some(dx) = buf!(input) {
                    for bc in 0..b * c {
                        for r in 0..h {
                            let src = &gy[bc * h * w + r * w..bc * h * w + (r + 1) * w];
                            let dst = &mut dx[bc * hi * wi + r * wi..bc * hi * wi + r * wi + w];
                            for (dv, &sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                    }
                }
            }
            Op::RowSoftmax { input } => {
                let ys = self.nodes[i].value.shape();
                let (rows, cols) = (ys[0], ys[1]);
                let y = self.nodes[i].value.data();
                if let Some(dx) = buf!(input) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gy[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        let dr = &mut dx[r * cols..(r + 1) * cols];
                        for t in 0..cols {
                            dr[t] += yr[t] * (gr[t] - dot);
                        }
                    }
                }
            }
            Op::MatMul { lhs, rhs } => {
                let ls = self.nodes[lhs.0].value.shape();
                let rs = self.nodes[rhs.0].value.shape();
                let (m, k, n) = (ls[0], ls[1], rs[1]);
                if self.nodes[lhs.0].requires_grad {
                    let bt = kernels::transpose(self.nodes[rhs.0].value.data(), k, n);
                    let da = grads[lhs.0].get_or_insert_with(|| vec![0.0; m * k]);
                    kernels::matmul_acc(gy, &bt, da, m, n, k);
                }
                if self.nodes[rhs.0].requires_grad {
                    let at = kernels::transpose(self.nodes[lhs.0].value.data(), m, k);
                    let db = grads[rhs.0].get_or_insert_with(|| vec![0.0; k * n]);
                    kernels::matmul_acc(&at, gy, db, k, m, n);
                }
            }
            Op::Transpose2d { input } => {
                let ys = self.nodes[i].value.shape();
                let gt = kernels::transpose(gy, ys[0], ys[1]);
                if let Some(dx) = buf!(input) {
                    for (dv, &gv) in dx.iter_mut().zip(&gt) {
                        *dv += gv;
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (bn, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                if let Some(da) = buf!(a) {
                    for bi in 0..bn {
                        let src = &gy[bi * (ca + cb) * hw..bi * (ca + cb) * hw + ca * hw];
                        for (dv, &sv) in da[bi * ca * hw..(bi + 1) * ca * hw].iter_mut().zip(src) {
                            *dv += sv;
                        }
                    }
                }
                if let Some(db) = buf!(b) {
                    for bi in 0..bn {
                        let src = &gy[bi * (ca + cb) * hw + ca * hw..(bi + 1) * (ca + cb) * hw];
                        for (dv, &sv) in db[bi * cb * hw..(bi + 1) * cb * hw].iter_mut().zip(src) {
                            *dv += sv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = buf!(a) {
                    for (dv, &gv) in da.iter_mut().zip(gy) {
                        *dv += gv;
                    }
                }
                if let Some(db) = buf!(b) {
                    for (dv, &gv) in db.iter_mut().zip(gy) {
                        *dv += gv;
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(da) = buf!(a) {
                    for (dv, &gv) in da.iter_mut().zip(gy) {
                        *dv += gv;
                    }
                }
                if let Some(db) = buf!(b) {
                    for (dv, &gv) in db.iter_mut().zip(gy) {
                        *dv -= gv;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                if let Some(dx) = buf!(input) {
                    for (dv, &gv) in dx.iter_mut().zip(gy) {
                        *dv += f * gv;
                    }
                }
            }
            Op::AddConst { input } | Op::Reshape { input } => {
                if let Some(dx) = buf!(input) {
                    for (dv, &gv) in dx.iter_mut().zip(gy) {
                        *dv += gv;
                    }
                }
            }
            Op::FrobeniusSq { input } => {
                let x = self.nodes[input.0].value.data();
                let g0 = gy[0];
                if let Some(dx) = buf!(input) {
                    for (dv, &xv) in dx.iter_mut().zip(x) {
                        *dv += 2.0 * xv * g0;
                    }
                }
            }
            Op::SumAll { input } => {
                let g0 = gy[0];
                if let Some(dx) = buf!(input) {
                    for dv in dx.iter_mut() {
                        *dv += g0;
                    }
                }
            }
        }
    }
}
