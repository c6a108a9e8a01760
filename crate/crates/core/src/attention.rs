//! Bipartite attention between two series: a fully-convolutional U-Net
//! reads the outer-concatenation tensor of a pair and emits an `I×J`
//! logit matrix, whose row softmax gives the source correspondence
//! `P_s` and whose transposed row softmax gives the target
//! correspondence `P_t`. Warping is then plain matrix multiplication.

use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::series::TimeSeries;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Epsilon added to variances before the batch-norm rsqrt.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update weight for each training-mode forward.
pub const BN_MOMENTUM: f64 = 0.1;

/// U-Net shape: number of encoder levels, channel width per level,
/// square kernel size, and the feature dimension of the input series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    /// Feature dimension `D` of each input series (the network input
    /// carries `2D` channels).
    pub dim: usize,
    /// Encoder depth; the decoder mirrors it with skip connections.
    pub levels: usize,
    /// Output channels per level, outermost first; length `levels`.
    pub channels: Vec<usize>,
    /// Odd square kernel size for every non-head convolution.
    pub kernel: usize,
}

impl ArchConfig {
    /// Compact three-level network that trains in seconds on small
    /// series while keeping the full encoder/decoder topology.
    pub fn desk_default(dim: usize) -> Self {
        Self {
            dim,
            levels: 3,
            channels: vec![16, 32, 64],
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.levels == 0 {
            return Err(CoreError::InvalidArgument {
                context: "arch config",
                detail: format!("dim and levels must be positive"),
            });
        }
        if self.channels.len() != self.levels || self.channels.contains(&0) {
            return Err(CoreError::InvalidArgument {
                context: "arch config",
                detail: format!(
                    "need {} positive channel widths, got {:?}",
                    self.levels, self.channels
                ),
            });
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(CoreError::InvalidArgument {
                context: "arch config",
                detail: format!("kernel must be odd, got {}", self.kernel),
            });
        }
        Ok(())
    }

    /// Spatial extents are padded up to multiples of this before the
    /// network runs and cropped back afterwards.
    pub fn pad_multiple(&self) -> usize {
        1 << self.levels
    }
}

/// Row-stochastic correspondences for one ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrices {
    /// `I×J`; row `i` distributes mass over the frames of the second
    /// series.
    pub p_s: Tensor,
    /// `J×I`; row softmax of the transposed logits.
    pub p_t: Tensor,
    /// Raw `I×J` network output before either softmax.
    pub logits: Tensor,
}

/// Parameter leaves bound into a graph for one training step. The same
/// binding is reused across every pair in a batch so gradients
/// accumulate onto a single leaf per parameter.
#[derive(Debug)]
pub struct BoundModel {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundModel {
    pub(crate) fn from_nodes(nodes: BTreeMap<String, NodeId>) -> Self {
        Self { nodes }
    }

    pub fn node(&self, name: &str) -> NodeId {
        self.nodes[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.nodes.iter()
    }
}

/// The attention network plus its running batch-norm statistics.
///
/// Parameter names are stable: `enc{l}.conv.{weight,bias}` and
/// `enc{l}.bn.{gamma,beta}` for encoder levels, `dec{l}.*` for decoder
/// levels (indexed by the level they restore), and
/// `head.{weight,bias}` for the 1×1 output convolution. Statistics use
/// `*.bn.running_{mean,var}`.
#[derive(Debug, Clone)]
pub struct AttentionModel {
    arch: ArchConfig,
    params: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, Tensor>,
}

impl AttentionModel {
    /// He-initializes all convolutions (normal with std `√(2/fan_in)`,
    /// zero biases) and sets every batch-norm to the identity affine
    /// with zero-mean unit-variance running statistics.
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = BTreeMap::new();
        let mut stats = BTreeMap::new();
        let mut init_rng = rng.split("attention-init");
        let k = arch.kernel;

        let conv_block = |prefix: &str,
                              cin: usize,
                              cout: usize,
                              kh: usize,
                              params: &mut BTreeMap<String, Tensor>,
                              stats: &mut BTreeMap<String, Tensor>,
                              rng: &mut Rng| {
            let fan_in = (cin * kh * kh) as f64;
            let std = crate::math::sqrt(2.0 / fan_in);
            params.insert(
                format!("{prefix}.conv.weight"),
                Tensor::randn(&[cout, cin, kh, kh], std, rng),
            );
            params.insert(format!("{prefix}.conv.bias"), Tensor::zeros(&[cout]));
            params.insert(format!("{prefix}.bn.gamma"), Tensor::full(&[cout], 1.0));
            params.insert(format!("{prefix}.bn.beta"), Tensor::zeros(&[cout]));
            stats.insert(format!("{prefix}.bn.running_mean"), Tensor::zeros(&[cout]));
            stats.insert(format!("{prefix}.bn.running_var"), Tensor::full(&[cout], 1.0));
        };

        let mut cin = 2 * arch.dim;
        for l in 0..arch.levels {
            conv_block(
                &format!("enc{l}"),
                cin,
                arch.channels[l],
                k,
                &mut params,
                &mut stats,
                &mut init_rng,
            );
            cin = arch.channels[l];
        }
        for l in (0..arch.levels.saturating_sub(1)).rev() {
            conv_block(
                &format!("dec{l}"),
                arch.channels[l + 1] + arch.channels[l],
                arch.channels[l],
                k,
                &mut params,
                &mut stats,
                &mut init_rng,
            );
        }
        let fan_in = arch.channels[0] as f64;
        params.insert(
            String::from("head.weight"),
            Tensor::randn(&[1, arch.channels[0], 1, 1], crate::math::sqrt(2.0 / fan_in), &mut init_rng),
        );
        params.insert(String::from("head.bias"), Tensor::zeros(&[1]));

        Ok(Self { arch, params, stats })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// In-place parameter access for optimizer updates. Callers must
    /// keep the name/shape layout intact.
    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn stats(&self) -> &BTreeMap<String, Tensor> {
        &self.stats
    }

    /// Replaces one parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            Some(slot) => Err(CoreError::ShapeMismatch {
                context: "set_param",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            }),
            None => Err(CoreError::InvalidArgument {
                context: "set_param",
                detail: format!("unknown parameter {name}"),
            }),
        }
    }

    /// Replaces the full parameter set; names and shapes must match the
    /// architecture exactly (checkpoint restore path).
    pub fn set_params(&mut self, params: BTreeMap<String, Tensor>) -> Result<()> {
        check_same_layout("parameters", &self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Replaces the running statistics; same layout contract as
    /// [`AttentionModel::set_params`].
    pub fn set_stats(&mut self, stats: BTreeMap<String, Tensor>) -> Result<()> {
        check_same_layout("statistics", &self.stats, &stats)?;
        self.stats = stats;
        Ok(())
    }

    /// Binds every parameter as a gradient-tracked leaf in `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let nodes = self
            .params
            .iter()
            .map(|(name, value)| (name.clone(), g.param(value.clone())))
            .collect();
        BoundModel { nodes }
    }

    /// Training-mode forward pass for one pair, returning the `I×J`
    /// logit node. Batch statistics observed by each batch-norm update
    /// this model's running statistics with weight [`BN_MOMENTUM`].
    pub fn forward_train(
        &mut self,
        g: &mut Graph,
        bound: &BoundModel,
        a: &TimeSeries,
        b: &TimeSeries,
    ) -> Result<NodeId> {
        let mut updates = Vec::new();
        let logits = self.build_logits(g, &bound.nodes, true, a, b, &mut updates)?;
        for (name, mean, var) in updates {
            let running_mean = self
                .stats
                .get_mut(&format!("{name}.running_mean"))
                .expect("stat names mirror parameter names");
            blend(running_mean, &mean);
            let running_var = self
                .stats
                .get_mut(&format!("{name}.running_var"))
                .expect("stat names mirror parameter names");
            blend(running_var, &var);
        }
        Ok(logits)
    }

    /// Deterministic inference: correspondences for the ordered pair
    /// `(a, b)` under frozen parameters and running statistics.
    pub fn attend(&self, a: &TimeSeries, b: &TimeSeries) -> Result<CorrespondenceMatrices> {
        let mut g = Graph::new();
        let bound: BTreeMap<String, NodeId> = self
            .params
            .iter()
            .map(|(name, value)| (name.clone(), g.constant(value.clone())))
            .collect();
        let mut updates = Vec::new();
        let logits = self.build_logits(&mut g, &bound, false, a, b, &mut updates)?;
        debug_assert!(updates.is_empty());
        let logits = g.value(logits).clone();
        let (i, j) = (a.len(), b.len());
        let p_s = Tensor::from_vec(&[i, j], kernels::row_softmax(logits.data(), i, j))?;
        let transposed = kernels::transpose(logits.data(), i, j);
        let p_t = Tensor::from_vec(&[j, i], kernels::row_softmax(&transposed, j, i))?;
        Ok(CorrespondenceMatrices { p_s, p_t, logits })
    }

    /// Symmetric-form distance between a pair: the reconstruction
    /// residual of each series under the other's warp,
    /// `‖A − P_s·B‖²/(I·D) + ‖B − P_t·A‖²/(J·D)`, in eval mode.
    pub fn pair_distance(&self, a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
        let c = self.attend(a, b)?;
        Ok(residual_mean_sq(a, &c.p_s, b)? + residual_mean_sq(b, &c.p_t, a)?)
    }

    /// Shared forward topology. `train` selects batch-norm flavor;
    /// training mode appends each block's batch statistics to
    /// `updates` as `(block prefix, mean, var)`.
    fn build_logits(
        &self,
        g: &mut Graph,
        bound: &BTreeMap<String, NodeId>,
        train: bool,
        a: &TimeSeries,
        b: &TimeSeries,
        updates: &mut Vec<(String, Tensor, Tensor)>,
    ) -> Result<NodeId> {
        if a.dim() != self.arch.dim || b.dim() != self.arch.dim {
            return Err(CoreError::ShapeMismatch {
                context: "attention input dim",
                left: vec![self.arch.dim],
                right: vec![a.dim(), b.dim()],
            });
        }
        let (i, j) = (a.len(), b.len());
        let multiple = self.arch.pad_multiple();
        let pad_i = (multiple - i % multiple) % multiple;
        let pad_j = (multiple - j % multiple) % multiple;

        let tensor = outer_concat(a, b)?;
        let volume = tensor.len();
        let input = g.constant(tensor.reshaped(&[1, 2 * self.arch.dim, i, j])?);
        debug_assert_eq!(volume, 2 * self.arch.dim * i * j);
        let mut x = g.pad_bottom_right(input, pad_i, pad_j)?;

        let block = |g: &mut Graph, x: NodeId, prefix: &str, updates: &mut Vec<(String, Tensor, Tensor)>| -> Result<NodeId> {
            let w = bound[&format!("{prefix}.conv.weight")];
            let bias = bound[&format!("{prefix}.conv.bias")];
            let gamma = bound[&format!("{prefix}.bn.gamma")];
            let beta = bound[&format!("{prefix}.bn.beta")];
            let conv = g.conv2d(x, w, bias, 1, self.arch.kernel / 2)?;
            let normed = if train {
                let out = g.batch_norm_train(conv, gamma, beta, BN_EPS)?;
                updates.push((format!("{prefix}.bn"), out.batch_mean, out.batch_var));
                out.node
            } else {
                g.batch_norm_eval(
                    conv,
                    gamma,
                    beta,
                    &self.stats[&format!("{prefix}.bn.running_mean")],
                    &self.stats[&format!("{prefix}.bn.running_var")],
                    BN_EPS,
                )?
            };
            g.relu(normed)
        };

        let mut skips = Vec::with_capacity(self.arch.levels);
        for l in 0..self.arch.levels {
            x = block(g, x, &format!("enc{l}"), updates)?;
            skips.push(x);
            if l + 1 < self.arch.levels {
                x = g.maxpool2x2(x)?;
            }
        }
        for l in (0..self.arch.levels.saturating_sub(1)).rev() {
            let up = g.upsample2x2(x)?;
            let merged = g.concat_channels(up, skips[l])?;
            x = block(g, merged, &format!("dec{l}"), updates)?;
        }
        let head = g.conv2d(x, bound["head.weight"], bound["head.bias"], 1, 0)?;
        let cropped = g.crop_to(head, i, j)?;
        g.reshape(cropped, &[i, j])
    }
}

fn check_same_layout(
    what: &'static str,
    current: &BTreeMap<String, Tensor>,
    incoming: &BTreeMap<String, Tensor>,
) -> Result<()> {
    if current.len() != incoming.len()
        || !current
            .iter()
            .all(|(name, t)| incoming.get(name).is_some_and(|v| v.shape() == t.shape()))
    {
        return Err(CoreError::InvalidArgument {
            context: "model state",
            detail: format!("incoming {what} do not match the architecture layout"),
        });
    }
    Ok(())
}

/// `running := (1 − momentum)·running + momentum·batch`.
fn blend(running: &mut Tensor, batch: &Tensor) {
    for (r, b) in running.data_mut().iter_mut().zip(batch.data()) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * *b;
    }
}

/// Pairs every frame of `a` with every frame of `b`: channel block
/// `[0, D)` at `(i, j)` holds `a_i` (constant along `j`) and block
/// `[D, 2D)` holds `b_j` (constant along `i`). Shape `[2D, I, J]`.
pub fn outer_concat(a: &TimeSeries, b: &TimeSeries) -> Result<Tensor> {
    if a.dim() != b.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "outer_concat",
            left: vec![a.len(), a.dim()],
            right: vec![b.len(), b.dim()],
        });
    }
    let (d, i_len, j_len) = (a.dim(), a.len(), b.len());
    let mut data = vec![0.0; 2 * d * i_len * j_len];
    let plane = i_len * j_len;
    for i in 0..i_len {
        let frame = a.frame(i);
        for (c, &v) in frame.iter().enumerate() {
            let base = c * plane + i * j_len;
            data[base..base + j_len].fill(v);
        }
    }
    for j in 0..j_len {
        let frame = b.frame(j);
        for (c, &v) in frame.iter().enumerate() {
            let base = (d + c) * plane;
            for i in 0..i_len {
                data[base + i * j_len + j] = v;
            }
        }
    }
    Ok(Tensor::from_raw(vec![2 * d, i_len, j_len], data))
}

/// Applies a correspondence: the matrix product `P·X`, each output
/// frame a convex combination of the frames of `x`. Shape `[rows, D]`.
pub fn warp(p: &Tensor, x: &TimeSeries) -> Result<Tensor> {
    if p.rank() != 2 || p.shape()[1] != x.len() {
        return Err(CoreError::ShapeMismatch {
            context: "warp",
            left: p.shape().to_vec(),
            right: vec![x.len(), x.dim()],
        });
    }
    let rows = p.shape()[0];
    let mut out = vec![0.0; rows * x.dim()];
    kernels::matmul_acc(p.data(), x.values(), &mut out, rows, x.len(), x.dim());
    Ok(Tensor::from_raw(vec![rows, x.dim()], out))
}

/// Length-normalized reconstruction residual `‖X − P·Y‖²/(rows·D)`.
pub fn residual_mean_sq(x: &TimeSeries, p: &Tensor, y: &TimeSeries) -> Result<f64> {
    if p.rank() != 2 || p.shape() != [x.len(), y.len()] || x.dim() != y.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "residual_mean_sq",
            left: p.shape().to_vec(),
            right: vec![x.len(), y.len()],
        });
    }
    let warped = warp(p, y)?;
    let mut sum = 0.0;
    for (xv, wv) in x.values().iter().zip(warped.data()) {
        let diff = xv - wv;
        sum += diff * diff;
    }
    Ok(sum / (x.len() * x.dim()) as f64)
}
