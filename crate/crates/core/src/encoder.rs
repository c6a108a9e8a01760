//! A small Siamese feature encoder for the plug-in scenario: stacked
//! stride-1 padded 1D convolutions with batch norm and ReLU, closed by
//! a linear convolution, so the output sequence keeps the input length
//! while the feature dimension changes.

use crate::attention::{BoundModel, BN_EPS, BN_MOMENTUM};
use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::series::TimeSeries;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Encoder shape: input feature dimension, per-layer output channels
/// (the last entry is the embedding dimension), and kernel size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl EncoderConfig {
    /// Two-layer default small enough for desk-scale training.
    pub fn desk_default(dim: usize) -> Self {
        Self {
            dim,
            channels: alloc::vec![8, 4],
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(CoreError::InvalidArgument {
                context: "encoder config",
                detail: format!("dim {} and channels {:?} must be positive", self.dim, self.channels),
            });
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(CoreError::InvalidArgument {
                context: "encoder config",
                detail: format!("kernel must be odd, got {}", self.kernel),
            });
        }
        Ok(())
    }

    /// Embedding dimension D' of the output sequences.
    pub fn out_dim(&self) -> usize {
        *self.channels.last().expect("validated nonempty")
    }
}

/// Length-preserving 1D-convolutional encoder with named parameters:
/// `conv{l}.{weight,bias}` and `conv{l}.bn.{gamma,beta}` for hidden
/// layers, `out.{weight,bias}` for the linear head; running statistics
/// under `conv{l}.bn.running_{mean,var}`.
#[derive(Debug, Clone)]
pub struct SiameseEncoder {
    config: EncoderConfig,
    params: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, Tensor>,
}

impl SiameseEncoder {
    /// He-initialized weights, zero biases, identity batch norms.
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut init_rng = rng.split("encoder-init");
        let mut params = BTreeMap::new();
        let mut stats = BTreeMap::new();
        let k = config.kernel;
        let mut cin = config.dim;
        let hidden = config.channels.len() - 1;
        for (l, &cout) in config.channels[..hidden].iter().enumerate() {
            let std = crate::math::sqrt(2.0 / (cin * k) as f64);
            params.insert(format!("conv{l}.weight"), Tensor::randn(&[cout, cin, k], std, &mut init_rng));
            params.insert(format!("conv{l}.bias"), Tensor::zeros(&[cout]));
            params.insert(format!("conv{l}.bn.gamma"), Tensor::full(&[cout], 1.0));
            params.insert(format!("conv{l}.bn.beta"), Tensor::zeros(&[cout]));
            stats.insert(format!("conv{l}.bn.running_mean"), Tensor::zeros(&[cout]));
            stats.insert(format!("conv{l}.bn.running_var"), Tensor::full(&[cout], 1.0));
            cin = cout;
        }
        let out = config.out_dim();
        let std = crate::math::sqrt(2.0 / (cin * k) as f64);
        params.insert(String::from("out.weight"), Tensor::randn(&[out, cin, k], std, &mut init_rng));
        params.insert(String::from("out.bias"), Tensor::zeros(&[out]));
        Ok(Self { config, params, stats })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
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

    /// Replaces the full parameter set (checkpoint restore); names and
    /// shapes must match exactly.
    pub fn set_params(&mut self, params: BTreeMap<String, Tensor>) -> Result<()> {
        check_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn set_stats(&mut self, stats: BTreeMap<String, Tensor>) -> Result<()> {
        check_layout(&self.stats, &stats)?;
        self.stats = stats;
        Ok(())
    }

    /// Binds every parameter as a gradient-tracked graph leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel::from_nodes(
            self.params
                .iter()
                .map(|(name, value)| (name.clone(), g.param(value.clone())))
                .collect(),
        )
    }

    /// Training-mode forward pass; returns the `[I, D']` embedding
    /// matrix node and folds batch statistics into the running ones.
    pub fn forward_train(
        &mut self,
        g: &mut Graph,
        bound: &BoundModel,
        x: &TimeSeries,
    ) -> Result<NodeId> {
        let mut updates = Vec::new();
        let out = self.build(g, Some(bound), true, x, &mut updates)?;
        for (name, mean, var) in updates {
            blend(self.stats.get_mut(&format!("{name}.running_mean")).expect("stat exists"), &mean);
            blend(self.stats.get_mut(&format!("{name}.running_var")).expect("stat exists"), &var);
        }
        Ok(out)
    }

    /// Deterministic inference embedding. Metadata (label, id,
    /// genuineness) carries over from the input series.
    pub fn embed(&self, x: &TimeSeries) -> Result<TimeSeries> {
        let mut g = Graph::new();
        let mut updates = Vec::new();
        let out = self.build(&mut g, None, false, x, &mut updates)?;
        debug_assert!(updates.is_empty());
        let values = g.value(out).data().to_vec();
        let mut series = TimeSeries::new(values, x.len(), self.config.out_dim())?;
        series.label = x.label;
        series.id = x.id.clone();
        series.genuine = x.genuine;
        Ok(series)
    }

    /// Shared topology; `bound` is used when given (training leaves),
    /// otherwise parameters enter as constants (eval mode). Returns the
    /// `[I, D']` matrix node.
    fn build(
        &self,
        g: &mut Graph,
        bound: Option<&BoundModel>,
        train: bool,
        x: &TimeSeries,
        updates: &mut Vec<(String, Tensor, Tensor)>,
    ) -> Result<NodeId> {
        if x.dim() != self.config.dim {
            return Err(CoreError::ShapeMismatch {
                context: "encoder input dim",
                left: alloc::vec![self.config.dim],
                right: alloc::vec![x.dim()],
            });
        }
        let node_of = |g: &mut Graph, name: &str| -> NodeId {
            match bound {
                Some(b) => b.node(name),
                None => g.constant(self.params[name].clone()),
            }
        };
        let (i, d) = (x.len(), x.dim());
        // Series rows are frames; the convolution wants channels-first.
        let chan_first = kernels::transpose(x.values(), i, d);
        let mut node = g.constant(Tensor::from_vec(&[1, d, i], chan_first)?);
        let pad = self.config.kernel / 2;
        let hidden = self.config.channels.len() - 1;
        for l in 0..hidden {
            let w = node_of(g, &format!("conv{l}.weight"));
            let bias = node_of(g, &format!("conv{l}.bias"));
            let gamma = node_of(g, &format!("conv{l}.bn.gamma"));
            let beta = node_of(g, &format!("conv{l}.bn.beta"));
            let conv = g.conv1d(node, w, bias, pad)?;
            let normed = if train {
                let out = g.batch_norm_train(conv, gamma, beta, BN_EPS)?;
                updates.push((format!("conv{l}.bn"), out.batch_mean, out.batch_var));
                out.node
            } else {
                g.batch_norm_eval(
                    conv,
                    gamma,
                    beta,
                    &self.stats[&format!("conv{l}.bn.running_mean")],
                    &self.stats[&format!("conv{l}.bn.running_var")],
                    BN_EPS,
                )?
            };
            node = g.relu(normed)?;
        }
        let w = node_of(g, "out.weight");
        let bias = node_of(g, "out.bias");
        let out = g.conv1d(node, w, bias, pad)?;
        let flat = g.reshape(out, &[self.config.out_dim(), i])?;
        g.transpose2d(flat)
    }
}

fn check_layout(current: &BTreeMap<String, Tensor>, incoming: &BTreeMap<String, Tensor>) -> Result<()> {
    if current.len() != incoming.len()
        || !current
            .iter()
            .all(|(name, t)| incoming.get(name).is_some_and(|v| v.shape() == t.shape()))
    {
        return Err(CoreError::InvalidArgument {
            context: "encoder state",
            detail: format!("incoming state does not match the encoder layout"),
        });
    }
    Ok(())
}

fn blend(running: &mut Tensor, batch: &Tensor) {
    for (r, b) in running.data_mut().iter_mut().zip(batch.data()) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * *b;
    }
}
