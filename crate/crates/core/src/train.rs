//! Training schedules: warping-path mimic pre-training, the main
//! contrastive phase, and the three-step plug-in schedule that trains
//! a Siamese encoder first and then fits the attention module on its
//! frozen embeddings. Every loop is deterministic given the seed, and
//! the best iterate under the phase's validation metric is what the
//! caller's model holds afterwards.

use crate::attention::{AttentionModel, BoundModel};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::dtw::{dtw, dtw_target_matrix, Metric, WarpConstraints};
use crate::encoder::SiameseEncoder;
use crate::error::{CoreError, Result};
use crate::eval::{eer, error_rate, knn_classify, verification_scores, DistanceMatrix};
use crate::loss::{loss_dual, loss_pretrain};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::sampler::{sample_pairs, sample_pairs_blind, PairBatch};
use crate::series::TimeSeries;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Which schedule produced a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Contrastive,
    PluginStep1,
    PluginStep2,
    PluginStep3,
}

impl Phase {
    /// Stable lowercase tag used in trace files.
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Contrastive => "contrastive",
            Phase::PluginStep1 => "plugin-step1",
            Phase::PluginStep2 => "plugin-step2",
            Phase::PluginStep3 => "plugin-step3",
        }
    }
}

/// One training iteration's bookkeeping. `loss_same`/`loss_diff` split
/// the batch mean by pair kind where the phase distinguishes them;
/// `validation` carries the phase metric at evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: f64,
    pub loss_same: Option<f64>,
    pub loss_diff: Option<f64>,
    pub validation: Option<f64>,
}

/// Mimic pre-training schedule parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    /// Validate (and test for a new best) every this many iterations;
    /// the final iteration always validates.
    pub eval_every: usize,
    pub lr: f64,
    /// Size of the frozen validation pair set.
    pub val_pairs: usize,
    /// Warping constraint applied when computing target path matrices.
    pub window: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            max_iters: 200,
            eval_every: 20,
            lr: 1e-4,
            val_pairs: 16,
            window: None,
        }
    }
}

/// Main contrastive phase parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub ratio: (usize, usize),
    pub batch_size: usize,
    pub max_iters: usize,
    pub eval_every: usize,
    pub lr: f64,
    /// Neighbor count for the validation k-NN error.
    pub knn_k: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            ratio: (1, 2),
            batch_size: 30,
            max_iters: 200,
            eval_every: 20,
            lr: 1e-4,
            knn_k: 1,
        }
    }
}

/// Three-step plug-in schedule parameters. `iters` and `lrs` are
/// indexed by step; step 2 conventionally runs at 0.001.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginConfig {
    pub tau: f64,
    pub ratio: (usize, usize),
    pub batch_size: usize,
    pub iters: [usize; 3],
    pub eval_every: usize,
    pub lrs: [f64; 3],
    /// References per subject for validation verification scores.
    pub refs_per_subject: usize,
    pub window: Option<usize>,
    pub val_pairs: usize,
}

impl Default for PluginConfig {
    fn default() -> Self {
        Self {
            tau: 1.4,
            ratio: (1, 2),
            batch_size: 30,
            iters: [10_000, 1_000, 10_000],
            eval_every: 50,
            lrs: [0.001, 0.001, 0.001],
            refs_per_subject: 2,
            window: None,
            val_pairs: 16,
        }
    }
}

fn check_positive(context: &'static str, values: &[(usize, &str)]) -> Result<()> {
    for &(v, name) in values {
        if v == 0 {
            return Err(CoreError::InvalidArgument {
                context,
                detail: alloc::format!("{name} must be positive"),
            });
        }
    }
    Ok(())
}

/// Clones every leaf gradient out of a finished backward pass, keyed
/// like the model parameters.
fn collect_grads(g: &Graph, bound: &BoundModel) -> BTreeMap<String, Tensor> {
    bound
        .iter()
        .map(|(name, node)| {
            (
                name.clone(),
                g.grad(*node).expect("leaf gradients survive backward").clone(),
            )
        })
        .collect()
}

/// Divides each row by its sum. Rows are guaranteed nonempty for
/// warping-path matrices (every source frame is matched at least once).
fn row_normalized(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = m.to_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    out
}

/// Mean of per-pair scalar nodes as a single graph node.
fn mean_node(g: &mut Graph, nodes: &[crate::autodiff::NodeId]) -> Result<crate::autodiff::NodeId> {
    let mut total = nodes[0];
    for &n in &nodes[1..] {
        total = g.add(total, n)?;
    }
    g.scale(total, 1.0 / nodes.len() as f64)
}

fn split_means(values: &[(f64, bool)]) -> (Option<f64>, Option<f64>) {
    let mean_of = |same: bool| {
        let (mut sum, mut n) = (0.0, 0usize);
        for &(v, s) in values {
            if s == same {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    };
    (mean_of(true), mean_of(false))
}

/// Pre-trains the attention module to mimic warping paths: label-blind
/// pairs, loss `‖P_s − P_dtw‖²/(I·J)`, best iterate chosen by the same
/// loss over a frozen validation pair set.
pub fn run_pretrain(
    model: &mut AttentionModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<Vec<TraceRecord>> {
    check_positive(
        "run_pretrain",
        &[
            (cfg.batch_size, "batch_size"),
            (cfg.eval_every, "eval_every"),
            (cfg.val_pairs, "val_pairs"),
        ],
    )?;
    let mut trace = Vec::new();
    if cfg.max_iters == 0 {
        return Ok(trace);
    }
    let constraints = match cfg.window {
        Some(w) => WarpConstraints::window(w),
        None => WarpConstraints::unlimited(),
    };
    let mut pair_rng = rng.split("pretrain-pairs");
    let mut val_rng = rng.split("pretrain-val");
    let val_batch = sample_pairs_blind(val, &mut val_rng, cfg.val_pairs)?;
    let val_set: Vec<(&TimeSeries, &TimeSeries, Tensor)> = val_batch
        .iter()
        .map(|p| {
            let a = &val.samples()[p.a];
            let b = &val.samples()[p.b];
            let target = dtw_target_matrix(a, b, constraints, Metric::SqEuclid)?;
            Ok((a, b, Tensor::from_vec(&[a.len(), b.len()], target)?))
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut best: Option<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;

    for it in 1..=cfg.max_iters {
        let batch = sample_pairs_blind(train, &mut pair_rng, cfg.batch_size)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut losses = Vec::with_capacity(batch.len());
        for p in batch.iter() {
            let a = &train.samples()[p.a];
            let b = &train.samples()[p.b];
            let target = dtw_target_matrix(a, b, constraints, Metric::SqEuclid)?;
            let target = Tensor::from_vec(&[a.len(), b.len()], target)?;
            let logits = model.forward_train(&mut g, &bound, a, b)?;
            let p_s = g.row_softmax(logits)?;
            losses.push(loss_pretrain(&mut g, p_s, &target)?);
        }
        let total = mean_node(&mut g, &losses)?;
        let loss = g.value(total).item();
        g.backward(total)?;
        let grads = collect_grads(&g, &bound);
        drop(g);
        adam.step(model.params_mut(), &grads)?;

        let mut validation = None;
        if it % cfg.eval_every == 0 || it == cfg.max_iters {
            let metric = validation_pretrain_loss(model, &val_set)?;
            validation = Some(metric);
            if best.as_ref().is_none_or(|(b, _, _)| metric < *b) {
                best = Some((metric, model.params().clone(), model.stats().clone()));
            }
        }
        trace.push(TraceRecord {
            iteration: it,
            phase: Phase::Pretrain,
            loss,
            loss_same: None,
            loss_diff: None,
            validation,
        });
    }
    if let Some((_, params, stats)) = best {
        model.set_params(params)?;
        model.set_stats(stats)?;
    }
    Ok(trace)
}

/// Mean mimic loss of eval-mode correspondences over a fixed pair set.
fn validation_pretrain_loss(
    model: &AttentionModel,
    pairs: &[(&TimeSeries, &TimeSeries, Tensor)],
) -> Result<f64> {
    let mut sum = 0.0;
    for (a, b, target) in pairs {
        let c = model.attend(a, b)?;
        let mut sq = 0.0;
        for (p, t) in c.p_s.data().iter().zip(target.data()) {
            let d = p - t;
            sq += d * d;
        }
        sum += sq / target.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Main contrastive phase: ratio-mixed pair batches under the dual
/// loss, best iterate chosen by k-NN error of `pair_distance` on the
/// validation split against the training split.
pub fn run_contrastive(
    model: &mut AttentionModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &ContrastiveConfig,
    rng: &mut Rng,
) -> Result<Vec<TraceRecord>> {
    check_positive(
        "run_contrastive",
        &[
            (cfg.batch_size, "batch_size"),
            (cfg.eval_every, "eval_every"),
            (cfg.knn_k, "knn_k"),
        ],
    )?;
    let mut trace = Vec::new();
    if cfg.max_iters == 0 {
        return Ok(trace);
    }
    let train_labels = labels_of(train)?;
    let val_labels = labels_of(val)?;
    let mut pair_rng = rng.split("contrastive-pairs");
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut best: Option<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;

    for it in 1..=cfg.max_iters {
        let batch = sample_pairs(train, &mut pair_rng, cfg.batch_size, cfg.ratio)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut losses = Vec::with_capacity(batch.len());
        let mut components = Vec::with_capacity(batch.len());
        for p in batch.iter() {
            let a = &train.samples()[p.a];
            let b = &train.samples()[p.b];
            let logits = model.forward_train(&mut g, &bound, a, b)?;
            let l = dual_loss_on_logits(&mut g, logits, &a.to_tensor(), &b.to_tensor(), p.same_class, cfg.tau)?;
            components.push((g.value(l).item(), p.same_class));
            losses.push(l);
        }
        let total = mean_node(&mut g, &losses)?;
        let loss = g.value(total).item();
        g.backward(total)?;
        let grads = collect_grads(&g, &bound);
        drop(g);
        adam.step(model.params_mut(), &grads)?;

        let mut validation = None;
        if it % cfg.eval_every == 0 || it == cfg.max_iters {
            let err = knn_validation_error(model, train, &train_labels, val, &val_labels, cfg.knn_k)?;
            validation = Some(err);
            if best.as_ref().is_none_or(|(b, _, _)| err < *b) {
                best = Some((err, model.params().clone(), model.stats().clone()));
            }
        }
        let (loss_same, loss_diff) = split_means(&components);
        trace.push(TraceRecord {
            iteration: it,
            phase: Phase::Contrastive,
            loss,
            loss_same,
            loss_diff,
            validation,
        });
    }
    if let Some((_, params, stats)) = best {
        model.set_params(params)?;
        model.set_stats(stats)?;
    }
    Ok(trace)
}

/// Builds `P_s`/`P_t` from a logits node and applies the dual loss to
/// fixed series tensors.
fn dual_loss_on_logits(
    g: &mut Graph,
    logits: crate::autodiff::NodeId,
    a: &Tensor,
    b: &Tensor,
    same_class: bool,
    tau: f64,
) -> Result<crate::autodiff::NodeId> {
    let p_s = g.row_softmax(logits)?;
    let flipped = g.transpose2d(logits)?;
    let p_t = g.row_softmax(flipped)?;
    let a_node = g.constant(a.clone());
    let b_node = g.constant(b.clone());
    loss_dual(g, a_node, b_node, p_s, p_t, same_class, tau)
}

fn labels_of(ds: &Dataset) -> Result<Vec<usize>> {
    ds.samples()
        .iter()
        .map(|s| {
            s.label.ok_or_else(|| CoreError::DegenerateClasses {
                detail: String::from("k-NN validation needs a label on every sample"),
            })
        })
        .collect()
}

/// k-NN error of the model's pair distance, validation against train.
fn knn_validation_error(
    model: &AttentionModel,
    train: &Dataset,
    train_labels: &[usize],
    val: &Dataset,
    val_labels: &[usize],
    k: usize,
) -> Result<f64> {
    let dist = DistanceMatrix::from_fn(val.samples(), train.samples(), |q, r| {
        model.pair_distance(q, r)
    })?;
    let predicted = knn_classify(&dist, train_labels, k)?;
    error_rate(&predicted, val_labels)
}

/// The three-step plug-in schedule. Step 1 trains the encoder alone
/// with a contrastive loss over warping-path-aligned embeddings;
/// step 2 pre-trains the attention module on frozen embedding pairs;
/// step 3 trains the attention module's dual loss on the same frozen
/// embeddings — the encoder is never touched after step 1. Training
/// pairs come from genuine samples (same subject = same class);
/// validation selects by equal error rate (steps 1 and 3) or mimic
/// loss (step 2) on the validation split.
pub fn run_plugin_three_step(
    encoder: &mut SiameseEncoder,
    model: &mut AttentionModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &PluginConfig,
    rng: &mut Rng,
) -> Result<Vec<TraceRecord>> {
    check_positive(
        "run_plugin_three_step",
        &[
            (cfg.batch_size, "batch_size"),
            (cfg.eval_every, "eval_every"),
            (cfg.refs_per_subject, "refs_per_subject"),
            (cfg.val_pairs, "val_pairs"),
        ],
    )?;
    if model.arch().dim != encoder.config().out_dim() {
        return Err(CoreError::ShapeMismatch {
            context: "plug-in dimensions",
            left: alloc::vec![model.arch().dim],
            right: alloc::vec![encoder.config().out_dim()],
        });
    }
    let constraints = match cfg.window {
        Some(w) => WarpConstraints::window(w),
        None => WarpConstraints::unlimited(),
    };
    let genuine_train = Dataset::new(
        "plugin-train-genuine",
        train
            .samples()
            .iter()
            .filter(|s| s.genuine == Some(true))
            .cloned()
            .collect(),
    )
    .map_err(|_| CoreError::DegenerateClasses {
        detail: String::from("plug-in training needs genuine samples in the training split"),
    })?;

    let mut trace = Vec::new();

    // Step 1: encoder under contrastive loss on aligned embeddings.
    {
        let mut pair_rng = rng.split("plugin-step1-pairs");
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lrs[0]))?;
        let mut best: Option<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;
        for it in 1..=cfg.iters[0] {
            let batch = sample_pairs(&genuine_train, &mut pair_rng, cfg.batch_size, cfg.ratio)?;
            let mut g = Graph::new();
            let bound = encoder.bind(&mut g);
            let mut losses = Vec::with_capacity(batch.len());
            let mut components = Vec::with_capacity(batch.len());
            for p in batch.iter() {
                let a = &genuine_train.samples()[p.a];
                let b = &genuine_train.samples()[p.b];
                let ea = encoder.forward_train(&mut g, &bound, a)?;
                let eb = encoder.forward_train(&mut g, &bound, b)?;
                // Alignment target from the current (graph-value)
                // embeddings, held constant for the gradient.
                let ea_series = TimeSeries::new(
                    g.value(ea).data().to_vec(),
                    a.len(),
                    encoder.config().out_dim(),
                )?;
                let eb_series = TimeSeries::new(
                    g.value(eb).data().to_vec(),
                    b.len(),
                    encoder.config().out_dim(),
                )?;
                let path = dtw_target_matrix(&ea_series, &eb_series, constraints, Metric::SqEuclid)?;
                let p_s = row_normalized(&path, a.len(), b.len());
                let path_t = crate::autodiff::kernels::transpose(&path, a.len(), b.len());
                let p_t = row_normalized(&path_t, b.len(), a.len());
                let p_s = g.constant(Tensor::from_vec(&[a.len(), b.len()], p_s)?);
                let p_t = g.constant(Tensor::from_vec(&[b.len(), a.len()], p_t)?);
                let l = loss_dual(&mut g, ea, eb, p_s, p_t, p.same_class, cfg.tau)?;
                components.push((g.value(l).item(), p.same_class));
                losses.push(l);
            }
            let total = mean_node(&mut g, &losses)?;
            let loss = g.value(total).item();
            g.backward(total)?;
            let grads = collect_grads(&g, &bound);
            drop(g);
            adam.step(encoder.params_mut(), &grads)?;

            let mut validation = None;
            if it % cfg.eval_every == 0 || it == cfg.iters[0] {
                let rate = embedding_dtw_eer(encoder, val, cfg.refs_per_subject, constraints)?;
                validation = Some(rate);
                if best.as_ref().is_none_or(|(b, _, _)| rate < *b) {
                    best = Some((rate, encoder.params().clone(), encoder.stats().clone()));
                }
            }
            let (loss_same, loss_diff) = split_means(&components);
            trace.push(TraceRecord {
                iteration: it,
                phase: Phase::PluginStep1,
                loss,
                loss_same,
                loss_diff,
                validation,
            });
        }
        if let Some((_, params, stats)) = best {
            encoder.set_params(params)?;
            encoder.set_stats(stats)?;
        }
    }

    // The encoder is frozen from here on; embed everything once.
    let train_emb: Vec<TimeSeries> = genuine_train
        .samples()
        .iter()
        .map(|s| encoder.embed(s))
        .collect::<Result<_>>()?;
    let val_emb: Vec<TimeSeries> = val
        .samples()
        .iter()
        .map(|s| encoder.embed(s))
        .collect::<Result<_>>()?;

    // Step 2: mimic pre-training of the attention module on embeddings.
    {
        let mut pair_rng = rng.split("plugin-step2-pairs");
        let mut val_rng = rng.split("plugin-step2-val");
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lrs[1]))?;
        let mut best: Option<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;
        let val_pair_set = if cfg.iters[1] > 0 {
            fixed_embedding_pairs(&val_emb, &mut val_rng, cfg.val_pairs, constraints)?
        } else {
            Vec::new()
        };
        for it in 1..=cfg.iters[1] {
            let batch = sample_pairs_blind(&genuine_train, &mut pair_rng, cfg.batch_size)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut losses = Vec::with_capacity(batch.len());
            for p in batch.iter() {
                let (ea, eb) = (&train_emb[p.a], &train_emb[p.b]);
                let target = dtw_target_matrix(ea, eb, constraints, Metric::SqEuclid)?;
                let target = Tensor::from_vec(&[ea.len(), eb.len()], target)?;
                let logits = model.forward_train(&mut g, &bound, ea, eb)?;
                let p_s = g.row_softmax(logits)?;
                losses.push(loss_pretrain(&mut g, p_s, &target)?);
            }
            let total = mean_node(&mut g, &losses)?;
            let loss = g.value(total).item();
            g.backward(total)?;
            let grads = collect_grads(&g, &bound);
            drop(g);
            adam.step(model.params_mut(), &grads)?;

            let mut validation = None;
            if it % cfg.eval_every == 0 || it == cfg.iters[1] {
                let pairs: Vec<(&TimeSeries, &TimeSeries, Tensor)> = val_pair_set
                    .iter()
                    .map(|(a, b, t)| (&val_emb[*a], &val_emb[*b], t.clone()))
                    .collect();
                let metric = validation_pretrain_loss(model, &pairs)?;
                validation = Some(metric);
                if best.as_ref().is_none_or(|(b, _, _)| metric < *b) {
                    best = Some((metric, model.params().clone(), model.stats().clone()));
                }
            }
            trace.push(TraceRecord {
                iteration: it,
                phase: Phase::PluginStep2,
                loss,
                loss_same: None,
                loss_diff: None,
                validation,
            });
        }
        if let Some((_, params, stats)) = best {
            model.set_params(params)?;
            model.set_stats(stats)?;
        }
    }

    // Step 3: dual contrastive loss on frozen embeddings.
    {
        let mut pair_rng = rng.split("plugin-step3-pairs");
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lrs[2]))?;
        let mut best: Option<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;
        for it in 1..=cfg.iters[2] {
            let batch = sample_pairs(&genuine_train, &mut pair_rng, cfg.batch_size, cfg.ratio)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut losses = Vec::with_capacity(batch.len());
            let mut components = Vec::with_capacity(batch.len());
            for p in batch.iter() {
                let (ea, eb) = (&train_emb[p.a], &train_emb[p.b]);
                let logits = model.forward_train(&mut g, &bound, ea, eb)?;
                let l = dual_loss_on_logits(
                    &mut g,
                    logits,
                    &ea.to_tensor(),
                    &eb.to_tensor(),
                    p.same_class,
                    cfg.tau,
                )?;
                components.push((g.value(l).item(), p.same_class));
                losses.push(l);
            }
            let total = mean_node(&mut g, &losses)?;
            let loss = g.value(total).item();
            g.backward(total)?;
            let grads = collect_grads(&g, &bound);
            drop(g);
            adam.step(model.params_mut(), &grads)?;

            let mut validation = None;
            if it % cfg.eval_every == 0 || it == cfg.iters[2] {
                let rate = attention_eer(model, &val_emb, cfg.refs_per_subject)?;
                validation = Some(rate);
                if best.as_ref().is_none_or(|(b, _, _)| rate < *b) {
                    best = Some((rate, model.params().clone(), model.stats().clone()));
                }
            }
            let (loss_same, loss_diff) = split_means(&components);
            trace.push(TraceRecord {
                iteration: it,
                phase: Phase::PluginStep3,
                loss,
                loss_same,
                loss_diff,
                validation,
            });
        }
        if let Some((_, params, stats)) = best {
            model.set_params(params)?;
            model.set_stats(stats)?;
        }
    }

    Ok(trace)
}

/// Fixed label-blind validation pairs over embeddings, with their
/// warping-path targets, as indices into the embedding list.
fn fixed_embedding_pairs(
    embeddings: &[TimeSeries],
    rng: &mut Rng,
    count: usize,
    constraints: WarpConstraints,
) -> Result<Vec<(usize, usize, Tensor)>> {
    let ds = Dataset::new("val-embeddings", embeddings.to_vec())?;
    let batch: PairBatch = sample_pairs_blind(&ds, rng, count)?;
    batch
        .iter()
        .map(|p| {
            let (a, b) = (&embeddings[p.a], &embeddings[p.b]);
            let target = dtw_target_matrix(a, b, constraints, Metric::SqEuclid)?;
            Ok((p.a, p.b, Tensor::from_vec(&[a.len(), b.len()], target)?))
        })
        .collect()
}

/// Verification equal error rate with plain warping distance on
/// embeddings as the score (step-1 validation).
pub fn embedding_dtw_eer(
    encoder: &SiameseEncoder,
    val: &Dataset,
    refs_per_subject: usize,
    constraints: WarpConstraints,
) -> Result<f64> {
    let embedded: Vec<TimeSeries> = val
        .samples()
        .iter()
        .map(|s| encoder.embed(s))
        .collect::<Result<_>>()?;
    let (genuine, forgery) = verification_scores(&embedded, refs_per_subject, |a, b| {
        Ok(dtw(a, b, constraints, Metric::SqEuclid)?.0)
    })?;
    eer(&genuine, &forgery)
}

/// Verification equal error rate with the attention pair distance on
/// already-embedded samples (step-3 validation).
pub fn attention_eer(
    model: &AttentionModel,
    embedded_val: &[TimeSeries],
    refs_per_subject: usize,
) -> Result<f64> {
    let (genuine, forgery) = verification_scores(embedded_val, refs_per_subject, |a, b| {
        model.pair_distance(a, b)
    })?;
    eer(&genuine, &forgery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::ArchConfig;
    use crate::data::synth_warped_classes;

    fn tiny_model(seed: u64) -> AttentionModel {
        let mut rng = Rng::new(seed);
        AttentionModel::new(
            ArchConfig {
                dim: 1,
                levels: 2,
                channels: alloc::vec![4, 6],
                kernel: 3,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn toy_data(seed: u64) -> (Dataset, Dataset) {
        let mut rng = Rng::new(seed);
        let train = synth_warped_classes(&mut rng, 2, 6, 12, 0.3, 0.05).unwrap();
        let val = synth_warped_classes(&mut rng, 2, 3, 12, 0.3, 0.05).unwrap();
        (train, val)
    }

    #[test]
    fn zero_iterations_leave_the_model_unchanged() {
        let mut model = tiny_model(1);
        let before = model.params().clone();
        let (train, val) = toy_data(5);
        let cfg = PretrainConfig {
            max_iters: 0,
            ..PretrainConfig::default()
        };
        let mut rng = Rng::new(9);
        let trace = run_pretrain(&mut model, &train, &val, &cfg, &mut rng).unwrap();
        assert!(trace.is_empty());
        assert_eq!(&before, model.params());
    }

    #[test]
    fn pretrain_trace_counts_iterations_and_halves_loss() {
        let mut model = tiny_model(2);
        let (train, val) = toy_data(6);
        let cfg = PretrainConfig {
            batch_size: 4,
            max_iters: 400,
            eval_every: 100,
            lr: 5e-3,
            val_pairs: 6,
            window: None,
        };
        let mut rng = Rng::new(10);
        let trace = run_pretrain(&mut model, &train, &val, &cfg, &mut rng).unwrap();
        assert_eq!(trace.len(), 400);
        assert!(trace.iter().enumerate().all(|(k, r)| r.iteration == k + 1));
        // Windowed means of the opening and closing stretch.
        let first: f64 = trace[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        let last: f64 = trace[380..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        assert!(
            last < first / 2.0,
            "mimic loss should at least halve: {first} -> {last}"
        );
        // Validation recorded at the evaluation cadence.
        assert!(trace[99].validation.is_some());
        assert!(trace[98].validation.is_none());
        assert!(trace[399].validation.is_some());
    }

    #[test]
    fn contrastive_trace_splits_components_and_selects_a_best() {
        let mut model = tiny_model(3);
        let (train, val) = toy_data(7);
        let cfg = ContrastiveConfig {
            batch_size: 6,
            max_iters: 10,
            eval_every: 5,
            lr: 1e-3,
            ..ContrastiveConfig::default()
        };
        let mut rng = Rng::new(11);
        let trace = run_contrastive(&mut model, &train, &val, &cfg, &mut rng).unwrap();
        assert_eq!(trace.len(), 10);
        for r in &trace {
            assert!(r.loss_same.is_some());
            assert!(r.loss_diff.is_some());
            assert!(r.loss >= 0.0);
        }
        let evals: Vec<&TraceRecord> = trace.iter().filter(|r| r.validation.is_some()).collect();
        assert_eq!(evals.len(), 2);
    }

    #[test]
    fn configs_reject_zero_cadence() {
        let mut model = tiny_model(4);
        let (train, val) = toy_data(8);
        let mut rng = Rng::new(12);
        let cfg = PretrainConfig {
            eval_every: 0,
            ..PretrainConfig::default()
        };
        assert!(run_pretrain(&mut model, &train, &val, &cfg, &mut rng).is_err());
    }

    #[test]
    fn plugin_dimension_mismatch_is_rejected() {
        let mut rng = Rng::new(13);
        let mut encoder =
            SiameseEncoder::new(crate::encoder::EncoderConfig::desk_default(1), &mut rng).unwrap();
        let mut model = tiny_model(5); // dim 1, but encoder emits 4 channels
        let (train, val) = toy_data(9);
        let cfg = PluginConfig::default();
        let err =
            run_plugin_three_step(&mut encoder, &mut model, &train, &val, &cfg, &mut rng)
                .unwrap_err();
        assert!(matches!(err, CoreError::ShapeMismatch { .. }));
    }
}
