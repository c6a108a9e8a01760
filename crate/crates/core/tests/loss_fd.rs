//! Finite-difference oracle for the dual contrastive loss taken all
//! the way through the attention network (and, separately, through the
//! Siamese encoder): the analytic parameter gradients must match
//! central differences coordinate by coordinate.

use attwarp_core::attention::{ArchConfig, AttentionModel};
use attwarp_core::autodiff::Graph;
use attwarp_core::encoder::{EncoderConfig, SiameseEncoder};
use attwarp_core::loss::loss_dual;
use attwarp_core::rng::Rng;
use attwarp_core::series::TimeSeries;
use attwarp_core::tensor::Tensor;

const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

fn tiny_pair(rng: &mut Rng) -> (TimeSeries, TimeSeries) {
    let a = TimeSeries::univariate((0..3).map(|_| rng.normal()).collect()).unwrap();
    let b = TimeSeries::univariate((0..4).map(|_| rng.normal()).collect()).unwrap();
    (a, b)
}

/// Dual loss through the attention model in training mode. Clones the
/// model so batch-stat updates never leak between evaluations.
fn attention_loss(
    model: &AttentionModel,
    a: &TimeSeries,
    b: &TimeSeries,
    same: bool,
    tau: f64,
) -> (f64, Option<(Graph, Vec<(String, attwarp_core::autodiff::NodeId)>)>) {
    let mut model = model.clone();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let logits = model.forward_train(&mut g, &bound, a, b).unwrap();
    let p_s = g.row_softmax(logits).unwrap();
    let flipped = g.transpose2d(logits).unwrap();
    let p_t = g.row_softmax(flipped).unwrap();
    let a_node = g.constant(a.to_tensor());
    let b_node = g.constant(b.to_tensor());
    let loss = loss_dual(&mut g, a_node, b_node, p_s, p_t, same, tau).unwrap();
    let value = g.value(loss).item();
    g.backward(loss).unwrap();
    let leaves: Vec<(String, attwarp_core::autodiff::NodeId)> = bound
        .iter()
        .map(|(n, id)| (n.clone(), *id))
        .collect();
    (value, Some((g, leaves)))
}

fn check_attention_gradients(same: bool, tau: f64, seed: u64) {
    let mut rng = Rng::new(seed);
    let arch = ArchConfig {
        dim: 1,
        levels: 1,
        channels: vec![2],
        kernel: 1,
    };
    let model = AttentionModel::new(arch, &mut rng).unwrap();
    let (a, b) = tiny_pair(&mut rng);

    let (_, ctx) = attention_loss(&model, &a, &b, same, tau);
    let (g, leaves) = ctx.unwrap();
    for (name, node) in leaves {
        let analytic = g.grad(node).unwrap().clone();
        let base = model.params()[&name].clone();
        for k in 0..base.len() {
            let x = base.data()[k];
            let h = 1e-5 * f64::max(1.0, x.abs());
            let mut plus = model.clone();
            let mut t = base.clone();
            t.data_mut()[k] = x + h;
            plus.set_param(&name, t).unwrap();
            let (fp, _) = attention_loss(&plus, &a, &b, same, tau);
            let mut minus = model.clone();
            let mut t = base.clone();
            t.data_mut()[k] = x - h;
            minus.set_param(&name, t).unwrap();
            let (fm, _) = attention_loss(&minus, &a, &b, same, tau);
            let fd = (fp - fm) / (2.0 * h);
            let an = analytic.data()[k];
            assert!(
                rel_err(fd, an) <= TOL,
                "seed {seed} {name}[{k}]: fd {fd} vs analytic {an}"
            );
        }
    }
}

#[test]
fn dual_loss_gradients_match_fd_same_class() {
    for seed in [1, 2, 3] {
        check_attention_gradients(true, 1.0, seed);
    }
}

#[test]
fn dual_loss_gradients_match_fd_different_class_active_hinge() {
    // A large margin keeps the hinge strictly active, so the gradient
    // is the (negated) reconstruction gradient.
    for seed in [4, 5, 6] {
        check_attention_gradients(false, 50.0, seed);
    }
}

#[test]
fn dual_loss_gradient_is_zero_on_satisfied_margin() {
    // A tiny margin on a different-class pair: reconstruction error of
    // random series comfortably exceeds it, so the loss is flat zero.
    let mut rng = Rng::new(7);
    let arch = ArchConfig {
        dim: 1,
        levels: 1,
        channels: vec![2],
        kernel: 1,
    };
    let model = AttentionModel::new(arch, &mut rng).unwrap();
    // Push the two series far apart so both directions clear the margin.
    let a = TimeSeries::univariate(vec![5.0, 6.0, 5.5]).unwrap();
    let b = TimeSeries::univariate(vec![-5.0, -6.0, -5.5, -5.2]).unwrap();
    let (value, ctx) = attention_loss(&model, &a, &b, false, 1e-6);
    assert_eq!(value, 0.0);
    let (g, leaves) = ctx.unwrap();
    for (name, node) in leaves {
        let grad = g.grad(node).unwrap();
        assert!(
            grad.data().iter().all(|&v| v == 0.0),
            "{name} should be flat"
        );
    }
}

/// Dual loss through the encoder with fixed alignment matrices,
/// mirroring the plug-in's first training step.
fn encoder_loss(
    enc: &SiameseEncoder,
    a: &TimeSeries,
    b: &TimeSeries,
    p_s: &Tensor,
    p_t: &Tensor,
    same: bool,
    tau: f64,
) -> (f64, Option<(Graph, Vec<(String, attwarp_core::autodiff::NodeId)>)>) {
    let mut enc = enc.clone();
    let mut g = Graph::new();
    let bound = enc.bind(&mut g);
    let ea = enc.forward_train(&mut g, &bound, a).unwrap();
    let eb = enc.forward_train(&mut g, &bound, b).unwrap();
    let ps = g.constant(p_s.clone());
    let pt = g.constant(p_t.clone());
    let loss = loss_dual(&mut g, ea, eb, ps, pt, same, tau).unwrap();
    let value = g.value(loss).item();
    g.backward(loss).unwrap();
    let leaves: Vec<(String, attwarp_core::autodiff::NodeId)> = bound
        .iter()
        .map(|(n, id)| (n.clone(), *id))
        .collect();
    (value, Some((g, leaves)))
}

#[test]
fn encoder_path_gradients_match_fd() {
    let mut rng = Rng::new(8);
    let cfg = EncoderConfig {
        dim: 1,
        channels: vec![3, 2],
        kernel: 3,
    };
    let enc = SiameseEncoder::new(cfg, &mut rng).unwrap();
    let (a, b) = tiny_pair(&mut rng);
    // Uniform row-stochastic alignments keep the test independent of
    // any particular warping path.
    let p_s = Tensor::full(&[3, 4], 0.25);
    let p_t = Tensor::full(&[4, 3], 1.0 / 3.0);

    let (_, ctx) = encoder_loss(&enc, &a, &b, &p_s, &p_t, true, 1.0);
    let (g, leaves) = ctx.unwrap();
    for (name, node) in leaves {
        let analytic = g.grad(node).unwrap().clone();
        let base = enc.params()[&name].clone();
        for k in 0..base.len() {
            let x = base.data()[k];
            let h = 1e-5 * f64::max(1.0, x.abs());
            let mut plus = enc.clone();
            let mut t = base.clone();
            t.data_mut()[k] = x + h;
            plus.set_params({
                let mut m = enc.params().clone();
                m.insert(name.clone(), t);
                m
            })
            .unwrap();
            let (fp, _) = encoder_loss(&plus, &a, &b, &p_s, &p_t, true, 1.0);
            let mut minus = enc.clone();
            let mut t = base.clone();
            t.data_mut()[k] = x - h;
            minus
                .set_params({
                    let mut m = enc.params().clone();
                    m.insert(name.clone(), t);
                    m
                })
                .unwrap();
            let (fm, _) = encoder_loss(&minus, &a, &b, &p_s, &p_t, true, 1.0);
            let fd = (fp - fm) / (2.0 * h);
            let an = analytic.data()[k];
            assert!(
                rel_err(fd, an) <= TOL,
                "{name}[{k}]: fd {fd} vs analytic {an}"
            );
        }
    }
}
