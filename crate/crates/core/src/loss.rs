//! Contrastive and pre-training losses, built as graph nodes so
//! gradients flow to whatever produced the inputs — series constants
//! in stand-alone training, encoder outputs in the plug-in schedule.

use crate::autodiff::{Graph, NodeId};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

fn check_margin(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(CoreError::InvalidArgument {
            context: "contrastive margin",
            detail: alloc::format!("tau must be a positive real, got {tau}"),
        });
    }
    Ok(())
}

/// Length-normalized reconstruction error node
/// `‖target − P·source‖²/(rows·D)` for `target: [rows, D]`,
/// `p: [rows, cols]`, `source: [cols, D]`.
pub fn reconstruction(
    g: &mut Graph,
    target: NodeId,
    p: NodeId,
    source: NodeId,
) -> Result<NodeId> {
    let shape = g.value(target).shape();
    if shape.len() != 2 {
        return Err(CoreError::ShapeMismatch {
            context: "reconstruction target",
            left: shape.to_vec(),
            right: alloc::vec![2],
        });
    }
    let norm = (shape[0] * shape[1]) as f64;
    let warped = g.matmul(p, source)?;
    let diff = g.sub(target, warped)?;
    let sq = g.frobenius_sq(diff)?;
    g.scale(sq, 1.0 / norm)
}

/// One direction of the contrastive loss: the reconstruction error of
/// `a` under `p_s·b` for a same-class pair, or its hinge against the
/// margin `max(0, τ − error)` for a different-class pair.
pub fn loss_contrastive_s(
    g: &mut Graph,
    a: NodeId,
    b: NodeId,
    p_s: NodeId,
    same_class: bool,
    tau: f64,
) -> Result<NodeId> {
    check_margin(tau)?;
    let err = reconstruction(g, a, p_s, b)?;
    if same_class {
        Ok(err)
    } else {
        let negated = g.scale(err, -1.0)?;
        let shifted = g.add_const(negated, tau)?;
        g.relu(shifted)
    }
}

/// Dual contrastive loss: the source direction plus its mirror
/// `‖b − p_t·a‖²` normalized by the second series' own length — the
/// target-side normalizer is taken as `J·D` by symmetry with the
/// source side's `I·D`, which the original description leaves
/// unnamed.
pub fn loss_dual(
    g: &mut Graph,
    a: NodeId,
    b: NodeId,
    p_s: NodeId,
    p_t: NodeId,
    same_class: bool,
    tau: f64,
) -> Result<NodeId> {
    let l_s = loss_contrastive_s(g, a, b, p_s, same_class, tau)?;
    let l_t = loss_contrastive_s(g, b, a, p_t, same_class, tau)?;
    g.add(l_s, l_t)
}

/// Mimic loss against a warping-path target: `‖P_s − P_dtw‖²/(I·J)`.
pub fn loss_pretrain(g: &mut Graph, p_s: NodeId, p_dtw: &Tensor) -> Result<NodeId> {
    if g.value(p_s).shape() != p_dtw.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "pretrain target",
            left: g.value(p_s).shape().to_vec(),
            right: p_dtw.shape().to_vec(),
        });
    }
    let cells = p_dtw.len() as f64;
    let target = g.constant(p_dtw.clone());
    let diff = g.sub(p_s, target)?;
    let sq = g.frobenius_sq(diff)?;
    g.scale(sq, 1.0 / cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn constant(g: &mut Graph, shape: &[usize], data: Vec<f64>) -> NodeId {
        g.constant(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn perfect_reconstruction_gives_zero_same_class_loss() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[2, 1], vec![1.0, 2.0]);
        let b = constant(&mut g, &[2, 1], vec![1.0, 2.0]);
        let eye = constant(&mut g, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let l = loss_contrastive_s(&mut g, a, b, eye, true, 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn satisfied_margin_gives_zero_different_class_loss() {
        // Reconstruction error 2τ, well past the margin.
        let mut g = Graph::new();
        let tau = 1.0;
        let a = constant(&mut g, &[1, 1], vec![0.0]);
        let err = libm::sqrt(2.0 * tau);
        let b = constant(&mut g, &[1, 1], vec![err]);
        let p = constant(&mut g, &[1, 1], vec![1.0]);
        let l = loss_contrastive_s(&mut g, a, b, p, false, tau).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn unit_error_single_cell_case() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[1, 1], vec![1.0]);
        let b = constant(&mut g, &[1, 1], vec![0.0]);
        let p = constant(&mut g, &[1, 1], vec![1.0]);
        let l = loss_contrastive_s(&mut g, a, b, p, true, 1.0).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
    }

    #[test]
    fn violated_margin_is_tau_minus_error() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[1, 1], vec![0.0]);
        let b = constant(&mut g, &[1, 1], vec![0.5]);
        let p = constant(&mut g, &[1, 1], vec![1.0]);
        let l = loss_contrastive_s(&mut g, a, b, p, false, 1.0).unwrap();
        assert!((g.value(l).item() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dual_loss_on_constant_series_is_eight() {
        // A all zeros (I=2), B all twos (J=3): any row-stochastic
        // correspondence reconstructs the constant, so each direction
        // contributes exactly 4.
        let mut g = Graph::new();
        let a = constant(&mut g, &[2, 1], vec![0.0, 0.0]);
        let b = constant(&mut g, &[3, 1], vec![2.0, 2.0, 2.0]);
        let p_s = constant(&mut g, &[2, 3], vec![1.0 / 3.0; 6]);
        let p_t = constant(&mut g, &[3, 2], vec![0.5; 6]);
        let l = loss_dual(&mut g, a, b, p_s, p_t, true, 1.0).unwrap();
        assert!((g.value(l).item() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn dual_loss_of_perfect_pair_is_zero() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[2, 1], vec![1.0, 2.0]);
        let b = constant(&mut g, &[2, 1], vec![1.0, 2.0]);
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let p_s = constant(&mut g, &[2, 2], eye.clone());
        let p_t = constant(&mut g, &[2, 2], eye);
        let l = loss_dual(&mut g, a, b, p_s, p_t, true, 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn pretrain_loss_zero_iff_equal() {
        let mut g = Graph::new();
        let target = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = g.constant(target.clone());
        let l = loss_pretrain(&mut g, p, &target).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn pretrain_uniform_versus_identity_is_quarter() {
        let mut g = Graph::new();
        let target = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = constant(&mut g, &[2, 2], vec![0.5; 4]);
        let l = loss_pretrain(&mut g, p, &target).unwrap();
        assert!((g.value(l).item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pretrain_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let target = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        let p = constant(&mut g, &[2, 2], vec![0.5; 4]);
        assert!(loss_pretrain(&mut g, p, &target).is_err());
    }

    #[test]
    fn margin_must_be_positive() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[1, 1], vec![0.0]);
        let b = constant(&mut g, &[1, 1], vec![1.0]);
        let p = constant(&mut g, &[1, 1], vec![1.0]);
        assert!(loss_contrastive_s(&mut g, a, b, p, false, 0.0).is_err());
        assert!(loss_contrastive_s(&mut g, a, b, p, false, f64::NAN).is_err());
    }

    #[test]
    fn losses_are_nonnegative_for_random_inputs() {
        use crate::rng::Rng;
        let mut rng = Rng::new(77);
        for case in 0..40 {
            let mut g = Graph::new();
            let (i, j, d) = (2 + rng.index(4), 2 + rng.index(4), 1 + rng.index(2));
            let a = constant(&mut g, &[i, d], (0..i * d).map(|_| rng.normal()).collect());
            let b = constant(&mut g, &[j, d], (0..j * d).map(|_| rng.normal()).collect());
            let logits_s: Vec<f64> = (0..i * j).map(|_| rng.normal()).collect();
            let ps_data =
                crate::autodiff::kernels::row_softmax(&logits_s, i, j);
            let pt_src = crate::autodiff::kernels::transpose(&logits_s, i, j);
            let pt_data = crate::autodiff::kernels::row_softmax(&pt_src, j, i);
            let p_s = constant(&mut g, &[i, j], ps_data);
            let p_t = constant(&mut g, &[j, i], pt_data);
            let same = case % 2 == 0;
            let l = loss_dual(&mut g, a, b, p_s, p_t, same, 1.0).unwrap();
            assert!(g.value(l).item() >= 0.0);
        }
    }
}
