//! Adversarial and reconstruction losses on top of the graph.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Scalar;

/// Default weight of the discriminator loss.
pub const DEFAULT_D_WEIGHT: f64 = 0.5;

/// Mean binary cross-entropy of raw scores against label `target`.
pub fn bce_with_logits<S: Scalar>(g: &mut Graph<S>, scores: NodeId, target: f64) -> NodeId {
    g.bce_with_logits(scores, target)
}

/// `weight · (bce(real, 1) + bce(fake, 0))`. Minimizing it is the
/// discriminator's ascent on the conditional adversarial objective.
pub fn loss_discriminator<S: Scalar>(
    g: &mut Graph<S>,
    d_real: NodeId,
    d_fake: NodeId,
    weight: f64,
) -> Result<NodeId> {
    if g.value(d_real).shape() != g.value(d_fake).shape() {
        return Err(Error::shape(
            "loss_discriminator",
            format!(
                "real scores {:?} vs fake scores {:?}",
                g.value(d_real).shape(),
                g.value(d_fake).shape()
            ),
        ));
    }
    let real = bce_with_logits(g, d_real, 1.0);
    let fake = bce_with_logits(g, d_fake, 0.0);
    let both = g.add(real, fake)?;
    Ok(g.scale(both, weight))
}

/// Node ids of the generator loss components.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: NodeId,
    pub adv: NodeId,
    pub l1: NodeId,
}

/// Non-saturating adversarial term `bce(d_fake, 1)` plus `lambda · mean|y - G(x)|`.
pub fn loss_generator<S: Scalar>(
    g: &mut Graph<S>,
    d_fake: NodeId,
    g_out: NodeId,
    target: NodeId,
    lambda_l1: f64,
) -> Result<GeneratorLoss> {
    if g.value(g_out).shape() != g.value(target).shape() {
        return Err(Error::shape(
            "loss_generator",
            format!(
                "generated {:?} vs target {:?}",
                g.value(g_out).shape(),
                g.value(target).shape()
            ),
        ));
    }
    let adv = bce_with_logits(g, d_fake, 1.0);
    let diff = g.sub(target, g_out)?;
    let abs = g.abs(diff);
    let l1 = g.mean(abs);
    let weighted = g.scale(l1, lambda_l1);
    let total = g.add(adv, weighted)?;
    Ok(GeneratorLoss { total, adv, l1 })
}
