//! The composite training objective.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::config::{FieldHeadKind, LossWeights, NetworkConfig};
use crate::data::StepSample;
use crate::error::{NetError, Result};
use crate::model::{decode, encode, field_head, query_features, reparameterize, sdf_head, Decoded, Gating};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub occupancy: f64,
    pub cross_field: f64,
    pub sdf: f64,
    pub kl: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.occupancy, self.cross_field, self.sdf, self.kl]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Running sum `self += other * w`.
    pub fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.total += other.total * w;
        self.occupancy += other.occupancy * w;
        self.cross_field += other.cross_field * w;
        self.sdf += other.sdf * w;
        self.kl += other.kl * w;
    }
}

/// Scalar loss nodes before weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub occupancy: Var,
    pub cross_field: Var,
    pub sdf: Var,
    pub kl: Var,
}

/// `λ_o L_o + λ_cf L_cf + λ_sdf L_sdf + λ_kl L_kl`.
pub fn loss_total<T: Real>(tape: &mut Tape<'_, T>, terms: &LossTerms, w: &LossWeights) -> (Var, LossBreakdown) {
    let total = tape.weighted_sum(&[
        (terms.occupancy, T::lit(w.occupancy)),
        (terms.cross_field, T::lit(w.cross_field)),
        (terms.sdf, T::lit(w.sdf)),
        (terms.kl, T::lit(w.kl)),
    ]);
    let s = |v: Var| tape.value(v).data[0].as_f64();
    let b = LossBreakdown {
        total: s(total),
        occupancy: s(terms.occupancy),
        cross_field: s(terms.cross_field),
        sdf: s(terms.sdf),
        kl: s(terms.kl),
    };
    (total, b)
}

/// Mean BCE over the candidates of every decoder level, labeled by
/// membership in the ground-truth sets.
pub fn occupancy_loss<T: Real>(tape: &mut Tape<'_, T>, decoded: &Decoded, gt: &[Vec<u64>]) -> Result<Var> {
    if gt.len() != decoded.levels.len() {
        return Err(NetError::Shape("occupancy targets per level".into()));
    }
    let total: usize = decoded.levels.iter().map(|l| l.candidates.len()).sum();
    let mut terms = Vec::with_capacity(gt.len());
    for (level, keys) in decoded.levels.iter().zip(gt) {
        let labels: Vec<T> = level
            .candidates
            .iter()
            .map(|k| if keys.binary_search(k).is_ok() { T::one() } else { T::zero() })
            .collect();
        let n = labels.len();
        let l = tape.bce_with_logits(level.logits, labels);
        terms.push((l, T::lit(n as f64 / total as f64)));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Teacher-forced forward pass and loss for one augmented sample. `noise`
/// seeds the latent sample; `None` decodes the latent mean.
pub fn sample_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    cfg: &NetworkConfig,
    weights: &LossWeights,
    sample: &StepSample<T>,
    noise: Option<u64>,
) -> Result<(Var, LossBreakdown)> {
    if sample.points.is_empty() || sample.queries.is_empty() {
        return Err(NetError::EmptyShape("empty P or Q in batch".into()));
    }
    let latent = encode(tape, cfg, &sample.input)?;
    let z = reparameterize(tape, &latent, noise);
    let decoded = decode(tape, cfg, &latent.keys, z, Gating::Teacher(&sample.occupancy))?;
    let occupancy = occupancy_loss(tape, &decoded, &sample.occupancy)?;

    let (fq, _) = query_features(tape, &decoded, &sample.queries);
    let sdf = sdf_head(tape, fq);
    let sdf = tape.l1(sdf, sample.sdf.clone());

    let (fp, _) = query_features(tape, &decoded, &sample.points);
    let out = field_head(tape, cfg, fp, &sample.normals);
    let geo = Rc::new(sample.cross.clone());
    let cross_field = match cfg.field_head_kind {
        FieldHeadKind::Direction => tape.cross_loss_direction(out, geo),
        FieldHeadKind::RotationAngle => tape.cross_loss_angle(out, geo),
    };
    let kl = tape.kl(latent.mean, latent.logvar);
    let terms = LossTerms {
        occupancy,
        cross_field,
        sdf,
        kl,
    };
    Ok(loss_total(tape, &terms, weights))
}
