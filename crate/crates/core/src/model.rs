//! The full network: encoder, feature clipping, exponential map and head.
//!
//! Two forward paths exist. The direct path ([`ModelParams::loss`],
//! [`ModelParams::spoof_scores`]) uses the scalar kernels and serves
//! evaluation and gradient checking. The tape path
//! ([`ModelParams::loss_and_grads`]) records the same computation for
//! reverse-mode differentiation during training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::data::{FeatureBatch, LABEL_REAL};
use crate::encoder::{feature_clip, Encoder};
use crate::error::{contract, Result};
use crate::geometry::{self, PoincarePoint, TangentVector};
use crate::head::{self, BasePoint, GyroplaneParams, HeadRecord};
use crate::losses;
use crate::metrics::{self, MetricReport, ScoredSample};
use crate::rng::{self, Stream};
use crate::tape_geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Encoder weights and biases.
    Euclidean,
    /// Base point and gyroplane points, constrained to the ball.
    BallPoint,
    /// Gyroplane normals.
    HeadNormal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub hyp_pc: f64,
    pub hyp_ce: f64,
    pub total: f64,
}

/// Stages of a forward/backward pass, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    UpdateMean,
    SamplePseudoNegatives,
    Concat,
    Encode,
    FeatureClip,
    ExpMap,
    Logits,
    Loss,
    Backward,
    GradClip(usize),
    RiemannianScale(usize),
    Moments(usize),
    BiasCorrection(usize),
    Update(usize),
    Project,
}

pub(crate) fn record(trace: &mut Option<&mut Vec<Stage>>, s: Stage) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub head: GyroplaneParams,
    pub base: BasePoint,
}

/// Serialized form of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub encoder: Encoder,
    pub head: HeadRecord,
}

impl ModelParams {
    /// Seeded encoder, gyroplane points and base point at the origin, normals
    /// drawn as `N(0, I/d)`.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.curvature()?;
        let d = cfg.ball_dim();
        let mut rng = rng::stream(cfg.seed, Stream::Init);
        let encoder = Encoder::init(&cfg.encoder_config()?, &mut rng);
        let scale = 1.0 / (d as f64).sqrt();
        let mut normal = || {
            let mut v = rng::standard_normal_vec(&mut rng, d);
            v.iter_mut().for_each(|x| *x *= scale);
            TangentVector::new(v)
        };
        let normals = [normal()?, normal()?];
        let head = GyroplaneParams::new(
            [PoincarePoint::origin(d, c), PoincarePoint::origin(d, c)],
            normals,
        )?;
        Ok(ModelParams {
            encoder,
            head,
            base: BasePoint(PoincarePoint::origin(d, c)),
        })
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            encoder: self.encoder.clone(),
            head: HeadRecord::from_params(&self.head, &self.base),
        }
    }

    pub fn from_record(rec: ParamsRecord) -> Result<Self> {
        rec.encoder.validate()?;
        let (head, base) = rec.head.into_params()?;
        if rec.encoder.output_dim() != head.dim() {
            return Err(contract("encoder output width differs from ball dimension"));
        }
        Ok(ModelParams {
            encoder: rec.encoder,
            head,
            base,
        })
    }

    /// Checks that the parameters have the shapes `cfg` describes.
    pub fn check_against(&self, cfg: &TrainConfig) -> Result<()> {
        let widths: Vec<usize> = std::iter::once(self.encoder.input_dim())
            .chain(self.encoder.layers.iter().map(|l| l.outputs))
            .collect();
        if widths != cfg.widths {
            return Err(contract(format!(
                "parameter widths {widths:?} differ from configured {:?}",
                cfg.widths
            )));
        }
        if self.head.curvature().value() != cfg.curvature {
            return Err(contract("parameter curvature differs from configuration"));
        }
        if self.encoder.activation != cfg.hidden_activation {
            return Err(contract("parameter activation differs from configuration"));
        }
        Ok(())
    }

    /// Trainable tensors in update order.
    pub fn slots(&self) -> Vec<ParamSlot> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push(ParamSlot {
                name: format!("encoder.{i}.weight"),
                kind: ParamKind::Euclidean,
                rows: l.inputs,
                cols: l.outputs,
            });
            out.push(ParamSlot {
                name: format!("encoder.{i}.bias"),
                kind: ParamKind::Euclidean,
                rows: 1,
                cols: l.outputs,
            });
        }
        let d = self.head.dim();
        for (name, kind) in [
            ("base_point", ParamKind::BallPoint),
            ("head.p0", ParamKind::BallPoint),
            ("head.p1", ParamKind::BallPoint),
            ("head.a0", ParamKind::HeadNormal),
            ("head.a1", ParamKind::HeadNormal),
        ] {
            out.push(ParamSlot {
                name: name.to_string(),
                kind,
                rows: 1,
                cols: d,
            });
        }
        out
    }

    /// Values of every slot, in [`ModelParams::slots`] order.
    pub fn flatten(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(l.weight.clone());
            out.push(l.bias.clone());
        }
        out.push(self.base.0.coords().to_vec());
        for k in 0..2 {
            out.push(self.head.point(k).coords().to_vec());
        }
        for k in 0..2 {
            out.push(self.head.normal(k).coords().to_vec());
        }
        out
    }

    /// Writes slot values back, re-projecting ball points and flooring normals.
    pub fn assign(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let slots = self.slots();
        if values.len() != slots.len() || values.iter().zip(&slots).any(|(v, s)| v.len() != s.len())
        {
            return Err(contract("assigned values do not match parameter slots"));
        }
        for v in values {
            geometry::check_finite(v, "parameter update")?;
        }
        let mut it = values.iter();
        for l in &mut self.encoder.layers {
            l.weight.clone_from(it.next().unwrap());
            l.bias.clone_from(it.next().unwrap());
        }
        self.base.0.set_coords_projected(it.next().unwrap());
        for p in self.head.points_mut().iter_mut() {
            p.set_coords_projected(it.next().unwrap());
        }
        for a in self.head.normals_mut().iter_mut() {
            a.coords_mut().clone_from(it.next().unwrap());
        }
        self.head.enforce_normal_floor();
        Ok(())
    }

    fn check_batch(&self, batch: &FeatureBatch) -> Result<()> {
        if batch.dim() != self.encoder.input_dim() {
            return Err(contract(format!(
                "feature width {} does not match encoder input {}",
                batch.dim(),
                self.encoder.input_dim()
            )));
        }
        Ok(())
    }

    /// Ball embeddings of every row.
    pub fn embed(&self, batch: &FeatureBatch, cfg: &TrainConfig) -> Result<Vec<PoincarePoint>> {
        self.check_batch(batch)?;
        let c = self.head.curvature();
        let d = self.head.dim();
        let encoded = self.encoder.encode(batch)?;
        encoded
            .chunks(d)
            .map(|g| {
                let g = if cfg.feature_clipping {
                    feature_clip(g, cfg.feature_clip)
                } else {
                    g.to_vec()
                };
                let coords = geometry::exp_map_slices(
                    self.base.0.coords(),
                    &g,
                    c.value(),
                    cfg.modes.exp_map_form,
                );
                PoincarePoint::new(coords, c)
            })
            .collect()
    }

    pub fn logits(&self, batch: &FeatureBatch, cfg: &TrainConfig) -> Result<Vec<[f64; 2]>> {
        self.embed(batch, cfg)?
            .iter()
            .map(|x| {
                Ok([
                    head::logit(x, 0, &self.head)?,
                    head::logit(x, 1, &self.head)?,
                ])
            })
            .collect()
    }

    /// Spoof-class likelihood of every row.
    pub fn spoof_scores(&self, batch: &FeatureBatch, cfg: &TrainConfig) -> Result<Vec<f64>> {
        Ok(self
            .logits(batch, cfg)?
            .into_iter()
            .map(|z| head::softmax2(z)[1])
            .collect())
    }

    /// Scored samples for metric computation.
    pub fn score(&self, batch: &FeatureBatch, cfg: &TrainConfig) -> Result<Vec<ScoredSample>> {
        metrics::scored(&self.spoof_scores(batch, cfg)?, batch.labels())
    }

    /// Metric report on a labelled batch.
    pub fn evaluate(
        &self,
        batch: &FeatureBatch,
        cfg: &TrainConfig,
        threshold: Option<f64>,
    ) -> Result<MetricReport> {
        MetricReport::compute(&self.score(batch, cfg)?, threshold)
    }

    /// Loss on a batch whose real rows precede its spoof rows, evaluated
    /// without the tape.
    pub fn loss(&self, batch: &FeatureBatch, cfg: &TrainConfig) -> Result<LossBreakdown> {
        let n_pos = check_layout(batch)?;
        let points = self.embed(batch, cfg)?;
        let logits: Vec<[f64; 2]> = points
            .iter()
            .map(|x| {
                Ok([
                    head::logit(x, 0, &self.head)?,
                    head::logit(x, 1, &self.head)?,
                ])
            })
            .collect::<Result<_>>()?;
        let hyp_pc = if n_pos == 0 {
            0.0
        } else {
            losses::hyp_pc(&points[..n_pos])?
        };
        let w = cfg.modes.weight_form.weight(batch.len());
        let hyp_ce = losses::hyp_ce(&logits, batch.labels(), &vec![w; batch.len()])?;
        Ok(LossBreakdown {
            hyp_pc,
            hyp_ce,
            total: losses::total_loss(hyp_pc, hyp_ce),
        })
    }

    /// Loss and the gradient of the total with respect to every slot.
    pub fn loss_and_grads(
        &self,
        batch: &FeatureBatch,
        cfg: &TrainConfig,
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        self.loss_and_grads_traced(batch, cfg, None)
    }

    pub(crate) fn loss_and_grads_traced(
        &self,
        batch: &FeatureBatch,
        cfg: &TrainConfig,
        mut trace: Option<&mut Vec<Stage>>,
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        self.check_batch(batch)?;
        let n_pos = check_layout(batch)?;
        let c = self.head.curvature().value();
        let rows = batch.len();
        let t = Tape::new();

        let slots = self.slots();
        let leaves: Vec<Var> = self
            .flatten()
            .into_iter()
            .zip(&slots)
            .map(|(v, s)| t.leaf(v, s.rows, s.cols))
            .collect();
        let n_layers = self.encoder.layers.len();
        let layer_vars: Vec<(Var, Var)> = (0..n_layers)
            .map(|i| (leaves[2 * i], leaves[2 * i + 1]))
            .collect();
        let head_vars = &leaves[2 * n_layers..];
        let (base, p, a) = (
            head_vars[0],
            [head_vars[1], head_vars[2]],
            [head_vars[3], head_vars[4]],
        );

        let x = t.constant(batch.features().to_vec(), rows, batch.dim());
        record(&mut trace, Stage::Encode);
        let mut g = self.encoder.encode_on_tape(&t, x, &layer_vars);
        if cfg.feature_clipping {
            record(&mut trace, Stage::FeatureClip);
            g = t.row_clip_norm(g, cfg.feature_clip);
        }
        record(&mut trace, Stage::ExpMap);
        let s = tape_geometry::exp_map_rows(
            &t,
            t.broadcast_rows(base, rows),
            g,
            c,
            cfg.modes.exp_map_form,
        );

        record(&mut trace, Stage::Logits);
        let z0 = head::logits_on_tape(&t, s, p[0], a[0], c);
        let z1 = head::logits_on_tape(&t, s, p[1], a[1], c);

        record(&mut trace, Stage::Loss);
        let pc = if n_pos == 0 {
            t.scalar_constant(0.0)
        } else {
            losses::hyp_pc_on_tape(&t, t.slice_rows(s, 0, n_pos), c)
        };
        let ce = losses::hyp_ce_on_tape(
            &t,
            z0,
            z1,
            batch.labels(),
            cfg.modes.weight_form.weight(rows),
        );
        let total = t.add(pc, ce);
        t.check_finite()?;

        record(&mut trace, Stage::Backward);
        let grads = t.backward(total)?;
        let loss = LossBreakdown {
            hyp_pc: t.scalar(pc),
            hyp_ce: t.scalar(ce),
            total: t.scalar(total),
        };
        Ok((loss, leaves.iter().map(|&v| grads.get(v)).collect()))
    }
}

/// Real rows must form a prefix with an even count; returns that count.
fn check_layout(batch: &FeatureBatch) -> Result<usize> {
    let n_pos = batch
        .labels()
        .iter()
        .take_while(|&&l| l == LABEL_REAL)
        .count();
    if batch.labels()[n_pos..].contains(&LABEL_REAL) {
        return Err(contract(
            "real rows must precede spoof rows in a loss batch",
        ));
    }
    if n_pos % 2 != 0 {
        return Err(contract(format!(
            "loss batch needs an even number of real rows, got {n_pos}"
        )));
    }
    Ok(n_pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            widths: vec![3, 4, 2],
            curvature: 0.5,
            batch_size: 2,
            seed: 3,
            ..Default::default()
        }
    }

    fn batch() -> FeatureBatch {
        FeatureBatch::new(
            vec![
                0.2, -0.1, 0.5, 1.0, 0.3, -0.7, 2.0, 1.5, -0.2, -1.1, 0.4, 0.9,
            ],
            3,
            vec![0, 0, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn tape_and_direct_losses_agree() {
        let cfg = tiny_cfg();
        let m = ModelParams::init(&cfg).unwrap();
        let direct = m.loss(&batch(), &cfg).unwrap();
        let (taped, grads) = m.loss_and_grads(&batch(), &cfg).unwrap();
        assert!((direct.total - taped.total).abs() < 1e-12);
        assert!((direct.hyp_pc - taped.hyp_pc).abs() < 1e-12);
        assert_eq!(grads.len(), m.slots().len());
    }

    #[test]
    fn flatten_assign_round_trip() {
        let cfg = tiny_cfg();
        let m = ModelParams::init(&cfg).unwrap();
        let mut n = m.clone();
        n.assign(&m.flatten()).unwrap();
        assert_eq!(m, n);
        assert!(ModelParams::from_record(m.to_record()).unwrap() == m);
    }

    #[test]
    fn assign_projects_ball_points() {
        let cfg = tiny_cfg();
        let mut m = ModelParams::init(&cfg).unwrap();
        let mut v = m.flatten();
        let base = v.len() - 5;
        v[base] = vec![100.0, 0.0];
        m.assign(&v).unwrap();
        assert!(cfg.curvature * m.base.0.sq_norm() < 1.0 - geometry::EPS_BALL);
    }

    #[test]
    fn layout_checked() {
        let cfg = tiny_cfg();
        let m = ModelParams::init(&cfg).unwrap();
        let bad = FeatureBatch::new(vec![0.0; 6], 3, vec![1, 0]).unwrap();
        assert!(m.loss(&bad, &cfg).is_err());
        let odd = FeatureBatch::new(vec![0.0; 3], 3, vec![0]).unwrap();
        assert!(m.loss_and_grads(&odd, &cfg).is_err());
    }
}
