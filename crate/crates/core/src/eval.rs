//! Point-level metrics: overall accuracy, macro per-class accuracy,
//! per-class intersection over union, and the partition-induced
//! performance ceiling.

use crate::data::Label;
use crate::error::{Error, Result};
use crate::partition::PartitionSolution;

#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub class_count: usize,
    /// counts[gt * class_count + pred]
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        ConfusionMatrix { class_count, counts: vec![0; class_count * class_count] }
    }

    /// Accumulate labeled points; unlabeled ground truth is skipped.
    pub fn accumulate(&mut self, pred: &[u32], gt: &[Label]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::contract(format!(
                "prediction length {} != ground truth length {}",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, g) in pred.iter().zip(gt) {
            if let Some(g) = g {
                let (p, g) = (p as usize, *g as usize);
                if p >= self.class_count || g >= self.class_count {
                    return Err(Error::contract(format!(
                        "label out of range: pred {p}, gt {g}, K {}",
                        self.class_count
                    )));
                }
                self.counts[g * self.class_count + p] += 1;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    /// Per-class IoU; None for classes absent from both prediction and
    /// ground truth (excluded from the mean).
    pub per_class_iou: Vec<Option<f64>>,
}

/// Metrics from a confusion matrix: OA = trace/total, per-class
/// IoU_c = TP/(TP+FP+FN), mIoU = unweighted mean over classes present in
/// the ground truth, mAcc = macro recall.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<Metrics> {
    let k = cm.class_count;
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("no labeled points to evaluate"));
    }
    let mut trace = 0u64;
    let mut per_class_iou = Vec::with_capacity(k);
    let mut iou_sum = 0.0;
    let mut iou_count = 0usize;
    let mut recall_sum = 0.0;
    let mut recall_count = 0usize;
    for c in 0..k {
        let tp = cm.counts[c * k + c];
        trace += tp;
        let gt_row: u64 = (0..k).map(|p| cm.counts[c * k + p]).sum();
        let pred_col: u64 = (0..k).map(|g| cm.counts[g * k + c]).sum();
        let union = gt_row + pred_col - tp;
        if union > 0 {
            let iou = tp as f64 / union as f64;
            per_class_iou.push(Some(iou));
            // classes absent from the ground truth but present in the
            // prediction still count (as zero) toward the mean
            iou_sum += iou;
            iou_count += 1;
        } else {
            per_class_iou.push(None);
        }
        if gt_row > 0 {
            recall_sum += tp as f64 / gt_row as f64;
            recall_count += 1;
        }
    }
    Ok(Metrics {
        oa: trace as f64 / total as f64,
        macc: recall_sum / recall_count.max(1) as f64,
        miou: iou_sum / iou_count.max(1) as f64,
        per_class_iou,
    })
}

pub fn metrics(pred: &[u32], gt: &[Label], class_count: usize) -> Result<Metrics> {
    let mut cm = ConfusionMatrix::new(class_count);
    cm.accumulate(pred, gt)?;
    metrics_from_confusion(&cm)
}

/// The partition ceiling: label every point with its component's majority
/// ground-truth label and evaluate against the true labels.
pub fn perfect_bound(partition: &PartitionSolution, gt: &[Label], class_count: usize) -> Result<Metrics> {
    if partition.component_of.len() != gt.len() {
        return Err(Error::contract("partition and labels disagree in length"));
    }
    let count = partition.component_count();
    let mut votes = vec![std::collections::HashMap::<u32, usize>::new(); count];
    for (i, g) in gt.iter().enumerate() {
        if let Some(g) = g {
            *votes[partition.component_of[i] as usize].entry(*g).or_insert(0) += 1;
        }
    }
    let majority: Vec<u32> = votes
        .iter()
        .map(|v| {
            v.iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(k, _)| *k)
                .unwrap_or(0)
        })
        .collect();
    let pred: Vec<u32> = partition.component_of.iter().map(|&c| majority[c as usize]).collect();
    metrics(&pred, gt, class_count)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variant: String,
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
}

/// Train and evaluate one named variant with a shared seed. Accepted
/// names: the ablation variants plus "ECC-VV" / "ECC-MV" (the full model
/// with the chosen convolution flavor) and "Perfect" (the partition
/// ceiling, no training).
pub fn ablation_run(
    variant: &str,
    scenes: &[crate::pipeline::SceneArtifacts],
    train_count: usize,
    config: &crate::config::PipelineConfig,
    class_count: usize,
    seed: u64,
) -> Result<AblationOutcome> {
    use crate::models::{AblationVariant, EccVariant, SpgModel};
    use crate::train::{normalize_scenes, predict, train_loop, TrainConfig};

    if train_count == 0 || train_count >= scenes.len() {
        return Err(Error::validation(format!(
            "bad split: {train_count} train of {} scenes",
            scenes.len()
        )));
    }
    let (train_raw, test_raw) = scenes.split_at(train_count);

    if variant == "Perfect" {
        let mut cm = ConfusionMatrix::new(class_count);
        for scene in test_raw {
            let part = scene.point_partition();
            let gt = scene
                .cloud
                .labels
                .as_ref()
                .ok_or_else(|| Error::validation("unlabeled scene"))?;
            let count = part.component_count();
            let mut votes = vec![std::collections::HashMap::<u32, usize>::new(); count];
            for (i, g) in gt.iter().enumerate() {
                if let Some(g) = g {
                    *votes[part.component_of[i] as usize].entry(*g).or_insert(0) += 1;
                }
            }
            let majority: Vec<u32> = votes
                .iter()
                .map(|v| {
                    v.iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(k, _)| *k)
                        .unwrap_or(0)
                })
                .collect();
            let pred: Vec<u32> = part.component_of.iter().map(|&c| majority[c as usize]).collect();
            cm.accumulate(&pred, gt)?;
        }
        let m = metrics_from_confusion(&cm)?;
        return Ok(AblationOutcome { variant: variant.into(), oa: m.oa, macc: m.macc, miou: m.miou });
    }

    let mut model_config = config.model_config(class_count);
    match variant {
        "ECC-VV" => {
            model_config.ablation = AblationVariant::Best;
            model_config.ecc = EccVariant::Vv;
        }
        "ECC-MV" => {
            model_config.ablation = AblationVariant::Best;
            model_config.ecc = EccVariant::Mv;
        }
        name => {
            model_config.ablation = AblationVariant::parse(name)
                .ok_or_else(|| Error::validation(format!("unknown variant {name}")))?;
        }
    }

    let mut model = SpgModel::new(model_config, seed);
    let mut train_scenes: Vec<_> = train_raw.to_vec();
    let mut test_scenes: Vec<_> = test_raw.to_vec();
    let stats = normalize_scenes(&mut model, &mut train_scenes)?;
    for s in &mut test_scenes {
        crate::spg::normalize_features(&mut s.spg, &stats);
    }
    let tc = TrainConfig {
        lr: config.lr,
        batch: config.batch,
        epochs: config.epochs,
        decay_epochs: config.decay_epochs.clone(),
        lr_decay: config.lr_decay,
        clip: config.clip,
        max_superpoints: config.max_superpoints,
        neighborhood_order: config.neighborhood_order,
        jitter_sigma: config.jitter_sigma,
        jitter_clip: config.jitter_clip,
        seed,
    };
    train_loop(&mut model, &train_scenes, &tc)?;

    let mut cm = ConfusionMatrix::new(class_count);
    for scene in &test_scenes {
        let pred = predict(&model, scene, config.runs, seed ^ 0x7e57)?;
        cm.accumulate(
            &pred,
            scene.cloud.labels.as_ref().ok_or_else(|| Error::validation("unlabeled scene"))?,
        )?;
    }
    let m = metrics_from_confusion(&cm)?;
    Ok(AblationOutcome { variant: variant.into(), oa: m.oa, macc: m.macc, miou: m.miou })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::NodeFeatures;
    use crate::rng::Rng;

    fn labels(raw: &[i64]) -> Vec<Label> {
        raw.iter().map(|&v| if v < 0 { None } else { Some(v as u32) }).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = labels(&[0, 1, 2, 1, 0]);
        let pred = vec![0, 1, 2, 1, 0];
        let m = metrics(&pred, &gt, 3).unwrap();
        assert_eq!(m.oa, 1.0);
        assert_eq!(m.macc, 1.0);
        assert_eq!(m.miou, 1.0);
    }

    #[test]
    fn hand_confusion_example() {
        // gt = (0,0,1,1), pred = (0,1,1,1)
        let gt = labels(&[0, 0, 1, 1]);
        let pred = vec![0, 1, 1, 1];
        let m = metrics(&pred, &gt, 2).unwrap();
        assert!((m.oa - 0.75).abs() < 1e-12);
        assert!((m.per_class_iou[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((m.per_class_iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.miou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-4);
        assert!((m.miou - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn absent_class_is_excluded_from_miou() {
        let gt = labels(&[0, 0, 1]);
        let pred = vec![0, 0, 1];
        // class 2 appears nowhere
        let m = metrics(&pred, &gt, 3).unwrap();
        assert_eq!(m.per_class_iou[2], None);
        assert_eq!(m.miou, 1.0);
    }

    #[test]
    fn unlabeled_points_are_ignored() {
        let gt = labels(&[0, -1, 1, -1]);
        let pred = vec![0, 1, 1, 0];
        let m = metrics(&pred, &gt, 2).unwrap();
        assert_eq!(m.oa, 1.0);
    }

    #[test]
    fn no_labeled_points_is_an_error() {
        let gt = labels(&[-1, -1]);
        assert!(metrics(&[0, 0], &gt, 2).is_err());
    }

    /// Brute-force oracle over random label arrays: per-class TP/FP/FN by
    /// direct counting.
    #[test]
    fn matches_brute_force_confusion_on_random_arrays() {
        let mut rng = Rng::seed_from(1234);
        for _ in 0..200 {
            let k = 2 + rng.below(6);
            let n = 1 + rng.below(300);
            let gt_raw: Vec<i64> = (0..n)
                .map(|_| if rng.next_f64() < 0.1 { -1 } else { rng.below(k) as i64 })
                .collect();
            let gt = labels(&gt_raw);
            let pred: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
            if gt.iter().all(|g| g.is_none()) {
                continue;
            }
            let m = metrics(&pred, &gt, k).unwrap();

            let mut correct = 0usize;
            let mut labeled = 0usize;
            let mut iou_sum = 0.0;
            let mut iou_cnt = 0usize;
            let mut rec_sum = 0.0;
            let mut rec_cnt = 0usize;
            for c in 0..k as u32 {
                let tp = gt
                    .iter()
                    .zip(&pred)
                    .filter(|(g, p)| **g == Some(c) && **p == c)
                    .count();
                let fp = gt
                    .iter()
                    .zip(&pred)
                    .filter(|(g, p)| g.is_some() && **g != Some(c) && **p == c)
                    .count();
                let fn_ = gt
                    .iter()
                    .zip(&pred)
                    .filter(|(g, p)| **g == Some(c) && **p != c)
                    .count();
                if tp + fp + fn_ > 0 {
                    iou_sum += tp as f64 / (tp + fp + fn_) as f64;
                    iou_cnt += 1;
                }
                if tp + fn_ > 0 {
                    rec_sum += tp as f64 / (tp + fn_) as f64;
                    rec_cnt += 1;
                }
            }
            for (g, p) in gt.iter().zip(&pred) {
                if let Some(g) = g {
                    labeled += 1;
                    if g == p {
                        correct += 1;
                    }
                }
            }
            assert_eq!(m.oa, correct as f64 / labeled as f64);
            assert!((m.miou - iou_sum / iou_cnt as f64).abs() < 1e-15);
            assert!((m.macc - rec_sum / rec_cnt as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn miou_is_equivariant_under_class_relabeling() {
        let mut rng = Rng::seed_from(9);
        let k = 4;
        let n = 200;
        let gt_raw: Vec<i64> = (0..n).map(|_| rng.below(k) as i64).collect();
        let pred: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
        let m1 = metrics(&pred, &labels(&gt_raw), k).unwrap();
        // permute classes consistently
        let perm = [2u32, 0, 3, 1];
        let gt2: Vec<i64> = gt_raw.iter().map(|&g| perm[g as usize] as i64).collect();
        let pred2: Vec<u32> = pred.iter().map(|&p| perm[p as usize]).collect();
        let m2 = metrics(&pred2, &labels(&gt2), k).unwrap();
        assert!((m1.miou - m2.miou).abs() < 1e-12);
        assert!((m1.oa - m2.oa).abs() < 1e-12);
        assert!((m1.macc - m2.macc).abs() < 1e-12);
    }

    #[test]
    fn perfect_bound_is_one_for_pure_components() {
        let partition = PartitionSolution {
            component_of: vec![0, 0, 1, 1, 2],
            component_values: NodeFeatures::new(1, vec![0.0; 3]),
            energy: 0.0,
        };
        let gt = labels(&[1, 1, 0, 0, 2]);
        let m = perfect_bound(&partition, &gt, 3).unwrap();
        assert_eq!(m.miou, 1.0);
    }

    #[test]
    fn mixed_component_errors_counted() {
        // 10 points, one component mixing classes 60/40
        let partition = PartitionSolution {
            component_of: vec![0; 10],
            component_values: NodeFeatures::new(1, vec![0.0]),
            energy: 0.0,
        };
        let gt = labels(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
        let m = perfect_bound(&partition, &gt, 2).unwrap();
        // majority 0: the four class-1 points are wrong
        assert!((m.oa - 0.6).abs() < 1e-12);
        assert!((m.per_class_iou[0].unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(m.per_class_iou[1].unwrap(), 0.0);
    }
}
