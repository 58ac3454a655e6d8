//! Desk-scale training on synthetic scenes: SGD with momentum, center-in-box
//! label assignment per stride band, classification BCE plus an L1 loss on
//! the expected box-side distances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{assign_level, center_cell, decode, iou, side_distances, GtBox, HeadLayout};
use super::nms::nms;
use super::parallel::par_map;
use super::scene::{SceneConfig, SyntheticScene};
use crate::error::{Error, Result};
use crate::model::{forward_detect, Network, STRIDES};
use crate::nn::{BnMode, Session};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Linear warm-up length; the rate then follows a cosine down to 5%.
    pub warmup: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    /// Weight of the new batch in the running batch-norm statistics.
    pub bn_momentum: f64,
    pub box_weight: f64,
    pub seed: u64,
    pub scene: SceneConfig,
    /// Evaluate on the held-out set every this many steps (0: only at the
    /// end, when `eval_scenes > 0`).
    pub eval_every: usize,
    pub eval_scenes: usize,
    pub conf: f64,
    pub iou: f64,
    pub target_recall: f64,
    pub target_precision: f64,
    /// Stop as soon as an evaluation meets both targets.
    pub stop_at_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch: 8,
            warmup: 50,
            clip: 10.0,
            bn_momentum: 0.1,
            box_weight: 1.0,
            seed: 0,
            scene: SceneConfig::default(),
            eval_every: 0,
            eval_scenes: 0,
            conf: 0.25,
            iou: 0.45,
            target_recall: 0.9,
            target_precision: 0.8,
            stop_at_target: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: f64,
    pub true_positives: usize,
    pub ground_truths: usize,
    pub detections: usize,
}

impl EvalReport {
    pub fn meets(&self, recall: f64, precision: f64) -> bool {
        self.recall >= recall && self.precision >= precision
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub losses: Vec<(usize, f64)>,
    pub evals: Vec<(usize, EvalReport)>,
    /// First evaluated step meeting both targets.
    pub reached_at: Option<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Deterministic scenes: scene `i` depends only on `(seed, i)`.
pub fn scenes(cfg: &SceneConfig, seed: u64, range: std::ops::Range<usize>) -> Vec<SyntheticScene> {
    let idx: Vec<usize> = range.collect();
    par_map(&idx, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64);
        SyntheticScene::generate(cfg, &mut rng)
    })
}

/// Held-out scenes never drawn by [`train_toy`] with the same seed.
pub fn held_out(cfg: &SceneConfig, seed: u64, n: usize) -> Vec<SyntheticScene> {
    scenes(cfg, seed ^ 0x005e_ed0f_4e1d, 0..n)
}

/// Per-level targets for a batch: class targets `[B, nc, h, w]`, side
/// targets `[B, 4, h, w]` and a positive mask `[B, h, w]`.
struct LevelTargets {
    cls: Vec<f64>,
    sides: Vec<f64>,
    side_weight: Vec<f64>,
    positives: usize,
}

fn assign(batch: &[&SyntheticScene], size: usize, layout: HeadLayout) -> Vec<LevelTargets> {
    let (nc, max_d) = (layout.num_classes, (layout.reg_bins - 1) as f64);
    let b = batch.len();
    STRIDES
        .iter()
        .enumerate()
        .map(|(level, &s)| {
            let (h, w) = (size / s, size / s);
            let plane = h * w;
            let mut t = LevelTargets {
                cls: vec![0.0; b * nc * plane],
                sides: vec![0.0; b * 4 * plane],
                side_weight: vec![0.0; b * 4 * plane],
                positives: 0,
            };
            for (bi, scene) in batch.iter().enumerate() {
                let mut owner: Vec<Option<&GtBox>> = vec![None; plane];
                let mut gts: Vec<&GtBox> = scene
                    .objects
                    .iter()
                    .filter(|g| assign_level(&g.bbox, &STRIDES) == level)
                    .collect();
                // Larger boxes first so smaller ones win shared cells.
                let area = |g: &GtBox| (g.bbox[2] - g.bbox[0]) * (g.bbox[3] - g.bbox[1]);
                gts.sort_by(|a, b| area(b).total_cmp(&area(a)));
                for g in gts {
                    let mut any = false;
                    for i in 0..h {
                        for j in 0..w {
                            let (cx, cy) = ((j as f64 + 0.5) * s as f64, (i as f64 + 0.5) * s as f64);
                            if cx > g.bbox[0] && cx < g.bbox[2] && cy > g.bbox[1] && cy < g.bbox[3] {
                                owner[i * w + j] = Some(g);
                                any = true;
                            }
                        }
                    }
                    if !any {
                        let (i, j) = center_cell(&g.bbox, s, h, w);
                        owner[i * w + j] = Some(g);
                    }
                }
                for (cell, g) in owner.iter().enumerate() {
                    let Some(g) = g else { continue };
                    t.positives += 1;
                    t.cls[(bi * nc + g.class) * plane + cell] = 1.0;
                    let d = side_distances(&g.bbox, s, cell / w, cell % w);
                    for (k, &dk) in d.iter().enumerate() {
                        t.sides[(bi * 4 + k) * plane + cell] = dk.clamp(0.0, max_d);
                        t.side_weight[(bi * 4 + k) * plane + cell] = 1.0;
                    }
                }
            }
            t
        })
        .collect()
}

fn batch_images(batch: &[&SyntheticScene]) -> Result<Tensor> {
    let first = batch[0].image.shape();
    let mut shape = first.to_vec();
    shape[0] = batch.len();
    let data = batch.iter().flat_map(|s| s.image.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

/// Builds the composite loss over the three head outputs, normalized by
/// the number of positive cells.
fn toy_loss(s: &mut Session, outs: &[Var], targets: &[LevelTargets], layout: HeadLayout, box_weight: f64) -> Result<Var> {
    let r = layout.reg_bins;
    let npos = targets.iter().map(|t| t.positives).sum::<usize>().max(1) as f64;
    let mut terms = Vec::new();
    for (&o, t) in outs.iter().zip(targets) {
        let reg = s.tape.slice(o, 1, 0, 4 * r)?;
        let cls = s.tape.slice(o, 1, 4 * r, layout.num_classes)?;
        let cls_w = vec![1.0 / npos; t.cls.len()];
        terms.push(s.tape.bce_with_logits(cls, &t.cls, &cls_w)?);
        let sides = s.tape.dfl_expect(reg, r)?;
        let w: Vec<f64> = t.side_weight.iter().map(|v| v * box_weight / npos).collect();
        terms.push(s.tape.weighted_l1(sides, &t.sides, &w)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = s.tape.add(total, t)?;
    }
    Ok(total)
}

fn layout_of(net: &Network) -> HeadLayout {
    HeadLayout {
        reg_bins: net.config.head.reg_bins,
        num_classes: net.config.num_classes,
    }
}

/// Detections for one image after confidence filtering and NMS.
pub fn detect(net: &Network, image: &Tensor, conf: f64, iou_threshold: f64) -> Result<Vec<super::Detection>> {
    let outs = forward_detect(net, image)?;
    Ok(nms(&decode(&outs, &STRIDES, layout_of(net), conf)?, iou_threshold))
}

/// Greedy matching at IoU ≥ 0.5 (same class, highest score first).
pub fn evaluate(net: &Network, scenes: &[SyntheticScene], conf: f64, iou_threshold: f64) -> Result<EvalReport> {
    let per: Vec<Result<(usize, usize, usize)>> = par_map(scenes, |scene| {
        let dets = detect(net, &scene.image, conf, iou_threshold)?;
        let mut used = vec![false; scene.objects.len()];
        let mut tp = 0;
        for d in &dets {
            let best = scene
                .objects
                .iter()
                .enumerate()
                .filter(|(k, g)| !used[*k] && g.class == d.class)
                .map(|(k, g)| (k, iou(&g.bbox, &d.bbox)))
                .filter(|&(_, v)| v >= 0.5)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, _)) = best {
                used[k] = true;
                tp += 1;
            }
        }
        Ok((tp, scene.objects.len(), dets.len()))
    });
    let mut rep = EvalReport::default();
    for p in per {
        let (tp, g, d) = p?;
        rep.true_positives += tp;
        rep.ground_truths += g;
        rep.detections += d;
    }
    rep.recall = rep.true_positives as f64 / rep.ground_truths.max(1) as f64;
    rep.precision = rep.true_positives as f64 / rep.detections.max(1) as f64;
    Ok(rep)
}

fn rate(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup {
        return cfg.lr * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup).max(1) as f64;
    let t = ((step - cfg.warmup) as f64 / span).min(1.0);
    cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Trains `net` in place. `on_step(step, loss)` is called after every
/// update and `on_eval` after every evaluation.
pub fn train_toy(
    net: &mut Network,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
    mut on_eval: impl FnMut(usize, &EvalReport),
) -> Result<TrainLog> {
    if cfg.batch == 0 || !cfg.scene.size.is_multiple_of(32) {
        return Err(Error::invalid("train", "batch must be positive and the scene size a multiple of 32"));
    }
    let layout = layout_of(net);
    let eval_set = if cfg.eval_scenes > 0 {
        held_out(&cfg.scene, cfg.seed, cfg.eval_scenes)
    } else {
        Vec::new()
    };
    let mut velocity: Vec<Option<Vec<f64>>> = vec![None; net.store.len()];
    let mut log = TrainLog::default();
    let mut run_eval = |net: &Network, step: usize, log: &mut TrainLog| -> Result<bool> {
        let rep = evaluate(net, &eval_set, cfg.conf, cfg.iou)?;
        on_eval(step, &rep);
        log.evals.push((step, rep));
        let hit = rep.meets(cfg.target_recall, cfg.target_precision);
        if hit && log.reached_at.is_none() {
            log.reached_at = Some(step);
        }
        Ok(hit)
    };
    for step in 0..cfg.steps {
        let batch = scenes(&cfg.scene, cfg.seed, step * cfg.batch..(step + 1) * cfg.batch);
        let refs: Vec<&SyntheticScene> = batch.iter().collect();
        let targets = assign(&refs, cfg.scene.size, layout);
        let images = batch_images(&refs)?;
        let (loss, grads, stats) = {
            let mut s = Session::new(&net.store, BnMode::Train, true);
            let x = s.tape.constant(images);
            let outs = net.forward(&mut s, x)?;
            let loss = toy_loss(&mut s, &outs, &targets, layout, cfg.box_weight)?;
            let value = s.tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            let g = s.tape.backward(loss)?;
            (value, s.param_grads(&g), s.bn_statistics())
        };
        let norm = grads.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { step, loss: norm });
        }
        let clip = if norm > cfg.clip { cfg.clip / norm } else { 1.0 };
        let lr = rate(cfg, step);
        for (id, g) in grads {
            let decay = if net.store.get(id).rank() > 1 { cfg.weight_decay } else { 0.0 };
            let p = net.store.get_mut(id);
            let v = velocity[id.index()].get_or_insert_with(|| vec![0.0; p.numel()]);
            for ((w, vel), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vel = cfg.momentum * *vel + clip * gi + decay * *w;
                *w -= lr * *vel;
            }
        }
        net.store.update_running_stats(&stats, cfg.bn_momentum);
        log.losses.push((step, loss));
        on_step(step, loss);
        let last = step + 1 == cfg.steps;
        let due = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
        if !eval_set.is_empty() && (due || last) && run_eval(net, step + 1, &mut log)? && cfg.stop_at_target {
            break;
        }
    }
    Ok(log)
}
