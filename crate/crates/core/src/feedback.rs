//! Hierarchical feedback training: object-level F1 rewards, sentence-level
//! judge rewards, REINFORCE over sampled actions, and the two-phase loss
//! schedule that switches from pure cross-entropy to a normalized CE + RL sum.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, ObjectId, RecordKind, Vocabulary};
use crate::error::{Error, Result};
use crate::judge::{JudgeRequest, SentenceJudge};
use crate::model::{sample_batch, Model, SampleItem, SampleMode, SampledBatch};
use crate::numerics::{Graph, LrSchedule, NodeId, OptimState};

/// Objects found in a text, with the word positions where each was matched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectSet {
    pub objects: BTreeSet<ObjectId>,
    pub spans: BTreeMap<ObjectId, Vec<usize>>,
}

/// Scan a text for lexicon surface forms, longest match first at each word
/// position. Lexicon keys with internal spaces match as word n-grams.
pub fn extract_objects(text: &str, lexicon: &BTreeMap<String, ObjectId>) -> ObjectSet {
    let words = crate::data::split_words(text);
    let max_key_words = lexicon.keys().map(|k| k.split(' ').count()).max().unwrap_or(1);
    let mut out = ObjectSet::default();
    let mut i = 0;
    while i < words.len() {
        let mut matched = None;
        for n in (1..=max_key_words.min(words.len() - i)).rev() {
            let surface = words[i..i + n].join(" ");
            if let Some(&id) = lexicon.get(&surface) {
                matched = Some((id, n));
                break;
            }
        }
        match matched {
            Some((id, n)) => {
                out.objects.insert(id);
                out.spans.entry(id).or_default().push(i);
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Object-level reward: F1 between the sampled and labeled object sets.
/// Both sets empty scores 1.0; zero precision and recall scores 0.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectReward {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn object_reward(sampled: &BTreeSet<ObjectId>, labeled: &BTreeSet<ObjectId>) -> ObjectReward {
    if sampled.is_empty() && labeled.is_empty() {
        return ObjectReward { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let hit = sampled.intersection(labeled).count() as f64;
    let precision = if sampled.is_empty() { 0.0 } else { hit / sampled.len() as f64 };
    let recall = if labeled.is_empty() { 0.0 } else { hit / labeled.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ObjectReward { precision, recall, f1 }
}

/// `R = sigma * r_sen + (1 - sigma) * r_obj`; all three inputs must lie in [0, 1].
pub fn combine_rewards(r_sen: f64, r_obj: f64, sigma: f64) -> Result<f64> {
    for (name, v) in [("r_sen", r_sen), ("r_obj", r_obj), ("sigma", sigma)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(sigma * r_sen + (1.0 - sigma) * r_obj)
}

/// REINFORCE objective `-(1/N) * sum_i sum_j P_ij * R_i` as a graph node,
/// where N counts every sampled action in the batch. Rewards enter as
/// constants; gradients flow only through the gathered log-probs.
pub fn reinforce_loss(graph: &mut Graph, batch: &SampledBatch, rewards: &[f64]) -> Result<NodeId> {
    if rewards.len() != batch.nodes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rewards for {} sampled sequences",
            rewards.len(),
            batch.nodes.len()
        )));
    }
    let n = batch.action_count();
    if n == 0 {
        return Err(Error::InvalidArgument("empty sampled batch".into()));
    }
    let mut total: Option<NodeId> = None;
    for (node, &r) in batch.nodes.iter().zip(rewards) {
        let summed = graph.sum(*node)?;
        let weighted = graph.scale(summed, r);
        total = Some(match total {
            Some(t) => graph.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(graph.scale(total.unwrap(), -1.0 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPhase {
    CeOnly,
    Combined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    /// sentence-vs-object reward mix
    pub sigma: f64,
    /// fraction of total steps spent in the CE-only phase
    pub c: f64,
    pub total_steps: u64,
    /// in the combined phase, sample and judge only every this many steps
    pub feedback_interval: u64,
    pub sample_temperature: f64,
    pub seed: u64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            sigma: 0.6,
            c: 0.7,
            total_steps: 1000,
            feedback_interval: 10,
            sample_temperature: 1.0,
            seed: 0,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidArgument(format!("sigma {} outside [0, 1]", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::InvalidArgument(format!("phase split c {} outside [0, 1]", self.c)));
        }
        if self.total_steps == 0 || self.feedback_interval == 0 {
            return Err(Error::InvalidArgument("total_steps and feedback_interval must be positive".into()));
        }
        if self.sample_temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sample_temperature {} must be positive",
                self.sample_temperature
            )));
        }
        Ok(())
    }

    pub fn phase_at(&self, step: u64) -> LossPhase {
        if (step as f64) < self.c * self.total_steps as f64 {
            LossPhase::CeOnly
        } else {
            LossPhase::Combined
        }
    }
}

/// Sum the normalized losses; each norm is the detached absolute value of the
/// current loss, so gradients see only the `1 / (|L| + 1e-8)` scaling.
pub fn total_loss(graph: &mut Graph, l_ce: NodeId, l_rl: NodeId) -> Result<NodeId> {
    let ce_norm = graph.value(l_ce).item().abs() + 1e-8;
    let rl_norm = graph.value(l_rl).item().abs() + 1e-8;
    let a = graph.scale(l_ce, 1.0 / ce_norm);
    let b = graph.scale(l_rl, 1.0 / rl_norm);
    graph.add(a, b)
}

/// One training example: a scene, its reference text, and tokenized form.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub scene_ids: Vec<ObjectId>,
    pub tokens: Vec<usize>,
    pub reference: String,
    pub truth: BTreeSet<ObjectId>,
}

/// Flatten a corpus split into training items (captions and QA records).
pub fn train_items(corpus: &Corpus, vocab: &Vocabulary, split: &str) -> Vec<TrainItem> {
    let mut items = Vec::new();
    for kind in [RecordKind::Caption, RecordKind::Qa] {
        for rec in corpus.records_in(split, kind) {
            let scene = match corpus.scene(&rec.scene_id) {
                Some(s) => s,
                None => continue,
            };
            let scene_ids = scene.object_ids(vocab);
            items.push(TrainItem {
                scene_ids: scene_ids.clone(),
                tokens: vocab.tokenize(&rec.caption),
                reference: rec.caption.clone(),
                truth: scene_ids.into_iter().collect(),
            });
        }
    }
    items
}

/// Per-step record, serialized as one JSONL line in the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub phase: LossPhase,
    pub l_ce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_rl: Option<f64>,
    pub l_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_r_obj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_r_sen: Option<f64>,
    pub lr: f64,
    /// the judge failed this step and rewards fell back to sigma = 0
    pub judge_fallback: bool,
}

/// One optimizer step over a batch: cross-entropy always; in the combined
/// phase, every `feedback_interval`-th step also samples, scores, and adds
/// the REINFORCE term under the normalized two-term loss.
pub fn feedback_step(
    model: &mut Model,
    vocab: &Vocabulary,
    batch: &[TrainItem],
    judge: &dyn SentenceJudge,
    config: &FeedbackConfig,
    optim: &mut OptimState,
    step: u64,
) -> Result<LossReport> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let max_tokens = model.config.max_text_len - 1;
    let mut run = model.run();
    let mut l_ce: Option<NodeId> = None;
    for item in batch {
        let tokens: Vec<usize> = item.tokens.iter().copied().take(max_tokens).collect();
        let mut context = vec![vocab.bos()];
        context.extend(&tokens);
        let mut targets = tokens;
        targets.push(vocab.eos());
        let prefix = run.encode_scene(&item.scene_ids)?;
        let out = run.forward(prefix, &context)?;
        let nll = run.text_nll_sum(out.logits, &targets)?;
        l_ce = Some(match l_ce {
            Some(acc) => run.graph.add(acc, nll)?,
            None => nll,
        });
    }
    let l_ce = l_ce.unwrap();

    // steps arrive 1-based from the training loop; the phase split counts
    // completed steps, so c = 1.0 yields no combined-phase steps at all
    let phase = config.phase_at(step.saturating_sub(1));
    let with_feedback = phase == LossPhase::Combined && step % config.feedback_interval == 0;
    let mut report = LossReport {
        step,
        phase,
        l_ce: run.graph.value(l_ce).item(),
        l_rl: None,
        l_total: 0.0,
        mean_r_obj: None,
        mean_r_sen: None,
        lr: optim.config.lr,
        judge_fallback: false,
    };

    let loss = if with_feedback {
        let sample_items: Vec<SampleItem> = batch
            .iter()
            .map(|item| SampleItem {
                scene_ids: item.scene_ids.clone(),
                teacher_tokens: item.tokens.iter().copied().take(max_tokens).collect(),
            })
            .collect();
        let sampled = sample_batch(
            &mut run,
            &sample_items,
            vocab.bos(),
            vocab.eos(),
            config.sample_temperature,
            config.seed.wrapping_add(step),
            SampleMode::TeacherForced,
            false,
        )?;

        let mut r_obj = Vec::with_capacity(batch.len());
        let mut r_sen = Vec::with_capacity(batch.len());
        let mut fallback = false;
        for (item, actions) in batch.iter().zip(&sampled.actions) {
            let text = vocab.detokenize(actions);
            let s_sam = extract_objects(&text, &vocab.lexicon).objects;
            r_obj.push(object_reward(&s_sam, &item.truth).f1);
            if fallback {
                r_sen.push(0.0);
                continue;
            }
            let req = JudgeRequest {
                candidate: text,
                reference: item.reference.clone(),
                template_id: "sentence-feedback".into(),
                exemplars: Vec::new(),
            };
            match judge.score_sentence(&req, &item.truth) {
                Ok(resp) => r_sen.push(resp.score),
                Err(_) => {
                    fallback = true;
                    r_sen.push(0.0);
                }
            }
        }
        let sigma = if fallback { 0.0 } else { config.sigma };
        let rewards: Vec<f64> = r_obj
            .iter()
            .zip(&r_sen)
            .map(|(&o, &s)| combine_rewards(s, o, sigma))
            .collect::<Result<_>>()?;
        let l_rl = reinforce_loss(&mut run.graph, &sampled, &rewards)?;
        report.l_rl = Some(run.graph.value(l_rl).item());
        report.mean_r_obj = Some(r_obj.iter().sum::<f64>() / r_obj.len() as f64);
        report.mean_r_sen = Some(r_sen.iter().sum::<f64>() / r_sen.len() as f64);
        report.judge_fallback = fallback;
        total_loss(&mut run.graph, l_ce, l_rl)?
    } else {
        l_ce
    };

    report.l_total = run.graph.value(loss).item();
    let grads = run.graph.backward(loss)?;
    let by_name = grads.by_name();
    optim.step(&mut model.params, &by_name)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { batch_size: 8, shuffle_seed: 0 }
    }
}

/// Run the full schedule: shuffled batches each epoch, warmup/cosine learning
/// rate, one `LossReport` per step, optionally streamed as JSONL.
pub fn train(
    model: &mut Model,
    vocab: &Vocabulary,
    items: &[TrainItem],
    judge: &dyn SentenceJudge,
    config: &FeedbackConfig,
    schedule: &LrSchedule,
    optim: &mut OptimState,
    options: &TrainOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossReport>> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.shuffle_seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut reports = Vec::with_capacity(config.total_steps as usize);
    for step in 1..=config.total_steps {
        if cursor + options.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let take = options.batch_size.min(order.len());
        let batch: Vec<TrainItem> =
            order[cursor..cursor + take].iter().map(|&i| items[i].clone()).collect();
        cursor += take;
        optim.set_lr(schedule.lr_at(step)?);
        let report = feedback_step(model, vocab, &batch, judge, config, optim, step)?;
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &report)?;
            writeln!(w)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Vocabulary, DEFAULT_OBJECTS};
    use crate::judge::{JudgeResponse, MockJudge};
    use crate::model::ModelConfig;
    use crate::numerics::AdamWConfig;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&DEFAULT_OBJECTS, &["a", "and", "the", "is", "there", "yes", "no", ".", "?"])
    }

    fn oid(v: &Vocabulary, name: &str) -> ObjectId {
        v.object_id(name).unwrap()
    }

    fn set(ids: &[ObjectId]) -> BTreeSet<ObjectId> {
        ids.iter().copied().collect()
    }

    fn tiny_model(seed: u64) -> (Model, Vocabulary) {
        let v = vocab();
        let config = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            vocab_size: v.len(),
            visual_prefix_len: 3,
            max_text_len: 12,
            n_objects: v.objects.len(),
        };
        (Model::init(config, seed).unwrap(), v)
    }

    #[test]
    fn extract_finds_singular_and_plural() {
        let v = vocab();
        let found = extract_objects("a cat and two dogs near the car .", &v.lexicon);
        assert_eq!(found.objects, set(&[oid(&v, "cat"), oid(&v, "dog"), oid(&v, "car")]));
        assert_eq!(found.spans[&oid(&v, "cat")], vec![1]);
    }

    #[test]
    fn extract_prefers_longest_match() {
        let mut lexicon = BTreeMap::new();
        lexicon.insert("traffic".to_string(), 0);
        lexicon.insert("traffic light".to_string(), 1);
        let found = extract_objects("a traffic light blinks", &lexicon);
        assert_eq!(found.objects, set(&[1]));
        let found = extract_objects("heavy traffic today", &lexicon);
        assert_eq!(found.objects, set(&[0]));
    }

    #[test]
    fn extract_ignores_unknown_words_and_repeats_spans() {
        let v = vocab();
        let found = extract_objects("zzz cat qqq cat", &v.lexicon);
        assert_eq!(found.objects, set(&[oid(&v, "cat")]));
        assert_eq!(found.spans[&oid(&v, "cat")], vec![1, 3]);
    }

    #[test]
    fn object_reward_hand_cases() {
        // sampled {0,1,2} vs labeled {1,2,3}: p = r = 2/3, f1 = 2/3
        let r = object_reward(&set(&[0, 1, 2]), &set(&[1, 2, 3]));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(object_reward(&set(&[]), &set(&[])).f1, 1.0);
        assert_eq!(object_reward(&set(&[0]), &set(&[1])).f1, 0.0);
        assert_eq!(object_reward(&set(&[5, 7]), &set(&[5, 7])).f1, 1.0);
        assert_eq!(object_reward(&set(&[]), &set(&[1])).f1, 0.0);
    }

    #[test]
    fn combine_rewards_mix_and_bounds() {
        let r = combine_rewards(1.0, 0.5, 0.6).unwrap();
        assert!((r - (0.6 + 0.4 * 0.5)).abs() < 1e-12);
        assert_eq!(combine_rewards(0.3, 0.3, 0.0).unwrap(), 0.3);
        assert!(combine_rewards(1.5, 0.5, 0.6).is_err());
        assert!(combine_rewards(0.5, -0.1, 0.6).is_err());
        assert!(combine_rewards(0.5, 0.5, 1.1).is_err());
    }

    #[test]
    fn reinforce_with_unit_rewards_matches_ce_over_n() {
        // with all rewards 1 and actions equal to the labels,
        // L_RL = -(1/N) sum log P(label) = L_CE / N
        let (model, v) = tiny_model(11);
        let tokens = v.tokenize("a cat and a dog .");
        let mut context = vec![v.bos()];
        context.extend(&tokens);
        let mut targets = tokens.clone();
        targets.push(v.eos());

        let mut run = model.run();
        let prefix = run.encode_scene(&[oid(&v, "cat"), oid(&v, "dog")]).unwrap();
        let out = run.forward(prefix, &context).unwrap();
        let l_ce = run.text_nll_sum(out.logits, &targets).unwrap();

        let l = model.config.visual_prefix_len;
        let lp_all = run.log_probs(out.logits).unwrap();
        let lp_text = run.graph.slice_rows(lp_all, l, l + context.len()).unwrap();
        let picked = run.graph.pick(lp_text, &targets).unwrap();
        let batch = SampledBatch {
            actions: vec![targets.clone()],
            log_probs: vec![run.graph.value(picked).clone()],
            nodes: vec![picked],
        };
        let l_rl = reinforce_loss(&mut run.graph, &batch, &[1.0]).unwrap();

        let ce = run.graph.value(l_ce).item();
        let rl = run.graph.value(l_rl).item();
        assert!((rl - ce / targets.len() as f64).abs() < 1e-9, "rl {rl} vs ce/N {}", ce / targets.len() as f64);
    }

    #[test]
    fn reinforce_rejects_bad_shapes() {
        let (model, v) = tiny_model(3);
        let mut run = model.run();
        let prefix = run.encode_scene(&[0]).unwrap();
        let out = run.forward(prefix, &[v.bos()]).unwrap();
        let lp = run.log_probs(out.logits).unwrap();
        let l = model.config.visual_prefix_len;
        let lp_text = run.graph.slice_rows(lp, l, l + 1).unwrap();
        let picked = run.graph.pick(lp_text, &[0]).unwrap();
        let batch = SampledBatch {
            actions: vec![vec![0]],
            log_probs: vec![run.graph.value(picked).clone()],
            nodes: vec![picked],
        };
        assert!(reinforce_loss(&mut run.graph, &batch, &[1.0, 1.0]).is_err());
        let empty = SampledBatch { actions: vec![], log_probs: vec![], nodes: vec![] };
        assert!(reinforce_loss(&mut run.graph, &empty, &[]).is_err());
    }

    #[test]
    fn positive_reward_increases_sampled_log_prob() {
        // gradient descent on -mean(log P * R) with R > 0 must raise the
        // total log-prob of the sampled actions
        let (mut model, v) = tiny_model(7);
        let item = SampleItem {
            scene_ids: vec![oid(&v, "cat")],
            teacher_tokens: v.tokenize("a cat ."),
        };
        let mut run = model.run();
        let sampled = sample_batch(&mut run, &[item.clone()], v.bos(), v.eos(), 1.0, 42, SampleMode::TeacherForced, false)
            .unwrap();
        let actions = sampled.actions[0].clone();
        let before: f64 = sampled.log_probs[0].data().iter().sum();
        let l_rl = reinforce_loss(&mut run.graph, &sampled, &[1.0]).unwrap();
        let grads = run.graph.backward(l_rl).unwrap();
        let by_name = grads.by_name();
        drop(run);
        for name in model.params.names().to_vec() {
            if let Some(g) = by_name.get(&name) {
                let p = model.params.get_mut(&name).unwrap();
                for (w, dg) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= 0.05 * dg;
                }
            }
        }
        let mut context = vec![v.bos()];
        context.extend(&item.teacher_tokens);
        let mut run2 = model.run();
        let prefix = run2.encode_scene(&item.scene_ids).unwrap();
        let out = run2.forward(prefix, &context).unwrap();
        let lp = run2.log_probs(out.logits).unwrap();
        let l = model.config.visual_prefix_len;
        let lp_text = run2.graph.slice_rows(lp, l, l + context.len()).unwrap();
        let picked = run2.graph.pick(lp_text, &actions).unwrap();
        let after: f64 = run2.graph.value(picked).data().iter().sum();
        assert!(after > before, "log-prob did not increase: {before} -> {after}");
    }

    #[test]
    fn phase_split_boundary() {
        let config = FeedbackConfig { c: 0.7, total_steps: 100, ..Default::default() };
        assert_eq!(config.phase_at(0), LossPhase::CeOnly);
        assert_eq!(config.phase_at(69), LossPhase::CeOnly);
        assert_eq!(config.phase_at(70), LossPhase::Combined);
        assert_eq!(config.phase_at(100), LossPhase::Combined);
    }

    #[test]
    fn total_loss_normalizes_both_terms() {
        let (model, v) = tiny_model(5);
        let mut run = model.run();
        let prefix = run.encode_scene(&[0, 1]).unwrap();
        let tokens = v.tokenize("a cat .");
        let mut context = vec![v.bos()];
        context.extend(&tokens);
        let mut targets = tokens;
        targets.push(v.eos());
        let out = run.forward(prefix, &context).unwrap();
        let l_ce = run.text_nll_sum(out.logits, &targets).unwrap();
        let lp = run.log_probs(out.logits).unwrap();
        let l = model.config.visual_prefix_len;
        let lp_text = run.graph.slice_rows(lp, l, l + context.len()).unwrap();
        let picked = run.graph.pick(lp_text, &targets).unwrap();
        let batch = SampledBatch {
            actions: vec![targets],
            log_probs: vec![run.graph.value(picked).clone()],
            nodes: vec![picked],
        };
        let l_rl = reinforce_loss(&mut run.graph, &batch, &[0.5]).unwrap();
        let ce = run.graph.value(l_ce).item();
        let rl = run.graph.value(l_rl).item();
        let total = total_loss(&mut run.graph, l_ce, l_rl).unwrap();
        let got = run.graph.value(total).item();
        let want = ce / (ce.abs() + 1e-8) + rl / (rl.abs() + 1e-8);
        assert!((got - want).abs() < 1e-12);
    }

    struct FailingJudge;
    impl SentenceJudge for FailingJudge {
        fn score_sentence(&self, _req: &JudgeRequest, _truth: &BTreeSet<ObjectId>) -> Result<JudgeResponse> {
            Err(Error::JudgeUnavailable("down".into()))
        }
        fn synthesize_caption(&self, _caps: &[String]) -> Result<String> {
            Err(Error::JudgeUnavailable("down".into()))
        }
    }

    fn batch_for(v: &Vocabulary) -> Vec<TrainItem> {
        let tokens = v.tokenize("a cat and a dog .");
        vec![TrainItem {
            scene_ids: vec![oid(v, "cat"), oid(v, "dog")],
            tokens: tokens.clone(),
            reference: "a cat and a dog .".into(),
            truth: set(&[oid(v, "cat"), oid(v, "dog")]),
        }]
    }

    #[test]
    fn feedback_step_ce_phase_reports_no_rl() {
        let (mut model, v) = tiny_model(9);
        let judge = MockJudge::new(v.lexicon.clone());
        let config = FeedbackConfig { total_steps: 100, ..Default::default() };
        let mut optim = OptimState::new(AdamWConfig { lr: 1e-3, ..Default::default() });
        let report =
            feedback_step(&mut model, &v, &batch_for(&v), &judge, &config, &mut optim, 5).unwrap();
        assert_eq!(report.phase, LossPhase::CeOnly);
        assert!(report.l_rl.is_none());
        assert_eq!(report.l_total, report.l_ce);
        assert!(!report.judge_fallback);
    }

    #[test]
    fn feedback_step_combined_phase_adds_rl() {
        let (mut model, v) = tiny_model(9);
        let judge = MockJudge::new(v.lexicon.clone());
        let config = FeedbackConfig { total_steps: 100, feedback_interval: 10, ..Default::default() };
        let mut optim = OptimState::new(AdamWConfig { lr: 1e-3, ..Default::default() });
        let report =
            feedback_step(&mut model, &v, &batch_for(&v), &judge, &config, &mut optim, 80).unwrap();
        assert_eq!(report.phase, LossPhase::Combined);
        assert!(report.l_rl.is_some());
        assert!(report.mean_r_obj.unwrap() >= 0.0 && report.mean_r_obj.unwrap() <= 1.0);
        assert!(report.mean_r_sen.unwrap() >= 0.0 && report.mean_r_sen.unwrap() <= 1.0);
        // combined steps off the interval fall back to plain CE
        let off = feedback_step(&mut model, &v, &batch_for(&v), &judge, &config, &mut optim, 81).unwrap();
        assert!(off.l_rl.is_none());
    }

    #[test]
    fn feedback_step_judge_failure_falls_back_to_object_reward() {
        let (mut model, v) = tiny_model(9);
        let config = FeedbackConfig { total_steps: 100, feedback_interval: 10, ..Default::default() };
        let mut optim = OptimState::new(AdamWConfig { lr: 1e-3, ..Default::default() });
        let report =
            feedback_step(&mut model, &v, &batch_for(&v), &FailingJudge, &config, &mut optim, 80)
                .unwrap();
        assert!(report.judge_fallback);
        assert!(report.l_rl.is_some());
    }

    #[test]
    fn train_loop_writes_jsonl_and_is_deterministic() {
        let v = vocab();
        let judge = MockJudge::new(v.lexicon.clone());
        let config = FeedbackConfig { total_steps: 6, c: 0.5, feedback_interval: 1, ..Default::default() };
        let schedule = LrSchedule::new(1e-3, 0.3, 6).unwrap();
        let items = batch_for(&v);
        let mut runs = Vec::new();
        for _ in 0..2 {
            let (mut model, _) = tiny_model(9);
            let mut optim = OptimState::new(AdamWConfig::default());
            let mut buf: Vec<u8> = Vec::new();
            let reports = train(
                &mut model,
                &v,
                &items,
                &judge,
                &config,
                &schedule,
                &mut optim,
                &TrainOptions { batch_size: 1, shuffle_seed: 1 },
                Some(&mut buf),
            )
            .unwrap();
            assert_eq!(reports.len(), 6);
            let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().trim().lines().collect();
            assert_eq!(lines.len(), 6);
            let first: LossReport = serde_json::from_str(lines[0]).unwrap();
            assert_eq!(first.step, 1);
            assert!(first.lr > 0.0);
            runs.push(reports.iter().map(|r| r.l_total).collect::<Vec<f64>>());
        }
        assert_eq!(runs[0], runs[1]);
    }
}
