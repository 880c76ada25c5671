//! Hallucination metrics: the CHAIR caption ratios and the POPE yes/no
//! polling harness with random, popular, and adversarial negative sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ObjectId, Scene, Vocabulary};
use crate::error::{Error, Result};
use crate::feedback::extract_objects;
use crate::model::{argmax, Model};

/// One generated caption to score, with its generated-token count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChairCaption {
    pub image_id: String,
    pub caption: String,
    pub gen_len: usize,
}

/// Corpus-level hallucination ratios. `instance_ratio` is the proportion of
/// hallucinated objects among all mentioned objects; `sentence_ratio` is the
/// proportion of captions containing at least one hallucinated object. The
/// source equations label the object-proportion CHAIR_s and the
/// caption-proportion CHAIR_i, the reverse of the original CHAIR convention,
/// so both ratios are reported here under unambiguous names and the table
/// printer shows both labelings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChairReport {
    pub instance_ratio: f64,
    pub sentence_ratio: f64,
    pub avg_len: f64,
    pub n_captions: usize,
    pub n_mentioned: usize,
    pub n_hallucinated: usize,
    pub n_captions_with_hallucination: usize,
}

pub fn chair(
    captions: &[ChairCaption],
    annotations: &HashMap<String, BTreeSet<ObjectId>>,
    lexicon: &BTreeMap<String, ObjectId>,
) -> Result<ChairReport> {
    let mut mentioned = 0usize;
    let mut hallucinated = 0usize;
    let mut bad_captions = 0usize;
    let mut len_sum = 0usize;
    for cap in captions {
        let truth = annotations
            .get(&cap.image_id)
            .ok_or_else(|| Error::MissingAnnotation(cap.image_id.clone()))?;
        let found = extract_objects(&cap.caption, lexicon).objects;
        let bad = found.difference(truth).count();
        mentioned += found.len();
        hallucinated += bad;
        if bad > 0 {
            bad_captions += 1;
        }
        len_sum += cap.gen_len;
    }
    let n = captions.len();
    Ok(ChairReport {
        instance_ratio: if mentioned == 0 { 0.0 } else { hallucinated as f64 / mentioned as f64 },
        sentence_ratio: if n == 0 { 0.0 } else { bad_captions as f64 / n as f64 },
        avg_len: if n == 0 { 0.0 } else { len_sum as f64 / n as f64 },
        n_captions: n,
        n_mentioned: mentioned,
        n_hallucinated: hallucinated,
        n_captions_with_hallucination: bad_captions,
    })
}

/// Aligned-column rendering with both labelings of the two ratios.
pub fn chair_table(report: &ChairReport) -> String {
    let rows = [
        ("instance_ratio (obj-proportion)", report.instance_ratio),
        ("sentence_ratio (cap-proportion)", report.sentence_ratio),
        ("avg_len", report.avg_len),
    ];
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap();
    let mut out = String::new();
    for (name, v) in rows {
        out.push_str(&format!("{name:<width$}  {v:>8.4}\n"));
    }
    out.push_str(&format!(
        "captions {} | mentioned {} | hallucinated {} | captions-with-hallucination {}\n",
        report.n_captions, report.n_mentioned, report.n_hallucinated, report.n_captions_with_hallucination
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopeStrategy {
    Random,
    Popular,
    Adversarial,
}

impl std::str::FromStr for PopeStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PopeStrategy::Random),
            "popular" => Ok(PopeStrategy::Popular),
            "adversarial" => Ok(PopeStrategy::Adversarial),
            other => Err(Error::InvalidArgument(format!("unknown pope strategy {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopeTriple {
    pub image_id: String,
    pub object: ObjectId,
    pub question: String,
    pub gold: bool,
    pub strategy: PopeStrategy,
}

/// Build a balanced yes/no question set: per image, `questions_per_image / 2`
/// present objects and the same number of absent objects chosen by strategy.
/// Images with fewer present objects contribute fewer (still balanced) pairs.
pub fn build_pope(
    scenes: &[Scene],
    vocab: &Vocabulary,
    strategy: PopeStrategy,
    questions_per_image: usize,
    seed: u64,
) -> Result<Vec<PopeTriple>> {
    if questions_per_image == 0 || questions_per_image % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "questions_per_image {questions_per_image} must be even and positive"
        )));
    }
    let n_objects = vocab.objects.len();
    let mut frequency = vec![0usize; n_objects];
    let mut cooc = vec![vec![0usize; n_objects]; n_objects];
    for scene in scenes {
        let ids = scene.object_ids(vocab);
        for &a in &ids {
            frequency[a] += 1;
            for &b in &ids {
                if a != b {
                    cooc[a][b] += 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for scene in scenes {
        let present: BTreeSet<ObjectId> = scene.object_ids(vocab).into_iter().collect();
        let absent: Vec<ObjectId> = (0..n_objects).filter(|o| !present.contains(o)).collect();
        let k = (questions_per_image / 2).min(present.len());
        if absent.len() < k {
            return Err(Error::InvalidArgument(format!(
                "vocabulary too small: image {} needs {k} absent objects, has {}",
                scene.id,
                absent.len()
            )));
        }
        let mut yes: Vec<ObjectId> = present.iter().copied().collect();
        yes.shuffle(&mut rng);
        yes.truncate(k);

        let no: Vec<ObjectId> = match strategy {
            PopeStrategy::Random => {
                let mut pool = absent.clone();
                pool.shuffle(&mut rng);
                pool.into_iter().take(k).collect()
            }
            PopeStrategy::Popular => {
                let mut pool = absent.clone();
                pool.sort_by_key(|&o| (std::cmp::Reverse(frequency[o]), o));
                pool.into_iter().take(k).collect()
            }
            PopeStrategy::Adversarial => {
                let mut pool = absent.clone();
                // rank by total co-occurrence with the image's present objects
                let score = |o: ObjectId| present.iter().map(|&p| cooc[o][p]).sum::<usize>();
                pool.sort_by_key(|&o| (std::cmp::Reverse(score(o)), o));
                pool.into_iter().take(k).collect()
            }
        };

        for (object, gold) in yes.iter().map(|&o| (o, true)).chain(no.iter().map(|&o| (o, false))) {
            triples.push(PopeTriple {
                image_id: scene.id.clone(),
                object,
                question: format!("is there a {} ?", vocab.objects[object]),
                gold,
                strategy,
            });
        }
    }
    Ok(triples)
}

/// Map an answer word onto yes/no; None means unmappable.
pub fn map_answer(word: &str) -> Option<bool> {
    match word.to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Greedily predict the answer token following the question; unmappable
/// outputs count as "no" with the flag set.
pub fn answer_pope(model: &Model, vocab: &Vocabulary, scene_ids: &[ObjectId], triple: &PopeTriple) -> Result<(bool, bool)> {
    let mut context = vec![vocab.bos()];
    context.extend(vocab.tokenize(&triple.question));
    context.truncate(model.config.max_text_len);
    let (logits, _) = model.forward_frozen(scene_ids, &context)?;
    let last = logits.rows() - 1;
    let token = argmax(logits.row(last));
    match map_answer(vocab.word(token)) {
        Some(answer) => Ok((answer, false)),
        None => Ok((false, true)),
    }
}

/// Answer every triple against frozen weights, fanning out over `jobs`
/// threads. Returns per-triple (prediction, unmappable) in input order.
pub fn answer_pope_all(
    model: &Model,
    vocab: &Vocabulary,
    scenes: &HashMap<String, Vec<ObjectId>>,
    triples: &[PopeTriple],
    jobs: usize,
) -> Result<Vec<(bool, bool)>> {
    let scene_of = |t: &PopeTriple| -> Result<&Vec<ObjectId>> {
        scenes.get(&t.image_id).ok_or_else(|| Error::MissingAnnotation(t.image_id.clone()))
    };
    if jobs <= 1 {
        return triples.iter().map(|t| answer_pope(model, vocab, scene_of(t)?, t)).collect();
    }
    let chunk = triples.len().div_ceil(jobs).max(1);
    let mut out = Vec::with_capacity(triples.len());
    std::thread::scope(|scope| -> Result<()> {
        let scene_of = &scene_of;
        let mut handles = Vec::new();
        for part in triples.chunks(chunk) {
            handles.push(scope.spawn(move || -> Result<Vec<(bool, bool)>> {
                part.iter().map(|t| answer_pope(model, vocab, scene_of(t)?, t)).collect()
            }));
        }
        for h in handles {
            out.extend(h.join().expect("pope worker panicked")?);
        }
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopeReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_rate: f64,
    pub n_questions: usize,
    pub n_unmappable: usize,
}

/// Confusion-matrix metrics with yes as the positive class.
pub fn eval_pope(predictions: &[bool], triples: &[PopeTriple]) -> Result<PopeReport> {
    if predictions.len() != triples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} triples",
            predictions.len(),
            triples.len()
        )));
    }
    if triples.is_empty() {
        return Err(Error::InvalidArgument("empty pope question set".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&pred, triple) in predictions.iter().zip(triples) {
        match (pred, triple.gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = triples.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(PopeReport {
        accuracy: (tp + tn) as f64 / n,
        precision,
        recall,
        f1,
        yes_rate: (tp + fp) as f64 / n,
        n_questions: triples.len(),
        n_unmappable: 0,
    })
}

/// Aligned-column rendering of the POPE metrics.
pub fn pope_table(report: &PopeReport) -> String {
    let rows = [
        ("accuracy", report.accuracy),
        ("precision", report.precision),
        ("recall", report.recall),
        ("f1", report.f1),
        ("yes_rate", report.yes_rate),
    ];
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap();
    let mut out = String::new();
    for (name, v) in rows {
        out.push_str(&format!("{name:<width$}  {v:>8.4}\n"));
    }
    out.push_str(&format!(
        "questions {} | unmappable {}\n",
        report.n_questions, report.n_unmappable
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Vocabulary, DEFAULT_OBJECTS};
    use crate::model::ModelConfig;
    use rand::Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&DEFAULT_OBJECTS, &["a", "and", "the", "is", "there", "yes", "no", ".", "?"])
    }

    fn oid(v: &Vocabulary, name: &str) -> ObjectId {
        v.object_id(name).unwrap()
    }

    fn set(ids: &[ObjectId]) -> BTreeSet<ObjectId> {
        ids.iter().copied().collect()
    }

    fn scene(id: &str, objects: &[&str]) -> Scene {
        Scene {
            id: id.into(),
            objects: objects.iter().map(|s| s.to_string()).collect(),
            attributes: vec![],
            group: "test".into(),
        }
    }

    #[test]
    fn chair_hand_example() {
        // caption1 mentions {cat, dog}, truth {cat}; caption2 mentions {tree},
        // truth {tree} -> instance 1/3, sentence 1/2
        let v = vocab();
        let captions = vec![
            ChairCaption { image_id: "i1".into(), caption: "a cat and a dog .".into(), gen_len: 6 },
            ChairCaption { image_id: "i2".into(), caption: "a tree .".into(), gen_len: 3 },
        ];
        let mut ann = HashMap::new();
        ann.insert("i1".to_string(), set(&[oid(&v, "cat")]));
        ann.insert("i2".to_string(), set(&[oid(&v, "tree")]));
        let r = chair(&captions, &ann, &v.lexicon).unwrap();
        assert!((r.instance_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.sentence_ratio - 0.5).abs() < 1e-12);
        assert!((r.avg_len - 4.5).abs() < 1e-12);
    }

    #[test]
    fn chair_degenerate_cases() {
        let v = vocab();
        let mut ann = HashMap::new();
        ann.insert("i1".to_string(), set(&[oid(&v, "cat")]));
        // hallucination-free
        let clean = vec![ChairCaption { image_id: "i1".into(), caption: "a cat .".into(), gen_len: 3 }];
        let r = chair(&clean, &ann, &v.lexicon).unwrap();
        assert_eq!((r.instance_ratio, r.sentence_ratio), (0.0, 0.0));
        // every caption hallucinated
        let dirty = vec![ChairCaption { image_id: "i1".into(), caption: "a dog .".into(), gen_len: 3 }];
        assert_eq!(chair(&dirty, &ann, &v.lexicon).unwrap().sentence_ratio, 1.0);
        // zero mentions
        let silent = vec![ChairCaption { image_id: "i1".into(), caption: "nothing here".into(), gen_len: 2 }];
        assert_eq!(chair(&silent, &ann, &v.lexicon).unwrap().instance_ratio, 0.0);
        // missing annotation carries the image id
        let lost = vec![ChairCaption { image_id: "ghost".into(), caption: "a cat .".into(), gen_len: 3 }];
        let err = chair(&lost, &ann, &v.lexicon).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn chair_matches_brute_force_oracle() {
        // independent recount: per caption, walk every vocab object and test
        // membership on Vec<&str> words, no set arithmetic
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n_caps = rng.gen_range(1..=10);
            let pool: Vec<&str> = DEFAULT_OBJECTS[..8].to_vec();
            let mut captions = Vec::new();
            let mut ann = HashMap::new();
            for ci in 0..n_caps {
                let id = format!("img{ci}");
                let n_truth = rng.gen_range(0..=4);
                let mut truth = BTreeSet::new();
                for _ in 0..n_truth {
                    truth.insert(oid(&v, pool[rng.gen_range(0..pool.len())]));
                }
                let n_words = rng.gen_range(0..=5);
                let mut text = String::new();
                for _ in 0..n_words {
                    text.push_str(pool[rng.gen_range(0..pool.len())]);
                    text.push(' ');
                }
                ann.insert(id.clone(), truth);
                captions.push(ChairCaption { image_id: id, caption: text, gen_len: n_words });
            }
            let got = chair(&captions, &ann, &v.lexicon).unwrap();

            let mut mentioned = 0;
            let mut bad = 0;
            let mut bad_caps = 0;
            for cap in &captions {
                let words: Vec<&str> = cap.caption.split_whitespace().collect();
                let mut cap_bad = 0;
                for (idx, name) in v.objects.iter().enumerate() {
                    if words.contains(&name.as_str()) {
                        mentioned += 1;
                        if !ann[&cap.image_id].contains(&idx) {
                            cap_bad += 1;
                        }
                    }
                }
                bad += cap_bad;
                if cap_bad > 0 {
                    bad_caps += 1;
                }
            }
            let want_instance = if mentioned == 0 { 0.0 } else { bad as f64 / mentioned as f64 };
            let want_sentence = bad_caps as f64 / captions.len() as f64;
            assert_eq!(got.instance_ratio, want_instance);
            assert_eq!(got.sentence_ratio, want_sentence);
        }
    }

    #[test]
    fn pope_balance_is_exact_and_deterministic() {
        let v = vocab();
        let scenes = vec![
            scene("s0", &["cat", "dog", "car"]),
            scene("s1", &["tree"]),
            scene("s2", &["chair", "table", "bird", "cloud"]),
        ];
        for strategy in [PopeStrategy::Random, PopeStrategy::Popular, PopeStrategy::Adversarial] {
            let a = build_pope(&scenes, &v, strategy, 6, 7).unwrap();
            let b = build_pope(&scenes, &v, strategy, 6, 7).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            let yes = a.iter().filter(|t| t.gold).count();
            assert_eq!(yes * 2, a.len());
            for t in &a {
                let present = scenes.iter().find(|s| s.id == t.image_id).unwrap().object_ids(&v);
                assert_eq!(t.gold, present.contains(&t.object));
                assert!(t.question.starts_with("is there a "));
            }
        }
        assert!(build_pope(&scenes, &v, PopeStrategy::Random, 5, 7).is_err());
    }

    #[test]
    fn pope_popular_ranks_by_corpus_frequency() {
        let v = vocab();
        // "dog" appears in 3 scenes, "tree" in 2, others once
        let scenes = vec![
            scene("s0", &["cat"]),
            scene("s1", &["dog", "tree"]),
            scene("s2", &["dog", "tree"]),
            scene("s3", &["dog", "car"]),
        ];
        let triples = build_pope(&scenes[..1], &v, PopeStrategy::Popular, 2, 0).unwrap();
        // frequency over the single-scene dataset is what counts; rebuild over all
        let triples_all = build_pope(&scenes, &v, PopeStrategy::Popular, 2, 0).unwrap();
        let s0_no: Vec<ObjectId> =
            triples_all.iter().filter(|t| t.image_id == "s0" && !t.gold).map(|t| t.object).collect();
        assert_eq!(s0_no, vec![oid(&v, "dog")]);
        // with no co-scene data, ties resolve to the lowest object id
        let s_only_no: Vec<ObjectId> =
            triples.iter().filter(|t| !t.gold).map(|t| t.object).collect();
        let lowest_absent = (0..v.objects.len()).find(|&o| o != oid(&v, "cat")).unwrap();
        assert_eq!(s_only_no, vec![lowest_absent]);
    }

    #[test]
    fn pope_adversarial_matches_brute_force_cooccurrence() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: Vec<&str> = DEFAULT_OBJECTS[..8].to_vec();
        for trial in 0..20 {
            let scenes: Vec<Scene> = (0..6)
                .map(|i| {
                    let mut objs: Vec<&str> = pool.clone();
                    objs.shuffle(&mut rng);
                    objs.truncate(rng.gen_range(1..=3));
                    scene(&format!("t{trial}s{i}"), &objs)
                })
                .collect();
            let triples = build_pope(&scenes, &v, PopeStrategy::Adversarial, 4, trial).unwrap();
            for s in &scenes {
                let present: BTreeSet<ObjectId> = s.object_ids(&v).into_iter().collect();
                let brute = |o: ObjectId| -> usize {
                    scenes
                        .iter()
                        .map(|sc| {
                            let ids: BTreeSet<ObjectId> = sc.object_ids(&v).into_iter().collect();
                            present.iter().filter(|&&p| p != o && ids.contains(&p) && ids.contains(&o)).count()
                        })
                        .sum()
                };
                let chosen: BTreeSet<ObjectId> =
                    triples.iter().filter(|t| t.image_id == s.id && !t.gold).map(|t| t.object).collect();
                for &c in &chosen {
                    for o in 0..v.objects.len() {
                        if present.contains(&o) || chosen.contains(&o) {
                            continue;
                        }
                        let (cs, os) = (brute(c), brute(o));
                        assert!(
                            cs > os || (cs == os && c < o),
                            "scene {}: picked {c} (cooc {cs}) over {o} (cooc {os})",
                            s.id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pope_rejects_vocab_too_small() {
        let tiny = Vocabulary::build(&["cat", "dog"], &["is", "there", "a", "?"]);
        let scenes = vec![scene("s0", &["cat", "dog"])];
        assert!(build_pope(&scenes, &tiny, PopeStrategy::Random, 4, 0).is_err());
    }

    #[test]
    fn eval_pope_hand_cases() {
        let v = vocab();
        let scenes = vec![scene("s0", &["cat", "dog"]), scene("s1", &["car", "tree"])];
        let triples = build_pope(&scenes, &v, PopeStrategy::Random, 4, 1).unwrap();
        let perfect: Vec<bool> = triples.iter().map(|t| t.gold).collect();
        let r = eval_pope(&perfect, &triples).unwrap();
        assert_eq!((r.accuracy, r.f1), (1.0, 1.0));

        let all_yes = vec![true; triples.len()];
        let r = eval_pope(&all_yes, &triples).unwrap();
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.yes_rate, 1.0);

        let all_no = vec![false; triples.len()];
        let r = eval_pope(&all_no, &triples).unwrap();
        assert_eq!((r.precision, r.f1), (0.0, 0.0));
        assert_eq!(r.yes_rate, 0.0);

        assert!(eval_pope(&[true], &triples).is_err());
        assert!(eval_pope(&[], &[]).is_err());
    }

    #[test]
    fn eval_pope_matches_brute_force_oracle() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scenes = vec![scene("s0", &["cat", "dog", "car"]), scene("s1", &["tree", "bird"])];
        let triples = build_pope(&scenes, &v, PopeStrategy::Random, 4, 2).unwrap();
        for _ in 0..100 {
            let preds: Vec<bool> = (0..triples.len()).map(|_| rng.gen_bool(0.5)).collect();
            let got = eval_pope(&preds, &triples).unwrap();
            let correct = preds.iter().zip(&triples).filter(|(p, t)| **p == t.gold).count();
            let pred_yes = preds.iter().filter(|&&p| p).count();
            let true_yes_hit =
                preds.iter().zip(&triples).filter(|(p, t)| **p && t.gold).count();
            let gold_yes = triples.iter().filter(|t| t.gold).count();
            assert_eq!(got.accuracy, correct as f64 / triples.len() as f64);
            assert_eq!(got.yes_rate, pred_yes as f64 / triples.len() as f64);
            let want_p = if pred_yes == 0 { 0.0 } else { true_yes_hit as f64 / pred_yes as f64 };
            let want_r = if gold_yes == 0 { 0.0 } else { true_yes_hit as f64 / gold_yes as f64 };
            assert_eq!(got.precision, want_p);
            assert_eq!(got.recall, want_r);
        }
    }

    #[test]
    fn answer_mapping_and_fallback() {
        assert_eq!(map_answer("yes"), Some(true));
        assert_eq!(map_answer("Yes"), Some(true));
        assert_eq!(map_answer("no"), Some(false));
        assert_eq!(map_answer("maybe"), None);
    }

    #[test]
    fn answer_pope_runs_and_parallel_matches_serial() {
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
        let model = Model::init(config, 4).unwrap();
        let scenes_v = vec![scene("s0", &["cat", "dog"]), scene("s1", &["car", "tree"])];
        let triples = build_pope(&scenes_v, &v, PopeStrategy::Random, 4, 5).unwrap();
        let mut by_id = HashMap::new();
        for s in &scenes_v {
            by_id.insert(s.id.clone(), s.object_ids(&v));
        }
        let serial = answer_pope_all(&model, &v, &by_id, &triples, 1).unwrap();
        let parallel = answer_pope_all(&model, &v, &by_id, &triples, 3).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), triples.len());
    }
}
