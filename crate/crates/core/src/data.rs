//! Synthetic scene-caption corpus with controlled object co-occurrence bias,
//! plus the word-level tokenizer/vocabulary and JSONL ingestion.
//!
//! Captions are template-generated over a closed object lexicon so that
//! object extraction is exact and hallucination is exactly measurable. A
//! heldout split breaks the biased pairs (anchor present, partner absent) to
//! elicit hallucinated partners at decode time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Canonical object id: index into `Vocabulary::objects`.
pub type ObjectId = usize;

/// The 32 canonical objects of the default corpus.
pub const DEFAULT_OBJECTS: [&str; 32] = [
    "cat", "dog", "car", "tree", "chair", "table", "bird", "cloud", "house", "boat", "horse", "sheep", "cup",
    "plate", "lamp", "book", "fence", "flower", "river", "bridge", "train", "bench", "kite", "ball", "bottle",
    "clock", "door", "window", "road", "hill", "bus", "box",
];

const ATTRIBUTES: [&str; 8] = ["red", "blue", "green", "small", "big", "old", "shiny", "dark"];

/// Word-level vocabulary with an object lexicon mapping surface forms
/// (plurals, synonyms) back to canonical object ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
    /// canonical object names, index = ObjectId
    pub objects: Vec<String>,
    /// surface form -> canonical object id
    pub lexicon: BTreeMap<String, ObjectId>,
}

impl Vocabulary {
    pub fn build(objects: &[&str], extra_words: &[&str]) -> Self {
        let mut words: Vec<String> = vec![PAD.into(), BOS.into(), EOS.into(), UNK.into()];
        let mut lexicon = BTreeMap::new();
        let objects: Vec<String> = objects.iter().map(|s| s.to_string()).collect();
        for (id, obj) in objects.iter().enumerate() {
            lexicon.insert(obj.clone(), id);
            lexicon.insert(plural_of(obj), id);
        }
        let mut seen: HashSet<String> = words.iter().cloned().collect();
        for w in lexicon
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .into_iter()
            .chain(ATTRIBUTES.iter().map(|s| s.to_string()))
            .chain(extra_words.iter().map(|s| s.to_string()))
        {
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, ids, objects, lexicon }
    }

    fn rebuild_ids(&mut self) {
        self.ids = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn bos(&self) -> usize {
        self.ids[BOS]
    }

    pub fn eos(&self) -> usize {
        self.ids[EOS]
    }

    pub fn pad(&self) -> usize {
        self.ids[PAD]
    }

    pub fn unk(&self) -> usize {
        self.ids[UNK]
    }

    pub fn object_id(&self, name: &str) -> Option<ObjectId> {
        self.objects.iter().position(|o| o == name)
    }

    /// Whitespace split with punctuation separated into standalone tokens.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or_else(|| self.unk())).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut v: Vocabulary = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        v.rebuild_ids();
        Ok(v)
    }
}

pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let mut word = String::new();
        for ch in piece.chars() {
            if ch.is_ascii_punctuation() && ch != '<' && ch != '>' && ch != '_' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

fn plural_of(word: &str) -> String {
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

/// One synthetic scene: the ground-truth object annotation for an "image".
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scene {
    pub id: String,
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub group: String,
}

impl Scene {
    pub fn object_ids(&self, vocab: &Vocabulary) -> Vec<ObjectId> {
        self.objects.iter().filter_map(|o| vocab.object_id(o)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Caption,
    Qa,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaptionRecord {
    pub scene_id: String,
    pub caption: String,
    pub objects: Vec<String>,
    pub split: String,
    #[serde(default = "default_kind")]
    pub kind: RecordKind,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_kind() -> RecordKind {
    RecordKind::Caption
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BiasPair {
    pub anchor: String,
    pub partner: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasConfig {
    pub pairs: Vec<BiasPair>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            pairs: vec![
                BiasPair { anchor: "cat".into(), partner: "dog".into(), prob: 0.8 },
                BiasPair { anchor: "car".into(), partner: "tree".into(), prob: 0.8 },
                BiasPair { anchor: "chair".into(), partner: "table".into(), prob: 0.8 },
                BiasPair { anchor: "bird".into(), partner: "cloud".into(), prob: 0.8 },
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_scenes: usize,
    pub heldout_scenes: usize,
    pub captions_per_scene: usize,
    pub qa_per_scene: usize,
    pub bias: BiasConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_scenes: 5000,
            heldout_scenes: 500,
            captions_per_scene: 2,
            qa_per_scene: 4,
            bias: BiasConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenes: Vec<Scene>,
    pub records: Vec<CaptionRecord>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn records_in(&self, split: &str, kind: RecordKind) -> Vec<&CaptionRecord> {
        self.records.iter().filter(|r| r.split == split && r.kind == kind).collect()
    }

    /// image id -> truth object set, for the metric harnesses.
    pub fn annotations(&self) -> HashMap<String, HashSet<String>> {
        self.scenes
            .iter()
            .map(|s| (s.id.clone(), s.objects.iter().cloned().collect()))
            .collect()
    }
}

/// Deterministic corpus generation: a pure function of (seed, config).
pub fn gen_corpus(seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    let vocab = Vocabulary::build(&DEFAULT_OBJECTS, &["a", "and", "on", "the", "is", "there", "yes", "no", ".", "?"]);
    for pair in &config.bias.pairs {
        if !(0.0..=1.0).contains(&pair.prob) {
            return Err(Error::InvalidArgument(format!(
                "bias probability {} for ({}, {}) outside [0,1]",
                pair.prob, pair.anchor, pair.partner
            )));
        }
        for name in [&pair.anchor, &pair.partner] {
            if vocab.object_id(name).is_none() {
                return Err(Error::InvalidArgument(format!("bias object {name} not in object vocabulary")));
            }
        }
        if pair.anchor == pair.partner {
            return Err(Error::InvalidArgument(format!("bias pair ({0}, {0}) is degenerate", pair.anchor)));
        }
    }
    let anchors: HashSet<&str> = config.bias.pairs.iter().map(|p| p.anchor.as_str()).collect();
    let partners: HashSet<&str> = config.bias.pairs.iter().map(|p| p.partner.as_str()).collect();
    if anchors.intersection(&partners).next().is_some() {
        return Err(Error::InvalidArgument(
            "bias config infeasible: an object is both anchor and partner".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::new();
    let mut records = Vec::new();

    for idx in 0..config.n_scenes + config.heldout_scenes {
        let heldout = idx >= config.n_scenes;
        let split = if heldout { "heldout" } else { "train" };
        let id = format!("scene_{idx:05}");
        let mut objects = draw_objects(&mut rng, &vocab, config, heldout);
        objects.sort_by_key(|&o| o);
        objects.dedup();
        let attributes: Vec<String> =
            objects.iter().map(|_| ATTRIBUTES[rng.gen_range(0..ATTRIBUTES.len())].to_string()).collect();
        let names: Vec<String> = objects.iter().map(|&o| vocab.objects[o].clone()).collect();
        let scene = Scene { id: id.clone(), objects: names.clone(), attributes: attributes.clone(), group: split.into() };

        for _ in 0..config.captions_per_scene {
            let mut order: Vec<usize> = (0..names.len()).collect();
            order.shuffle(&mut rng);
            let phrases: Vec<String> =
                order.iter().map(|&i| format!("a {} {}", attributes[i], names[i])).collect();
            let caption = format!("{} .", phrases.join(" and "));
            records.push(CaptionRecord {
                scene_id: id.clone(),
                caption,
                objects: names.clone(),
                split: split.into(),
                kind: RecordKind::Caption,
                extra: Default::default(),
            });
        }

        for q in 0..config.qa_per_scene {
            // alternate yes/no so training QA is balanced
            let want_yes = q % 2 == 0;
            let obj = if want_yes && !names.is_empty() {
                names[rng.gen_range(0..names.len())].clone()
            } else {
                let absent: Vec<&String> = vocab.objects.iter().filter(|o| !names.contains(o)).collect();
                absent[rng.gen_range(0..absent.len())].clone()
            };
            let answer = if names.contains(&obj) { "yes" } else { "no" };
            records.push(CaptionRecord {
                scene_id: id.clone(),
                caption: format!("is there a {obj} ? {answer}"),
                objects: names.clone(),
                split: split.into(),
                kind: RecordKind::Qa,
                extra: Default::default(),
            });
        }
        scenes.push(scene);
    }

    Ok(Corpus { scenes, records, vocab })
}

fn draw_objects(rng: &mut ChaCha8Rng, vocab: &Vocabulary, config: &CorpusConfig, heldout: bool) -> Vec<ObjectId> {
    let n_obj = vocab.objects.len();
    let k = rng.gen_range(1..=4usize);
    let mut objects: Vec<ObjectId> = Vec::new();
    let mut pool: Vec<ObjectId> = (0..n_obj).collect();
    pool.shuffle(rng);
    objects.extend(pool.into_iter().take(k));

    if heldout {
        // force an anchor so the broken-pair bias is probed, drop all partners
        let pair = &config.bias.pairs[rng.gen_range(0..config.bias.pairs.len())];
        let anchor_id = vocab.object_id(&pair.anchor).unwrap();
        if !objects.contains(&anchor_id) {
            objects.push(anchor_id);
        }
        for p in &config.bias.pairs {
            let partner_id = vocab.object_id(&p.partner).unwrap();
            let anchor = vocab.object_id(&p.anchor).unwrap();
            if objects.contains(&anchor) {
                objects.retain(|&o| o != partner_id);
            }
        }
    } else {
        // enforce P(partner | anchor) exactly: redraw partner membership
        for p in &config.bias.pairs {
            let anchor_id = vocab.object_id(&p.anchor).unwrap();
            let partner_id = vocab.object_id(&p.partner).unwrap();
            if objects.contains(&anchor_id) {
                objects.retain(|&o| o != partner_id);
                if rng.gen_bool(p.prob) {
                    objects.push(partner_id);
                }
            }
        }
    }
    objects
}

pub fn save_jsonl(records: &[CaptionRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<CaptionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed { line: i + 1, detail: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(
            serde_json::from_str(&line).map_err(|e| Error::Malformed { line: i + 1, detail: e.to_string() })?,
        );
    }
    Ok(scenes)
}
