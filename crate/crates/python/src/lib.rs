//! Python bindings for the core types and operations: corpus generation,
//! model training and checkpoints, penalty decoding, and the CHAIR/POPE
//! hallucination harnesses. Structured results cross the boundary as JSON
//! strings so Python callers can `json.loads` them.

use std::collections::HashMap;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vlmlab::data::{self, CorpusConfig, Vocabulary};
use vlmlab::decoding::{
    generate, overtrust_penalty as rs_overtrust, vision_penalty as rs_vision, DecodeConfig,
};
use vlmlab::eval::{answer_pope_all, build_pope, chair, eval_pope, ChairCaption, PopeStrategy};
use vlmlab::feedback::{train, train_items, FeedbackConfig, TrainOptions};
use vlmlab::judge::MockJudge;
use vlmlab::model::{Model, ModelConfig};
use vlmlab::numerics::{checkpoint, AdamWConfig, LrSchedule, OptimState, Tensor};

fn err(e: vlmlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass]
struct Corpus {
    inner: data::Corpus,
}

#[pymethods]
impl Corpus {
    /// Generate the synthetic biased corpus from a seed.
    #[staticmethod]
    #[pyo3(signature = (seed=0, n_scenes=500, heldout_scenes=100))]
    fn generate(seed: u64, n_scenes: usize, heldout_scenes: usize) -> PyResult<Self> {
        let config = CorpusConfig { n_scenes, heldout_scenes, ..Default::default() };
        Ok(Corpus { inner: data::gen_corpus(seed, &config).map_err(err)? })
    }

    /// Load vocab.json / scenes.jsonl / records.jsonl from a directory.
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let dir = Path::new(dir);
        Ok(Corpus {
            inner: data::Corpus {
                vocab: Vocabulary::load(&dir.join("vocab.json")).map_err(err)?,
                scenes: data::load_scenes(&dir.join("scenes.jsonl")).map_err(err)?,
                records: data::load_jsonl(&dir.join("records.jsonl")).map_err(err)?,
            },
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| err(e.into()))?;
        self.inner.vocab.save(&dir.join("vocab.json")).map_err(err)?;
        data::save_scenes(&self.inner.scenes, &dir.join("scenes.jsonl")).map_err(err)?;
        data::save_jsonl(&self.inner.records, &dir.join("records.jsonl")).map_err(err)
    }

    #[getter]
    fn n_scenes(&self) -> usize {
        self.inner.scenes.len()
    }

    #[getter]
    fn n_records(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    fn scene_ids(&self, split: &str) -> Vec<String> {
        self.inner.scenes.iter().filter(|s| s.group == split).map(|s| s.id.clone()).collect()
    }

    fn scene_objects(&self, scene_id: &str) -> PyResult<Vec<String>> {
        self.inner
            .scene(scene_id)
            .map(|s| s.objects.clone())
            .ok_or_else(|| PyValueError::new_err(format!("unknown scene {scene_id}")))
    }

    fn tokenize(&self, text: &str) -> Vec<usize> {
        self.inner.vocab.tokenize(text)
    }

    fn detokenize(&self, ids: Vec<usize>) -> String {
        self.inner.vocab.detokenize(&ids)
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    /// Fresh model sized to the corpus vocabulary.
    #[staticmethod]
    #[pyo3(signature = (corpus, seed=0, n_layers=2, n_heads=4, d_model=64))]
    fn init(corpus: &Corpus, seed: u64, n_layers: usize, n_heads: usize, d_model: usize) -> PyResult<Self> {
        let config = ModelConfig {
            n_layers,
            n_heads,
            d_model,
            vocab_size: corpus.inner.vocab.len(),
            n_objects: corpus.inner.vocab.objects.len(),
            ..Default::default()
        };
        Ok(PyModel { inner: Model::init(config, seed).map_err(err)? })
    }

    /// Load model.ckpt + model_config.json from a checkpoint directory.
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let dir = Path::new(dir);
        let config: ModelConfig = serde_json::from_str(
            &std::fs::read_to_string(dir.join("model_config.json")).map_err(|e| err(e.into()))?,
        )
        .map_err(|e| err(e.into()))?;
        let (params, dtype) = checkpoint::load(&dir.join("model.ckpt")).map_err(err)?;
        Ok(PyModel { inner: Model { config, params, dtype } })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| err(e.into()))?;
        checkpoint::save(&self.inner.params, self.inner.dtype, &dir.join("model.ckpt")).map_err(err)?;
        std::fs::write(
            dir.join("model_config.json"),
            serde_json::to_string_pretty(&self.inner.config).map_err(|e| err(e.into()))?,
        )
        .map_err(|e| err(e.into()))
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Train on the corpus train split with the mock judge; returns the
    /// per-step loss reports as a JSON array string.
    #[pyo3(signature = (corpus, total_steps=200, c=0.7, sigma=0.6, batch_size=8, peak_lr=1e-4, seed=0, feedback_interval=10))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        corpus: &Corpus,
        total_steps: u64,
        c: f64,
        sigma: f64,
        batch_size: usize,
        peak_lr: f64,
        seed: u64,
        feedback_interval: u64,
    ) -> PyResult<String> {
        let vocab = &corpus.inner.vocab;
        let items = train_items(&corpus.inner, vocab, "train");
        let config = FeedbackConfig { sigma, c, total_steps, feedback_interval, seed, ..Default::default() };
        let schedule = LrSchedule::new(peak_lr, 0.03, total_steps).map_err(err)?;
        let mut optim = OptimState::new(AdamWConfig { lr: peak_lr, ..Default::default() });
        let judge = MockJudge::new(vocab.lexicon.clone());
        let reports = train(
            &mut self.inner,
            vocab,
            &items,
            &judge,
            &config,
            &schedule,
            &mut optim,
            &TrainOptions { batch_size, shuffle_seed: seed },
            None,
        )
        .map_err(err)?;
        serde_json::to_string(&reports).map_err(|e| err(e.into()))
    }

    /// Decode one scene; returns {"caption", "tokens", "score"} as JSON.
    #[pyo3(signature = (corpus, scene_id, strategy="beam", beam_width=5, gamma=50.0, max_new_tokens=16, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        corpus: &Corpus,
        scene_id: &str,
        strategy: &str,
        beam_width: usize,
        gamma: f64,
        max_new_tokens: usize,
        seed: u64,
    ) -> PyResult<String> {
        let vocab = &corpus.inner.vocab;
        let scene = corpus
            .inner
            .scene(scene_id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown scene {scene_id}")))?;
        let mut config = DecodeConfig::preset(strategy).map_err(err)?;
        config.beam_width = beam_width;
        config.gamma_scale = gamma;
        config.max_new_tokens = max_new_tokens;
        config.seed = seed;
        let mut prompt = vec![vocab.bos()];
        prompt.extend(vocab.tokenize("a"));
        let out = generate(&self.inner, &scene.object_ids(vocab), &prompt, vocab.eos(), &config)
            .map_err(err)?;
        let caption = format!("a {}", vocab.detokenize(&out.tokens)).trim().to_string();
        serde_json::to_string(&serde_json::json!({
            "caption": caption,
            "tokens": out.tokens,
            "score": out.score,
        }))
        .map_err(|e| err(e.into()))
    }

    /// Build, answer, and score a POPE benchmark over a corpus split;
    /// returns the PopeReport as JSON.
    #[pyo3(signature = (corpus, strategy="adversarial", questions_per_image=6, split="heldout", seed=0))]
    fn pope(
        &self,
        corpus: &Corpus,
        strategy: &str,
        questions_per_image: usize,
        split: &str,
        seed: u64,
    ) -> PyResult<String> {
        let vocab = &corpus.inner.vocab;
        let strategy: PopeStrategy = strategy.parse().map_err(err)?;
        let scenes: Vec<data::Scene> =
            corpus.inner.scenes.iter().filter(|s| s.group == split).cloned().collect();
        let triples = build_pope(&scenes, vocab, strategy, questions_per_image, seed).map_err(err)?;
        let by_id: HashMap<String, Vec<usize>> =
            scenes.iter().map(|s| (s.id.clone(), s.object_ids(vocab))).collect();
        let answers = answer_pope_all(&self.inner, vocab, &by_id, &triples, 1).map_err(err)?;
        let predictions: Vec<bool> = answers.iter().map(|(p, _)| *p).collect();
        let mut report = eval_pope(&predictions, &triples).map_err(err)?;
        report.n_unmappable = answers.iter().filter(|(_, u)| *u).count();
        serde_json::to_string(&report).map_err(|e| err(e.into()))
    }
}

/// CHAIR ratios over (scene_id, caption, gen_len) triples; returns the
/// ChairReport as JSON.
#[pyfunction]
fn chair_eval(corpus: &Corpus, captions: Vec<(String, String, usize)>) -> PyResult<String> {
    let vocab = &corpus.inner.vocab;
    let items: Vec<ChairCaption> = captions
        .into_iter()
        .map(|(image_id, caption, gen_len)| ChairCaption { image_id, caption, gen_len })
        .collect();
    let annotations = corpus
        .inner
        .scenes
        .iter()
        .map(|s| (s.id.clone(), s.object_ids(vocab).into_iter().collect()))
        .collect();
    let report = chair(&items, &annotations, &vocab.lexicon).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| err(e.into()))
}

/// Over-trust penalty of a generated-token self-attention window (row-major).
#[pyfunction]
#[pyo3(signature = (rows, gamma=50.0))]
fn overtrust_penalty(rows: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    Ok(rs_overtrust(&to_tensor(rows)?, gamma))
}

/// Vision penalty of an image-attention window slice (row-major).
#[pyfunction]
#[pyo3(signature = (rows, gamma=50.0))]
fn vision_penalty(rows: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    let (psi, _) = rs_vision(&to_tensor(rows)?, gamma).map_err(err)?;
    Ok(psi)
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    let shape = vec![rows.len(), rows[0].len()];
    Tensor::new(shape, rows.into_iter().flatten().collect()).map_err(err)
}

#[pymodule]
fn vlmlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(chair_eval, m)?)?;
    m.add_function(wrap_pyfunction!(overtrust_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(vision_penalty, m)?)?;
    Ok(())
}
