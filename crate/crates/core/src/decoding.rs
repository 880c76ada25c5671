//! Penalty-aware decoding: the over-trust penalty over the generated-token
//! self-attention window, the vision penalty over the image slice, their
//! scale-matched combination, and greedy/beam/nucleus generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObjectId;
use crate::error::{Error, Result};
use crate::model::{argmax, draw, AttentionRecord, Model};
use crate::numerics::Tensor;

/// Slices of the aggregated attention matrix seen by the penalties: the
/// `h x l` image slice and the `h x h` lower-triangular self-attention among
/// generated tokens.
#[derive(Debug, Clone)]
pub struct AttentionWindow {
    pub vision_slice: Tensor,
    pub text_slice: Tensor,
    pub gen_len: usize,
    pub image_len: usize,
}

/// Penalty scores for one decode step. `rho = phi - beta * psi` exactly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyScores {
    pub phi: f64,
    pub psi: f64,
    pub beta: f64,
    pub rho: f64,
}

impl PenaltyScores {
    pub fn zero() -> Self {
        PenaltyScores { phi: 0.0, psi: 0.0, beta: 0.0, rho: 0.0 }
    }
}

/// Running sums of cumulative penalties within one generation.
#[derive(Debug, Clone, Default)]
pub struct BetaState {
    sum_phi: f64,
    sum_psi: f64,
    steps: u64,
}

impl BetaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, phi: f64, psi: f64) {
        self.sum_phi += phi;
        self.sum_psi += psi;
        self.steps += 1;
    }

    pub fn mean_phi(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.sum_phi / self.steps as f64 }
    }

    pub fn mean_psi(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.sum_psi / self.steps as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Beam,
    Nucleus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelector {
    Last,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadAggregation {
    Mean,
    Single(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttentionSource {
    pub layer: LayerSelector,
    pub heads: HeadAggregation,
}

impl Default for AttentionSource {
    fn default() -> Self {
        AttentionSource { layer: LayerSelector::Last, heads: HeadAggregation::Mean }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub gamma_scale: f64,
    pub enable_overtrust: bool,
    pub enable_vision: bool,
    pub attention_source: AttentionSource,
    pub max_new_tokens: usize,
    pub nucleus_p: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_width: 5,
            gamma_scale: 50.0,
            enable_overtrust: false,
            enable_vision: false,
            attention_source: AttentionSource::default(),
            max_new_tokens: 24,
            nucleus_p: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument("beam_width must be >= 1".into()));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::InvalidArgument(format!("nucleus_p {} outside (0, 1]", self.nucleus_p)));
        }
        if self.gamma_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("gamma_scale {} must be positive", self.gamma_scale)));
        }
        Ok(())
    }

    /// Preset for the named strategies used in the experiment tables.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = DecodeConfig::default();
        match name {
            "greedy" => c.strategy = Strategy::Greedy,
            "beam" => c.strategy = Strategy::Beam,
            "nucleus" => c.strategy = Strategy::Nucleus,
            "overtrust" => {
                c.strategy = Strategy::Beam;
                c.enable_overtrust = true;
            }
            "vep" => {
                c.strategy = Strategy::Beam;
                c.enable_overtrust = true;
                c.enable_vision = true;
            }
            other => return Err(Error::InvalidArgument(format!("unknown decode strategy {other}"))),
        }
        Ok(c)
    }
}

/// Aggregate the recorded attention into one matrix per the configured source.
pub fn aggregate_attention(attn: &AttentionRecord, source: &AttentionSource) -> Tensor {
    let layer = match source.layer {
        LayerSelector::Last => attn.layers.len() - 1,
        LayerSelector::Index(i) => i,
    };
    match source.heads {
        HeadAggregation::Mean => attn.layer_mean(layer),
        HeadAggregation::Single(h) => attn.layers[layer][h].clone(),
    }
}

/// Slice the window of the last `gen_len` (generated) positions out of an
/// aggregated attention matrix.
pub fn extract_window(aggregated: &Tensor, image_len: usize, gen_len: usize) -> AttentionWindow {
    let seq = aggregated.rows();
    let start = seq - gen_len;
    let mut vision = Vec::with_capacity(gen_len * image_len);
    let mut text = Vec::with_capacity(gen_len * gen_len);
    for i in 0..gen_len {
        vision.extend_from_slice(&aggregated.row(start + i)[..image_len]);
        for j in 0..gen_len {
            // upper triangle is zero-padded
            text.push(if j <= i { aggregated.row(start + i)[start + j] } else { 0.0 });
        }
    }
    AttentionWindow {
        vision_slice: Tensor::new(vec![gen_len, image_len], vision).unwrap(),
        text_slice: Tensor::new(vec![gen_len, gen_len], text).unwrap(),
        gen_len,
        image_len,
    }
}

/// Products along the defined (lower-triangular) part of each column, in the
/// log domain; the penalty is the maximum column product.
pub fn overtrust_penalty(text_slice: &Tensor, gamma_scale: f64) -> f64 {
    let h = text_slice.rows();
    if h == 0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for j in 0..h {
        let mut log_prod = 0.0f64;
        let mut zero = false;
        for i in j..h {
            let v = gamma_scale * text_slice.row(i)[j];
            if v == 0.0 {
                zero = true;
                break;
            }
            log_prod += v.ln();
        }
        let prod = if zero { 0.0 } else { log_prod.exp() };
        best = best.max(prod);
    }
    best
}

/// Per-row products over the image slice (log domain), summed over rows.
/// Returns the penalty and the per-row products for diagnostics.
pub fn vision_penalty(vision_slice: &Tensor, gamma_scale: f64) -> Result<(f64, Vec<f64>)> {
    if vision_slice.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("vision window has negative attention entries".into()));
    }
    let (h, l) = (vision_slice.rows(), vision_slice.cols());
    let mut products = Vec::with_capacity(h);
    for i in 0..h {
        let mut log_prod = 0.0f64;
        let mut zero = false;
        for j in 0..l {
            let v = gamma_scale * vision_slice.row(i)[j];
            if v == 0.0 {
                zero = true;
                break;
            }
            log_prod += v.ln();
        }
        products.push(if zero { 0.0 } else { log_prod.exp() });
    }
    Ok((products.iter().sum(), products))
}

/// Per-column products over the image slice: the prose reading of the window
/// accumulation, exposed as a diagnostic only.
pub fn vision_column_products(vision_slice: &Tensor, gamma_scale: f64) -> Vec<f64> {
    let (h, l) = (vision_slice.rows(), vision_slice.cols());
    (0..l)
        .map(|j| {
            let mut log_prod = 0.0f64;
            let mut zero = false;
            for i in 0..h {
                let v = gamma_scale * vision_slice.row(i)[j];
                if v == 0.0 {
                    zero = true;
                    break;
                }
                log_prod += v.ln();
            }
            if zero { 0.0 } else { log_prod.exp() }
        })
        .collect()
}

/// Update the running sums with the current step's penalties and form
/// `rho = phi - beta * psi` with the guarded scale ratio.
pub fn combined_penalty(phi: f64, psi: f64, state: &mut BetaState) -> PenaltyScores {
    state.observe(phi, psi);
    let beta = if state.mean_psi() < 1e-12 { 0.0 } else { state.mean_phi() / state.mean_psi() };
    PenaltyScores { phi, psi, beta, rho: phi - beta * psi }
}

/// Next-token rule: argmax of (score - rho), ties to the lowest token id.
pub fn decode_step(log_probs: &[f64], rho: f64) -> usize {
    let adjusted: Vec<f64> = log_probs.iter().map(|&s| s - rho).collect();
    argmax(&adjusted)
}

/// One emitted line of the per-step penalty trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub candidate: usize,
    pub phi: f64,
    pub psi: f64,
    pub beta: f64,
    pub rho: f64,
    pub chosen_token: usize,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// generated tokens, end token excluded
    pub tokens: Vec<usize>,
    /// cumulative penalized log-probability of the winning sequence
    pub score: f64,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
    beta_state: BetaState,
    finished: bool,
}

/// Penalty for one candidate's current attention state; `gen_len` counts the
/// tokens generated so far on that candidate's path.
fn candidate_penalty(
    attn: &AttentionRecord,
    config: &DecodeConfig,
    gen_len: usize,
    beta_state: &mut BetaState,
) -> PenaltyScores {
    if (!config.enable_overtrust && !config.enable_vision) || gen_len == 0 {
        return PenaltyScores::zero();
    }
    let aggregated = aggregate_attention(attn, &config.attention_source);
    let window = extract_window(&aggregated, attn.prefix_len, gen_len);
    let phi =
        if config.enable_overtrust { overtrust_penalty(&window.text_slice, config.gamma_scale) } else { 0.0 };
    if !config.enable_vision {
        // reduction to over-trust-only decoding
        return PenaltyScores { phi, psi: 0.0, beta: 0.0, rho: phi };
    }
    let (psi, _) = vision_penalty(&window.vision_slice, config.gamma_scale).expect("row-stochastic window");
    combined_penalty(phi, psi, beta_state)
}

/// Beam search where each candidate is scored by its cumulative log-prob
/// minus the penalties computed from its own attention states. Returns
/// ranked (generated tokens, score) pairs, best first.
pub fn beam_search(
    model: &Model,
    scene_ids: &[ObjectId],
    prompt: &[usize],
    eos: usize,
    config: &DecodeConfig,
) -> Result<(Vec<(Vec<usize>, f64)>, Vec<TraceStep>)> {
    config.validate()?;
    let mut beams = vec![Hypothesis { tokens: vec![], score: 0.0, beta_state: BetaState::new(), finished: false }];
    let mut trace = Vec::new();
    let budget = config.max_new_tokens.min(model.config.max_text_len.saturating_sub(prompt.len()));

    for step in 0..budget {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        // (score, token id asc, candidate idx) for deterministic tie-breaks
        let mut expansions: Vec<(f64, usize, usize, Option<usize>)> = Vec::new();
        for (ci, beam) in beams.iter_mut().enumerate() {
            if beam.finished {
                expansions.push((beam.score, usize::MAX, ci, None));
                continue;
            }
            let mut tokens = prompt.to_vec();
            tokens.extend(&beam.tokens);
            let (logits, attn) = model.forward_frozen(scene_ids, &tokens)?;
            let last = logits.rows() - 1;
            let row = logits.row(last);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let penalty = candidate_penalty(&attn, config, beam.tokens.len(), &mut beam.beta_state);
            trace.push(TraceStep {
                step,
                candidate: ci,
                phi: penalty.phi,
                psi: penalty.psi,
                beta: penalty.beta,
                rho: penalty.rho,
                chosen_token: usize::MAX,
            });
            for (v, &logit) in row.iter().enumerate() {
                expansions.push((beam.score + (logit - lse) - penalty.rho, v, ci, Some(v)));
            }
        }
        expansions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(config.beam_width);
        for (score, _, ci, tok) in expansions.into_iter().take(config.beam_width) {
            let parent = &beams[ci];
            match tok {
                None => next.push(parent.clone()),
                Some(v) => {
                    let mut h = parent.clone();
                    h.score = score;
                    if v == eos {
                        h.finished = true;
                    } else {
                        h.tokens.push(v);
                    }
                    next.push(h);
                }
            }
        }
        beams = next;
    }

    let mut ranked: Vec<(Vec<usize>, f64)> = beams.into_iter().map(|b| (b.tokens, b.score)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok((ranked, trace))
}

/// Greedy / nucleus / beam entry point.
pub fn generate(
    model: &Model,
    scene_ids: &[ObjectId],
    prompt: &[usize],
    eos: usize,
    config: &DecodeConfig,
) -> Result<DecodeOutput> {
    config.validate()?;
    match config.strategy {
        Strategy::Beam => {
            let (ranked, trace) = beam_search(model, scene_ids, prompt, eos, config)?;
            let (tokens, score) = ranked.into_iter().next().unwrap();
            Ok(DecodeOutput { tokens, score, trace })
        }
        Strategy::Greedy | Strategy::Nucleus => single_path(model, scene_ids, prompt, eos, config),
    }
}

fn single_path(
    model: &Model,
    scene_ids: &[ObjectId],
    prompt: &[usize],
    eos: usize,
    config: &DecodeConfig,
) -> Result<DecodeOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens: Vec<usize> = Vec::new();
    let mut beta_state = BetaState::new();
    let mut score = 0.0;
    let mut trace = Vec::new();
    let budget = config.max_new_tokens.min(model.config.max_text_len.saturating_sub(prompt.len()));
    for step in 0..budget {
        let mut context = prompt.to_vec();
        context.extend(&tokens);
        let (logits, attn) = model.forward_frozen(scene_ids, &context)?;
        let last = logits.rows() - 1;
        let row = logits.row(last);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = row.iter().map(|x| x - lse).collect();
        let penalty = candidate_penalty(&attn, config, tokens.len(), &mut beta_state);
        let tok = match config.strategy {
            Strategy::Greedy => decode_step(&log_probs, penalty.rho),
            Strategy::Nucleus => nucleus_draw(&log_probs, config.nucleus_p, &mut rng),
            Strategy::Beam => unreachable!(),
        };
        trace.push(TraceStep {
            step,
            candidate: 0,
            phi: penalty.phi,
            psi: penalty.psi,
            beta: penalty.beta,
            rho: penalty.rho,
            chosen_token: tok,
        });
        score += log_probs[tok] - penalty.rho;
        if tok == eos {
            break;
        }
        tokens.push(tok);
    }
    Ok(DecodeOutput { tokens, score, trace })
}

/// Top-p multinomial draw over a log-prob row.
fn nucleus_draw(log_probs: &[f64], p: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut order: Vec<usize> = (0..log_probs.len()).collect();
    order.sort_by(|&a, &b| log_probs[b].partial_cmp(&log_probs[a]).unwrap().then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += log_probs[i].exp();
        if mass >= p {
            break;
        }
    }
    let kept_lps: Vec<f64> = kept.iter().map(|&i| log_probs[i]).collect();
    kept[draw(&kept_lps, 1.0, rng, false)]
}
