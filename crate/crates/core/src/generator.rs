//! Raster-order visual token generation with classifier-free guidance.
//!
//! Each request runs two streams: the conditional branch is prefilled with
//! the prompt followed by the begin-of-image token, the unconditional branch
//! with the begin-of-image token alone. At every step both branches' logits
//! are mixed with [`cfg_mix`], one token is sampled, and the same token is
//! fed to both branches. Branches keep separate caches and scores.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::kvcache::{memory_report, CacheHandle, CachePolicyConfig, MemoryReport};
use crate::model::{decode_batch, decode_step, ModelConfig, ModelWeights};
use crate::numerics::Rng;
use crate::profiler::AttentionTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    pub top_k: usize,
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            temperature: 1.0,
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: Vec<usize>,
    /// Guidance scale; 5.0 is the usual setting.
    pub gamma: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub sampling: Sampling,
    pub sample_seed: u64,
    pub policy: CachePolicyConfig,
    /// Record conditional-branch attention for every step.
    pub capture_attention: bool,
}

impl GenerationRequest {
    /// Greedy, full-cache request over the model's grid with `gamma = 5`.
    pub fn new(config: &ModelConfig, prompt: Vec<usize>) -> Self {
        Self {
            prompt,
            gamma: 5.0,
            grid_h: config.grid_h,
            grid_w: config.grid_w,
            sampling: Sampling::greedy(),
            sample_seed: 0,
            policy: CachePolicyConfig::full(),
            capture_attention: false,
        }
    }

    pub fn n_visual(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.prompt.len() > config.max_prompt_len {
            return Err(Error::Config(format!(
                "prompt of {} tokens exceeds max_prompt_len {}",
                self.prompt.len(),
                config.max_prompt_len
            )));
        }
        if let Some(t) = self.prompt.iter().find(|&&t| t >= config.vocab_size) {
            return Err(Error::Input(format!("prompt token {t} outside the vocabulary")));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.sampling.temperature > 0.0 && self.sampling.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.sampling.top_k == 0 || self.sampling.top_k > config.vocab_size {
            return Err(Error::Config(format!(
                "top_k must be in 1..={}, got {}",
                config.vocab_size, self.sampling.top_k
            )));
        }
        if self.grid_h < 2 || self.grid_w < 2 {
            return Err(Error::Config("grid must be at least 2x2".into()));
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    /// Visual tokens in raster order.
    pub tokens: Vec<usize>,
    /// Wall-clock time of each decode step (sampling plus both branch passes).
    pub step_durations: Vec<Duration>,
    /// Retained KV scalars of both branches after each step.
    pub retained_scalars: Vec<usize>,
    /// Both branches at the final step.
    pub memory: MemoryReport,
    pub trace: Option<AttentionTrace>,
}

/// Classifier-free guidance on raw logits: `cond + gamma * (cond - uncond)`.
pub fn cfg_mix(cond: &[f64], uncond: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::Shape(format!(
            "conditional logits have {} entries, unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| c + gamma * (c - u))
        .collect())
}

/// Temperature / top-k sampling.
///
/// Logits are divided by `temperature`, truncated to the `top_k` largest
/// (ties toward the lower index), renormalised with a softmax and sampled
/// with one `next_f64` draw. `top_k == 1` returns the argmax without drawing.
pub fn sample_token(logits: &[f64], temperature: f64, top_k: usize, rng: &mut Rng) -> Result<usize> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("logits contain a non-finite value".into()));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if top_k == 0 || top_k > logits.len() {
        return Err(Error::Config(format!(
            "top_k {top_k} outside 1..={}",
            logits.len()
        )));
    }
    let better = |a: usize, b: usize| logits[b].total_cmp(&logits[a]).then(a.cmp(&b));
    if top_k == 1 {
        return Ok((0..logits.len()).min_by(|&a, &b| better(a, b)).expect("nonempty logits"));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    if top_k < idx.len() {
        idx.select_nth_unstable_by(top_k - 1, |&a, &b| better(a, b));
        idx.truncate(top_k);
    }
    idx.sort_unstable_by(|&a, &b| better(a, b));
    let scaled: Vec<f64> = idx.iter().map(|&i| logits[i] / temperature).collect();
    let probs = crate::numerics::softmax_row(&scaled)?;
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (&i, p) in idx.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(*idx.last().expect("top_k >= 1"))
}

/// A batch of requests decoded in lockstep, one visual token per request
/// per [`step`](Self::step). Stream `2i` is request `i`'s conditional
/// branch and stream `2i + 1` its unconditional branch.
pub struct GenerationSession<'a> {
    weights: &'a ModelWeights,
    config: &'a ModelConfig,
    requests: Vec<GenerationRequest>,
    streams: Vec<CacheHandle>,
    logits: Vec<Vec<f64>>,
    rngs: Vec<Rng>,
    tokens: Vec<Vec<usize>>,
    durations: Vec<Duration>,
    retained: Vec<Vec<usize>>,
    traces: Vec<Option<AttentionTrace>>,
    n_visual: usize,
}

impl<'a> GenerationSession<'a> {
    /// Validates the requests and prefills both branches of each.
    pub fn new(weights: &'a ModelWeights, config: &'a ModelConfig, requests: Vec<GenerationRequest>) -> Result<Self> {
        let n_visual = match requests.first() {
            Some(r) => r.n_visual(),
            None => return Err(Error::Input("no generation requests".into())),
        };
        for r in &requests {
            r.validate(config)?;
            if r.n_visual() != n_visual {
                return Err(Error::Config("batched requests must share one grid size".into()));
            }
        }
        let boi = config.boi_token();
        let mut streams = Vec::with_capacity(2 * requests.len());
        let mut logits = Vec::with_capacity(2 * requests.len());
        let mut traces = Vec::with_capacity(requests.len());
        for (i, r) in requests.iter().enumerate() {
            let mut cond_prefix = r.prompt.clone();
            cond_prefix.push(boi);
            let mut trace = r
                .capture_attention
                .then(|| AttentionTrace::new(config.n_layers, config.n_heads, "cond"));
            for (prefix, is_cond) in [(cond_prefix, true), (vec![boi], false)] {
                let mut handle = CacheHandle::new(
                    r.policy.clone(),
                    config.n_layers,
                    config.n_heads,
                    config.d_head(),
                    prefix.len(),
                )?;
                let mut last = Vec::new();
                for (pos, &t) in prefix.iter().enumerate() {
                    let capture = is_cond && trace.is_some();
                    let out = decode_step(weights, config, t, pos, &mut handle, capture)?;
                    if let (Some(tr), Some(att)) = (trace.as_mut(), out.attention.as_ref()) {
                        tr.push_step(i, pos, prefix.len(), att)?;
                    }
                    last = out.logits;
                }
                streams.push(handle);
                logits.push(last);
            }
            traces.push(trace);
        }
        let n = requests.len();
        Ok(Self {
            weights,
            config,
            rngs: requests.iter().map(|r| Rng::new(r.sample_seed)).collect(),
            requests,
            streams,
            logits,
            tokens: vec![Vec::with_capacity(n_visual); n],
            durations: Vec::with_capacity(n_visual),
            retained: vec![Vec::with_capacity(n_visual); n],
            traces,
            n_visual,
        })
    }

    pub fn n_visual(&self) -> usize {
        self.n_visual
    }

    pub fn steps_done(&self) -> usize {
        self.durations.len()
    }

    pub fn is_done(&self) -> bool {
        self.steps_done() == self.n_visual
    }

    pub fn streams(&self) -> &[CacheHandle] {
        &self.streams
    }

    /// `(conditional, unconditional)` caches of request `i`.
    pub fn branches(&self, i: usize) -> (&CacheHandle, &CacheHandle) {
        (&self.streams[2 * i], &self.streams[2 * i + 1])
    }

    /// Tokens generated so far for request `i`.
    pub fn tokens(&self, i: usize) -> &[usize] {
        &self.tokens[i]
    }

    /// Logits each stream will sample its next token from.
    pub fn pending_logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    /// Samples and feeds one visual token per request.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::Sequencing("all visual tokens already generated".into()));
        }
        let start = Instant::now();
        let mut feed = Vec::with_capacity(self.streams.len());
        for (i, r) in self.requests.iter().enumerate() {
            let mixed = cfg_mix(&self.logits[2 * i], &self.logits[2 * i + 1], r.gamma)?;
            let z = sample_token(&mixed, r.sampling.temperature, r.sampling.top_k, &mut self.rngs[i])?;
            self.tokens[i].push(z);
            feed.extend([z, z]);
        }
        let capture = self.traces.iter().any(Option::is_some);
        let positions: Vec<(usize, usize)> = self
            .streams
            .iter()
            .map(|s| (s.fed(), s.prefix_len()))
            .collect();
        let outputs = decode_batch(self.weights, self.config, &mut self.streams, &feed, capture)?;
        for (s, out) in outputs.into_iter().enumerate() {
            if s % 2 == 0 {
                if let (Some(tr), Some(att)) = (self.traces[s / 2].as_mut(), out.attention.as_ref()) {
                    tr.push_step(s / 2, positions[s].0, positions[s].1, att)?;
                }
            }
            self.logits[s] = out.logits;
        }
        self.durations.push(start.elapsed());
        for i in 0..self.requests.len() {
            let scalars = self.streams[2 * i].retained_scalars() + self.streams[2 * i + 1].retained_scalars();
            self.retained[i].push(scalars);
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Per-request results, in request order.
    pub fn finish(self) -> Vec<GenerationResult> {
        let memory: Vec<MemoryReport> = self
            .streams
            .chunks(2)
            .map(|pair| memory_report(pair.iter()))
            .collect();
        self.tokens
            .into_iter()
            .zip(memory)
            .zip(self.retained)
            .zip(self.traces)
            .map(|(((tokens, memory), retained_scalars), trace)| GenerationResult {
                tokens,
                step_durations: self.durations.clone(),
                retained_scalars,
                memory,
                trace,
            })
            .collect()
    }
}

pub fn generate(request: &GenerationRequest, weights: &ModelWeights, config: &ModelConfig) -> Result<GenerationResult> {
    let mut out = generate_batch(std::slice::from_ref(request), weights, config)?;
    Ok(out.pop().expect("one request in, one result out"))
}

/// Runs every request to completion in lockstep on the calling thread.
/// Results come back in request order.
pub fn generate_batch(
    requests: &[GenerationRequest],
    weights: &ModelWeights,
    config: &ModelConfig,
) -> Result<Vec<GenerationResult>> {
    let mut session = GenerationSession::new(weights, config, requests.to_vec())?;
    session.run_to_end()?;
    Ok(session.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfg_mix_examples() {
        assert_eq!(cfg_mix(&[1.0, 2.0], &[0.0, 0.0], 5.0).unwrap(), vec![6.0, 12.0]);
        let c = [0.3, -1.7, 2.2];
        assert_eq!(cfg_mix(&c, &c, 7.5).unwrap(), c.to_vec());
        assert_eq!(cfg_mix(&c, &[9.0, 9.0, 9.0], 0.0).unwrap(), c.to_vec());
        assert!(matches!(cfg_mix(&c, &[1.0], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_and_ties() {
        let mut rng = Rng::new(0);
        assert_eq!(sample_token(&[0.0, 5.0, 1.0], 1.0, 1, &mut rng).unwrap(), 1);
        assert_eq!(sample_token(&[3.0, 3.0, 0.0], 1.0, 1, &mut rng).unwrap(), 0);
        assert!(matches!(
            sample_token(&[0.0, f64::NAN], 1.0, 1, &mut rng),
            Err(Error::Numeric(_))
        ));
        assert!(sample_token(&[0.0, 1.0], 0.0, 1, &mut rng).is_err());
        assert!(sample_token(&[0.0, 1.0], 1.0, 3, &mut rng).is_err());
    }

    #[test]
    fn top_k_restricts_support() {
        let mut rng = Rng::new(5);
        let logits = [0.0, 4.0, 3.9, -1.0, 3.95];
        for _ in 0..500 {
            let t = sample_token(&logits, 2.0, 3, &mut rng).unwrap();
            assert!([1, 2, 4].contains(&t));
        }
    }

    #[test]
    fn hot_sampling_is_near_uniform() {
        // Frequency-count oracle: chi-square against the uniform law.
        let k = 16;
        let logits: Vec<f64> = (0..k).map(|i| i as f64 * 0.1).collect();
        let mut rng = Rng::new(99);
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[sample_token(&logits, 1e9, k, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 15 degrees of freedom.
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }
}
