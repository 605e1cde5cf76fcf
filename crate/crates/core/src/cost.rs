//! Per-query cost and latency of answering from the full document text
//! versus from a retrieved context, and the one-time ingest cost.
//!
//! Prices and latency coefficients are configuration. The defaults are a
//! plausible hosted-model price sheet, not measurements.

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_document, ChunkConfig, DocumentBundle};
use crate::error::{Error, Result};
use crate::retrieve::estimate_tokens;

/// Context budget used when answering from retrieved records, in tokens.
pub const DEFAULT_RETRIEVAL_CONTEXT_TOKENS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModelConfig {
    pub tokens_per_page: usize,
    pub question_tokens: usize,
    pub answer_tokens: usize,
    /// Currency per 1k input tokens.
    pub price_in: f64,
    /// Currency per 1k output tokens.
    pub price_out: f64,
    pub context_window_tokens: usize,
    pub retrieval_context_tokens: usize,
    /// Query embedding and rerank call, per query.
    pub retrieval_fixed_cost: f64,
    pub fixed_latency_s: f64,
    pub latency_per_input_token_s: f64,
    pub latency_per_output_token_s: f64,
    /// Keyword + semantic search, fusion and rerank, per query.
    pub retrieval_latency_s: f64,
    /// Instruction text around each contextualization or captioning call.
    pub prompt_overhead_tokens: usize,
    pub blurb_tokens: usize,
    pub image_input_tokens: usize,
    pub image_output_tokens: usize,
    /// Currency per 1k embedded tokens.
    pub embed_price: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        Self {
            tokens_per_page: 1400,
            question_tokens: 50,
            answer_tokens: 250,
            price_in: 0.0025,
            price_out: 0.01,
            context_window_tokens: 140_000,
            retrieval_context_tokens: DEFAULT_RETRIEVAL_CONTEXT_TOKENS,
            retrieval_fixed_cost: 0.002,
            fixed_latency_s: 0.4,
            latency_per_input_token_s: 3e-5,
            latency_per_output_token_s: 0.0125,
            retrieval_latency_s: 0.35,
            prompt_overhead_tokens: 100,
            blurb_tokens: 60,
            image_input_tokens: 1000,
            image_output_tokens: 200,
            embed_price: 0.00002,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tokens_per_page", self.tokens_per_page),
            ("context_window_tokens", self.context_window_tokens),
            ("retrieval_context_tokens", self.retrieval_context_tokens),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("price_in", self.price_in),
            ("price_out", self.price_out),
            ("retrieval_fixed_cost", self.retrieval_fixed_cost),
            ("fixed_latency_s", self.fixed_latency_s),
            ("latency_per_input_token_s", self.latency_per_input_token_s),
            ("latency_per_output_token_s", self.latency_per_output_token_s),
            ("retrieval_latency_s", self.retrieval_latency_s),
            ("embed_price", self.embed_price),
        ];
        for (name, v) in reals {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be a non-negative number")));
            }
        }
        Ok(())
    }

    fn token_cost(&self, input: usize, output: usize) -> f64 {
        input as f64 / 1000.0 * self.price_in + output as f64 / 1000.0 * self.price_out
    }

    fn token_latency(&self, input: usize, output: usize) -> f64 {
        input as f64 * self.latency_per_input_token_s + output as f64 * self.latency_per_output_token_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    FullContext,
    Retrieval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub input_tokens: usize,
    pub cost: f64,
    pub latency_s: f64,
    pub feasible: bool,
}

/// Full context sends every page plus the question; retrieval sends a fixed
/// context budget plus the question, whatever the corpus size.
pub fn cost_latency(pages: usize, mode: CostMode, cfg: &CostModelConfig) -> CostEstimate {
    match mode {
        CostMode::FullContext => {
            let input = pages * cfg.tokens_per_page + cfg.question_tokens;
            CostEstimate {
                input_tokens: input,
                cost: cfg.token_cost(input, cfg.answer_tokens),
                latency_s: cfg.fixed_latency_s + cfg.token_latency(input, cfg.answer_tokens),
                feasible: input <= cfg.context_window_tokens,
            }
        }
        CostMode::Retrieval => {
            let input = cfg.retrieval_context_tokens + cfg.question_tokens;
            CostEstimate {
                input_tokens: input,
                cost: cfg.retrieval_fixed_cost + cfg.token_cost(input, cfg.answer_tokens),
                latency_s: cfg.fixed_latency_s + cfg.retrieval_latency_s + cfg.token_latency(input, cfg.answer_tokens),
                feasible: input <= cfg.context_window_tokens,
            }
        }
    }
}

/// Largest page count whose full text still fits the window, if any.
pub fn largest_feasible_pages(cfg: &CostModelConfig) -> Option<usize> {
    let room = cfg.context_window_tokens.checked_sub(cfg.question_tokens)?;
    let pages = room / cfg.tokens_per_page;
    (pages >= 1).then_some(pages)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingCost {
    pub doc_id: String,
    pub chunks: usize,
    pub images: usize,
    pub contextualization_input_tokens: usize,
    pub contextualization: f64,
    pub captioning: f64,
    pub embedding_tokens: usize,
    pub embedding: f64,
    pub total: f64,
}

/// One-time ingest cost of a bundle: a contextualization call per chunk
/// (title, preceding chunk and chunk in; a blurb out), a captioning call
/// per image, and embedding every record.
pub fn preprocessing_cost(
    bundle: &DocumentBundle,
    chunking: &ChunkConfig,
    cfg: &CostModelConfig,
) -> Result<PreprocessingCost> {
    let chunks = chunk_document(bundle, chunking)?;
    let title_tokens = estimate_tokens(&bundle.title);
    let mut ctx_in = 0;
    let mut embed_tokens = 0;
    for (i, c) in chunks.iter().enumerate() {
        let chunk_tokens = estimate_tokens(&c.text);
        let prev_tokens = if i > 0 { estimate_tokens(&chunks[i - 1].text) } else { 0 };
        ctx_in += cfg.prompt_overhead_tokens + title_tokens + prev_tokens + chunk_tokens;
        embed_tokens += chunk_tokens + cfg.blurb_tokens;
    }
    let images = bundle.images.len();
    embed_tokens += images * cfg.image_output_tokens;

    let contextualization = cfg.token_cost(ctx_in, chunks.len() * cfg.blurb_tokens);
    let captioning = cfg.token_cost(
        images * (cfg.image_input_tokens + cfg.prompt_overhead_tokens),
        images * cfg.image_output_tokens,
    );
    let embedding = embed_tokens as f64 / 1000.0 * cfg.embed_price;
    Ok(PreprocessingCost {
        doc_id: bundle.doc_id.clone(),
        chunks: chunks.len(),
        images,
        contextualization_input_tokens: ctx_in,
        contextualization,
        captioning,
        embedding_tokens: embed_tokens,
        embedding,
        total: contextualization + captioning + embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        CostModelConfig::default().validate().unwrap();
        let bad = CostModelConfig {
            tokens_per_page: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_boundary() {
        let cfg = CostModelConfig::default();
        // (140000 - 50) / 1400 = 99.96
        assert_eq!(largest_feasible_pages(&cfg), Some(99));
        assert!(cost_latency(99, CostMode::FullContext, &cfg).feasible);
        assert!(!cost_latency(100, CostMode::FullContext, &cfg).feasible);
    }

    #[test]
    fn hand_computed_point() {
        let cfg = CostModelConfig::default();
        let e = cost_latency(10, CostMode::FullContext, &cfg);
        // 14050 in, 250 out
        assert_eq!(e.input_tokens, 14_050);
        assert!((e.cost - (14.05 * 0.0025 + 0.25 * 0.01)).abs() < 1e-12);
        assert!((e.latency_s - (0.4 + 14_050.0 * 3e-5 + 250.0 * 0.0125)).abs() < 1e-12);
    }

    #[test]
    fn zero_prices_cost_nothing() {
        let cfg = CostModelConfig {
            price_in: 0.0,
            price_out: 0.0,
            embed_price: 0.0,
            ..Default::default()
        };
        let bundle = DocumentBundle {
            doc_id: "d".into(),
            title: "T".into(),
            source_uri: String::new(),
            pages: vec!["some text".into()],
            images: vec![],
            fetched_at: chrono::Utc::now(),
        };
        let p = preprocessing_cost(&bundle, &ChunkConfig::default(), &cfg).unwrap();
        assert_eq!(p.total, 0.0);
        assert_eq!(p.chunks, 1);
    }
}
