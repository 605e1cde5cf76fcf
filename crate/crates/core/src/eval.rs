//! Dataset-driven evaluation: citation precision/recall/F1 per modality
//! class and judged answer correctness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{Limits, Transcript};
use crate::error::{io, Error, Result};
use crate::index::{tokenize, Modality};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest};
use crate::retrieve::{answer_with_context, assemble_context, SearchEngine};
use crate::tools::{citation_tags, ToolContext};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityClass {
    Text,
    Image,
    Equation,
    Overall,
}

impl ModalityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Image => "image",
            Self::Equation => "equation",
            Self::Overall => "overall",
        }
    }

    /// The metric each class is reported by in the headline table.
    pub fn headline_metric(self) -> &'static str {
        match self {
            Self::Text => "f1",
            Self::Image => "precision",
            Self::Equation => "recall",
            Self::Overall => "recall",
        }
    }
}

/// Canonical citation ids: document ids for text, `<doc_id>/<image_id>` for
/// figures, free-form ids such as `eq:3@doc` for equations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CitationSets {
    pub texts: BTreeSet<String>,
    pub images: BTreeSet<String>,
    pub equations: BTreeSet<String>,
}

impl CitationSets {
    pub fn is_empty(&self) -> bool {
        self.texts.is_empty() && self.images.is_empty() && self.equations.is_empty()
    }

    /// All three sets in one id space.
    pub fn union(&self) -> BTreeSet<String> {
        let mut all = BTreeSet::new();
        all.extend(self.texts.iter().map(|t| format!("text:{t}")));
        all.extend(self.images.iter().map(|t| format!("image:{t}")));
        all.extend(self.equations.iter().map(|t| format!("equation:{t}")));
        all
    }

    pub fn for_class(&self, class: ModalityClass) -> BTreeSet<String> {
        match class {
            ModalityClass::Text => self.texts.clone(),
            ModalityClass::Image => self.images.clone(),
            ModalityClass::Equation => self.equations.clone(),
            ModalityClass::Overall => self.union(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub qid: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_citations: CitationSets,
    pub modality_class: ModalityClass,
}

impl QaItem {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("qid", &self.qid),
            ("question", &self.question),
            ("gold_answer", &self.gold_answer),
        ] {
            if v.trim().is_empty() {
                return Err(Error::MissingField(field.into()));
            }
        }
        let g = &self.gold_citations;
        let consistent = match self.modality_class {
            ModalityClass::Text => !g.texts.is_empty(),
            ModalityClass::Image => !g.images.is_empty(),
            ModalityClass::Equation => !g.equations.is_empty(),
            ModalityClass::Overall => true,
        };
        if !consistent {
            return Err(Error::InvalidField {
                field: "gold_citations".into(),
                reason: format!(
                    "{} item without {} citations",
                    self.modality_class.as_str(),
                    self.modality_class.as_str()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub name: String,
    pub items: Vec<QaItem>,
    pub skipped: Vec<SkippedItem>,
}

/// Accepts `{"name": .., "items": [..]}` or a bare array. Items that do not
/// parse or break the class invariant are set aside, not fatal.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let v: Value = serde_json::from_str(text)?;
    let (name, raw_items) = match v {
        Value::Array(items) => (String::new(), items),
        Value::Object(mut o) => {
            let name = o.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
            match o.remove("items") {
                Some(Value::Array(items)) => (name, items),
                _ => return Err(Error::MissingField("items".into())),
            }
        }
        _ => {
            return Err(Error::InvalidField {
                field: "dataset".into(),
                reason: "expected an object or an array".into(),
            })
        }
    };
    let mut ds = Dataset {
        name,
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    for (index, raw) in raw_items.into_iter().enumerate() {
        let qid = raw.get("qid").and_then(Value::as_str).map(str::to_string);
        let parsed = serde_json::from_value::<QaItem>(raw)
            .map_err(|e| e.to_string())
            .and_then(|item| item.validate().map(|_| item).map_err(|e| e.to_string()))
            .and_then(|item| {
                if seen.insert(item.qid.clone()) {
                    Ok(item)
                } else {
                    Err(format!("duplicate qid {}", item.qid))
                }
            });
        match parsed {
            Ok(item) => ds.items.push(item),
            Err(reason) => ds.skipped.push(SkippedItem { index, qid, reason }),
        }
    }
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predictions: precision undefined, reported as 0.
    pub precision_undefined: bool,
    /// No gold ids: recall undefined, reported as 0.
    pub recall_undefined: bool,
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn score_sets(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> SetScore {
    let common = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        common / predicted.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        common / gold.len() as f64
    };
    SetScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
        precision_undefined: predicted.is_empty(),
        recall_undefined: gold.is_empty(),
    }
}

/// Scores every modality of one prediction against its gold sets.
pub fn score_citations(predicted: &CitationSets, gold: &CitationSets) -> BTreeMap<ModalityClass, SetScore> {
    [
        ModalityClass::Text,
        ModalityClass::Image,
        ModalityClass::Equation,
        ModalityClass::Overall,
    ]
    .into_iter()
    .map(|c| (c, score_sets(&predicted.for_class(c), &gold.for_class(c))))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    #[serde(default)]
    pub citations: CitationSets,
}

pub trait EvalEngine: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, item: &QaItem) -> Result<Prediction>;
}

pub trait AnswerJudge: Send + Sync {
    fn name(&self) -> &str;
    fn judge(&self, item: &QaItem, answer: &str) -> Result<bool>;
}

fn normalize(s: &str) -> String {
    tokenize(s).join(" ")
}

pub struct ExactMatchJudge;

impl AnswerJudge for ExactMatchJudge {
    fn name(&self) -> &str {
        "exact_match"
    }

    fn judge(&self, item: &QaItem, answer: &str) -> Result<bool> {
        Ok(normalize(&item.gold_answer) == normalize(answer))
    }
}

/// Share of distinct gold-answer tokens present in the answer.
pub fn token_overlap(gold: &str, answer: &str) -> f64 {
    let g: BTreeSet<String> = tokenize(gold).into_iter().collect();
    if g.is_empty() {
        return 0.0;
    }
    let a: BTreeSet<String> = tokenize(answer).into_iter().collect();
    g.intersection(&a).count() as f64 / g.len() as f64
}

pub struct TokenOverlapJudge {
    pub threshold: f64,
}

impl Default for TokenOverlapJudge {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_OVERLAP_THRESHOLD,
        }
    }
}

impl AnswerJudge for TokenOverlapJudge {
    fn name(&self) -> &str {
        "token_overlap"
    }

    fn judge(&self, item: &QaItem, answer: &str) -> Result<bool> {
        Ok(token_overlap(&item.gold_answer, answer) >= self.threshold)
    }
}

/// Asks a model for a YES/NO verdict; offline it defers to token overlap.
pub struct LlmJudge {
    pub llm: Arc<dyn ChatProvider>,
    pub threshold: f64,
}

impl AnswerJudge for LlmJudge {
    fn name(&self) -> &str {
        "llm"
    }

    fn judge(&self, item: &QaItem, answer: &str) -> Result<bool> {
        let offline = token_overlap(&item.gold_answer, answer) >= self.threshold;
        let request = ChatRequest::new(vec![
            ChatMessage::system("You grade answers against a reference. Reply YES if the answer agrees with the reference, otherwise NO."),
            ChatMessage::user(format!(
                "Question: {}\nReference: {}\nAnswer: {answer}",
                item.question, item.gold_answer
            )),
        ])
        .with_fallback(if offline { "YES" } else { "NO" });
        let verdict = self.llm.complete(&request)?;
        Ok(verdict.trim_start().to_ascii_uppercase().starts_with("YES"))
    }
}

/// Equation ids (`eq:<label>@<doc>`) mentioned in free text.
pub fn equation_ids(text: &str) -> BTreeSet<String> {
    text.split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '(' | ')' | '[' | ']'))
        .map(|t| t.trim_end_matches(['.', ':']))
        .filter(|t| t.starts_with("eq:") && t.contains('@'))
        .map(str::to_string)
        .collect()
}

pub fn image_key(doc_id: &str, image_id: &str) -> String {
    format!("{doc_id}/{image_id}")
}

/// Canonical sets from an agent transcript.
pub fn transcript_citations(t: &Transcript) -> CitationSets {
    let mut sets = CitationSets::default();
    for c in &t.citations {
        match c.modality {
            Modality::Text => {
                sets.texts.insert(c.doc_id.clone());
            }
            Modality::Image => {
                if let Some(id) = &c.image_id {
                    sets.images.insert(image_key(&c.doc_id, id));
                }
            }
        }
    }
    sets.equations = equation_ids(&t.final_answer);
    sets
}

/// Single-shot retrieval + answer; cites the context entries the answer tags.
pub struct RagEngine {
    pub engine: SearchEngine,
    pub llm: Arc<dyn ChatProvider>,
    pub context_tokens: usize,
}

impl EvalEngine for RagEngine {
    fn name(&self) -> &str {
        "rag"
    }

    fn predict(&self, item: &QaItem) -> Result<Prediction> {
        let outcome = self.engine.search(&item.question)?;
        let block = assemble_context(&outcome.hits, self.context_tokens);
        let answer = answer_with_context(&item.question, &block, self.llm.as_ref())?;
        let mut citations = CitationSets::default();
        for n in citation_tags(&answer) {
            let Some(e) = block.entries.get(n - 1) else { continue };
            match e.modality {
                Modality::Text => {
                    citations.texts.insert(e.doc_id.clone());
                }
                Modality::Image => {
                    if let Some(id) = &e.image_id {
                        citations.images.insert(image_key(&e.doc_id, id));
                    }
                }
            }
        }
        citations.equations = equation_ids(&answer);
        Ok(Prediction { answer, citations })
    }
}

pub struct AgentEngine {
    pub tools: ToolContext,
    pub llm: Arc<dyn ChatProvider>,
    pub limits: Limits,
}

impl EvalEngine for AgentEngine {
    fn name(&self) -> &str {
        "agent"
    }

    fn predict(&self, item: &QaItem) -> Result<Prediction> {
        let t = self
            .tools
            .run_agent(&item.question, self.llm.as_ref(), &self.limits, &mut |_| {});
        if let Some(err) = &t.error {
            return Err(Error::InvalidField {
                field: "session".into(),
                reason: err.clone(),
            });
        }
        Ok(Prediction {
            citations: transcript_citations(&t),
            answer: t.final_answer,
        })
    }
}

/// Replays stored predictions keyed by qid.
pub struct RecordedEngine {
    pub predictions: BTreeMap<String, Prediction>,
}

impl RecordedEngine {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self {
            predictions: serde_json::from_str(text)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| io(path, e))?)
    }
}

impl EvalEngine for RecordedEngine {
    fn name(&self) -> &str {
        "recorded"
    }

    fn predict(&self, item: &QaItem) -> Result<Prediction> {
        self.predictions
            .get(&item.qid)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("prediction for {}", item.qid)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub qid: String,
    pub modality_class: ModalityClass,
    pub answer: String,
    pub judged_correct: bool,
    /// Citation score on the item's own class.
    pub citation: SetScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub count: usize,
    /// Mean per-item citation precision, recall and the harmonic mean of
    /// those two means.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: usize,
    /// Judged-correct answers over items in the class.
    pub answer_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub dataset: String,
    pub engine: String,
    pub judge: String,
    pub items_scored: usize,
    pub skipped: Vec<SkippedItem>,
    pub failures: usize,
    pub per_class: BTreeMap<ModalityClass, ClassMetrics>,
    /// Table pairing: text F1, image precision, equation recall, and for the
    /// overall class the judged-answer recall.
    pub headline: BTreeMap<ModalityClass, Headline>,
    /// Judged-correct answers over all scored items.
    pub overall_recall: f64,
    pub items: Vec<ItemResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every item; an engine failure counts as an incorrect, uncited
/// answer and is recorded on the item.
pub fn run_eval(dataset: &Dataset, engine: &dyn EvalEngine, judge: &dyn AnswerJudge) -> MetricReport {
    let mut items = Vec::with_capacity(dataset.items.len());
    for item in &dataset.items {
        let (prediction, error) = match engine.predict(item) {
            Ok(p) => (p, None),
            Err(e) => (
                Prediction {
                    answer: String::new(),
                    citations: CitationSets::default(),
                },
                Some(e.to_string()),
            ),
        };
        let judged = if error.is_some() {
            Ok(false)
        } else {
            judge.judge(item, &prediction.answer)
        };
        let (judged_correct, error) = match judged {
            Ok(v) => (v, error),
            Err(e) => (false, Some(format!("judge: {e}"))),
        };
        let class = item.modality_class;
        let citation = score_sets(
            &prediction.citations.for_class(class),
            &item.gold_citations.for_class(class),
        );
        items.push(ItemResult {
            qid: item.qid.clone(),
            modality_class: class,
            answer: prediction.answer,
            judged_correct,
            citation,
            error,
        });
    }
    summarize(dataset, engine.name(), judge.name(), items)
}

pub fn summarize(dataset: &Dataset, engine: &str, judge: &str, items: Vec<ItemResult>) -> MetricReport {
    let mut per_class = BTreeMap::new();
    let mut headline = BTreeMap::new();
    for class in [
        ModalityClass::Text,
        ModalityClass::Image,
        ModalityClass::Equation,
        ModalityClass::Overall,
    ] {
        let of: Vec<&ItemResult> = items.iter().filter(|i| i.modality_class == class).collect();
        if of.is_empty() {
            continue;
        }
        let precision = mean(of.iter().map(|i| i.citation.precision));
        let recall = mean(of.iter().map(|i| i.citation.recall));
        let m = ClassMetrics {
            count: of.len(),
            precision,
            recall,
            f1: harmonic(precision, recall),
            precision_undefined: of.iter().filter(|i| i.citation.precision_undefined).count(),
            answer_recall: of.iter().filter(|i| i.judged_correct).count() as f64 / of.len() as f64,
        };
        let value = match class {
            ModalityClass::Text => m.f1,
            ModalityClass::Image => m.precision,
            ModalityClass::Equation => m.recall,
            ModalityClass::Overall => m.answer_recall,
        };
        headline.insert(
            class,
            Headline {
                metric: class.headline_metric().to_string(),
                value,
            },
        );
        per_class.insert(class, m);
    }
    let overall_recall = if items.is_empty() {
        0.0
    } else {
        items.iter().filter(|i| i.judged_correct).count() as f64 / items.len() as f64
    };
    MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        engine: engine.to_string(),
        judge: judge.to_string(),
        items_scored: items.len(),
        skipped: dataset.skipped.clone(),
        failures: items.iter().filter(|i| i.error.is_some()).count(),
        per_class,
        headline,
        overall_recall,
        items,
    }
}
