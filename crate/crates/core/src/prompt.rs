//! Prompt generation and ranking.
//!
//! Category lists and sentence templates are combined into prompts, each
//! prompt is scored for coherence, specificity and creativity by an
//! [`Evaluator`], and the ranked list is written as CSV.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("category list `{0}` is empty")]
    EmptyCategory(String),
    #[error("unfilled placeholder [{0}]")]
    UnfilledPlaceholder(String),
    #[error("invalid template `{id}`: {message}")]
    InvalidTemplate { id: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed file {path}: {message}")]
    Parse { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PromptError {
    PromptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Template variables, in canonical slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Object,
    Material,
    Color,
    Theme,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Object, Slot::Material, Slot::Color, Slot::Theme];

    pub fn placeholder(self) -> &'static str {
        match self {
            Slot::Object => "Object",
            Slot::Material => "Material",
            Slot::Color => "Color",
            Slot::Theme => "High-level Theme",
        }
    }

    pub fn from_placeholder(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.placeholder() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Object => "object",
            Slot::Material => "material",
            Slot::Color => "color",
            Slot::Theme => "theme",
        }
    }
}

pub type Slots = BTreeMap<Slot, String>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryLists {
    pub objects: Vec<String>,
    pub materials: Vec<String>,
    pub colors: Vec<String>,
    pub themes: Vec<String>,
}

impl CategoryLists {
    pub fn list(&self, slot: Slot) -> &[String] {
        match slot {
            Slot::Object => &self.objects,
            Slot::Material => &self.materials,
            Slot::Color => &self.colors,
            Slot::Theme => &self.themes,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Parse {
            path: "<categories>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text).map_err(|e| PromptError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// The shipped lists: 12 objects and 10 each of materials, colors and themes.
    pub fn builtin() -> Self {
        Self::from_toml(include_str!("../data/categories.toml")).expect("shipped categories parse")
    }
}

/// Trims entries, drops empty ones and removes case-insensitive duplicates
/// keeping the first occurrence.
pub fn dedupe_validate(lists: &CategoryLists) -> Result<CategoryLists, PromptError> {
    let clean = |name: &str, list: &[String]| -> Result<Vec<String>, PromptError> {
        let mut seen = HashSet::new();
        let out: Vec<String> = list
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
            .map(str::to_string)
            .collect();
        if out.is_empty() {
            return Err(PromptError::EmptyCategory(name.into()));
        }
        Ok(out)
    };
    Ok(CategoryLists {
        objects: clean("objects", &lists.objects)?,
        materials: clean("materials", &lists.materials)?,
        colors: clean("colors", &lists.colors)?,
        themes: clean("themes", &lists.themes)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

/// Bracketed names in order of appearance.
fn bracketed(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']') else { break };
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    out
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, PromptError> {
        let t = PromptTemplate { id: id.into(), text: text.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let names = bracketed(&self.text);
        if names.is_empty() {
            return Err(PromptError::InvalidTemplate {
                id: self.id.clone(),
                message: "no placeholder".into(),
            });
        }
        if let Some(bad) = names.iter().find(|n| Slot::from_placeholder(n).is_none()) {
            return Err(PromptError::InvalidTemplate {
                id: self.id.clone(),
                message: format!("unknown placeholder [{bad}]"),
            });
        }
        Ok(())
    }

    /// Distinct slots referenced, in canonical order.
    pub fn slots(&self) -> Vec<Slot> {
        let used: HashSet<Slot> = bracketed(&self.text).into_iter().filter_map(Slot::from_placeholder).collect();
        Slot::ALL.into_iter().filter(|s| used.contains(s)).collect()
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    template: Vec<PromptTemplate>,
}

pub fn templates_from_toml(text: &str, origin: &str) -> Result<Vec<PromptTemplate>, PromptError> {
    let f: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Parse {
        path: origin.into(),
        message: e.to_string(),
    })?;
    for t in &f.template {
        t.validate()?;
    }
    Ok(f.template)
}

pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    templates_from_toml(&text, &path.display().to_string())
}

pub fn builtin_templates() -> Vec<PromptTemplate> {
    templates_from_toml(include_str!("../data/templates.toml"), "<builtin>").expect("shipped templates parse")
}

pub const CONTEXT_SUFFIX: &str = " in an empty white background and in the middle.";

/// Substitutes every placeholder and appends the framing suffix unless the
/// text already carries it. A trailing period is dropped before appending.
pub fn instantiate(template: &str, slots: &Slots) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + CONTEXT_SUFFIX.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']') else { break };
        let name = &rest[open + 1..open + close];
        out.push_str(&rest[..open]);
        match Slot::from_placeholder(name) {
            Some(slot) => out.push_str(slots.get(&slot).ok_or_else(|| PromptError::UnfilledPlaceholder(name.into()))?),
            None => return Err(PromptError::UnfilledPlaceholder(name.into())),
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    if !out.contains(CONTEXT_SUFFIX.trim_start().trim_end_matches('.')) {
        let trimmed = out.trim_end();
        let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
        out = format!("{trimmed}{CONTEXT_SUFFIX}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub coherence: f64,
    pub specificity: f64,
    pub creativity: f64,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub prompt: String,
    pub template_id: String,
    pub slots: Slots,
    pub scores: Option<Scores>,
    pub final_score: Option<f64>,
    /// Set when scoring failed after all retries.
    pub failure: Option<String>,
}

impl PromptRecord {
    pub fn unscored(prompt: String, template_id: String, slots: Slots) -> Self {
        PromptRecord {
            prompt,
            template_id,
            slots,
            scores: None,
            final_score: None,
            failure: None,
        }
    }
}

/// Mean of the three subscores rounded to one decimal.
pub fn final_score(coherence: f64, specificity: f64, creativity: f64) -> f64 {
    ((coherence + specificity + creativity) / 3.0 * 10.0).round() / 10.0
}

/// Number of prompts the template can produce from the lists.
pub fn combination_count(template: &PromptTemplate, lists: &CategoryLists) -> usize {
    template.slots().iter().map(|&s| lists.list(s).len()).product()
}

/// Samples up to `max_count` distinct prompts uniformly without replacement
/// from the union of every template's slot-restricted cross product.
pub fn enumerate_prompts(lists: &CategoryLists, templates: &[PromptTemplate], max_count: usize, seed: u64) -> Result<Vec<PromptRecord>, PromptError> {
    if max_count == 0 {
        return Err(PromptError::InvalidArgument("max_count must be positive".into()));
    }
    if templates.is_empty() {
        return Err(PromptError::InvalidArgument("at least one template is required".into()));
    }
    for t in templates {
        t.validate()?;
    }
    let counts: Vec<usize> = templates.iter().map(|t| combination_count(t, lists)).collect();
    let total: usize = counts.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, max_count.min(total));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(picks.len());
    for mut idx in picks.iter() {
        let mut t = 0;
        while idx >= counts[t] {
            idx -= counts[t];
            t += 1;
        }
        let template = &templates[t];
        let mut slots = Slots::new();
        for slot in template.slots().into_iter().rev() {
            let list = lists.list(slot);
            slots.insert(slot, list[idx % list.len()].clone());
            idx /= list.len();
        }
        let prompt = instantiate(&template.text, &slots)?;
        if seen.insert(prompt.clone()) {
            out.push(PromptRecord::unscored(prompt, template.id.clone(), slots));
        }
    }
    Ok(out)
}

/// Scores one prompt. `prepare` sees the whole batch first, so batch-relative
/// criteria can be computed.
pub trait Evaluator: Sync {
    fn prepare(&mut self, _batch: &[PromptRecord]) {}
    fn evaluate(&self, record: &PromptRecord) -> Result<Scores, PromptError>;
}

pub const MAX_RETRIES: usize = 3;

/// Attaches scores to every record. A record whose evaluation still fails
/// after [`MAX_RETRIES`] retries keeps no scores and carries a failure note.
pub fn score_prompts<E: Evaluator>(records: &[PromptRecord], evaluator: &mut E) -> Vec<PromptRecord> {
    evaluator.prepare(records);
    let ev = &*evaluator;
    records
        .par_iter()
        .map(|r| {
            let mut out = r.clone();
            let mut last_err = String::new();
            for attempt in 0..=MAX_RETRIES {
                match ev.evaluate(r).and_then(check_scores) {
                    Ok(s) => {
                        out.final_score = Some(final_score(s.coherence, s.specificity, s.creativity));
                        out.scores = Some(s);
                        out.failure = None;
                        return out;
                    }
                    Err(e) => {
                        log::warn!("scoring attempt {} for {:?} failed: {e}", attempt + 1, r.prompt);
                        last_err = e.to_string();
                    }
                }
            }
            out.failure = Some(format!("scoring failed after {} attempts: {last_err}", MAX_RETRIES + 1));
            out
        })
        .collect()
}

fn check_scores(s: Scores) -> Result<Scores, PromptError> {
    for (name, v) in [("coherence", s.coherence), ("specificity", s.specificity), ("creativity", s.creativity)] {
        if !(1.0..=10.0).contains(&v) {
            return Err(PromptError::Evaluator(format!("{name} score {v} outside [1,10]")));
        }
    }
    Ok(s)
}

/// Scored records by descending final score, ties by prompt; failed
/// records follow, ordered by prompt.
pub fn rank(records: &[PromptRecord]) -> Vec<PromptRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| match (a.final_score, b.final_score) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.prompt.cmp(&b.prompt)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.prompt.cmp(&b.prompt),
    });
    out
}

pub const CSV_HEADER: [&str; 11] = [
    "rank",
    "prompt",
    "object",
    "material",
    "color",
    "theme",
    "coherence",
    "specificity",
    "creativity",
    "final_score",
    "explanation",
];

/// One parsed CSV row. Empty cells become `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub rank: Option<usize>,
    pub prompt: String,
    pub object: Option<String>,
    pub material: Option<String>,
    pub color: Option<String>,
    pub theme: Option<String>,
    pub coherence: Option<f64>,
    pub specificity: Option<f64>,
    pub creativity: Option<f64>,
    pub final_score: Option<f64>,
    pub explanation: String,
}

impl CsvRow {
    pub fn slots(&self) -> Slots {
        let mut s = Slots::new();
        for (slot, v) in [(Slot::Object, &self.object), (Slot::Material, &self.material), (Slot::Color, &self.color), (Slot::Theme, &self.theme)] {
            if let Some(v) = v {
                s.insert(slot, v.clone());
            }
        }
        s
    }
}

pub fn csv_rows(records: &[PromptRecord]) -> Vec<CsvRow> {
    let mut next_rank = 1;
    rank(records)
        .into_iter()
        .map(|r| {
            let rank = r.final_score.map(|_| {
                next_rank += 1;
                next_rank - 1
            });
            let s = r.scores.as_ref();
            CsvRow {
                rank,
                object: r.slots.get(&Slot::Object).cloned(),
                material: r.slots.get(&Slot::Material).cloned(),
                color: r.slots.get(&Slot::Color).cloned(),
                theme: r.slots.get(&Slot::Theme).cloned(),
                coherence: s.map(|s| s.coherence),
                specificity: s.map(|s| s.specificity),
                creativity: s.map(|s| s.creativity),
                final_score: r.final_score,
                explanation: match (&r.failure, s) {
                    (Some(f), _) => f.clone(),
                    (None, Some(s)) => s.explanation.clone(),
                    (None, None) => String::new(),
                },
                prompt: r.prompt,
            }
        })
        .collect()
}

/// Writes the ranked CSV with RFC 4180 quoting.
pub fn rank_and_export(records: &[PromptRecord], path: &Path) -> Result<Vec<CsvRow>, PromptError> {
    let rows = csv_rows(records);
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| io_err(path, e))?;
    let opt = |v: &Option<String>| v.clone().unwrap_or_default();
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.rank.map(|x| x.to_string()).unwrap_or_default(),
            r.prompt.clone(),
            opt(&r.object),
            opt(&r.material),
            opt(&r.color),
            opt(&r.theme),
            num(r.coherence),
            num(r.specificity),
            num(r.creativity),
            r.final_score.map(|x| format!("{x:.1}")).unwrap_or_default(),
            r.explanation.clone(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(rows)
}

pub fn read_ranked_csv(path: &Path) -> Result<Vec<CsvRow>, PromptError> {
    let bad = |m: String| PromptError::Parse {
        path: path.display().to_string(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let text = |i: usize| rec.get(i).unwrap_or("").to_string();
        let opt = |i: usize| Some(text(i)).filter(|s| !s.is_empty());
        let num = |i: usize| -> Result<Option<f64>, PromptError> { opt(i).map(|s| s.parse::<f64>().map_err(|e| bad(format!("column {i}: {e}")))).transpose() };
        rows.push(CsvRow {
            rank: opt(0).map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string()))).transpose()?,
            prompt: text(1),
            object: opt(2),
            material: opt(3),
            color: opt(4),
            theme: opt(5),
            coherence: num(6)?,
            specificity: num(7)?,
            creativity: num(8)?,
            final_score: num(9)?,
            explanation: text(10),
        });
    }
    Ok(rows)
}

/// Object × material plausibility, 1–10, keyed by lowercase names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlausibilityTable {
    scores: HashMap<String, HashMap<String, f64>>,
}

impl PlausibilityTable {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let raw: HashMap<String, HashMap<String, f64>> = toml::from_str(text).map_err(|e| PromptError::Parse {
            path: "<plausibility>".into(),
            message: e.to_string(),
        })?;
        let scores = raw
            .into_iter()
            .map(|(o, m)| (o.to_lowercase(), m.into_iter().map(|(k, v)| (k.to_lowercase(), v.clamp(1.0, 10.0))).collect()))
            .collect();
        Ok(PlausibilityTable { scores })
    }

    pub fn builtin() -> Self {
        Self::from_toml(include_str!("../data/plausibility.toml")).expect("shipped plausibility table parses")
    }

    pub fn get(&self, object: &str, material: &str) -> Option<f64> {
        self.scores.get(&object.to_lowercase())?.get(&material.to_lowercase()).copied()
    }
}

pub const NEUTRAL_SCORE: f64 = 5.0;

/// Specificity on the 1–10 scale from the number of filled slots (0–4),
/// rounded up to a whole score.
pub fn specificity_score(filled: usize) -> f64 {
    (1.0 + 9.0 * filled.min(4) as f64 / 4.0).ceil()
}

/// Deterministic stand-in for the language-model judge.
///
/// Coherence is the object × material table entry. Specificity follows
/// [`specificity_score`]. Creativity is `1 + 9·(1 − f)` rounded, with `f`
/// the mean share of batch records that use each of the prompt's slot
/// values. Unknown values score 5 on the affected axis.
#[derive(Debug, Clone, Default)]
pub struct HeuristicEvaluator {
    pub table: PlausibilityTable,
    frequency: HashMap<(Slot, String), usize>,
    batch_size: usize,
}

impl HeuristicEvaluator {
    pub fn new(table: PlausibilityTable) -> Self {
        HeuristicEvaluator {
            table,
            frequency: HashMap::new(),
            batch_size: 0,
        }
    }
}

impl Evaluator for HeuristicEvaluator {
    fn prepare(&mut self, batch: &[PromptRecord]) {
        self.frequency.clear();
        self.batch_size = batch.len();
        for r in batch {
            for (&slot, v) in &r.slots {
                *self.frequency.entry((slot, v.to_lowercase())).or_default() += 1;
            }
        }
    }

    fn evaluate(&self, record: &PromptRecord) -> Result<Scores, PromptError> {
        let object = record.slots.get(&Slot::Object);
        let material = record.slots.get(&Slot::Material);
        let coherence = match (object, material) {
            (Some(o), Some(m)) => self.table.get(o, m).unwrap_or(NEUTRAL_SCORE),
            _ => NEUTRAL_SCORE,
        };
        let specificity = specificity_score(record.slots.len());
        let shares: Vec<f64> = record
            .slots
            .iter()
            .filter_map(|(&s, v)| self.frequency.get(&(s, v.to_lowercase())).map(|&c| c as f64 / self.batch_size.max(1) as f64))
            .collect();
        let creativity = if shares.is_empty() {
            NEUTRAL_SCORE
        } else {
            let f = shares.iter().sum::<f64>() / shares.len() as f64;
            (1.0 + 9.0 * (1.0 - f)).round().clamp(1.0, 10.0)
        };
        let explanation = format!(
            "Coherence {coherence}/10: {} with {}. Specificity {specificity}/10: {} of 4 details given. Creativity {creativity}/10.",
            object.map_or("no object", |s| s.as_str()),
            material.map_or("no material", |s| s.as_str()),
            record.slots.len()
        );
        Ok(Scores {
            coherence,
            specificity,
            creativity,
            explanation,
        })
    }
}

/// Steps 1 and 3 of prompt creation: produce category lists and templates.
pub trait Generator {
    fn categories(&self) -> Result<CategoryLists, PromptError>;
    fn templates(&self) -> Result<Vec<PromptTemplate>, PromptError>;
}

/// Returns the shipped lists and templates.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinGenerator;

impl Generator for BuiltinGenerator {
    fn categories(&self) -> Result<CategoryLists, PromptError> {
        Ok(CategoryLists::builtin())
    }

    fn templates(&self) -> Result<Vec<PromptTemplate>, PromptError> {
        Ok(builtin_templates())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

pub const DEFAULT_TOKEN_ENV: &str = "ROOMFORGE_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Environment variable that holds the bearer token, if any.
    pub token_env: String,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            timeout_secs: 60,
        }
    }
}

const SCORING_INSTRUCTIONS: &str = "Rate the following text-to-3D prompt for a room asset on three 1-10 scales: \
coherence (does the object-material-color combination make sense?), specificity (clarity of design details) and \
creativity (visually compelling design elements). Reply with only a JSON object with keys coherence, specificity, \
creativity and explanation.";

const GENERATION_INSTRUCTIONS: &str = "Reply with only TOML.";

/// Client for an HTTP JSON chat endpoint: POST `{messages:[{role,content}]}`,
/// response `{text}`.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    config: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl RemoteLlm {
    pub fn new(config: RemoteConfig) -> Result<Self, PromptError> {
        if config.endpoint.is_empty() {
            return Err(PromptError::InvalidArgument("remote endpoint is not configured".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(RemoteLlm { config, agent, token })
    }

    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, PromptError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(ChatRequest { messages })
            .map_err(|e| PromptError::Evaluator(format!("request to {} failed: {e}", self.config.endpoint)))?;
        let body: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| PromptError::Evaluator(format!("bad response body: {e}")))?;
        Ok(body.text)
    }

    fn ask(&self, system: &str, user: String) -> Result<String, PromptError> {
        self.complete(vec![
            ChatMessage {
                role: "system".into(),
                content: system.into(),
            },
            ChatMessage { role: "user".into(), content: user },
        ])
    }
}

/// Extracts the first `{...}` span, tolerating prose or code fences around it.
fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

impl Evaluator for RemoteLlm {
    fn evaluate(&self, record: &PromptRecord) -> Result<Scores, PromptError> {
        let text = self.ask(SCORING_INSTRUCTIONS, record.prompt.clone())?;
        let obj = json_object(&text).ok_or_else(|| PromptError::Evaluator(format!("no JSON object in reply: {text:?}")))?;
        serde_json::from_str(obj).map_err(|e| PromptError::Evaluator(format!("unparseable scores: {e}")))
    }
}

impl Generator for RemoteLlm {
    fn categories(&self) -> Result<CategoryLists, PromptError> {
        let text = self.ask(
            GENERATION_INSTRUCTIONS,
            "Create 10-20 diverse and realistic items for each of these indoor-asset categories: objects, materials, colors, \
             high-level themes. Use TOML arrays named objects, materials, colors and themes."
                .into(),
        )?;
        dedupe_validate(&CategoryLists::from_toml(&text)?)
    }

    fn templates(&self) -> Result<Vec<PromptTemplate>, PromptError> {
        let text = self.ask(
            GENERATION_INSTRUCTIONS,
            "Write 5-10 varied sentence templates for text-to-3D prompts using the placeholders [Object], [Color], \
             [Material] and [High-level Theme]. Use a TOML array of tables named template with keys id and text."
                .into(),
        )?;
        templates_from_toml(&text, "<remote>")
    }
}
