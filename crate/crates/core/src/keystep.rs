//! Key steps, equivalent-format augmentation and soft key-step matching.
//!
//! A key step is matched when the normalized form of any of its variants is a
//! contiguous substring of the normalized trajectory text. The match score is
//! the fraction of key steps matched, and 0 for an empty key-step set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::normalize_expression;

/// One essential intermediate result, stored with equivalent surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawKeyStep")]
pub struct KeyStep {
    canonical: String,
    variants: Vec<String>,
    #[serde(skip)]
    normalized: Vec<String>,
}

#[derive(Deserialize)]
struct RawKeyStep {
    canonical: String,
    #[serde(default)]
    variants: Option<Vec<String>>,
}

impl TryFrom<RawKeyStep> for KeyStep {
    type Error = Error;

    fn try_from(raw: RawKeyStep) -> Result<Self> {
        match raw.variants {
            Some(v) if !v.is_empty() => KeyStep::with_variants(raw.canonical, v),
            _ => KeyStep::new(raw.canonical),
        }
    }
}

impl KeyStep {
    /// Builds a key step whose variants come from [`augment_variants`].
    pub fn new(canonical: impl Into<String>) -> Result<Self> {
        let canonical = canonical.into();
        let variants = augment_variants(&canonical);
        Self::with_variants(canonical, variants)
    }

    /// Builds a key step from explicit variants; `canonical` is prepended if absent.
    pub fn with_variants(canonical: impl Into<String>, variants: Vec<String>) -> Result<Self> {
        let canonical = canonical.into();
        if normalize_expression(&canonical).is_empty() {
            return Err(Error::InvalidTask(format!(
                "key step {canonical:?} is empty after normalization"
            )));
        }
        let mut all = Vec::with_capacity(variants.len() + 1);
        all.push(canonical.clone());
        for v in variants {
            if !all.contains(&v) {
                all.push(v);
            }
        }
        let normalized = all.iter().map(|v| normalize_expression(v)).collect();
        Ok(Self {
            canonical,
            variants: all,
            normalized,
        })
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// All surface forms, canonical first.
    pub fn variants(&self) -> &[String] {
        &self.variants
    }

    pub fn normalized_canonical(&self) -> &str {
        &self.normalized[0]
    }

    /// Index of the first variant whose normalized form occurs in `normalized_path`.
    fn first_match(&self, normalized_path: &str) -> Option<usize> {
        self.normalized
            .iter()
            .position(|n| !n.is_empty() && normalized_path.contains(n.as_str()))
    }
}

/// Ordered key steps of one question, unique by normalized canonical form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<KeyStep>", into = "Vec<KeyStep>")]
pub struct KeyStepSet {
    steps: Vec<KeyStep>,
}

impl From<Vec<KeyStep>> for KeyStepSet {
    fn from(steps: Vec<KeyStep>) -> Self {
        Self::new(steps)
    }
}

impl From<KeyStepSet> for Vec<KeyStep> {
    fn from(set: KeyStepSet) -> Self {
        set.steps
    }
}

impl KeyStepSet {
    /// Drops later steps whose normalized canonical form repeats an earlier one.
    pub fn new(steps: Vec<KeyStep>) -> Self {
        let mut kept: Vec<KeyStep> = Vec::with_capacity(steps.len());
        for step in steps {
            if !kept
                .iter()
                .any(|k| k.normalized_canonical() == step.normalized_canonical())
            {
                kept.push(step);
            }
        }
        Self { steps: kept }
    }

    pub fn from_canonicals<I, S>(canonicals: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps = canonicals.into_iter().map(KeyStep::new).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(steps))
    }

    pub fn steps(&self) -> &[KeyStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMatch {
    pub index: usize,
    pub matched: bool,
    pub matched_variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched_count: usize,
    pub total_count: usize,
    /// `matched_count / total_count`, or 0 when there are no key steps.
    pub match_score: f64,
    pub per_step: Vec<StepMatch>,
}

/// Scores how many key steps the trajectory text contains.
pub fn match_key_steps(path_text: &str, key_steps: &KeyStepSet) -> MatchResult {
    let path = normalize_expression(path_text);
    let per_step: Vec<StepMatch> = key_steps
        .steps()
        .iter()
        .enumerate()
        .map(|(index, step)| {
            let hit = step.first_match(&path);
            StepMatch {
                index,
                matched: hit.is_some(),
                matched_variant: hit.map(|i| step.variants()[i].clone()),
            }
        })
        .collect();
    let matched_count = per_step.iter().filter(|m| m.matched).count();
    let total_count = key_steps.len();
    let match_score = if total_count == 0 {
        0.0
    } else {
        matched_count as f64 / total_count as f64
    };
    MatchResult {
        matched_count,
        total_count,
        match_score,
        per_step,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Operand(String),
    Op(char),
}

const OPS: &[char] = &['+', '-', '*', '/', '='];

/// Splits a normalized expression into alternating operands and operators.
/// Returns `None` when the string does not have that shape.
fn tokenize(normalized: &str) -> Option<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut operand = String::new();
    for c in normalized.chars() {
        if OPS.contains(&c) {
            if operand.is_empty() {
                // unary minus binds to the following operand
                if c == '-' {
                    operand.push(c);
                    continue;
                }
                return None;
            }
            if operand == "-" {
                return None;
            }
            tokens.push(Token::Operand(std::mem::take(&mut operand)));
            tokens.push(Token::Op(c));
        } else {
            operand.push(c);
        }
    }
    if operand.is_empty() || operand == "-" {
        return None;
    }
    tokens.push(Token::Operand(operand));
    Some(tokens)
}

#[derive(Clone, Copy)]
enum Style {
    Compact,
    SpacedEquals,
    Spaced,
    Unicode,
    Latex,
    Words,
    WordsMultiplied,
}

fn op_text(style: Style, op: char) -> &'static str {
    match (style, op) {
        (Style::Compact | Style::Unicode, '=') => "=",
        (Style::Compact | Style::SpacedEquals, '+') => "+",
        (Style::Compact | Style::SpacedEquals, '-') => "-",
        (Style::Compact | Style::SpacedEquals, '*') => "*",
        (Style::Compact | Style::SpacedEquals, '/') => "/",
        (Style::SpacedEquals | Style::Spaced | Style::Latex, '=') => " = ",
        (Style::Spaced | Style::Latex, '+') => " + ",
        (Style::Spaced | Style::Latex, '-') => " - ",
        (Style::Spaced, '*') => " * ",
        (Style::Spaced | Style::Latex, '/') => " / ",
        (Style::Unicode, '+') => "+",
        (Style::Unicode, '-') => "-",
        (Style::Unicode, '*') => "×",
        (Style::Unicode, '/') => "÷",
        (Style::Latex, '*') => " \\times ",
        (Style::Words | Style::WordsMultiplied, '+') => " plus ",
        (Style::Words | Style::WordsMultiplied, '-') => " minus ",
        (Style::Words, '*') => " times ",
        (Style::WordsMultiplied, '*') => " multiplied by ",
        (Style::Words | Style::WordsMultiplied, '/') => " divided by ",
        (Style::Words | Style::WordsMultiplied, '=') => " equals ",
        _ => unreachable!("operator {op:?} outside the tokenizer set"),
    }
}

fn is_simple_operand(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    !body.is_empty() && body.chars().all(|c| c.is_ascii_alphanumeric() || c == '.')
}

fn render(tokens: &[Token], style: Style) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < tokens.len() {
        match &tokens[i] {
            Token::Operand(a) => {
                // \frac{a}{b} for a simple a/b not already inside a division chain
                let frac = matches!(style, Style::Latex)
                    && matches!(tokens.get(i + 1), Some(Token::Op('/')))
                    && !matches!(i.checked_sub(1).map(|p| &tokens[p]), Some(Token::Op('/')));
                match (frac, tokens.get(i + 2)) {
                    (true, Some(Token::Operand(b))) if is_simple_operand(a) && is_simple_operand(b) => {
                        out.push_str(&format!("\\frac{{{a}}}{{{b}}}"));
                        i += 3;
                        continue;
                    }
                    _ => out.push_str(a),
                }
            }
            Token::Op(op) => out.push_str(op_text(style, *op)),
        }
        i += 1;
    }
    out
}

/// Equivalent surface forms of `canonical`: the canonical text first, then
/// compact, spaced, unicode-operator, LaTeX and spelled-out renderings.
/// Exact duplicates are dropped; every form normalizes to the same string.
pub fn augment_variants(canonical: &str) -> Vec<String> {
    let mut out = vec![canonical.to_string()];
    let normalized = normalize_expression(canonical);
    let tokens = match tokenize(&normalized) {
        Some(t) if t.iter().any(|t| matches!(t, Token::Op(_))) => t,
        _ => {
            if !normalized.is_empty() && normalized != canonical {
                out.push(normalized);
            }
            return out;
        }
    };
    for style in [
        Style::Compact,
        Style::SpacedEquals,
        Style::Spaced,
        Style::Unicode,
        Style::Latex,
        Style::Words,
        Style::WordsMultiplied,
    ] {
        let v = render(&tokens, style);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}
