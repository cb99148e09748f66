//! Canonical form for mathematical and textual expressions.
//!
//! Two strings that differ only in LaTeX markup, spelled-out operators,
//! whitespace, numeral formatting or trailing punctuation normalize to the
//! same string, e.g. `\frac{6}{3} = 2`, `6/3 = 2` and `6 divided by 3 equals 2`
//! all become `6/3=2`. There is no algebraic simplification: `4/2` and `2`
//! stay distinct.

use std::sync::LazyLock;

use regex::Regex;

/// Upper bound on rewrite passes; real inputs reach a fixed point in two or three.
const MAX_PASSES: usize = 16;

static LEFT_RIGHT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\(?:left|right)\b").unwrap());
static TIMES_CMD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\(?:times|cdot|ast)\b").unwrap());
static DIV_CMD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\div\b").unwrap());
static WORD_OPS: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    [
        (r"\bdivided\s+by\b", "/"),
        (r"\bmultiplied\s+by\b", "*"),
        (r"\btimes\b", "*"),
        (r"\bplus\b", "+"),
        (r"\bminus\b", "-"),
        (r"\bequals\b", "="),
    ]
    .into_iter()
    .map(|(pat, op)| (Regex::new(pat).unwrap(), op))
    .collect()
});
static THOUSANDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d{1,3}(?:,\d{3})+\b").unwrap());
static ZERO_FRACTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+)\.0+\b").unwrap());
static TRAILING_ZEROS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+\.\d*[1-9])0+\b").unwrap());
static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());
static OP_SPACING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r" ?([-+*/=^<>()]) ?").unwrap());

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

/// Returns the canonical form of `s`. Total and idempotent.
pub fn normalize_expression(s: &str) -> String {
    let mut current = s.to_string();
    for _ in 0..MAX_PASSES {
        let next = normalize_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_pass(s: &str) -> String {
    let mut out = s.to_lowercase().replace('$', "");
    out = LEFT_RIGHT.replace_all(&out, "").into_owned();
    out = TIMES_CMD.replace_all(&out, "*").into_owned();
    out = DIV_CMD.replace_all(&out, "/").into_owned();
    out = out.replace(['×', '·', '∗'], "*").replace('÷', "/").replace('−', "-");
    out = rewrite_fractions(&out);
    for (re, op) in WORD_OPS.iter() {
        out = re.replace_all(&out, *op).into_owned();
    }
    out = THOUSANDS
        .replace_all(&out, |caps: &regex::Captures<'_>| caps[0].replace(',', ""))
        .into_owned();
    out = ZERO_FRACTION.replace_all(&out, "$1").into_owned();
    out = TRAILING_ZEROS.replace_all(&out, "$1").into_owned();
    out = WHITESPACE.replace_all(&out, " ").into_owned();
    out = OP_SPACING.replace_all(out.trim(), "$1").into_owned();
    out.trim_end_matches(TRAILING_PUNCT).trim().to_string()
}

/// Rewrites `\frac{a}{b}` (and `\dfrac`, `\tfrac`) to `a/b`, innermost
/// arguments included. Unbalanced constructs are left untouched.
fn rewrite_fractions(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = find_frac(rest) {
        let (cmd_start, args_start) = pos;
        let after = &rest[args_start..];
        let parsed = braced(after).and_then(|(num, r1)| braced(r1).map(|(den, r2)| (num, den, r2)));
        match parsed {
            Some((num, den, remaining)) => {
                out.push_str(&rest[..cmd_start]);
                out.push_str(&rewrite_fractions(num));
                out.push('/');
                out.push_str(&rewrite_fractions(den));
                rest = remaining;
            }
            None => {
                out.push_str(&rest[..args_start]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Locates the next fraction command; returns (command start, argument start).
fn find_frac(s: &str) -> Option<(usize, usize)> {
    let mut search = 0;
    while let Some(rel) = s[search..].find('\\') {
        let at = search + rel;
        for cmd in ["\\frac", "\\dfrac", "\\tfrac"] {
            if s[at..].starts_with(cmd) {
                let end = at + cmd.len();
                let args = s[end..].trim_start();
                if args.starts_with('{') {
                    return Some((at, s.len() - args.len()));
                }
            }
        }
        search = at + 1;
    }
    None
}

/// Splits `{inner}rest` into (inner, rest), skipping leading whitespace.
fn braced(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start();
    if !s.starts_with('{') {
        return None;
    }
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&s[1..i], &s[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}
