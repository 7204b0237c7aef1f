//! Rule-based extraction of entity mentions, relation triples and
//! question-type cues.
//!
//! Entities:
//! - quoted title spans (`"..."`, `“...”`) containing a capitalised word
//! - temporal: years 1000-2999, month and weekday names, `<number> BC|AD`
//! - numeric: integer / decimal literals that are not temporal
//! - named: maximal runs of capitalised tokens separated only by whitespace.
//!   A sentence-initial stopword is not counted as capitalised unless the run
//!   it starts is already known from a non-initial position.
//!
//! Earlier rules claim their characters first, so a year inside a quoted
//! title is not counted twice. Mentions are deduplicated case-insensitively;
//! the first occurrence fixes the surface casing. Spans are character
//! offsets.
//!
//! Triples link consecutive entity occurrences inside one sentence, labelled
//! from the text between them (see [`classify_gap`]).

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionKind {
    Named,
    Temporal,
    Numeric,
}

impl MentionKind {
    pub fn index(self) -> usize {
        match self {
            MentionKind::Named => 0,
            MentionKind::Temporal => 1,
            MentionKind::Numeric => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub kind: MentionKind,
    pub frequency: u32,
    /// Character offsets `[start, end)` of every occurrence.
    pub spans: Vec<(usize, usize)>,
}

impl EntityMention {
    /// All word-bounded, case-insensitive occurrences of `surface` in `text`.
    /// Returns `None` when the surface does not occur.
    pub fn locate(text: &str, surface: &str, kind: MentionKind) -> Option<Self> {
        let spans: Vec<(usize, usize)> = find_word_bounded(text, surface)
            .into_iter()
            .map(|(s, e)| (char_offset(text, s), char_offset(text, e)))
            .collect();
        if spans.is_empty() {
            return None;
        }
        Some(EntityMention {
            surface: surface.to_string(),
            kind,
            frequency: spans.len() as u32,
            spans,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head_surface: String,
    pub relation_label: String,
    pub tail_surface: String,
    /// Character offsets from the head occurrence start to the tail end.
    pub provenance_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    EntityChoice,
    Location,
    Person,
    Time,
    Reason,
    Manner,
    YesNo,
}

impl Cue {
    pub const ALL: [Cue; 7] = [
        Cue::EntityChoice,
        Cue::Location,
        Cue::Person,
        Cue::Time,
        Cue::Reason,
        Cue::Manner,
        Cue::YesNo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cue::EntityChoice => "entity_choice",
            Cue::Location => "location",
            Cue::Person => "person",
            Cue::Time => "time",
            Cue::Reason => "reason",
            Cue::Manner => "manner",
            Cue::YesNo => "yes_no",
        }
    }
}

pub type CueSet = BTreeSet<Cue>;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "after",
    "also",
    "although",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "during",
    "each",
    "either",
    "even",
    "every",
    "for",
    "from",
    "had",
    "has",
    "have",
    "he",
    "her",
    "here",
    "hers",
    "him",
    "his",
    "how",
    "however",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "many",
    "may",
    "me",
    "meanwhile",
    "more",
    "most",
    "my",
    "neither",
    "no",
    "nor",
    "not",
    "of",
    "on",
    "once",
    "one",
    "only",
    "or",
    "other",
    "our",
    "over",
    "she",
    "since",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "though",
    "through",
    "thus",
    "to",
    "under",
    "unlike",
    "until",
    "upon",
    "us",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "whether",
    "which",
    "while",
    "who",
    "whom",
    "whose",
    "why",
    "will",
    "with",
    "within",
    "without",
    "would",
    "yes",
    "yet",
    "you",
    "your",
];

const MONTHS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

const WEEKDAYS: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// A word token with byte offsets into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Letters/digits with inner apostrophes and hyphens; `.` and `,` only
/// between digits.
pub(crate) fn tokenize(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i].1) {
            i += 1;
            continue;
        }
        let start = chars[i].0;
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if is_word_char(c) {
                j += 1;
                continue;
            }
            let next = chars.get(j + 1).map(|x| x.1);
            let prev = chars[j - 1].1;
            let joins = match c {
                '\'' | '’' | '-' => next.is_some_and(is_word_char),
                '.' | ',' => prev.is_ascii_digit() && next.is_some_and(|n| n.is_ascii_digit()),
                _ => false,
            };
            if joins {
                j += 2;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(text.len(), |x| x.0);
        tokens.push(Token {
            text: &text[start..end],
            start,
            end,
        });
        i = j;
    }
    tokens
}

/// Sentence byte ranges: a boundary is `.`, `!` or `?` (plus closing quotes
/// or brackets) followed by whitespace and an uppercase letter.
pub fn sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']' | '”' | '’') {
                j += 1;
            }
            let ws_start = j;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j > ws_start && j < chars.len() && chars[j].1.is_uppercase() {
                out.push((start, chars[ws_start].0));
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn byte_offset(text: &str, chars: usize) -> usize {
    text.char_indices()
        .nth(chars)
        .map_or(text.len(), |(b, _)| b)
}

/// Case-insensitive occurrences of `needle` whose neighbours are not
/// alphanumeric. Byte offsets.
pub fn find_word_bounded(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let needle = needle.trim();
    if needle.is_empty() {
        return Vec::new();
    }
    let hay = haystack.to_lowercase();
    let pat = needle.to_lowercase();
    // Lowercasing can change byte lengths for some scripts; only trust
    // positions when it did not.
    if hay.len() != haystack.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&pat) {
        let s = from + pos;
        let e = s + pat.len();
        let before_ok = hay[..s]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            out.push((s, e));
        }
        from = s + hay[s..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn is_number_literal(word: &str) -> bool {
    let mut digits = 0;
    for c in word.chars() {
        if c.is_ascii_digit() {
            digits += 1;
        } else if c != '.' && c != ',' {
            return false;
        }
    }
    digits > 0
}

fn is_year(word: &str) -> bool {
    word.len() == 4
        && word.chars().all(|c| c.is_ascii_digit())
        && word
            .parse::<u32>()
            .is_ok_and(|y| (1000..=2999).contains(&y))
}

struct Candidate {
    start: usize,
    end: usize,
    kind: MentionKind,
}

struct Claims(Vec<bool>);

impl Claims {
    fn free(&self, s: usize, e: usize) -> bool {
        self.0[s..e].iter().all(|c| !c)
    }

    fn take(&mut self, s: usize, e: usize) {
        self.0[s..e].iter_mut().for_each(|c| *c = true);
    }
}

fn quoted_spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let mut curly_open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match c {
            '"' => match open.take() {
                None => open = Some(i + 1),
                Some(s) => out.push((s, i)),
            },
            '“' => curly_open = Some(i + c.len_utf8()),
            '”' => {
                if let Some(s) = curly_open.take() {
                    out.push((s, i));
                }
            }
            _ => {}
        }
    }
    out.sort_unstable();
    out
}

fn trim_span(text: &str, s: usize, e: usize) -> (usize, usize) {
    let inner = &text[s..e];
    let lead = inner.len() - inner.trim_start().len();
    let trimmed = inner
        .trim()
        .trim_end_matches(['.', ',', ';', ':', '!', '?']);
    (s + lead, s + lead + trimmed.len())
}

/// Extracts deduplicated entity mentions in first-occurrence order.
pub fn extract_entities(text: &str) -> Vec<EntityMention> {
    let tokens = tokenize(text);
    let sents = sentences(text);
    let mut initial = HashSet::new();
    for &(s, e) in &sents {
        if let Some(idx) = tokens.iter().position(|t| t.start >= s && t.start < e) {
            initial.insert(idx);
        }
    }

    let mut claims = Claims(vec![false; text.len() + 1]);
    let mut cands: Vec<Candidate> = Vec::new();

    for (s, e) in quoted_spans(text) {
        let (s, e) = trim_span(text, s, e);
        if s >= e {
            continue;
        }
        let inner = tokenize(&text[s..e]);
        if inner.is_empty() || inner.len() > 8 || !inner.iter().any(|t| is_capitalized(t.text)) {
            continue;
        }
        if claims.free(s, e) {
            claims.take(s, e);
            cands.push(Candidate {
                start: s,
                end: e,
                kind: MentionKind::Named,
            });
        }
    }

    for (i, t) in tokens.iter().enumerate() {
        if !claims.free(t.start, t.end) {
            continue;
        }
        let lower = t.text.to_lowercase();
        let era = tokens.get(i + 1).filter(|n| {
            matches!(n.text, "BC" | "AD")
                && text[t.end..n.start].chars().all(char::is_whitespace)
                && claims.free(n.start, n.end)
        });
        if let (true, Some(n)) = (t.text.chars().all(|c| c.is_ascii_digit()), era) {
            claims.take(t.start, n.end);
            cands.push(Candidate {
                start: t.start,
                end: n.end,
                kind: MentionKind::Temporal,
            });
        } else if is_year(t.text)
            || (is_capitalized(t.text)
                && (MONTHS.contains(&lower.as_str()) || WEEKDAYS.contains(&lower.as_str())))
        {
            claims.take(t.start, t.end);
            cands.push(Candidate {
                start: t.start,
                end: t.end,
                kind: MentionKind::Temporal,
            });
        }
    }

    for t in &tokens {
        if claims.free(t.start, t.end) && is_number_literal(t.text) {
            claims.take(t.start, t.end);
            cands.push(Candidate {
                start: t.start,
                end: t.end,
                kind: MentionKind::Numeric,
            });
        }
    }

    // Capitalised runs. First gather runs as token index ranges; runs whose
    // first token is a sentence-initial stopword are resolved afterwards.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if !is_capitalized(t.text) || !claims.free(t.start, t.end) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < tokens.len() {
            let n = &tokens[j];
            let gap = &text[tokens[j - 1].end..n.start];
            if !gap.chars().all(char::is_whitespace)
                || !is_capitalized(n.text)
                || !claims.free(n.start, n.end)
                || initial.contains(&j)
            {
                break;
            }
            j += 1;
        }
        runs.push((i, j));
        i = j;
    }

    let all_stop = |a: usize, b: usize| {
        tokens[a..b]
            .iter()
            .all(|t| is_stopword(&t.text.to_lowercase()))
    };
    let known: HashSet<String> = cands
        .iter()
        .map(|c| text[c.start..c.end].to_lowercase())
        .chain(
            runs.iter()
                .filter(|&&(a, b)| !initial.contains(&a) && !all_stop(a, b))
                .map(|&(a, b)| text[tokens[a].start..tokens[b - 1].end].to_lowercase()),
        )
        .collect();

    for (a, b) in runs {
        let mut a = a;
        if initial.contains(&a) && is_stopword(&tokens[a].text.to_lowercase()) {
            let full = text[tokens[a].start..tokens[b - 1].end].to_lowercase();
            if !known.contains(&full) {
                a += 1;
            }
        }
        if a >= b || all_stop(a, b) {
            continue;
        }
        let (s, e) = (tokens[a].start, tokens[b - 1].end);
        claims.take(s, e);
        cands.push(Candidate {
            start: s,
            end: e,
            kind: MentionKind::Named,
        });
    }

    cands.sort_by_key(|c| c.start);
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<EntityMention> = Vec::new();
    for c in cands {
        let surface = &text[c.start..c.end];
        let span = (char_offset(text, c.start), char_offset(text, c.end));
        match by_key.get(&surface.to_lowercase()) {
            Some(&idx) => {
                out[idx].frequency += 1;
                out[idx].spans.push(span);
            }
            None => {
                by_key.insert(surface.to_lowercase(), out.len());
                out.push(EntityMention {
                    surface: surface.to_string(),
                    kind: c.kind,
                    frequency: 1,
                    spans: vec![span],
                });
            }
        }
    }
    out
}

const PREPOSITIONS: &[&str] = &[
    "about",
    "after",
    "against",
    "among",
    "as",
    "at",
    "before",
    "behind",
    "beside",
    "between",
    "by",
    "despite",
    "during",
    "following",
    "for",
    "from",
    "in",
    "including",
    "inside",
    "into",
    "near",
    "of",
    "on",
    "onto",
    "over",
    "per",
    "since",
    "through",
    "throughout",
    "to",
    "toward",
    "towards",
    "under",
    "until",
    "upon",
    "via",
    "with",
    "within",
    "without",
];

const AUXILIARIES: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("be", "be"),
    ("been", "be"),
    ("being", "be"),
    ("had", "have"),
    ("has", "have"),
    ("have", "have"),
    ("is", "be"),
    ("was", "be"),
    ("were", "be"),
];

/// Irregular or ambiguous verb forms and their lemma.
const VERB_FORMS: &[(&str, &str)] = &[
    ("became", "become"),
    ("become", "become"),
    ("becomes", "become"),
    ("born", "bear"),
    ("built", "build"),
    ("created", "create"),
    ("died", "die"),
    ("directs", "direct"),
    ("found", "find"),
    ("founded", "found"),
    ("gave", "give"),
    ("held", "hold"),
    ("joined", "join"),
    ("known", "know"),
    ("led", "lead"),
    ("made", "make"),
    ("married", "marry"),
    ("named", "name"),
    ("plays", "play"),
    ("produced", "produce"),
    ("released", "release"),
    ("star", "star"),
    ("starred", "star"),
    ("starring", "star"),
    ("stars", "star"),
    ("took", "take"),
    ("won", "win"),
    ("wins", "win"),
    ("wrote", "write"),
    ("written", "write"),
];

/// Words ending in -ed / -ing that are not verbs.
const NOT_VERBS: &[&str] = &[
    "bed",
    "building",
    "ceiling",
    "darling",
    "during",
    "evening",
    "hundred",
    "king",
    "morning",
    "nothing",
    "red",
    "something",
    "spring",
    "string",
    "thing",
    "united",
    "wedding",
    "wing",
];

fn lookup<'a>(table: &'a [(&str, &str)], word: &str) -> Option<&'a str> {
    table.iter().find(|(w, _)| *w == word).map(|(_, l)| *l)
}

/// Suffix-stripping lemma with undoubling (`starred` -> `star`).
fn lemma(word: &str) -> String {
    if let Some(l) = lookup(VERB_FORMS, word).or_else(|| lookup(AUXILIARIES, word)) {
        return l.to_string();
    }
    let stem = word
        .strip_suffix("ing")
        .or_else(|| word.strip_suffix("ed"))
        .or_else(|| word.strip_suffix('s'))
        .unwrap_or(word);
    let b = stem.as_bytes();
    if b.len() >= 3
        && b[b.len() - 1] == b[b.len() - 2]
        && !matches!(b[b.len() - 1], b'l' | b's' | b'z')
    {
        return stem[..stem.len() - 1].to_string();
    }
    stem.to_string()
}

fn is_content_verb(word: &str) -> bool {
    if lookup(VERB_FORMS, word).is_some() {
        return true;
    }
    if NOT_VERBS.contains(&word) || PREPOSITIONS.contains(&word) {
        return false;
    }
    (word.len() >= 5 && word.ends_with("ed")) || (word.len() >= 6 && word.ends_with("ing"))
}

const MAX_GAP_WORDS: usize = 12;

/// Labels the text between two entity occurrences, or `None` when no rule
/// fires. Rules in priority order: alias phrase (`dep:alias`), attribute
/// apposition `, a ...` / copula + article (`dep:attr`), passive
/// `<participle> by` (`<participle>_by`), the verb or preposition nearest
/// the tail (`<lemma>` / `prep:<word>`), a bare auxiliary (`be` / `have`),
/// and a bare comma or parenthesis (`appos`).
pub fn classify_gap(gap: &str) -> Option<String> {
    let words: Vec<String> = tokenize(gap)
        .iter()
        .map(|t| t.text.to_lowercase())
        .collect();
    if words.len() > MAX_GAP_WORDS {
        return None;
    }
    let lower = gap.to_lowercase();
    if words.windows(2).any(|w| w[0] == "known" && w[1] == "as")
        || words.windows(2).any(|w| w[0] == "also" && w[1] == "called")
        || words.iter().any(|w| w == "aka" || w == "alias")
        || lower.contains("a.k.a")
    {
        return Some("dep:alias".into());
    }
    let is_article = |w: &str| matches!(w, "a" | "an" | "the");
    let trimmed =
        gap.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '”' | ')'));
    if (trimmed.starts_with(',') && words.first().is_some_and(|w| is_article(w)))
        || (words.len() >= 2
            && lookup(AUXILIARIES, &words[0]) == Some("be")
            && is_article(&words[1]))
    {
        return Some("dep:attr".into());
    }
    if let Some(w) = words
        .windows(2)
        .find(|w| w[1] == "by" && (w[0].ends_with("ed") || lookup(VERB_FORMS, &w[0]).is_some()))
    {
        return Some(format!("{}_by", w[0]));
    }
    for w in words.iter().rev() {
        if PREPOSITIONS.contains(&w.as_str()) {
            return Some(format!("prep:{w}"));
        }
        if is_content_verb(w) {
            return Some(lemma(w));
        }
    }
    if let Some(aux) = words.iter().rev().find_map(|w| lookup(AUXILIARIES, w)) {
        return Some(aux.to_string());
    }
    let bare: String = gap
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '"' | '”' | '“'))
        .collect();
    if words.is_empty() && (bare == "(" || bare == ",") {
        return Some("appos".into());
    }
    None
}

/// Triples between consecutive entity occurrences of one sentence.
pub fn extract_triples(text: &str, entities: &[EntityMention]) -> Vec<RelationTriple> {
    // (byte start, byte end, entity index)
    let mut occ: Vec<(usize, usize, usize)> = entities
        .iter()
        .enumerate()
        .flat_map(|(idx, m)| {
            m.spans
                .iter()
                .map(move |&(s, e)| (byte_offset(text, s), byte_offset(text, e), idx))
        })
        .collect();
    occ.sort_unstable();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (ss, se) in sentences(text) {
        let inside: Vec<_> = occ
            .iter()
            .filter(|(s, e, _)| *s >= ss && *e <= se)
            .collect();
        for pair in inside.windows(2) {
            let (hs, he, hi) = *pair[0];
            let (ts, te, ti) = *pair[1];
            if ts < he {
                continue;
            }
            let head = &entities[hi].surface;
            let tail = &entities[ti].surface;
            if head.to_lowercase() == tail.to_lowercase() {
                continue;
            }
            let Some(label) = classify_gap(&text[he..ts]) else {
                continue;
            };
            if seen.insert((hi, ti, label.clone())) {
                out.push(RelationTriple {
                    head_surface: head.clone(),
                    relation_label: label,
                    tail_surface: tail.clone(),
                    provenance_span: (char_offset(text, hs), char_offset(text, te)),
                });
            }
        }
    }
    out
}

const AUX_OPENERS: &[&str] = &[
    "am", "are", "can", "could", "did", "do", "does", "has", "have", "had", "is", "should", "was",
    "were", "will", "would",
];

/// Keyword scan of the question for coarse answer-type cues.
pub fn question_type_cues(question: &str) -> CueSet {
    let words: Vec<String> = tokenize(question)
        .iter()
        .map(|t| t.text.to_lowercase())
        .collect();
    let mut cues = CueSet::new();
    for w in &words {
        let cue = match w.as_str() {
            "which" => Cue::EntityChoice,
            "who" | "whom" | "whose" => Cue::Person,
            "where" => Cue::Location,
            "when" => Cue::Time,
            "why" => Cue::Reason,
            "how" => Cue::Manner,
            "whether" => Cue::YesNo,
            _ => continue,
        };
        cues.insert(cue);
    }
    if words
        .first()
        .is_some_and(|w| AUX_OPENERS.contains(&w.as_str()))
    {
        cues.insert(Cue::YesNo);
    }
    cues
}

/// Maps a dataset-provided question type onto the cue vocabulary.
pub fn dataset_type_cues(question_type: &str) -> CueSet {
    let t = question_type.to_lowercase();
    let mut cues = CueSet::new();
    for c in Cue::ALL {
        if t == c.as_str() {
            cues.insert(c);
        }
    }
    if t.contains("comparison") {
        cues.insert(Cue::EntityChoice);
    }
    if t.contains("yes") && t.contains("no") {
        cues.insert(Cue::YesNo);
    }
    cues
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const FALCON: &str = "Title: The Falcon Takes Over. The Falcon Takes Over (also known as \"The Falcon Steps Out\") is a 1942 black-and-white mystery film directed by Irving Reis. The B film was the third, following \"The Gay Falcon\" and \"A Date with the Falcon\" (1941), to star George Sanders as the character Gay Lawrence, a gentleman detective known by the sobriquet \"the Falcon\".";

    fn surfaces(ms: &[EntityMention]) -> Vec<&str> {
        ms.iter().map(|m| m.surface.as_str()).collect()
    }

    #[test]
    fn stopword_table_is_sorted() {
        let mut s = STOPWORDS.to_vec();
        s.sort_unstable();
        assert_eq!(s, STOPWORDS);
    }

    #[test]
    fn repeated_name_is_one_mention() {
        let ms = extract_entities("George Sanders met George Sanders");
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].surface, "George Sanders");
        assert_eq!(ms[0].kind, MentionKind::Named);
        assert_eq!(ms[0].frequency, 2);
        assert_eq!(ms[0].spans, vec![(0, 14), (19, 33)]);
    }

    #[test]
    fn year_is_temporal() {
        let ms = extract_entities("a 1942 black-and-white mystery film");
        assert_eq!(surfaces(&ms), vec!["1942"]);
        assert_eq!(ms[0].kind, MentionKind::Temporal);
    }

    #[test]
    fn stopwords_only_yield_nothing() {
        assert!(extract_entities("the and of").is_empty());
        assert!(extract_entities("The and Of").is_empty());
    }

    #[test]
    fn numeric_and_era_literals() {
        let ms = extract_entities("It sold 3,500 copies at 2.5 dollars around 300 BC on Monday.");
        let got: Vec<(&str, MentionKind)> =
            ms.iter().map(|m| (m.surface.as_str(), m.kind)).collect();
        assert_eq!(
            got,
            vec![
                ("3,500", MentionKind::Numeric),
                ("2.5", MentionKind::Numeric),
                ("300 BC", MentionKind::Temporal),
                ("Monday", MentionKind::Temporal),
            ]
        );
    }

    #[test]
    fn dedup_is_case_insensitive_first_casing_wins() {
        let ms = extract_entities("We met \"Big Ben\" near \"BIG BEN\" today.");
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].surface, "Big Ben");
        assert_eq!(ms[0].frequency, 2);
    }

    #[test]
    fn falcon_context_entities() {
        let ms = extract_entities(FALCON);
        let s = surfaces(&ms);
        for want in [
            "The Falcon Takes Over",
            "The Falcon Steps Out",
            "1942",
            "Irving Reis",
            "B",
            "The Gay Falcon",
            "A Date with the Falcon",
            "1941",
            "George Sanders",
            "Gay Lawrence",
            "the Falcon",
        ] {
            assert!(s.contains(&want), "missing {want:?} in {s:?}");
        }
        let takes_over = ms
            .iter()
            .find(|m| m.surface == "The Falcon Takes Over")
            .unwrap();
        // sentence-initial "The" is kept because the full title is known
        assert_eq!(takes_over.frequency, 2);
        let total: u32 = ms.iter().map(|m| m.frequency).sum();
        assert_eq!(
            total as usize,
            ms.iter().map(|m| m.spans.len()).sum::<usize>()
        );
    }

    #[test]
    fn appositive_year() {
        let text = "The Gay Falcon (1941)";
        let ents = vec![
            EntityMention::locate(text, "The Gay Falcon", MentionKind::Named).unwrap(),
            EntityMention::locate(text, "1941", MentionKind::Temporal).unwrap(),
        ];
        let ts = extract_triples(text, &ents);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].head_surface, "The Gay Falcon");
        assert_eq!(ts[0].relation_label, "appos");
        assert_eq!(ts[0].tail_surface, "1941");
        assert_eq!(ts[0].provenance_span, (0, 20));
    }

    #[test]
    fn passive_by_rule() {
        let text = "Vertigo directed by Alfred Hitchcock";
        let ents = extract_entities(text);
        assert_eq!(surfaces(&ents), vec!["Vertigo", "Alfred Hitchcock"]);
        let ts = extract_triples(text, &ents);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].relation_label, "directed_by");
    }

    #[test]
    fn no_cooccurrence_no_triples() {
        let text = "Paris is lovely. We went to Rome.";
        let ents = extract_entities(text);
        assert_eq!(ents.len(), 2);
        assert!(extract_triples(text, &ents).is_empty());
    }

    #[test]
    fn falcon_chain_labels() {
        let ents = extract_entities(FALCON);
        let ts = extract_triples(FALCON, &ents);
        let has = |h: &str, r: &str, t: &str| {
            ts.iter()
                .any(|x| x.head_surface == h && x.relation_label == r && x.tail_surface == t)
        };
        assert!(
            has("The Falcon Takes Over", "dep:alias", "The Falcon Steps Out"),
            "{ts:#?}"
        );
        assert!(has("George Sanders", "prep:as", "Gay Lawrence"), "{ts:#?}");
        assert!(has("Gay Lawrence", "dep:attr", "the Falcon"), "{ts:#?}");
        assert!(has("A Date with the Falcon", "appos", "1941"), "{ts:#?}");
        assert!(has("1941", "star", "George Sanders"), "{ts:#?}");
        assert!(has("1942", "directed_by", "Irving Reis"), "{ts:#?}");
        let names: HashSet<&str> = ents.iter().map(|m| m.surface.as_str()).collect();
        for t in &ts {
            assert!(names.contains(t.head_surface.as_str()));
            assert!(names.contains(t.tail_surface.as_str()));
            assert_ne!(t.head_surface.to_lowercase(), t.tail_surface.to_lowercase());
        }
    }

    #[test]
    fn lemmas() {
        assert_eq!(lemma("starred"), "star");
        assert_eq!(lemma("directed"), "direct");
        assert_eq!(lemma("was"), "be");
        assert_eq!(lemma("wrote"), "write");
        assert_eq!(lemma("filming"), "film");
        assert_eq!(lemma("killed"), "kill");
    }

    #[test]
    fn cue_examples() {
        let c = question_type_cues("Who is known as 'the Falcon'?");
        assert_eq!(c, CueSet::from([Cue::Person]));
        let c = question_type_cues(
            "Which film has the director who died later, The Fatal Mistake or The Devil's Hairpin?",
        );
        assert_eq!(c, CueSet::from([Cue::EntityChoice, Cue::Person]));
        assert!(question_type_cues("Name the capital.").is_empty());
        assert_eq!(
            question_type_cues("Is Paris in France?"),
            CueSet::from([Cue::YesNo])
        );
    }

    #[test]
    fn dataset_types_merge() {
        assert_eq!(
            dataset_type_cues("comparison"),
            CueSet::from([Cue::EntityChoice])
        );
        assert_eq!(dataset_type_cues("person"), CueSet::from([Cue::Person]));
        assert!(dataset_type_cues("bridge").is_empty());
    }

    #[test]
    fn sentence_split() {
        let s = sentences("One. Two three! four. Five");
        assert_eq!(s, vec![(0, 4), (5, 21), (22, 26)]);
    }

    #[test]
    fn tokenizer_keeps_decimals_and_possessives() {
        let toks: Vec<&str> = tokenize("The Devil's Hairpin cost 1,200.50 dollars.")
            .iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(
            toks,
            vec!["The", "Devil's", "Hairpin", "cost", "1,200.50", "dollars"]
        );
    }
}
