//! Resolves a (possibly stale) [`PositionSpec`] against a workspace snapshot
//! into ranked, scored candidates.
//!
//! Resolution order: a docVersion pin returns its remembered target; cursor
//! and range selectors map directly; symbolic and AST selectors walk the
//! module map and parse trees; anchors use exact occurrences and winnowed
//! k-gram matches. Every candidate is scored as a convex combination of four
//! features and the list is sorted by `(score desc, uri, range)`.

use crate::error::ErrorCode;
use crate::par::{self, Execution};
use crate::pyparse::{DefKind, Definition, ParsedModule};
use crate::selector::{print_selector, snippet_hash, IndexingMode, PositionSpec, Role, Selector};
use crate::text::identifier_tokens;
use crate::winnow;
use crate::workspace::{FileEntry, WorkspaceSnapshot};
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BTreeSet;

/// Neutral value for features the selector carries no evidence for.
pub const NEUTRAL: f64 = 0.5;
const MAX_IMPORT_HOPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreWeights {
    pub ast: f64,
    pub module: f64,
    pub token: f64,
    pub prox: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            ast: 0.5,
            module: 0.2,
            token: 0.2,
            prox: 0.1,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.ast, self.module, self.token, self.prox];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err("score weights must be finite and non-negative".into());
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("score weights must sum to 1, got {sum}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Features {
    pub s_ast: f64,
    pub s_module: f64,
    pub j_token: f64,
    pub s_prox: f64,
}

impl Features {
    pub const ONES: Features = Features {
        s_ast: 1.0,
        s_module: 1.0,
        j_token: 1.0,
        s_prox: 1.0,
    };
}

/// Convex combination of the features. Evaluated in tenths, left to right,
/// so the default weights give exact results on the grid of tenths (all-ones
/// is exactly 1.0).
pub fn score_candidate(f: &Features, w: &ScoreWeights) -> f64 {
    let scaled = (10.0 * w.ast) * f.s_ast
        + (10.0 * w.module) * f.s_module
        + (10.0 * w.token) * f.j_token
        + (10.0 * w.prox) * f.s_prox;
    (scaled / 10.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub uri: String,
    /// `[sL, sC, eL, eC]`, 1-based, in the server's position encoding.
    pub range: [u32; 4],
    pub score: f64,
    pub features: Features,
    pub explanation: String,
    /// Where to point position-based server requests (a definition's name
    /// token, or the range start).
    #[serde(skip)]
    pub focus: [u32; 2],
}

/// Total order: score descending, then uri, then range.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.uri.cmp(&b.uri))
        .then_with(|| a.range.cmp(&b.range))
}

/// Sorts by [`candidate_order`] and drops repeated `(uri, range)` targets,
/// keeping the best-scored one.
pub fn rank_candidates(mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by(candidate_order);
    let mut seen = BTreeSet::new();
    cands.retain(|c| seen.insert((c.uri.clone(), c.range)));
    cands
}

#[derive(Debug, Clone)]
pub struct RelocationConfig {
    pub k: usize,
    pub w: usize,
    /// Top scores below this attach disambiguation evidence.
    pub tau: f64,
    pub top_k: usize,
    pub weights: ScoreWeights,
    /// Encoding of emitted ranges (the server's negotiated encoding).
    pub encoding: IndexingMode,
    /// Ties at the top become `E/AMBIGUOUS` instead of a lexicographic pick.
    pub require_unique: bool,
    pub execution: Execution,
}

impl Default for RelocationConfig {
    fn default() -> Self {
        RelocationConfig {
            k: 7,
            w: 4,
            tau: 0.8,
            top_k: 5,
            weights: ScoreWeights::default(),
            encoding: IndexingMode::Utf16,
            require_unique: false,
            execution: Execution::Auto,
        }
    }
}

impl RelocationConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if self.k < 1 || self.w < 1 {
            return Err("k and w must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err("tau must lie in [0, 1]".into());
        }
        if self.top_k < 1 {
            return Err("top_k must be >= 1".into());
        }
        Ok(())
    }

    /// Echoed into bundle metadata.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "weights": self.weights,
            "k": self.k,
            "w": self.w,
            "tau": self.tau,
            "top_k": self.top_k,
            "fingerprint_hash": { "name": winnow::HASH_NAME, "base": winnow::HASH_BASE },
            "s_prox_neutral": NEUTRAL,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    pub original: String,
    pub resolved: Option<Candidate>,
    pub disambiguation: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorCode>,
    #[serde(skip)]
    pub message: Option<String>,
    /// Full ranked list (not serialized; the envelope carries top-k).
    #[serde(skip)]
    pub candidates: Vec<Candidate>,
}

impl Resolution {
    fn failed(original: String, code: ErrorCode, message: impl Into<String>) -> Self {
        Resolution {
            original,
            resolved: None,
            disambiguation: Vec::new(),
            error: Some(code),
            message: Some(message.into()),
            candidates: Vec::new(),
        }
    }

    /// Top disambiguation confidence (0 when unresolved).
    pub fn confidence(&self) -> f64 {
        self.resolved.as_ref().map_or(0.0, |c| c.score)
    }
}

// ---------------------------------------------------------------------------
// feature helpers

/// 1.0 for identical dotted paths, otherwise shared leading segments over the
/// longer path's segment count.
pub fn module_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let xs: Vec<&str> = a.split('.').collect();
    let ys: Vec<&str> = b.split('.').collect();
    let common = xs.iter().zip(&ys).take_while(|(x, y)| x == y).count();
    common as f64 / xs.len().max(ys.len()) as f64
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    identifier_tokens(text).map(|(_, t)| t.to_string()).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

const CONSTRUCTS: &[&str] = &[
    "def", "class", "async", "import", "from", "return", "if", "elif", "else", "for", "while", "with", "try", "except",
    "lambda", "raise", "yield", "assert",
];

/// Leading syntactic construct of a code fragment (`def`, `class`, ...), or
/// `expr` when it does not open with a statement keyword.
pub fn leading_construct(text: &str) -> &str {
    match identifier_tokens(text.trim_start()).next() {
        Some((0, t)) if CONSTRUCTS.contains(&t) => t,
        _ => "expr",
    }
}

// ---------------------------------------------------------------------------
// structural resolution

/// A raw structural hit before scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralMatch {
    pub uri: String,
    /// Module actually holding the target (differs from the selector's when
    /// reached through an import).
    pub module: String,
    /// `(kind, name)` from the outermost definition to the target.
    pub chain: Vec<(String, String)>,
    pub span: (usize, usize),
    pub focus: usize,
    pub via_import: Option<String>,
}

fn role_span(d: &Definition, role: Role) -> Option<(usize, usize)> {
    match role {
        Role::Def => Some((d.decorated_start, d.end)),
        Role::Sig => Some((d.start, d.sig_end)),
        Role::Body => Some(d.body),
        Role::Doc => d.doc,
    }
}

fn chain_of(defs: &[&Definition]) -> Vec<(String, String)> {
    defs.iter()
        .map(|d| (d.kind.as_str().to_string(), d.name.clone()))
        .collect()
}

fn walk_qualname<'a>(level: &'a [Definition], segs: &[&str], overload: u32) -> Vec<Vec<&'a Definition>> {
    let Some((&head, rest)) = segs.split_first() else {
        return Vec::new();
    };
    let same: Vec<&Definition> = level.iter().filter(|d| d.name == head).collect();
    if rest.is_empty() {
        return same.get(overload as usize).map(|d| vec![vec![*d]]).unwrap_or_default();
    }
    same.into_iter()
        .flat_map(|d| {
            walk_qualname(&d.children, rest, overload)
                .into_iter()
                .map(move |mut sub| {
                    sub.insert(0, d);
                    sub
                })
        })
        .collect()
}

/// `from .x import y` inside `pkg.mod` names `pkg.x`.
pub fn resolve_relative(import: &str, current_module: &str, current_is_package: bool) -> String {
    let dots = import.chars().take_while(|c| *c == '.').count();
    if dots == 0 {
        return import.to_string();
    }
    let mut base: Vec<&str> = current_module.split('.').collect();
    if !current_is_package {
        base.pop();
    }
    for _ in 1..dots {
        base.pop();
    }
    let tail = &import[dots..];
    if !tail.is_empty() {
        base.push(tail);
    }
    base.join(".")
}

struct SymbolQuery<'a> {
    role: Role,
    overload: u32,
    missing_doc: &'a std::cell::Cell<bool>,
}

fn resolve_symbol(
    ws: &WorkspaceSnapshot,
    module: &str,
    segs: &[&str],
    q: &SymbolQuery<'_>,
    hops: usize,
    via: Option<String>,
) -> Vec<StructuralMatch> {
    let Some(files) = ws.modules().get(module) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for uri in files {
        let Some(parsed) = ws.get(uri).and_then(|e| e.parsed()) else {
            continue;
        };
        let chains = walk_qualname(&parsed.defs, segs, q.overload);
        if chains.is_empty() && hops < MAX_IMPORT_HOPS {
            out.extend(follow_imports(ws, uri, module, parsed, segs, q, hops));
            continue;
        }
        for chain in chains {
            let target = chain[chain.len() - 1];
            match role_span(target, q.role) {
                Some(span) => out.push(StructuralMatch {
                    uri: uri.clone(),
                    module: module.to_string(),
                    chain: chain_of(&chain),
                    span,
                    focus: target.name_span.0,
                    via_import: via.clone(),
                }),
                None => q.missing_doc.set(true),
            }
        }
    }
    out
}

fn follow_imports(
    ws: &WorkspaceSnapshot,
    uri: &str,
    module: &str,
    parsed: &ParsedModule,
    segs: &[&str],
    q: &SymbolQuery<'_>,
    hops: usize,
) -> Vec<StructuralMatch> {
    let is_pkg = uri.ends_with("__init__.py") || uri.ends_with("__init__.pyi");
    let mut out = Vec::new();
    for imp in &parsed.imports {
        let target = resolve_relative(&imp.module, module, is_pkg);
        for (name, alias) in &imp.names {
            if alias == segs[0] {
                let mut next: Vec<&str> = vec![name.as_str()];
                next.extend_from_slice(&segs[1..]);
                let via = Some(format!("{module}:{alias} -> {target}.{name}"));
                out.extend(resolve_symbol(ws, &target, &next, q, hops + 1, via));
            }
        }
        if imp.names.is_empty() && imp.alias.as_deref() == Some(segs[0]) && segs.len() > 1 {
            let via = Some(format!("{module}:{} -> {target}", segs[0]));
            out.extend(resolve_symbol(ws, &target, &segs[1..], q, hops + 1, via));
        }
    }
    out
}

fn resolve_ast_in_file(
    uri: &str,
    entry: &FileEntry,
    segs: &[crate::selector::AstSegment],
    index: Option<u32>,
    module: &str,
) -> Vec<StructuralMatch> {
    let (Some(text), Some(parsed)) = (entry.text(), entry.parsed()) else {
        return Vec::new();
    };
    struct Scope<'a> {
        chain: Vec<&'a Definition>,
        span: (usize, usize),
        defs: &'a [Definition],
    }
    let mut scopes = vec![Scope {
        chain: Vec::new(),
        span: (0, text.len()),
        defs: &parsed.defs,
    }];
    let mut out = Vec::new();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        let mut next = Vec::new();
        for scope in &scopes {
            match seg.kind.as_str() {
                "class" | "def" => {
                    let kind = if seg.kind == "class" {
                        DefKind::Class
                    } else {
                        DefKind::Def
                    };
                    let mut hits: Vec<&Definition> = scope
                        .defs
                        .iter()
                        .filter(|d| d.kind == kind && (seg.name.is_empty() || d.name == seg.name))
                        .collect();
                    if let (true, Some(ix)) = (last, index) {
                        hits = hits.get(ix as usize).map(|d| vec![*d]).unwrap_or_default();
                    }
                    for d in hits {
                        let mut chain = scope.chain.clone();
                        chain.push(d);
                        next.push(Scope {
                            chain,
                            span: (d.decorated_start, d.end),
                            defs: &d.children,
                        });
                    }
                }
                "name" if last => {
                    let mut hits: Vec<(usize, usize)> = parsed
                        .names
                        .iter()
                        .filter(|&&(s, e)| s >= scope.span.0 && e <= scope.span.1)
                        .filter(|&&(s, e)| seg.name.is_empty() || text[s..e] == seg.name)
                        .copied()
                        .collect();
                    if let Some(ix) = index {
                        hits = hits.get(ix as usize).map(|h| vec![*h]).unwrap_or_default();
                    }
                    for (s, e) in hits {
                        let mut chain = chain_of(&scope.chain);
                        chain.push(("name".into(), text[s..e].to_string()));
                        out.push(StructuralMatch {
                            uri: uri.to_string(),
                            module: module.to_string(),
                            chain,
                            span: (s, e),
                            focus: s,
                            via_import: None,
                        });
                    }
                }
                _ => {}
            }
        }
        scopes = next;
    }
    if segs.last().is_some_and(|s| s.kind != "name") || segs.is_empty() {
        for scope in scopes {
            let focus = scope.chain.last().map_or(0, |d| d.name_span.0);
            out.push(StructuralMatch {
                uri: uri.to_string(),
                module: module.to_string(),
                chain: chain_of(&scope.chain),
                span: scope.span,
                focus,
                via_import: None,
            });
        }
    }
    out
}

/// Structural candidates for symbolic and AST-path selectors. Errors with
/// `E/NOT_FOUND` when the named module is not in the workspace.
pub fn resolve_structural(
    spec: &PositionSpec,
    ws: &WorkspaceSnapshot,
    exec: Execution,
) -> Result<Vec<StructuralMatch>, (ErrorCode, String)> {
    match &spec.selector {
        Selector::Symbolic {
            module,
            qualname,
            role,
            overload,
        } => {
            if !ws.modules().contains_key(module) {
                return Err((ErrorCode::NotFound, format!("module '{module}' not found in workspace")));
            }
            let segs: Vec<&str> = qualname.split(['.', ':']).collect();
            let missing_doc = std::cell::Cell::new(false);
            let q = SymbolQuery {
                role: *role,
                overload: *overload,
                missing_doc: &missing_doc,
            };
            let found = resolve_symbol(ws, module, &segs, &q, 0, None);
            if found.is_empty() && missing_doc.get() {
                return Err((
                    ErrorCode::NotFound,
                    format!("'{qualname}' has no docstring for role :doc"),
                ));
            }
            Ok(found)
        }
        Selector::AstPath { path, index } => {
            let (files, rest, module): (Vec<String>, &[crate::selector::AstSegment], Option<&str>) = match path.first()
            {
                Some(first) if first.kind == "module" => {
                    let files = ws.modules().get(&first.name).cloned().ok_or_else(|| {
                        (
                            ErrorCode::NotFound,
                            format!("module '{}' not found in workspace", first.name),
                        )
                    })?;
                    (files, &path[1..], Some(first.name.as_str()))
                }
                _ => (ws.files.keys().cloned().collect(), &path[..], None),
            };
            let found = par::flat_map(exec, &files, |uri| {
                let m = module.map_or_else(|| ws.module_of(uri), str::to_string);
                ws.get(uri)
                    .map(|e| resolve_ast_in_file(uri, e, rest, *index, &m))
                    .unwrap_or_default()
            });
            Ok(found)
        }
        _ => Ok(Vec::new()),
    }
}

// ---------------------------------------------------------------------------
// relocation

struct Raw {
    uri: String,
    span: (usize, usize),
    focus: usize,
    features: Features,
    explanation: String,
}

fn to_candidate(ws: &WorkspaceSnapshot, raw: Raw, cfg: &RelocationConfig) -> Option<Candidate> {
    let entry = ws.get(&raw.uri)?;
    let (text, lines) = (entry.text()?, entry.lines()?);
    let (fl, fc) = lines.position(text, raw.focus, cfg.encoding);
    Some(Candidate {
        range: lines.range(text, raw.span.0, raw.span.1, cfg.encoding),
        score: score_candidate(&raw.features, &cfg.weights),
        features: raw.features,
        explanation: raw.explanation,
        focus: [fl, fc],
        uri: raw.uri,
    })
}

fn finish(original: String, cands: Vec<Candidate>, cfg: &RelocationConfig) -> Resolution {
    let ranked = rank_candidates(cands);
    let Some(top) = ranked.first().cloned() else {
        return Resolution::failed(original, ErrorCode::NotFound, "no candidate matches the selector");
    };
    let tie = ranked.get(1).is_some_and(|c| c.score == top.score);
    let low = top.score < cfg.tau;
    let disambiguation = if tie || low {
        ranked.iter().take(cfg.top_k).cloned().collect()
    } else {
        Vec::new()
    };
    if tie && cfg.require_unique {
        return Resolution {
            original,
            resolved: None,
            disambiguation,
            error: Some(ErrorCode::Ambiguous),
            message: Some(format!(
                "{} candidates tie at score {}",
                ranked.iter().filter(|c| c.score == top.score).count(),
                top.score
            )),
            candidates: ranked,
        };
    }
    Resolution {
        original,
        resolved: Some(top),
        disambiguation,
        error: None,
        message: None,
        candidates: ranked,
    }
}

/// Files a docVersion must be checked against.
fn version_scope(spec: &PositionSpec, ws: &WorkspaceSnapshot) -> Vec<String> {
    match &spec.selector {
        Selector::Symbolic { module, .. } => ws.modules().get(module).cloned().unwrap_or_default(),
        Selector::AstPath { path, .. } => match path.first() {
            Some(f) if f.kind == "module" => ws.modules().get(&f.name).cloned().unwrap_or_default(),
            _ => ws.files.keys().cloned().collect(),
        },
        _ => spec.uri().and_then(|u| ws.relative_uri(u)).into_iter().collect(),
    }
}

pub fn relocate(spec: &PositionSpec, ws: &WorkspaceSnapshot, cfg: &RelocationConfig) -> Resolution {
    let original = print_selector(spec);

    if let Some(v) = &spec.doc_version {
        if let Some(pin) = ws.pins.get(&(original.clone(), v.clone())) {
            let cand = Candidate {
                uri: pin.uri.clone(),
                range: pin.range,
                score: 1.0,
                features: Features::ONES,
                explanation: format!("pinned by docVersion {v}"),
                focus: pin.focus.unwrap_or([pin.range[0], pin.range[1]]),
            };
            return finish(original, vec![cand], cfg);
        }
        let scope = version_scope(spec, ws);
        if !scope.iter().any(|u| ws.get(u).is_some_and(|e| e.matches_version(v))) {
            return Resolution::failed(
                original,
                ErrorCode::VersionSkew,
                format!("docVersion '{v}' does not match the current snapshot"),
            );
        }
    }

    match &spec.selector {
        Selector::Cursor {
            uri,
            line,
            col,
            indexing,
        } => direct(ws, cfg, original, uri, (*line, *col), (*line, *col), *indexing),
        Selector::Range {
            uri,
            start,
            end,
            indexing,
        } => direct(
            ws,
            cfg,
            original,
            uri,
            (start.line, start.col),
            (end.line, end.col),
            *indexing,
        ),
        Selector::Symbolic { .. } | Selector::AstPath { .. } => structural(spec, ws, cfg, original),
        Selector::Anchor {
            uri,
            snippet,
            ctx,
            hash,
        } => anchor(ws, cfg, original, uri, snippet, *ctx, hash.as_deref()),
    }
}

fn direct(
    ws: &WorkspaceSnapshot,
    cfg: &RelocationConfig,
    original: String,
    uri: &str,
    start: (u32, u32),
    end: (u32, u32),
    indexing: IndexingMode,
) -> Resolution {
    let Some(rel) = ws.relative_uri(uri) else {
        return Resolution::failed(
            original,
            ErrorCode::NotFound,
            format!("'{uri}' is outside the workspace"),
        );
    };
    let Some((entry, text, lines)) = ws.get(&rel).and_then(|e| Some((e, e.text()?, e.lines()?))) else {
        return Resolution::failed(original, ErrorCode::NotFound, format!("no tracked text file '{rel}'"));
    };
    let _ = entry;
    let s = match lines.offset(text, start.0, start.1, indexing) {
        Ok(o) => o,
        Err(e) => return Resolution::failed(original, e.code, e.message),
    };
    let e = match lines.offset(text, end.0, end.1, indexing) {
        Ok(o) => o,
        Err(e) => return Resolution::failed(original, e.code, e.message),
    };
    let raw = Raw {
        uri: rel,
        span: (s, e),
        focus: s,
        features: Features::ONES,
        explanation: format!("direct position ({indexing} -> {})", cfg.encoding),
    };
    finish(original, to_candidate(ws, raw, cfg).into_iter().collect(), cfg)
}

fn structural(spec: &PositionSpec, ws: &WorkspaceSnapshot, cfg: &RelocationConfig, original: String) -> Resolution {
    let found = match resolve_structural(spec, ws, cfg.execution) {
        Ok(f) => f,
        Err((code, msg)) => return Resolution::failed(original, code, msg),
    };
    let (want_module, want_tokens): (Option<&str>, BTreeSet<String>) = match &spec.selector {
        Selector::Symbolic { module, qualname, .. } => (
            Some(module),
            module
                .split('.')
                .chain(qualname.split(['.', ':']))
                .map(str::to_string)
                .collect(),
        ),
        Selector::AstPath { path, .. } => {
            let module = path.first().filter(|s| s.kind == "module").map(|s| s.name.as_str());
            let toks = path
                .iter()
                .filter(|s| !s.name.is_empty())
                .flat_map(|s| s.name.split('.'))
                .map(str::to_string)
                .collect();
            (module, toks)
        }
        _ => (None, BTreeSet::new()),
    };
    let raws = found.into_iter().map(|m| {
        let mut have: BTreeSet<String> = m.chain.iter().map(|(_, n)| n.clone()).collect();
        if want_module.is_some() {
            have.extend(m.module.split('.').map(str::to_string));
        }
        let s_module = want_module.map_or(NEUTRAL, |w| module_similarity(w, &m.module));
        let path = m
            .chain
            .iter()
            .map(|(k, n)| format!("{k} {n}"))
            .collect::<Vec<_>>()
            .join(" > ");
        let mut explanation = format!("structural match {path} in {}", m.uri);
        if let Some(v) = &m.via_import {
            explanation.push_str(&format!(" via import {v}"));
        }
        Raw {
            uri: m.uri,
            span: m.span,
            focus: m.focus,
            features: Features {
                s_ast: 1.0,
                s_module,
                j_token: jaccard(&want_tokens, &have),
                s_prox: NEUTRAL,
            },
            explanation,
        }
    });
    let cands = raws.filter_map(|r| to_candidate(ws, r, cfg)).collect();
    finish(original, cands, cfg)
}

fn occurrences(text: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = text[from..].find(needle) {
        out.push(from + i);
        let step = text[from + i..].chars().next().map_or(1, char::len_utf8);
        from += i + step;
    }
    out
}

fn line_start_within(text: &str, offset: usize, ctx: usize) -> usize {
    let ls = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let floor = text[..offset]
        .char_indices()
        .rev()
        .nth(ctx.saturating_sub(1))
        .map_or(0, |(i, _)| i);
    ls.max(floor)
}

fn anchor(
    ws: &WorkspaceSnapshot,
    cfg: &RelocationConfig,
    original: String,
    uri: &str,
    snippet: &str,
    ctx: u32,
    hash: Option<&str>,
) -> Resolution {
    let named = ws.relative_uri(uri).filter(|u| ws.get(u).is_some());
    let files: Vec<String> = match &named {
        Some(u) => vec![u.clone()],
        None => ws.files.keys().cloned().collect(),
    };
    let named_module = ws.module_of(named.as_deref().unwrap_or(uri));
    let hash_ok = hash.is_none_or(|h| h == snippet_hash(snippet));
    let snippet_tokens = token_set(snippet);
    let snippet_kind = leading_construct(snippet);

    struct Hits {
        uri: String,
        exact: Vec<usize>,
        fuzzy: Vec<winnow::FuzzyMatch>,
    }
    let hits: Vec<Hits> = par::map(cfg.execution, &files, |u| {
        let Some(text) = ws.get(u).and_then(|e| e.text()) else {
            return Hits {
                uri: u.clone(),
                exact: vec![],
                fuzzy: vec![],
            };
        };
        let exact = if hash_ok {
            occurrences(text, snippet)
        } else {
            Vec::new()
        };
        let fuzzy = winnow::fuzzy_within_ctx(snippet, ctx, text, cfg.k, cfg.w)
            .into_iter()
            .filter(|m| !exact.iter().any(|&s| m.start < s + snippet.len() && s < m.end))
            .collect();
        Hits {
            uri: u.clone(),
            exact,
            fuzzy,
        }
    });

    let exact_total: usize = hits.iter().map(|h| h.exact.len()).sum();
    let mut raws = Vec::new();
    for h in hits {
        let Some(text) = ws.get(&h.uri).and_then(|e| e.text()) else {
            continue;
        };
        let s_module = module_similarity(&named_module, &ws.module_of(&h.uri));
        for &s in &h.exact {
            let unique = exact_total == 1 && named.as_deref() == Some(h.uri.as_str());
            let (features, explanation) = if unique {
                (Features::ONES, "exact anchor match, unique within file".to_string())
            } else {
                (
                    Features {
                        s_ast: 1.0,
                        s_module,
                        j_token: 1.0,
                        s_prox: NEUTRAL,
                    },
                    format!("exact anchor match, one of {exact_total} occurrences"),
                )
            };
            raws.push(Raw {
                uri: h.uri.clone(),
                span: (s, s + snippet.len()),
                focus: s,
                features,
                explanation,
            });
        }
        for m in &h.fuzzy {
            let region = &text[m.start..m.end];
            let from_line = &text[line_start_within(text, m.start, ctx as usize)..m.end];
            let kind_match = leading_construct(region) == snippet_kind || leading_construct(from_line) == snippet_kind;
            raws.push(Raw {
                uri: h.uri.clone(),
                span: (m.start, m.end),
                focus: m.start,
                features: Features {
                    s_ast: if kind_match { 1.0 } else { 0.0 },
                    s_module,
                    j_token: jaccard(&snippet_tokens, &token_set(region)),
                    s_prox: NEUTRAL,
                },
                explanation: format!(
                    "fuzzy anchor match: {}/{} fingerprints (strength {}), k={}, w={}",
                    m.matched,
                    m.total,
                    m.strength,
                    cfg.k.min(snippet.chars().count()),
                    cfg.w
                ),
            });
        }
    }
    let cands = raws.into_iter().filter_map(|r| to_candidate(ws, r, cfg)).collect();
    finish(original, cands, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::parse_selector;

    const MOD: &str = "\
import os
from .helpers import load_data as ld


class Class:
    \"\"\"Doc.\"\"\"

    def method(self, x):
        return x

    def method(self, x, y):
        return y


def load_data(path):
    return open(path)


def nodoc():
    pass
";

    const HELPERS: &str = "def load_data(path):\n    \"\"\"Read.\"\"\"\n    return 1\n";

    fn ws() -> WorkspaceSnapshot {
        WorkspaceSnapshot::from_texts(
            "/w",
            [
                ("pkg/mod.py", MOD),
                ("pkg/helpers.py", HELPERS),
                ("pkg/__init__.py", ""),
            ],
        )
    }

    fn run(sel: &str) -> Resolution {
        relocate(&parse_selector(sel).unwrap(), &ws(), &RelocationConfig::default())
    }

    #[test]
    fn score_examples() {
        let w = ScoreWeights::default();
        let f = |a, b, c, d| Features {
            s_ast: a,
            s_module: b,
            j_token: c,
            s_prox: d,
        };
        assert_eq!(score_candidate(&f(1.0, 1.0, 1.0, 1.0), &w), 1.0);
        assert_eq!(score_candidate(&f(1.0, 0.0, 0.0, 0.0), &w), 0.5);
        assert_eq!(score_candidate(&f(0.0, 0.5, 0.5, 1.0), &w), 0.3);
    }

    #[test]
    fn unique_def() {
        let r = run("py://pkg.mod#Class.method:def");
        let c = r.resolved.expect("resolved");
        assert_eq!(c.uri, "pkg/mod.py");
        assert_eq!(c.range[0], 8);
        assert_eq!(c.range[2], 9);
        assert_eq!(c.focus, [8, 9]);
        assert!(r.disambiguation.is_empty());
        assert_eq!(c.score, score_candidate(&c.features, &ScoreWeights::default()));
    }

    #[test]
    fn overload_and_roles() {
        let r = run("py://pkg.mod#Class.method:sig?overload=1");
        assert_eq!(r.resolved.unwrap().range, [11, 5, 11, 28]);
        assert_eq!(
            run("py://pkg.mod#load_data?overload=1").error,
            Some(ErrorCode::NotFound)
        );
        assert_eq!(run("py://pkg.mod#nodoc:doc").error, Some(ErrorCode::NotFound));
        let doc = run("py://pkg.mod#Class:doc").resolved.unwrap();
        assert_eq!(doc.range, [6, 5, 6, 15]);
        let body = run("py://pkg.mod#load_data:body").resolved.unwrap();
        assert_eq!(body.range, [16, 5, 16, 22]);
    }

    #[test]
    fn missing_symbol_and_module() {
        assert_eq!(run("py://pkg.mod#gone").error, Some(ErrorCode::NotFound));
        assert_eq!(run("py://nope#x").error, Some(ErrorCode::NotFound));
    }

    #[test]
    fn follows_imports() {
        let r = run("py://pkg.mod#ld:doc");
        let c = r.resolved.unwrap();
        assert_eq!(c.uri, "pkg/helpers.py");
        assert!(c.explanation.contains("via import"));
        assert!(c.features.s_module < 1.0);
    }

    #[test]
    fn ast_paths() {
        let r = run("ast://[module=pkg.mod]/[class=Class]/[def=method]/name[2]");
        let c = r.resolved.unwrap();
        assert_eq!(c.range, [8, 22, 8, 23]); // `x` in `def method(self, x)`
        let all = run("ast://[def=load_data]");
        assert_eq!(all.candidates.len(), 2);
        assert!(all.candidates[0].uri < all.candidates[1].uri);
    }

    #[test]
    fn anchors() {
        let r = run("anchor://pkg/mod.py#\"def%20nodoc(\"");
        let c = r.resolved.unwrap();
        assert_eq!(c.score, 1.0);
        assert_eq!(c.range, [19, 1, 19, 11]);
        // two verbatim occurrences in the file: ranked, tied, disambiguated
        let r = run("anchor://pkg/mod.py#\"def%20method(self,%20x\"");
        assert!(r.resolved.is_some());
        assert!(!r.disambiguation.is_empty());
        let r = run("anchor://pkg/mod.py#\"def%20lod_data(path):\"");
        let c = r.resolved.unwrap();
        assert!(c.explanation.starts_with("fuzzy"));
        assert_eq!(c.range[0], 15);
    }

    #[test]
    fn tie_policy() {
        let spec = parse_selector("ast://[def=load_data]").unwrap();
        let cfg = RelocationConfig {
            require_unique: true,
            ..Default::default()
        };
        let r = relocate(&spec, &ws(), &cfg);
        assert_eq!(r.error, Some(ErrorCode::Ambiguous));
        assert!(r.resolved.is_none());
        assert_eq!(r.disambiguation.len(), 2);
    }

    #[test]
    fn doc_version() {
        let mut spec = parse_selector("pkg/mod.py@L1:C1").unwrap();
        spec.doc_version = Some("0".into());
        assert!(relocate(&spec, &ws(), &RelocationConfig::default()).resolved.is_some());
        spec.doc_version = Some("7".into());
        assert_eq!(
            relocate(&spec, &ws(), &RelocationConfig::default()).error,
            Some(ErrorCode::VersionSkew)
        );
    }

    #[test]
    fn relative_imports() {
        assert_eq!(resolve_relative(".helpers", "pkg.mod", false), "pkg.helpers");
        assert_eq!(resolve_relative(".", "pkg", true), "pkg");
        assert_eq!(resolve_relative("..x", "a.b.c", false), "a.x");
        assert_eq!(resolve_relative("os.path", "a", false), "os.path");
    }

    #[test]
    fn module_similarity_rule() {
        assert_eq!(module_similarity("a.b", "a.b"), 1.0);
        assert_eq!(module_similarity("a.b", "a.c"), 0.5);
        assert_eq!(module_similarity("a.b.c", "x"), 0.0);
    }
}
