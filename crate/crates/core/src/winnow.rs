//! Winnowed k-gram fingerprints and fuzzy snippet search.
//!
//! k-grams are taken over Unicode scalar values and hashed with a 64-bit
//! polynomial rolling hash (wrapping arithmetic, fixed base). From every
//! window of `w` consecutive k-gram hashes the minimum is kept, rightmost on
//! ties.

use std::collections::{BTreeMap, BTreeSet};

/// Multiplier of the rolling hash (the 64-bit FNV prime).
pub const HASH_BASE: u64 = 0x0000_0100_0000_01B3;
/// Identifier recorded in bundle metadata.
pub const HASH_NAME: &str = "poly64-wrapping";

/// Rolling hashes of every k-gram of `chars`, in order.
pub fn kgram_hashes(chars: &[char], k: usize) -> Vec<u64> {
    if k == 0 || chars.len() < k {
        return Vec::new();
    }
    let top = (1..k).fold(1u64, |acc, _| acc.wrapping_mul(HASH_BASE));
    let mut h = chars[..k]
        .iter()
        .fold(0u64, |acc, &c| acc.wrapping_mul(HASH_BASE).wrapping_add(c as u64));
    let mut out = Vec::with_capacity(chars.len() - k + 1);
    out.push(h);
    for i in k..chars.len() {
        h = h
            .wrapping_sub((chars[i - k] as u64).wrapping_mul(top))
            .wrapping_mul(HASH_BASE)
            .wrapping_add(chars[i] as u64);
        out.push(h);
    }
    out
}

/// Selected `(hash, k-gram index)` pairs, each position reported once.
pub fn winnow(hashes: &[u64], w: usize) -> Vec<(u64, usize)> {
    if hashes.is_empty() {
        return Vec::new();
    }
    let w = w.max(1).min(hashes.len());
    let mut out: Vec<(u64, usize)> = Vec::new();
    for start in 0..=hashes.len() - w {
        let mut best = start;
        for j in start..start + w {
            if hashes[j] <= hashes[best] {
                best = j;
            }
        }
        if out.last().is_none_or(|&(_, p)| p != best) {
            out.push((hashes[best], best));
        }
    }
    out
}

pub fn fingerprints(text: &str, k: usize, w: usize) -> Vec<(u64, usize)> {
    let chars: Vec<char> = text.chars().collect();
    winnow(&kgram_hashes(&chars, k), w)
}

/// A document region that shares fingerprints with the snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyMatch {
    /// Byte range aligned to the snippet.
    pub start: usize,
    pub end: usize,
    /// The same range widened by up to `ctx` characters each side.
    pub ctx_start: usize,
    pub ctx_end: usize,
    /// |matched snippet fingerprints| / |snippet fingerprints|.
    pub strength: f64,
    pub matched: usize,
    pub total: usize,
}

/// Finds regions of `document` whose winnowed fingerprints overlap those of
/// `snippet`. k shrinks to the snippet length for short snippets. Results
/// are ordered by start offset.
pub fn fuzzy_within_ctx(snippet: &str, ctx: u32, document: &str, k: usize, w: usize) -> Vec<FuzzyMatch> {
    let snip: Vec<char> = snippet.chars().collect();
    if snip.is_empty() {
        return Vec::new();
    }
    let k = k.clamp(1, snip.len());
    let snip_fp = winnow(&kgram_hashes(&snip, k), w);
    let mut snip_pos: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &(h, p) in &snip_fp {
        snip_pos.entry(h).or_default().push(p);
    }
    let total = snip_pos.len();

    let doc_chars: Vec<(usize, char)> = document.char_indices().collect();
    let chars: Vec<char> = doc_chars.iter().map(|&(_, c)| c).collect();
    let doc_fp = winnow(&kgram_hashes(&chars, k), w);

    // alignment = doc position - snippet position of the shared fingerprint
    let mut hits: Vec<(isize, u64)> = Vec::new();
    for &(h, p) in &doc_fp {
        if let Some(qs) = snip_pos.get(&h) {
            hits.extend(qs.iter().map(|&q| (p as isize - q as isize, h)));
        }
    }
    hits.sort_unstable();
    hits.dedup();

    let byte_at = |ci: usize| doc_chars.get(ci).map_or(document.len(), |&(b, _)| b);
    let n = chars.len() as isize;
    let mut out = Vec::new();
    let mut i = 0;
    while i < hits.len() {
        let mut j = i + 1;
        while j < hits.len() && hits[j].0 - hits[j - 1].0 <= k as isize {
            j += 1;
        }
        let cluster = &hits[i..j];
        let matched = cluster.iter().map(|&(_, h)| h).collect::<BTreeSet<_>>().len();
        let lo = cluster[0].0.clamp(0, n) as usize;
        let hi = (cluster[cluster.len() - 1].0 + snip.len() as isize).clamp(0, n) as usize;
        let clo = lo.saturating_sub(ctx as usize);
        let chi = (hi + ctx as usize).min(chars.len());
        out.push(FuzzyMatch {
            start: byte_at(lo),
            end: byte_at(hi),
            ctx_start: byte_at(clo),
            ctx_end: byte_at(chi),
            strength: matched as f64 / total as f64,
            matched,
            total,
        });
        i = j;
    }
    out.sort_by_key(|a| (a.start, a.end));
    out
}
