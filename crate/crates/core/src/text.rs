//! Line tables over document text: byte offsets <-> 1-based (line, col) in
//! any [`IndexingMode`].

use crate::error::{ErrorCode, LanserError};
use crate::selector::IndexingMode;

#[derive(Debug, Clone)]
pub struct LineIndex {
    /// Byte offset of the first byte of each line.
    starts: Vec<usize>,
    len: usize,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        LineIndex {
            starts,
            len: text.len(),
        }
    }

    pub fn line_count(&self) -> u32 {
        self.starts.len() as u32
    }

    /// Text of a 1-based line without its terminator.
    pub fn line_text<'a>(&self, text: &'a str, line: u32) -> Option<&'a str> {
        let i = (line as usize).checked_sub(1)?;
        let start = *self.starts.get(i)?;
        let end = self.starts.get(i + 1).map_or(self.len, |e| e - 1);
        let s = &text[start..end];
        Some(s.strip_suffix('\r').unwrap_or(s))
    }

    /// 1-based (line, col) of a byte offset.
    pub fn position(&self, text: &str, offset: usize, enc: IndexingMode) -> (u32, u32) {
        let offset = offset.min(self.len);
        let line_ix = match self.starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let start = self.starts[line_ix];
        let col = enc.units(&text[start..offset]);
        (line_ix as u32 + 1, col + 1)
    }

    /// Byte offset of a 1-based (line, col). A column one past the last
    /// character of the line is valid (end-of-line).
    pub fn offset(&self, text: &str, line: u32, col: u32, enc: IndexingMode) -> Result<usize, LanserError> {
        let line_text = self.line_text(text, line).ok_or_else(|| {
            LanserError::new(
                ErrorCode::NotFound,
                format!("line {line} is outside the document ({} lines)", self.line_count()),
            )
        })?;
        let start = self.starts[line as usize - 1];
        let target = col
            .checked_sub(1)
            .ok_or_else(|| LanserError::new(ErrorCode::IndexingMismatch, "column must be >= 1"))?;
        let mut units = 0;
        for (i, c) in line_text.char_indices() {
            if units == target {
                return Ok(start + i);
            }
            units += enc.width(c);
            if units > target {
                return Err(LanserError::new(
                    ErrorCode::IndexingMismatch,
                    format!("L{line}:C{col} ({enc}) falls inside a multi-unit character"),
                ));
            }
        }
        if units == target {
            Ok(start + line_text.len())
        } else {
            Err(LanserError::new(
                ErrorCode::IndexingMismatch,
                format!("L{line}:C{col} ({enc}) is past the end of the line"),
            ))
        }
    }

    /// Flat `[sL, sC, eL, eC]` for a byte range.
    pub fn range(&self, text: &str, start: usize, end: usize, enc: IndexingMode) -> [u32; 4] {
        let (sl, sc) = self.position(text, start, enc);
        let (el, ec) = self.position(text, end, enc);
        [sl, sc, el, ec]
    }
}

/// Maximal runs of identifier characters (XID_Start/'_' followed by
/// XID_Continue), with their byte offsets.
pub fn identifier_tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut iter = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (start, c) = iter.next()?;
        if c == '_' || unicode_ident::is_xid_start(c) {
            let mut end = start + c.len_utf8();
            while let Some(&(i, n)) = iter.peek() {
                if unicode_ident::is_xid_continue(n) {
                    end = i + n.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            return Some((start, &text[start..end]));
        } else if unicode_ident::is_xid_continue(c) {
            // digits glued to an identifier-less run: skip the whole run
            while let Some(&(_, n)) = iter.peek() {
                if unicode_ident::is_xid_continue(n) {
                    iter.next();
                } else {
                    break;
                }
            }
        }
    })
}
