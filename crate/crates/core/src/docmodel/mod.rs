//! Structured document model.
//!
//! A report arrives as layout elements (headers, paragraphs and table cells
//! with page geometry) produced by an upstream layout tool, or as plain
//! markdown. Ingestion turns either into a [`StructuredDocument`]: an outline
//! tree built from header font sizes, the ordered paragraph blocks, and the
//! reconstructed tables.

mod ingest;
mod outline;
mod table;

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{from_layout, ingest, parse_markdown, to_layout, LayoutFile};
pub use outline::{build_outline, flatten_spans};
pub use table::{reconstruct_table, render_table};

#[derive(Debug, Error)]
pub enum DocError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed layout file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("element {index}: {reason}")]
    InvalidElement { index: usize, reason: String },
    #[error("table `{table_id}`: {reason}")]
    Structure { table_id: String, reason: String },
    #[error("document `{doc_id}` violates an invariant: {reason}")]
    Invariant { doc_id: String, reason: String },
    #[error("document `{0}` contains no blocks or tables")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    Header,
    Paragraph,
    TableCell,
}

/// One element of a page as emitted by a layout tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutElement {
    pub kind: ElementKind,
    pub text: String,
    pub page: u32,
    /// `[x0, y0, x1, y1]` in page units, y growing down the page.
    pub bbox: [f64; 4],
    pub font_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

impl LayoutElement {
    pub(crate) fn check(&self, index: usize) -> Result<(), DocError> {
        let bad = |reason: String| DocError::InvalidElement { index, reason };
        if self.page < 1 {
            return Err(bad("page must be >= 1".into()));
        }
        let [x0, y0, x1, y1] = self.bbox;
        if !self.bbox.iter().all(|v| v.is_finite()) || !(x0 < x1 && y0 < y1) {
            return Err(bad(format!("degenerate bbox {:?}", self.bbox)));
        }
        if !(self.font_size.is_finite() && self.font_size > 0.0) {
            return Err(bad(format!("font_size must be positive, got {}", self.font_size)));
        }
        match (self.kind, &self.table_id) {
            (ElementKind::TableCell, None) => Err(bad("table cell without table_id".into())),
            (ElementKind::TableCell, Some(id)) if id.trim().is_empty() => {
                Err(bad("table cell with empty table_id".into()))
            }
            (ElementKind::Header | ElementKind::Paragraph, Some(_)) => {
                Err(bad("table_id is only allowed on table cells".into()))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub(crate) fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineNode {
    pub title: String,
    /// 0 for the synthetic root, >= 1 for real headers.
    pub level: u32,
    pub children: Vec<OutlineNode>,
    /// Blocks directly under this header, up to the next header of any level.
    pub span: Range<usize>,
}

impl OutlineNode {
    pub fn root() -> Self {
        OutlineNode {
            title: String::new(),
            level: 0,
            children: Vec::new(),
            span: 0..0,
        }
    }

    /// Number of nodes below this one.
    pub fn descendant_count(&self) -> usize {
        self.children.iter().map(|c| 1 + c.descendant_count()).sum()
    }

    /// Node reached by following child indices from this node.
    pub fn node_at(&self, path: &[usize]) -> Option<&OutlineNode> {
        let mut node = self;
        for &i in path {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    /// Pre-order walk over descendants, yielding (child-index path, titles root→node, node).
    pub fn walk(&self) -> Vec<(Vec<usize>, Vec<&str>, &OutlineNode)> {
        fn go<'a>(
            node: &'a OutlineNode,
            path: &mut Vec<usize>,
            titles: &mut Vec<&'a str>,
            out: &mut Vec<(Vec<usize>, Vec<&'a str>, &'a OutlineNode)>,
        ) {
            for (i, child) in node.children.iter().enumerate() {
                path.push(i);
                titles.push(child.title.as_str());
                out.push((path.clone(), titles.clone(), child));
                go(child, path, titles, out);
                titles.pop();
                path.pop();
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }

    fn check(&self, n_blocks: usize, prev_end: &mut usize) -> Result<(), String> {
        if self.span.start > self.span.end || self.span.end > n_blocks {
            return Err(format!("span {:?} of `{}` out of range", self.span, self.title));
        }
        if self.span.start < *prev_end {
            return Err(format!(
                "span {:?} of `{}` overlaps a previous span",
                self.span, self.title
            ));
        }
        *prev_end = self.span.end;
        for child in &self.children {
            if child.level <= self.level {
                return Err(format!(
                    "child `{}` (level {}) not deeper than parent `{}` (level {})",
                    child.title, child.level, self.title, self.level
                ));
            }
            child.check(n_blocks, prev_end)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub text: String,
    pub page: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub table_id: String,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major grid, exactly `n_rows` rows of `n_cols` cells.
    pub cells: Vec<Vec<String>>,
    pub header_row_count: usize,
}

impl Table {
    pub fn is_rectangular(&self) -> bool {
        self.n_rows > 0
            && self.n_cols > 0
            && self.cells.len() == self.n_rows
            && self.cells.iter().all(|r| r.len() == self.n_cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDocument {
    pub doc_id: String,
    pub company: String,
    pub industry: String,
    /// Market value in million HKD.
    pub market_cap_mhkd: Option<f64>,
    pub outline: OutlineNode,
    pub blocks: Vec<Block>,
    pub tables: Vec<Table>,
}

impl StructuredDocument {
    pub fn validate(&self) -> Result<(), DocError> {
        let invariant = |reason: String| DocError::Invariant {
            doc_id: self.doc_id.clone(),
            reason,
        };
        if self.doc_id.trim().is_empty() {
            return Err(invariant("empty doc_id".into()));
        }
        if self.blocks.is_empty() && self.tables.is_empty() {
            return Err(DocError::Empty(self.doc_id.clone()));
        }
        if let Some(cap) = self.market_cap_mhkd {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(invariant(format!("market_cap_mhkd must be positive, got {cap}")));
            }
        }
        let mut prev_end = 0;
        self.outline
            .check(self.blocks.len(), &mut prev_end)
            .map_err(invariant)?;
        let covered: usize = flatten_spans(&self.outline).len();
        if covered != self.blocks.len() {
            return Err(invariant(format!(
                "outline covers {covered} of {} blocks",
                self.blocks.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for t in &self.tables {
            if !t.is_rectangular() {
                return Err(invariant(format!("table `{}` is not rectangular", t.table_id)));
            }
            if t.header_row_count > t.n_rows {
                return Err(invariant(format!("table `{}` header_row_count too large", t.table_id)));
            }
            if !ids.insert(t.table_id.as_str()) {
                return Err(invariant(format!("duplicate table_id `{}`", t.table_id)));
            }
        }
        Ok(())
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }
}
