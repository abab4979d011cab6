use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::header_rows;
use super::{build_outline, reconstruct_table, Block, DocError, ElementKind, LayoutElement, StructuredDocument};

/// Layout-element interchange file: document metadata plus one object per
/// element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutFile {
    pub doc_id: String,
    pub company: String,
    pub industry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market_cap_mhkd: Option<f64>,
    pub elements: Vec<LayoutElement>,
}

/// Read a report from disk. `.json` files use the layout interchange format;
/// anything else goes through the markdown/plain-text fallback.
pub fn ingest(path: &Path) -> Result<StructuredDocument, DocError> {
    let text = std::fs::read_to_string(path).map_err(|source| DocError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let file: LayoutFile = serde_json::from_str(&text)?;
        from_layout(file)
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "document".into());
        parse_markdown(&text, &stem)
    }
}

/// Build and validate a document from layout elements.
pub fn from_layout(file: LayoutFile) -> Result<StructuredDocument, DocError> {
    let LayoutFile {
        doc_id,
        company,
        industry,
        market_cap_mhkd,
        mut elements,
    } = file;
    for (i, e) in elements.iter().enumerate() {
        e.check(i)?;
    }
    elements.sort_by(|a, b| {
        a.page
            .cmp(&b.page)
            .then(a.bbox[1].total_cmp(&b.bbox[1]))
            .then(a.bbox[0].total_cmp(&b.bbox[0]))
    });

    let outline = build_outline(&elements);
    let blocks: Vec<Block> = elements
        .iter()
        .filter(|e| e.kind == ElementKind::Paragraph && !e.text.trim().is_empty())
        .map(|e| Block {
            text: e.text.trim().to_string(),
            page: e.page,
        })
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<LayoutElement>> = BTreeMap::new();
    for e in elements.iter().filter(|e| e.kind == ElementKind::TableCell) {
        let id = e.table_id.clone().expect("checked");
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(e.clone());
    }
    let tables = order
        .iter()
        .map(|id| reconstruct_table(&groups[id]))
        .collect::<Result<Vec<_>, _>>()?;

    let doc = StructuredDocument {
        doc_id,
        company,
        industry,
        market_cap_mhkd,
        outline,
        blocks,
        tables,
    };
    doc.validate()?;
    Ok(doc)
}

const LINE: f64 = 20.0;
const PARAGRAPH_FONT: f64 = 10.0;

fn heading_font(level: u32) -> f64 {
    36.0 / level.max(1) as f64
}

struct Cursor {
    page: u32,
    y: f64,
}

impl Cursor {
    fn next(&mut self, page: u32) -> [f64; 4] {
        if page != self.page {
            self.page = page;
            self.y = 0.0;
        }
        let y0 = self.y;
        self.y += LINE;
        [50.0, y0, 550.0, y0 + LINE * 0.8]
    }
}

/// Serialize a document to the layout interchange format. Ingesting the
/// result with [`from_layout`] yields the same document whenever its header
/// rows follow the default heuristic.
pub fn to_layout(doc: &StructuredDocument) -> LayoutFile {
    let mut elements = Vec::new();
    let mut cur = Cursor { page: 1, y: 0.0 };
    let mut last_page = doc.blocks.first().map(|b| b.page).unwrap_or(1);
    let push_blocks =
        |span: std::ops::Range<usize>, cur: &mut Cursor, elements: &mut Vec<LayoutElement>, last_page: &mut u32| {
            for b in &doc.blocks[span] {
                *last_page = b.page;
                elements.push(LayoutElement {
                    kind: ElementKind::Paragraph,
                    text: b.text.clone(),
                    page: b.page,
                    bbox: cur.next(b.page),
                    font_size: PARAGRAPH_FONT,
                    table_id: None,
                    row: None,
                    col: None,
                });
            }
        };
    push_blocks(doc.outline.span.clone(), &mut cur, &mut elements, &mut last_page);
    for (_, _, node) in doc.outline.walk() {
        let page = doc
            .blocks
            .get(node.span.start)
            .filter(|_| !node.span.is_empty())
            .map(|b| b.page)
            .unwrap_or(last_page);
        elements.push(LayoutElement {
            kind: ElementKind::Header,
            text: node.title.clone(),
            page,
            bbox: cur.next(page),
            font_size: heading_font(node.level),
            table_id: None,
            row: None,
            col: None,
        });
        last_page = page;
        push_blocks(node.span.clone(), &mut cur, &mut elements, &mut last_page);
    }
    let max_page = doc.blocks.iter().map(|b| b.page).max().unwrap_or(0);
    for (i, t) in doc.tables.iter().enumerate() {
        let page = max_page + 1 + i as u32;
        for (r, row) in t.cells.iter().enumerate() {
            for (c, text) in row.iter().enumerate() {
                let (x, y) = (50.0 + c as f64 * 120.0, r as f64 * LINE);
                elements.push(LayoutElement {
                    kind: ElementKind::TableCell,
                    text: text.clone(),
                    page,
                    bbox: [x, y, x + 110.0, y + LINE * 0.8],
                    font_size: PARAGRAPH_FONT,
                    table_id: Some(t.table_id.clone()),
                    row: Some(r),
                    col: Some(c),
                });
            }
        }
    }
    LayoutFile {
        doc_id: doc.doc_id.clone(),
        company: doc.company.clone(),
        industry: doc.industry.clone(),
        market_cap_mhkd: doc.market_cap_mhkd,
        elements,
    }
}

fn is_separator_row(line: &str) -> bool {
    let inner = line.trim().trim_matches('|');
    !inner.trim().is_empty()
        && inner.split('|').all(|c| {
            let c = c.trim().trim_matches(':');
            !c.is_empty() && c.chars().all(|ch| ch == '-')
        })
}

fn split_pipe_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').map(|c| c.trim().to_string()).collect()
}

struct PendingTable {
    rows: Vec<Vec<String>>,
    header_rows: Option<usize>,
}

/// Markdown / plain-text fallback.
///
/// `#` headings become outline headers at their markup level, runs of
/// non-blank lines become paragraphs, consecutive `|` lines become a table
/// (a `|---|` separator marks the header rows), and a form feed starts a new
/// page. An optional front-matter block between `---` lines may set
/// `doc_id`, `company`, `industry` and `market_cap_mhkd`.
pub fn parse_markdown(text: &str, default_id: &str) -> Result<StructuredDocument, DocError> {
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut body = text;
    if let Some(rest) = text.strip_prefix("---\n") {
        if let Some(end) = rest.find("\n---") {
            for line in rest[..end].lines() {
                if let Some((k, v)) = line.split_once(':') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            body = rest[end + 4..].trim_start_matches(['\r', '\n']);
        }
    }

    let mut elements: Vec<LayoutElement> = Vec::new();
    let mut header_overrides: BTreeMap<String, usize> = BTreeMap::new();
    let mut page = 1u32;
    let mut cur = Cursor { page: 1, y: 0.0 };
    let mut paragraph: Vec<&str> = Vec::new();
    let mut table: Option<PendingTable> = None;
    let mut n_tables = 0usize;

    let flush_paragraph =
        |paragraph: &mut Vec<&str>, elements: &mut Vec<LayoutElement>, cur: &mut Cursor, page: u32| {
            if paragraph.is_empty() {
                return;
            }
            let text = paragraph.join(" ");
            paragraph.clear();
            elements.push(LayoutElement {
                kind: ElementKind::Paragraph,
                text,
                page,
                bbox: cur.next(page),
                font_size: PARAGRAPH_FONT,
                table_id: None,
                row: None,
                col: None,
            });
        };
    let mut flush_table =
        |table: &mut Option<PendingTable>, elements: &mut Vec<LayoutElement>, cur: &mut Cursor, page: u32| {
            let Some(t) = table.take() else { return };
            n_tables += 1;
            let id = format!("t{n_tables}");
            let width = t.rows.iter().map(Vec::len).max().unwrap_or(0);
            for (r, row) in t.rows.iter().enumerate() {
                let bbox = cur.next(page);
                for c in 0..width {
                    let x = 50.0 + c as f64 * 120.0;
                    elements.push(LayoutElement {
                        kind: ElementKind::TableCell,
                        text: row.get(c).cloned().unwrap_or_default(),
                        page,
                        bbox: [x, bbox[1], x + 110.0, bbox[3]],
                        font_size: PARAGRAPH_FONT,
                        table_id: Some(id.clone()),
                        row: Some(r),
                        col: Some(c),
                    });
                }
            }
            if let Some(h) = t.header_rows {
                header_overrides.insert(id, h);
            }
        };

    for raw in body.split('\n') {
        let mut line = raw.trim_end_matches('\r');
        while let Some(rest) = line.strip_prefix('\u{c}') {
            flush_paragraph(&mut paragraph, &mut elements, &mut cur, page);
            flush_table(&mut table, &mut elements, &mut cur, page);
            page += 1;
            line = rest;
        }
        let trimmed = line.trim();
        if trimmed.starts_with('|') {
            flush_paragraph(&mut paragraph, &mut elements, &mut cur, page);
            let t = table.get_or_insert(PendingTable {
                rows: Vec::new(),
                header_rows: None,
            });
            if is_separator_row(trimmed) {
                if t.header_rows.is_none() {
                    t.header_rows = Some(t.rows.len());
                }
            } else {
                t.rows.push(split_pipe_row(trimmed));
            }
            continue;
        }
        flush_table(&mut table, &mut elements, &mut cur, page);
        let hashes = trimmed.chars().take_while(|c| *c == '#').count();
        if (1..=6).contains(&hashes) && trimmed[hashes..].starts_with([' ', '\t']) {
            flush_paragraph(&mut paragraph, &mut elements, &mut cur, page);
            elements.push(LayoutElement {
                kind: ElementKind::Header,
                text: trimmed[hashes..].trim().to_string(),
                page,
                bbox: cur.next(page),
                font_size: heading_font(hashes as u32),
                table_id: None,
                row: None,
                col: None,
            });
        } else if trimmed.is_empty() {
            flush_paragraph(&mut paragraph, &mut elements, &mut cur, page);
        } else {
            paragraph.push(trimmed);
        }
    }
    flush_paragraph(&mut paragraph, &mut elements, &mut cur, page);
    flush_table(&mut table, &mut elements, &mut cur, page);

    let market_cap_mhkd = match meta.get("market_cap_mhkd") {
        Some(v) => Some(v.parse::<f64>().map_err(|_| DocError::Invariant {
            doc_id: default_id.to_string(),
            reason: format!("market_cap_mhkd `{v}` is not a number"),
        })?),
        None => None,
    };
    let doc_id = meta.get("doc_id").cloned().unwrap_or_else(|| default_id.to_string());
    let mut doc = from_layout(LayoutFile {
        company: meta.get("company").cloned().unwrap_or_else(|| doc_id.clone()),
        industry: meta.get("industry").cloned().unwrap_or_else(|| "Unclassified".into()),
        doc_id,
        market_cap_mhkd,
        elements,
    })?;
    for t in &mut doc.tables {
        if let Some(h) = header_overrides.get(&t.table_id) {
            t.header_row_count = (*h).min(t.n_rows);
        } else {
            t.header_row_count = header_rows(&t.cells);
        }
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_heading_and_pipe_table() {
        let md = "## A\n\nSome text.\n\n| Metric | 2022 |\n|---|---|\n| Scope 1 | 12.5 |\n";
        let doc = parse_markdown(md, "m").unwrap();
        assert_eq!(doc.outline.descendant_count(), 1);
        assert_eq!(doc.outline.children[0].title, "A");
        assert_eq!(doc.tables.len(), 1);
        let t = &doc.tables[0];
        assert_eq!(t.cells, vec![vec!["Metric", "2022"], vec!["Scope 1", "12.5"]]);
        assert_eq!(t.header_row_count, 1);
        assert_eq!(doc.blocks.len(), 1);
    }

    #[test]
    fn front_matter_sets_metadata() {
        let md =
            "---\ndoc_id: acme-2022\ncompany: Acme\nindustry: Utilities\nmarket_cap_mhkd: 250\n---\nHello world.\n";
        let doc = parse_markdown(md, "x").unwrap();
        assert_eq!(doc.doc_id, "acme-2022");
        assert_eq!(doc.company, "Acme");
        assert_eq!(doc.market_cap_mhkd, Some(250.0));
        assert_eq!(doc.outline.span, 0..1);
    }

    #[test]
    fn form_feed_starts_new_page() {
        let doc = parse_markdown("one\n\u{c}two\n", "x").unwrap();
        assert_eq!(doc.blocks.iter().map(|b| b.page).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(parse_markdown("", "x"), Err(DocError::Empty(_))));
        assert!(matches!(
            parse_markdown("# Only a title\n", "x"),
            Err(DocError::Empty(_))
        ));
    }

    #[test]
    fn elements_are_sorted_into_reading_order() {
        let p = |text: &str, page: u32, y: f64| LayoutElement {
            kind: ElementKind::Paragraph,
            text: text.into(),
            page,
            bbox: [0.0, y, 10.0, y + 5.0],
            font_size: 10.0,
            table_id: None,
            row: None,
            col: None,
        };
        let doc = from_layout(LayoutFile {
            doc_id: "d".into(),
            company: "c".into(),
            industry: "i".into(),
            market_cap_mhkd: None,
            elements: vec![p("third", 2, 0.0), p("second", 1, 50.0), p("first", 1, 10.0)],
        })
        .unwrap();
        let texts: Vec<_> = doc.blocks.iter().map(|b| b.text.as_str()).collect();
        assert_eq!(texts, vec!["first", "second", "third"]);
    }

    #[test]
    fn invalid_geometry_names_element() {
        let file = LayoutFile {
            doc_id: "d".into(),
            company: "c".into(),
            industry: "i".into(),
            market_cap_mhkd: None,
            elements: vec![LayoutElement {
                kind: ElementKind::Paragraph,
                text: "x".into(),
                page: 1,
                bbox: [5.0, 0.0, 1.0, 1.0],
                font_size: 10.0,
                table_id: None,
                row: None,
                col: None,
            }],
        };
        assert!(matches!(
            from_layout(file),
            Err(DocError::InvalidElement { index: 0, .. })
        ));
    }
}
