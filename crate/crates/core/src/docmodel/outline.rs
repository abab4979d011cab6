use super::{ElementKind, LayoutElement, OutlineNode};

/// Font sizes closer than 1/100 pt are treated as the same heading style.
fn size_key(font_size: f64) -> i64 {
    (font_size * 100.0).round() as i64
}

/// Build the outline tree from elements in reading order.
///
/// Heading levels are the rank of each header's font size among the distinct
/// header sizes (largest = level 1). A header becomes a child of the closest
/// preceding header with a smaller level. Paragraphs before the first header
/// belong to the synthetic root; table cells are ignored.
pub fn build_outline(elements: &[LayoutElement]) -> OutlineNode {
    let mut sizes: Vec<i64> = elements
        .iter()
        .filter(|e| e.kind == ElementKind::Header)
        .map(|e| size_key(e.font_size))
        .collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    let level_of = |size: f64| -> u32 {
        let key = size_key(size);
        sizes.iter().position(|s| *s == key).map(|p| p as u32 + 1).unwrap_or(1)
    };

    // Flat list of headers with their direct block spans.
    let mut root_end = 0;
    let mut flat: Vec<OutlineNode> = Vec::new();
    let mut n_blocks = 0;
    for e in elements {
        match e.kind {
            ElementKind::Header => {
                flat.push(OutlineNode {
                    title: e.text.trim().to_string(),
                    level: level_of(e.font_size),
                    children: Vec::new(),
                    span: n_blocks..n_blocks,
                });
            }
            ElementKind::Paragraph => {
                if e.text.trim().is_empty() {
                    continue;
                }
                n_blocks += 1;
                match flat.last_mut() {
                    Some(h) => h.span.end = n_blocks,
                    None => root_end = n_blocks,
                }
            }
            ElementKind::TableCell => {}
        }
    }

    let mut root = OutlineNode::root();
    root.span = 0..root_end;
    let mut iter = flat.into_iter().peekable();
    root.children = nest(&mut iter, 0);
    root
}

fn nest<I>(items: &mut std::iter::Peekable<I>, parent_level: u32) -> Vec<OutlineNode>
where
    I: Iterator<Item = OutlineNode>,
{
    let mut out = Vec::new();
    while let Some(next) = items.peek() {
        if next.level <= parent_level {
            break;
        }
        let mut node = items.next().expect("peeked");
        node.children = nest(items, node.level);
        out.push(node);
    }
    out
}

/// Block indices in outline pre-order: the root's own span, then each
/// descendant's span.
pub fn flatten_spans(root: &OutlineNode) -> Vec<usize> {
    let mut out: Vec<usize> = root.span.clone().collect();
    for (_, _, node) in root.walk() {
        out.extend(node.span.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(text: &str, size: f64) -> LayoutElement {
        LayoutElement {
            kind: ElementKind::Header,
            text: text.into(),
            page: 1,
            bbox: [0.0, 0.0, 100.0, 10.0],
            font_size: size,
            table_id: None,
            row: None,
            col: None,
        }
    }

    fn para(text: &str) -> LayoutElement {
        LayoutElement {
            kind: ElementKind::Paragraph,
            font_size: 10.0,
            ..header(text, 10.0)
        }
    }

    fn shape(node: &OutlineNode) -> Vec<(String, u32, usize)> {
        node.walk()
            .into_iter()
            .map(|(_, _, n)| (n.title.clone(), n.level, n.children.len()))
            .collect()
    }

    #[test]
    fn alternating_sizes_give_two_parents_with_one_child_each() {
        let els = [
            header("A", 20.0),
            header("a", 14.0),
            header("B", 20.0),
            header("b", 14.0),
        ];
        let root = build_outline(&els);
        assert_eq!(root.children.len(), 2);
        for c in &root.children {
            assert_eq!(c.level, 1);
            assert_eq!(c.children.len(), 1);
            assert_eq!(c.children[0].level, 2);
        }
    }

    #[test]
    fn sizes_20_14_14_20_nest_both_small_headers_under_the_first() {
        // Hand-derived from the rank rule: the two 14pt headers follow the first
        // 20pt header, so both become its children; the last header is a leaf.
        let els = [
            header("A", 20.0),
            header("a1", 14.0),
            header("a2", 14.0),
            header("B", 20.0),
        ];
        let root = build_outline(&els);
        assert_eq!(
            shape(&root),
            vec![
                ("A".to_string(), 1, 2),
                ("a1".to_string(), 2, 0),
                ("a2".to_string(), 2, 0),
                ("B".to_string(), 1, 0)
            ]
        );
    }

    #[test]
    fn no_elements_gives_empty_root() {
        let root = build_outline(&[]);
        assert!(root.children.is_empty());
        assert_eq!(root.span, 0..0);
    }

    #[test]
    fn same_size_headers_are_flat_siblings() {
        let els = [header("A", 12.0), header("B", 12.0), header("C", 12.0)];
        let root = build_outline(&els);
        assert_eq!(root.children.len(), 3);
        assert!(root.children.iter().all(|c| c.level == 1 && c.children.is_empty()));
    }

    #[test]
    fn no_headers_puts_all_blocks_under_root() {
        let root = build_outline(&[para("x"), para("y")]);
        assert_eq!(root.span, 0..2);
        assert!(root.children.is_empty());
    }

    #[test]
    fn spans_follow_most_recent_header() {
        let els = [
            para("lead"),
            header("A", 20.0),
            para("a"),
            header("a.1", 14.0),
            para("a1-1"),
            para("a1-2"),
            header("B", 20.0),
        ];
        let root = build_outline(&els);
        assert_eq!(root.span, 0..1);
        assert_eq!(root.children[0].span, 1..2);
        assert_eq!(root.children[0].children[0].span, 2..4);
        assert_eq!(root.children[1].span, 4..4);
        assert_eq!(flatten_spans(&root), vec![0, 1, 2, 3]);
    }
}
