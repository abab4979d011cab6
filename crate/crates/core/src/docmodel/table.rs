use std::collections::BTreeMap;

use super::{DocError, ElementKind, LayoutElement, Table};

/// Minimum overlap, as a fraction of the smaller extent, for two cells to
/// share a row (vertical extents) or a column (horizontal extents).
pub const OVERLAP_THRESHOLD: f64 = 0.5;

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    let overlap = a.1.min(b.1) - a.0.max(b.0);
    let smaller = (a.1 - a.0).min(b.1 - b.0);
    overlap > 0.0 && overlap >= OVERLAP_THRESHOLD * smaller
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cluster 1-D extents: the transitive closure of the overlap relation.
/// Returns a cluster index per extent, clusters numbered by their smallest
/// start coordinate (ties by the smallest cross-axis start).
fn cluster(extents: &[(f64, f64)], cross_start: &[f64]) -> Vec<usize> {
    let n = extents.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if overlaps(extents[i], extents[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut keys: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let k = keys.entry(r).or_insert((f64::INFINITY, f64::INFINITY));
        if (extents[i].0, cross_start[i]) < *k {
            *k = (extents[i].0, cross_start[i]);
        }
    }
    let mut order: Vec<(usize, (f64, f64))> = keys.into_iter().collect();
    order.sort_by(|a, b| {
        a.1 .0
            .total_cmp(&b.1 .0)
            .then(a.1 .1.total_cmp(&b.1 .1))
            .then(a.0.cmp(&b.0))
    });
    let rank: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, (r, _))| (*r, i)).collect();
    (0..n).map(|i| rank[&find(&mut parent, i)]).collect()
}

fn is_year_label(cell: &str) -> bool {
    let s = cell.trim();
    let s = s
        .strip_prefix("FY")
        .or_else(|| s.strip_prefix("fy"))
        .map(str::trim_start)
        .unwrap_or(s);
    s.len() == 4
        && s.chars().all(|c| c.is_ascii_digit())
        && matches!(s.parse::<u32>(), Ok(y) if (1900..=2100).contains(&y))
}

fn is_header_like(row: &[String]) -> bool {
    row.iter()
        .all(|c| !c.chars().any(|ch| ch.is_ascii_digit()) || is_year_label(c))
}

/// Leading rows whose cells carry no digits other than year labels.
pub(crate) fn header_rows(cells: &[Vec<String>]) -> usize {
    cells.iter().take_while(|r| is_header_like(r)).count()
}

/// Rebuild a table grid from its cells.
///
/// Cells with explicit `row`/`col` are placed directly. Along an axis where
/// any cell lacks its index, positions are inferred from the bounding boxes:
/// two cells share a row when their vertical extents overlap by at least half
/// of the smaller height (columns likewise on x), closed transitively.
pub fn reconstruct_table(cells: &[LayoutElement]) -> Result<Table, DocError> {
    let first = cells.first().ok_or_else(|| DocError::Structure {
        table_id: String::new(),
        reason: "no cells".into(),
    })?;
    let table_id = first.table_id.clone().unwrap_or_default();
    let structure = |reason: String| DocError::Structure {
        table_id: table_id.clone(),
        reason,
    };
    for c in cells {
        if c.kind != ElementKind::TableCell {
            return Err(structure(format!("non-cell element `{}`", c.text)));
        }
        if c.table_id.as_deref() != Some(table_id.as_str()) {
            return Err(structure(format!(
                "cell `{}` belongs to table {:?}",
                c.text, c.table_id
            )));
        }
        if c.page != first.page {
            return Err(structure(format!("cells span pages {} and {}", first.page, c.page)));
        }
    }

    let rows: Vec<usize> = if cells.iter().all(|c| c.row.is_some()) {
        cells.iter().map(|c| c.row.unwrap()).collect()
    } else {
        let ext: Vec<(f64, f64)> = cells.iter().map(|c| (c.bbox[1], c.bbox[3])).collect();
        let cross: Vec<f64> = cells.iter().map(|c| c.bbox[0]).collect();
        cluster(&ext, &cross)
    };
    let cols: Vec<usize> = if cells.iter().all(|c| c.col.is_some()) {
        cells.iter().map(|c| c.col.unwrap()).collect()
    } else {
        let ext: Vec<(f64, f64)> = cells.iter().map(|c| (c.bbox[0], c.bbox[2])).collect();
        let cross: Vec<f64> = cells.iter().map(|c| c.bbox[1]).collect();
        cluster(&ext, &cross)
    };
    debug_assert!(cells.iter().all(|c| c.height() > 0.0 && c.width() > 0.0));

    let n_rows = rows.iter().max().unwrap() + 1;
    let n_cols = cols.iter().max().unwrap() + 1;
    let mut grid: Vec<Vec<Option<String>>> = vec![vec![None; n_cols]; n_rows];
    for ((cell, &r), &c) in cells.iter().zip(&rows).zip(&cols) {
        let slot = &mut grid[r][c];
        if let Some(existing) = slot {
            return Err(structure(format!(
                "cells `{existing}` and `{}` both claim position ({r},{c})",
                cell.text
            )));
        }
        *slot = Some(cell.text.trim().to_string());
    }
    let cells: Vec<Vec<String>> = grid
        .into_iter()
        .map(|row| row.into_iter().map(Option::unwrap_or_default).collect())
        .collect();
    let header_row_count = header_rows(&cells);
    Ok(Table {
        table_id,
        n_rows,
        n_cols,
        cells,
        header_row_count,
    })
}

/// Row-wise text rendering: one line per row, cells separated by ` | `.
pub fn render_table(table: &Table) -> String {
    table
        .cells
        .iter()
        .map(|row| row.join(" | "))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(text: &str, bbox: [f64; 4], pos: Option<(usize, usize)>) -> LayoutElement {
        LayoutElement {
            kind: ElementKind::TableCell,
            text: text.into(),
            page: 1,
            bbox,
            font_size: 9.0,
            table_id: Some("t1".into()),
            row: pos.map(|p| p.0),
            col: pos.map(|p| p.1),
        }
    }

    #[test]
    fn explicit_positions_2x2() {
        let b = [0.0, 0.0, 1.0, 1.0];
        let t = reconstruct_table(&[
            cell("Metric", b, Some((0, 0))),
            cell("2022", b, Some((0, 1))),
            cell("Scope 1", b, Some((1, 0))),
            cell("12.5", b, Some((1, 1))),
        ])
        .unwrap();
        assert_eq!((t.n_rows, t.n_cols), (2, 2));
        assert_eq!(t.cells, vec![vec!["Metric", "2022"], vec!["Scope 1", "12.5"]]);
        assert_eq!(t.header_row_count, 1);
    }

    #[test]
    fn single_cell() {
        let t = reconstruct_table(&[cell("Energy", [0.0, 0.0, 5.0, 2.0], None)]).unwrap();
        assert_eq!((t.n_rows, t.n_cols), (1, 1));
        assert_eq!(t.cells[0][0], "Energy");
    }

    #[test]
    fn duplicate_position_is_a_structural_error() {
        let b = [0.0, 0.0, 1.0, 1.0];
        let err = reconstruct_table(&[cell("a", b, Some((0, 0))), cell("b", b, Some((0, 0)))]).unwrap_err();
        assert!(err.to_string().contains("(0,0)"), "{err}");
    }

    #[test]
    fn inferred_grid_fills_gaps() {
        // 2 rows x 3 cols, middle of row 2 missing; slight jitter in y.
        let t = reconstruct_table(&[
            cell("Item", [0.0, 0.0, 30.0, 10.0], None),
            cell("Unit", [40.0, 0.5, 60.0, 10.5], None),
            cell("2022", [70.0, 0.0, 90.0, 10.0], None),
            cell("Water", [0.0, 12.0, 30.0, 22.0], None),
            cell("880", [70.0, 11.0, 90.0, 21.0], None),
        ])
        .unwrap();
        assert_eq!(t.cells, vec![vec!["Item", "Unit", "2022"], vec!["Water", "", "880"]]);
        assert_eq!(t.header_row_count, 1);
    }

    #[test]
    fn header_rule_stops_at_first_measurement_row() {
        let rows = |v: &[&[&str]]| -> Vec<Vec<String>> {
            v.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
        };
        assert_eq!(
            header_rows(&rows(&[&["Item", "FY2021"], &["Unit", ""], &["Gas", "1.2"]])),
            2
        );
        assert_eq!(header_rows(&rows(&[&["Scope 1", "3"]])), 0);
        assert_eq!(header_rows(&rows(&[&["Item", "Q3 2022"]])), 0);
    }

    #[test]
    fn cells_on_two_pages_rejected() {
        let mut b = cell("b", [0.0, 0.0, 1.0, 1.0], None);
        b.page = 2;
        assert!(reconstruct_table(&[cell("a", [0.0, 0.0, 1.0, 1.0], None), b]).is_err());
    }

    #[test]
    fn render_is_row_wise() {
        let t = Table {
            table_id: "t".into(),
            n_rows: 2,
            n_cols: 2,
            cells: vec![vec!["a".into(), "b".into()], vec!["c".into(), "".into()]],
            header_row_count: 1,
        };
        assert_eq!(render_table(&t), "a | b\nc | ");
    }

    proptest! {
        #[test]
        fn random_boxes_always_give_rectangular_grids(
            boxes in proptest::collection::vec((0.0f64..500.0, 0.0f64..500.0, 1.0f64..60.0, 1.0f64..30.0), 1..40)
        ) {
            let cells: Vec<LayoutElement> = boxes
                .iter()
                .enumerate()
                .map(|(i, (x, y, w, h))| cell(&format!("c{i}"), [*x, *y, x + w, y + h], None))
                .collect();
            match reconstruct_table(&cells) {
                Ok(t) => {
                    prop_assert!(t.is_rectangular());
                    let filled = t.cells.iter().flatten().filter(|c| !c.is_empty()).count();
                    prop_assert_eq!(filled, cells.len());
                }
                Err(DocError::Structure { reason, .. }) => prop_assert!(reason.contains("both claim")),
                Err(other) => prop_assert!(false, "unexpected error {}", other),
            }
        }

        #[test]
        fn jittered_grids_are_recovered(
            n_rows in 1usize..8, n_cols in 1usize..6,
            jitter in proptest::collection::vec(-2.0f64..2.0, 96)
        ) {
            let mut cells = Vec::new();
            for r in 0..n_rows {
                for c in 0..n_cols {
                    let j = jitter[(r * n_cols + c) % jitter.len()];
                    let (x, y) = (c as f64 * 50.0 + j, r as f64 * 14.0 + j * 0.5);
                    cells.push(cell(&format!("r{r}c{c}"), [x, y, x + 40.0, y + 10.0], None));
                }
            }
            let t = reconstruct_table(&cells).unwrap();
            prop_assert_eq!((t.n_rows, t.n_cols), (n_rows, n_cols));
            for r in 0..n_rows {
                for c in 0..n_cols {
                    prop_assert_eq!(&t.cells[r][c], &format!("r{r}c{c}"));
                }
            }
        }
    }
}
