use std::collections::BTreeMap;

use crate::layout::FarmGrid;

pub type LabelGrid = FarmGrid<usize>;

/// One synchronous majority pass: every present cell takes the most frequent
/// label among its present 8-neighbours. Ties, and cells without neighbours,
/// keep their own label.
pub fn smooth_labels(grid: &LabelGrid) -> LabelGrid {
    let mut out = grid.clone();
    for (id, &own) in grid.iter() {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &label in grid.neighbours(id.row, id.column) {
            *counts.entry(label).or_default() += 1;
        }
        let Some(&top) = counts.values().max() else {
            continue;
        };
        let mut leaders = counts.iter().filter(|(_, &c)| c == top);
        let (&winner, _) = leaders.next().expect("non-empty");
        if leaders.next().is_none() {
            out.set(id, Some(winner));
        } else {
            out.set(id, Some(own));
        }
    }
    out
}
