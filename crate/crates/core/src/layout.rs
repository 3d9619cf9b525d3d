//! Farm geometry: turbine naming, the row/column grid and per-cell grids.
//!
//! Rows are numbered west to east starting at 1, columns within a row start
//! at 1. A turbine prints as `RR/C`, e.g. `03/2` or `10/4`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TurbineId {
    pub row: u32,
    pub column: u32,
}

impl TurbineId {
    pub fn new(row: u32, column: u32) -> Self {
        TurbineId { row, column }
    }
}

impl fmt::Display for TurbineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}/{}", self.row, self.column)
    }
}

impl FromStr for TurbineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::domain(format!("invalid turbine id {s:?}, expected RR/C"));
        let (row, column) = s.trim().split_once('/').ok_or_else(bad)?;
        let row: u32 = row.parse().map_err(|_| bad())?;
        let column: u32 = column.parse().map_err(|_| bad())?;
        if row == 0 || column == 0 {
            return Err(bad());
        }
        Ok(TurbineId { row, column })
    }
}

impl Serialize for TurbineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TurbineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rectangular farm grid with optional holes for turbines without data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarmLayout {
    pub rows: u32,
    pub columns: u32,
    /// Distance between adjacent rows along the storm path.
    pub spacing_m: f64,
    pub missing: BTreeSet<TurbineId>,
}

impl Default for FarmLayout {
    fn default() -> Self {
        FarmLayout {
            rows: 11,
            columns: 5,
            spacing_m: 800.0,
            missing: storm_case_missing(),
        }
    }
}

/// Turbines without alarm-log data in the storm case.
pub fn storm_case_missing() -> BTreeSet<TurbineId> {
    (5..=8).map(|row| TurbineId::new(row, 5)).collect()
}

impl FarmLayout {
    pub fn new(rows: u32, columns: u32, spacing_m: f64) -> Self {
        FarmLayout {
            rows,
            columns,
            spacing_m,
            missing: BTreeSet::new(),
        }
    }

    pub fn with_missing(mut self, missing: impl IntoIterator<Item = TurbineId>) -> Self {
        self.missing = missing.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.columns == 0 {
            return Err(Error::config("layout needs at least one row and one column"));
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return Err(Error::config("layout spacing_m must be positive"));
        }
        if let Some(t) = self.missing.iter().find(|t| !self.in_grid(**t)) {
            return Err(Error::config(format!("missing turbine {t} is outside the grid")));
        }
        Ok(())
    }

    pub fn in_grid(&self, id: TurbineId) -> bool {
        (1..=self.rows).contains(&id.row) && (1..=self.columns).contains(&id.column)
    }

    pub fn is_active(&self, id: TurbineId) -> bool {
        self.in_grid(id) && !self.missing.contains(&id)
    }

    /// Active turbines in row-major order.
    pub fn active_turbines(&self) -> impl Iterator<Item = TurbineId> + '_ {
        (1..=self.rows)
            .flat_map(move |row| (1..=self.columns).map(move |column| TurbineId::new(row, column)))
            .filter(move |id| !self.missing.contains(id))
    }

    pub fn active_count(&self) -> usize {
        self.active_turbines().count()
    }

    pub fn active_in_row(&self, row: u32) -> usize {
        (1..=self.columns)
            .filter(|&c| self.is_active(TurbineId::new(row, c)))
            .count()
    }
}

/// One optional value per grid cell, indexed 1-based by (row, column).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarmGrid<T> {
    rows: u32,
    columns: u32,
    cells: Vec<Option<T>>,
}

impl<T: Clone> FarmGrid<T> {
    pub fn empty(rows: u32, columns: u32) -> Self {
        FarmGrid {
            rows,
            columns,
            cells: vec![None; (rows * columns) as usize],
        }
    }

    pub fn for_layout(layout: &FarmLayout) -> Self {
        Self::empty(layout.rows, layout.columns)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn columns(&self) -> u32 {
        self.columns
    }

    fn index(&self, row: u32, column: u32) -> Option<usize> {
        if (1..=self.rows).contains(&row) && (1..=self.columns).contains(&column) {
            Some(((row - 1) * self.columns + (column - 1)) as usize)
        } else {
            None
        }
    }

    pub fn get(&self, row: u32, column: u32) -> Option<&T> {
        self.index(row, column).and_then(|i| self.cells[i].as_ref())
    }

    pub fn set(&mut self, id: TurbineId, value: Option<T>) {
        let i = self
            .index(id.row, id.column)
            .unwrap_or_else(|| panic!("turbine {id} outside {}x{} grid", self.rows, self.columns));
        self.cells[i] = value;
    }

    /// Values of the (up to eight) present neighbours of a cell.
    pub fn neighbours(&self, row: u32, column: u32) -> Vec<&T> {
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (row as i64 + dr, column as i64 + dc);
                if r < 1 || c < 1 {
                    continue;
                }
                if let Some(v) = self.get(r as u32, c as u32) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Present cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (TurbineId, &T)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, v)| {
            let i = i as u32;
            v.as_ref()
                .map(|v| (TurbineId::new(i / self.columns + 1, i % self.columns + 1), v))
        })
    }

    pub fn map<U: Clone>(&self, mut f: impl FnMut(&T) -> U) -> FarmGrid<U> {
        FarmGrid {
            rows: self.rows,
            columns: self.columns,
            cells: self.cells.iter().map(|v| v.as_ref().map(&mut f)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turbine_id_prints_like_the_farm_naming() {
        assert_eq!(TurbineId::new(10, 4).to_string(), "10/4");
        assert_eq!(TurbineId::new(3, 2).to_string(), "03/2");
        assert_eq!("05/5".parse::<TurbineId>().unwrap(), TurbineId::new(5, 5));
        assert!("5-5".parse::<TurbineId>().is_err());
        assert!("00/1".parse::<TurbineId>().is_err());
    }

    #[test]
    fn default_layout_has_51_active_turbines() {
        let layout = FarmLayout::default();
        assert_eq!(layout.rows * layout.columns, 55);
        assert_eq!(layout.active_count(), 51);
        assert_eq!(layout.active_in_row(6), 4);
        assert_eq!(layout.active_in_row(9), 5);
    }

    #[test]
    fn corner_has_three_neighbours() {
        let mut g = FarmGrid::empty(3, 3);
        for r in 1..=3 {
            for c in 1..=3 {
                g.set(TurbineId::new(r, c), Some(r * 10 + c));
            }
        }
        assert_eq!(g.neighbours(1, 1).len(), 3);
        assert_eq!(g.neighbours(2, 2).len(), 8);
        g.set(TurbineId::new(1, 2), None);
        assert_eq!(g.neighbours(1, 1).len(), 2);
    }
}
