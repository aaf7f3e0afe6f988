//! Columnar population storage: one dense f64 array per status variable
//! plus a stable 64-bit id column. Columns are reference-counted so that
//! snapshots are copy-on-write.

use std::sync::Arc;

use crate::domain::{SimulationDomain, VarId};
use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct Population {
    domain: SimulationDomain,
    ids: Arc<Vec<u64>>,
    columns: Vec<Arc<Vec<f64>>>,
    /// Next id handed out to an accumulated individual. Monotone within a
    /// run; ids are never reused even across accumulation events.
    next_id: u64,
}

impl Population {
    /// Empty population over `domain`.
    pub fn empty(domain: &SimulationDomain) -> Self {
        Population {
            domain: domain.clone(),
            ids: Arc::new(Vec::new()),
            columns: vec![Arc::new(Vec::new()); domain.n_variables()],
            next_id: 0,
        }
    }

    /// Assembles a population from raw parts. Callers are responsible for
    /// column lengths and id uniqueness; `validate` checks both.
    pub fn from_parts(
        domain: SimulationDomain,
        ids: Vec<u64>,
        columns: Vec<Vec<f64>>,
        next_id: u64,
    ) -> Self {
        Population {
            domain,
            ids: Arc::new(ids),
            columns: columns.into_iter().map(Arc::new).collect(),
            next_id,
        }
    }

    /// `n` individuals with ids 0..n, every column at its declared default.
    pub fn with_defaults(domain: &SimulationDomain, n: usize) -> Self {
        let columns = domain
            .variables()
            .iter()
            .map(|v| Arc::new(vec![v.default; n]))
            .collect();
        Population {
            domain: domain.clone(),
            ids: Arc::new((0..n as u64).collect()),
            columns,
            next_id: n as u64,
        }
    }

    pub fn domain(&self) -> &SimulationDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn column(&self, var: VarId) -> &[f64] {
        &self.columns[var.0]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[f64]> {
        Ok(self.column(self.domain.var(name)?))
    }

    /// Mutable access to one column; clones the storage if it is shared
    /// with a snapshot.
    pub fn column_mut(&mut self, var: VarId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.columns[var.0])
    }

    /// Mutable views of every column at once, for the row-wise engine loop.
    pub(crate) fn columns_mut(&mut self) -> Vec<&mut [f64]> {
        self.columns
            .iter_mut()
            .map(|c| Arc::make_mut(c).as_mut_slice())
            .collect()
    }

    pub fn set(&mut self, var: VarId, row: usize, value: f64) {
        self.column_mut(var)[row] = value;
    }

    pub fn get(&self, var: VarId, row: usize) -> f64 {
        self.columns[var.0][row]
    }

    /// Row index of an id, if present.
    pub fn row_of(&self, id: u64) -> Option<usize> {
        // ids are sorted in engine-produced populations but not required
        // to be; fall back to a scan when the binary search misses.
        match self.ids.binary_search(&id) {
            Ok(i) => Some(i),
            Err(_) => self.ids.iter().position(|&x| x == id),
        }
    }

    /// Copies row `row` into `buf` (one slot per variable).
    pub fn read_row(&self, row: usize, buf: &mut [f64]) {
        for (slot, col) in buf.iter_mut().zip(&self.columns) {
            *slot = col[row];
        }
    }

    /// Appends `rows.len()` fresh individuals built from full-width row
    /// buffers, assigning ids from the monotone counter.
    pub fn append_rows(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        let m = self.domain.n_variables();
        let ids = Arc::make_mut(&mut self.ids);
        for row in rows {
            if row.len() != m {
                return Err(SimError::BadConfig(format!(
                    "appended row has {} values, domain has {m} variables",
                    row.len()
                )));
            }
            ids.push(self.next_id);
            self.next_id += 1;
        }
        for (j, col) in self.columns.iter_mut().enumerate() {
            let col = Arc::make_mut(col);
            col.extend(rows.iter().map(|r| r[j]));
        }
        Ok(())
    }

    /// Validates column lengths, id uniqueness and finiteness of every cell.
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        for (j, col) in self.columns.iter().enumerate() {
            if col.len() != n {
                return Err(SimError::BadConfig(format!(
                    "column `{}` has length {}, expected {n}",
                    self.domain.var_name(VarId(j)),
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(SimError::NonFinite {
                    id: self.ids[i],
                    variable: self.domain.var_name(VarId(j)).to_string(),
                });
            }
        }
        let mut sorted: Vec<u64> = self.ids.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            let dup = sorted.windows(2).find(|w| w[0] == w[1]).unwrap()[0];
            return Err(SimError::DuplicateId(dup));
        }
        if let Some(&max) = sorted.last() {
            if max >= self.next_id {
                return Err(SimError::BadConfig(format!(
                    "id counter {} not above max id {max}",
                    self.next_id
                )));
            }
        }
        Ok(())
    }

    /// Sub-population with the rows at `rows`, preserving the id counter.
    pub fn take_rows(&self, rows: &[usize]) -> Population {
        let ids: Vec<u64> = rows.iter().map(|&i| self.ids[i]).collect();
        let columns = self
            .columns
            .iter()
            .map(|c| Arc::new(rows.iter().map(|&i| c[i]).collect::<Vec<f64>>()))
            .collect();
        Population {
            domain: self.domain.clone(),
            ids: Arc::new(ids),
            columns,
            next_id: self.next_id,
        }
    }

    /// Contiguous row range as a chunk (cheap form of [`take_rows`]).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Population {
        let ids: Vec<u64> = self.ids[range.clone()].to_vec();
        let columns = self
            .columns
            .iter()
            .map(|c| Arc::new(c[range.clone()].to_vec()))
            .collect();
        Population {
            domain: self.domain.clone(),
            ids: Arc::new(ids),
            columns,
            next_id: self.next_id,
        }
    }

    /// True when both populations hold identical ids and bit-identical
    /// column contents.
    pub fn bit_identical(&self, other: &Population) -> bool {
        if self.ids != other.ids || self.columns.len() != other.columns.len() {
            return false;
        }
        self.columns
            .iter()
            .zip(&other.columns)
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VarKind;

    fn small_domain() -> SimulationDomain {
        SimulationDomain::builder()
            .variable("x", VarKind::Real)
            .variable_with_default("alive", VarKind::Binary, 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn defaults_fill_columns() {
        let d = small_domain();
        let p = Population::with_defaults(&d, 3);
        assert_eq!(p.len(), 3);
        assert_eq!(p.column(d.var("alive").unwrap()), &[1.0, 1.0, 1.0]);
        assert_eq!(p.ids(), &[0, 1, 2]);
        p.validate().unwrap();
    }

    #[test]
    fn append_assigns_monotone_ids() {
        let d = small_domain();
        let mut p = Population::with_defaults(&d, 2);
        p.append_rows(&[vec![5.0, 1.0], vec![6.0, 1.0]]).unwrap();
        assert_eq!(p.ids(), &[0, 1, 2, 3]);
        assert_eq!(p.next_id(), 4);
        assert_eq!(p.column(d.var("x").unwrap()), &[0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn validate_catches_non_finite() {
        let d = small_domain();
        let mut p = Population::with_defaults(&d, 2);
        let x = d.var("x").unwrap();
        p.set(x, 1, f64::NAN);
        assert!(matches!(
            p.validate(),
            Err(SimError::NonFinite { id: 1, .. })
        ));
    }

    #[test]
    fn snapshot_clone_is_copy_on_write() {
        let d = small_domain();
        let mut p = Population::with_defaults(&d, 4);
        let snap = p.clone();
        let x = d.var("x").unwrap();
        p.set(x, 0, 9.0);
        assert_eq!(snap.get(x, 0), 0.0);
        assert_eq!(p.get(x, 0), 9.0);
    }

    #[test]
    fn empty_population_is_legal() {
        let d = small_domain();
        let p = Population::empty(&d);
        assert_eq!(p.len(), 0);
        p.validate().unwrap();
    }
}
