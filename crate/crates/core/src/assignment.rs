//! Exact minimum-cost bipartite assignment (Kuhn–Munkres).
//!
//! Rectangular problems are padded to a square matrix with a constant cost
//! larger than every real entry; padded pairs never appear in the output. The
//! solver runs the shortest-augmenting-path form of the Hungarian method with
//! row and column potentials in `O(n³)`, then walks the tight-edge subgraph of
//! the optimal duals to pick the lexicographically smallest optimal pair list.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    /// Builds a matrix from row-major values.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cost entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    /// Builds a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Column matched to `row`, if any.
    pub fn col_for(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|&(_, c)| c)
    }

    pub fn row_for(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|(_, c)| *c == col).map(|&(r, _)| r)
    }
}

/// Solves the rectangular assignment problem, returning `min(rows, cols)` pairs
/// of globally minimal total cost. Ties between optimal matchings resolve to
/// the lexicographically smallest pair list.
pub fn solve_assignment(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    }
    let n = m.rows.max(m.cols);
    let (max_abs, max_val) = m
        .values
        .iter()
        .fold((0.0f64, f64::NEG_INFINITY), |(a, b), &v| (a.max(v.abs()), b.max(v)));
    let pad = max_val + 1.0;
    let cost = |r: usize, c: usize| -> f64 {
        if r < m.rows && c < m.cols {
            m.get(r, c)
        } else {
            pad
        }
    };

    let (mut col_of_row, row_of_col, u, v) = hungarian(n, &cost);
    let tol = 1e-10 * (1.0 + max_abs);
    let tight = |r: usize, c: usize| cost(r, c) - u[r] - v[c] <= tol;
    lexicographic_refine(n, m.rows.min(n), &tight, &mut col_of_row, row_of_col);

    let pairs: Vec<(usize, usize)> = (0..m.rows)
        .filter_map(|r| {
            let c = col_of_row[r];
            (c < m.cols).then_some((r, c))
        })
        .collect();
    let total_cost = pairs.iter().map(|&(r, c)| m.get(r, c)).sum();
    Assignment { pairs, total_cost }
}

/// Square Hungarian method with potentials. Returns the row→col and col→row
/// matchings together with the row and column potentials (0-indexed).
#[allow(clippy::type_complexity)]
fn hungarian(n: usize, cost: &impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-indexed internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let row0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost(row0 - 1, col - 1) - u[row0] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    let mut row_of_col = vec![0usize; n];
    for col in 1..=n {
        let row = owner[col] - 1;
        col_of_row[row] = col - 1;
        row_of_col[col - 1] = row;
    }
    (col_of_row, row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites an optimal perfect matching into the lexicographically smallest
/// optimal one. Every optimal matching uses only tight edges of the optimal
/// duals, so rows are fixed greedily in order, each taking the smallest column
/// reachable by an alternating cycle through unlocked rows.
fn lexicographic_refine(
    n: usize,
    real_rows: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_of_row: &mut [usize],
    mut row_of_col: Vec<usize>,
) {
    let mut locked_row = vec![false; n];
    let mut locked_col = vec![false; n];
    for row in 0..real_rows {
        let target = col_of_row[row];
        // Rows (other than `row`) that can reach `target` by an alternating path.
        let mut reaches = vec![false; n];
        let mut good_col = vec![false; n];
        good_col[target] = true;
        let mut frontier = vec![target];
        while let Some(col) = frontier.pop() {
            for r in 0..n {
                if r == row || locked_row[r] || reaches[r] || !tight(r, col) {
                    continue;
                }
                reaches[r] = true;
                let owned = col_of_row[r];
                if !good_col[owned] && !locked_col[owned] {
                    good_col[owned] = true;
                    frontier.push(owned);
                }
            }
        }
        let choice = (0..target).find(|&c| !locked_col[c] && tight(row, c) && reaches[row_of_col[c]]);
        if let Some(col) = choice {
            // Shift along the alternating path from the owner of `col` to `target`.
            let start = row_of_col[col];
            let path = alternating_path(
                n,
                start,
                target,
                row,
                col,
                tight,
                &locked_row,
                &locked_col,
                col_of_row,
                &row_of_col,
            );
            let mut cycle = Vec::with_capacity(path.len() + 1);
            cycle.push((row, col));
            cycle.extend(path);
            for &(r, c) in &cycle {
                col_of_row[r] = c;
                row_of_col[c] = r;
            }
        }
        locked_row[row] = true;
        locked_col[col_of_row[row]] = true;
    }
}

/// Breadth-first search for an alternating path `start → … → target` over
/// tight edges that avoids `skip_row`, `skip_col` and locked vertices. Returns
/// the new `(row, col)` assignments along the path.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    n: usize,
    start: usize,
    target: usize,
    skip_row: usize,
    skip_col: usize,
    tight: &impl Fn(usize, usize) -> bool,
    locked_row: &[bool],
    locked_col: &[bool],
    col_of_row: &[usize],
    row_of_col: &[usize],
) -> Vec<(usize, usize)> {
    let mut parent_row = vec![usize::MAX; n];
    let mut seen_col = vec![false; n];
    seen_col[skip_col] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    let mut row_seen = vec![false; n];
    row_seen[start] = true;
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if seen_col[c] || locked_col[c] || !tight(r, c) {
                continue;
            }
            seen_col[c] = true;
            parent_row[c] = r;
            if c == target {
                let mut path = Vec::new();
                let mut col = c;
                loop {
                    let pr = parent_row[col];
                    path.push((pr, col));
                    if pr == start {
                        break;
                    }
                    col = col_of_row[pr];
                }
                path.reverse();
                return path;
            }
            let next = row_of_col[c];
            if next != skip_row && !locked_row[next] && !row_seen[next] {
                row_seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    unreachable!("reachability was established before the path search")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(rows: &[&[f64]]) -> Assignment {
        solve_assignment(&CostMatrix::from_rows(rows).unwrap())
    }

    #[test]
    fn single_entry() {
        let a = solve(&[&[0.0]]);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn two_by_two() {
        let a = solve(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn three_by_three() {
        let a = solve(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(a.total_cost, 5.0);
    }

    #[test]
    fn empty_matrix() {
        let a = solve_assignment(&CostMatrix::new(0, 3, vec![]).unwrap());
        assert!(a.pairs.is_empty());
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn rectangular_wide_and_tall() {
        let wide = solve(&[&[5.0, 1.0, 9.0], &[1.0, 7.0, 9.0]]);
        assert_eq!(wide.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(wide.total_cost, 2.0);
        let tall = solve(&[&[5.0, 1.0], &[1.0, 7.0], &[9.0, 9.0]]);
        assert_eq!(tall.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let a = solve(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // Wide all-equal: rows take the leftmost columns.
        let a = solve(&[&[1.0; 4], &[1.0; 4]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        // Tall all-equal: the earliest rows are matched.
        let a = solve(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        // Two optima {(0,1),(1,0)} and {(0,0),(1,1)} at cost 2.
        let a = solve(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(CostMatrix::new(1, 2, vec![0.0]).is_err());
    }
}
