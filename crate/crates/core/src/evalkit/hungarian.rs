use crate::error::{Error, Result};

/// Minimum-cost one-to-one assignment of `min(rows, cols)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned costs, accumulated in row order.
    pub total: f64,
}

impl Assignment {
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

/// Solves the rectangular assignment problem on a row-major `cost` matrix.
/// Among optimal assignments the one whose column sequence (rows in order,
/// unassigned rows last) is lexicographically smallest is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { row: r, col: c });
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total: 0.0,
        });
    }

    // Square padding with zero-cost dummies: dummy rows/cols sit after the real ones.
    let n = rows.max(cols);
    let at = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            cost[r][c]
        } else {
            0.0
        }
    };
    let (u, v, mut col_of_row) = solve_square(n, &at);

    let scale = cost.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|r| (0..n).filter(|&c| at(r, c) - u[r] - v[c] <= tol).collect())
        .collect();
    lexicographic_refine(&tight, &mut col_of_row);

    let pairs: Vec<(usize, usize)> = (0..rows)
        .filter_map(|r| {
            let c = col_of_row[r];
            (c < cols).then_some((r, c))
        })
        .collect();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, total })
}

/// Shortest augmenting path Hungarian method with potentials. Returns the
/// row and column potentials and the column assigned to each row.
fn solve_square(n: usize, cost: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based internally; index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[owner[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), col_of_row)
}

/// Every perfect matching inside the tight (zero reduced cost) graph is
/// optimal. Walk rows in order and move each onto its smallest tight column
/// for which the remaining rows can still be rematched.
fn lexicographic_refine(tight: &[Vec<usize>], col_of_row: &mut [usize]) {
    let n = col_of_row.len();
    let mut row_of_col = vec![0; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = r;
    }
    for r in 0..n {
        let current = col_of_row[r];
        for &c in &tight[r] {
            if c >= current {
                break;
            }
            // row r takes c; its displaced owner must reach `current` through
            // an alternating path over rows not yet fixed
            let displaced = row_of_col[c];
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            if reroute(
                displaced,
                current,
                r,
                tight,
                &row_of_col,
                &mut visited,
                &mut path,
            ) {
                for &(row, col) in &path {
                    col_of_row[row] = col;
                    row_of_col[col] = row;
                }
                col_of_row[r] = c;
                row_of_col[c] = r;
                break;
            }
        }
    }
}

fn reroute(
    row: usize,
    target: usize,
    fixed_upto: usize,
    tight: &[Vec<usize>],
    row_of_col: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    if row <= fixed_upto || visited[row] {
        return false;
    }
    visited[row] = true;
    for &c in &tight[row] {
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = row_of_col[c];
        if next != row && reroute(next, target, fixed_upto, tight, row_of_col, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn one_by_one_and_empty() {
        let a = hungarian(&[vec![5.5]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total, 5.5);
        assert!(hungarian(&[]).unwrap().pairs.is_empty());
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = hungarian(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]]).unwrap();
        assert_eq!(wide.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(wide.total, 3.0);
        let tall = hungarian(&[vec![4.0, 2.0], vec![1.0, 0.0], vec![3.0, 5.0]]).unwrap();
        // {0→1, 1→0} and {1→1, 2→0} both cost 3; leaving the last row out is smaller
        assert_eq!(tall.total, 3.0);
        assert_eq!(tall.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let all_equal = vec![vec![1.0; 3]; 3];
        let a = hungarian(&all_equal).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);

        // two optimal assignments: {0→1, 1→0} and {0→0, 1→1}
        let a = hungarian(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);

        // one row must give way; the tie goes to row 0 taking column 0
        let a = hungarian(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            hungarian(&[vec![1.0, f64::NAN]]),
            Err(Error::NonFiniteCost { row: 0, col: 1 })
        ));
    }
}
