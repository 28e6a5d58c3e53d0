//! Minimum-cost bipartite assignment (Jonker-Volgenant style shortest
//! augmenting paths, O(n³)). Rows must not outnumber columns; every row is
//! assigned a distinct column.

use crate::error::{Error, Result};

/// `cost` is row-major `rows × cols`. Returns the assigned column per row.
pub fn assign_min_cost(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::Capacity(format!(
            "assignment needs rows <= cols, got {}×{}",
            rows, cols
        )));
    }
    if cost.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cost matrix has {} entries, expected {}×{}",
            cost.len(),
            rows,
            cols
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Contract("cost matrix must be finite".into()));
    }
    if rows == 0 {
        return Ok(Vec::new());
    }

    // col_row[j] = row currently assigned to column j; cols + 1 virtual slot.
    let mut col_row: Vec<Option<usize>> = vec![None; cols + 1];
    let mut row_pot = vec![0.0f64; rows];
    let mut col_pot = vec![0.0f64; cols + 1];

    for row in 0..rows {
        let mut cur = cols; // virtual column holding the new row
        col_row[cur] = Some(row);
        let mut min_to = vec![f64::INFINITY; cols + 1];
        let mut prev = vec![cols; cols + 1];
        let mut visited = vec![false; cols + 1];

        while col_row[cur].is_some() {
            visited[cur] = true;
            let r = col_row[cur].unwrap();
            let mut delta = f64::INFINITY;
            let mut next = cols;
            for j in 0..cols {
                if visited[j] {
                    continue;
                }
                let reduced = cost[r * cols + j] - row_pot[r] - col_pot[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    prev[j] = cur;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    next = j;
                }
            }
            for j in 0..=cols {
                if visited[j] {
                    if let Some(rj) = col_row[j] {
                        row_pot[rj] += delta;
                    }
                    col_pot[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            cur = next;
        }

        // augment along the alternating path
        while cur != cols {
            let p = prev[cur];
            col_row[cur] = col_row[p];
            cur = p;
        }
        col_row[cols] = None;
    }

    let mut row_col = vec![usize::MAX; rows];
    for j in 0..cols {
        if let Some(r) = col_row[j] {
            row_col[r] = j;
        }
    }
    debug_assert!(row_col.iter().all(|&c| c != usize::MAX));
    Ok(row_col)
}

/// Total cost of an assignment, for checks and reporting.
pub fn assignment_cost(cost: &[f64], cols: usize, row_col: &[usize]) -> f64 {
    row_col
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[r * cols + c])
        .sum()
}
