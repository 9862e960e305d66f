//! Rectangular minimum-cost assignment (Hungarian method with potentials).

use crate::error::{Error, Result};

/// Assigns each of the `n` rows of the row-major `n × m` cost matrix to a
/// distinct column (`n ≤ m`) at minimum total cost. Returns the column of
/// every row and the total cost.
pub fn hungarian_assignment(cost: &[f64], n: usize, m: usize) -> Result<(Vec<usize>, f64)> {
    if cost.len() != n * m {
        return Err(Error::invalid(format!(
            "cost matrix has {} entries, expected {n} × {m}",
            cost.len()
        )));
    }
    if n > m {
        return Err(Error::invalid(format!(
            "cannot assign {n} rows injectively into {m} columns"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // row_of[j]: row matched to column j (1-based, 0 = free).
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * m + j])
        .sum();
    Ok((assignment, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(
            hungarian_assignment(&[1.0, 10.0, 10.0, 1.0], 2, 2).unwrap(),
            (vec![0, 1], 2.0)
        );
        assert_eq!(
            hungarian_assignment(&[4.0, 1.0, 2.0, 3.0], 2, 2).unwrap(),
            (vec![1, 0], 3.0)
        );
        assert_eq!(
            hungarian_assignment(&[5.0, 2.0, 9.0], 1, 3).unwrap(),
            (vec![1], 2.0)
        );
        assert!(hungarian_assignment(&[1.0, 2.0], 2, 1).is_err());
        assert!(hungarian_assignment(&[f64::NAN], 1, 1).is_err());
    }

    #[test]
    fn rectangular_picks_best_columns() {
        let cost = [3.0, 1.0, 7.0, 2.0, 9.0, 8.0, 0.5, 6.0];
        let (a, c) = hungarian_assignment(&cost, 2, 4).unwrap();
        assert_eq!(a, vec![1, 2]);
        assert_eq!(c, 1.5);
    }
}
