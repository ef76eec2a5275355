/// Maximum-weight perfect matching on a square matrix (Hungarian method with
/// potentials, O(n³)). Returns `assignment[row] = column`.
fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    // Minimize negated weights; arrays are 1-based with index 0 as sentinel.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Number of items on which two labellings agree under the best one-to-one
/// renaming of `current`'s ids onto `previous`'s.
pub fn matched_agreement(previous: &[usize], current: &[usize]) -> usize {
    assert_eq!(previous.len(), current.len());
    if previous.is_empty() {
        return 0;
    }
    let n = previous.iter().chain(current).copied().max().unwrap_or(0) + 1;
    let mut overlap = vec![vec![0i64; n]; n];
    for (&a, &b) in previous.iter().zip(current) {
        overlap[b][a] += 1;
    }
    let assignment = max_weight_assignment(&overlap);
    assignment
        .iter()
        .enumerate()
        .map(|(row, &col)| overlap[row][col] as usize)
        .sum()
}

/// Fraction of items whose label changed, ignoring cluster renumbering.
pub fn change_rate(previous: &[usize], current: &[usize]) -> f64 {
    if previous.is_empty() {
        return 0.0;
    }
    1.0 - matched_agreement(previous, current) as f64 / previous.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabeling_is_not_a_change() {
        assert_eq!(change_rate(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]), 0.0);
    }

    #[test]
    fn counts_moved_items() {
        assert!((change_rate(&[0, 0, 1, 1], &[1, 1, 1, 0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_over_permutations() {
        let prev = [0, 1, 2, 2, 1, 0, 0, 2, 1, 1];
        let cur = [1, 1, 0, 2, 2, 0, 1, 0, 2, 1];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = perms
            .iter()
            .map(|p| prev.iter().zip(&cur).filter(|(&a, &b)| p[b] == a).count())
            .max()
            .unwrap();
        assert_eq!(matched_agreement(&prev, &cur), best);
    }
}
