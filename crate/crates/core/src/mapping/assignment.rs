//! Minimum-cost assignment (Hungarian method with potentials).

/// Solves the rectangular assignment problem for `cost[r][c]`.
/// Returns, for each row, the assigned column (every row gets one column
/// when `rows <= cols`; otherwise exactly `cols` rows are assigned).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let a = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };

    // 1-based potentials formulation, n <= m
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut out = vec![None; rows];
    for j in 1..=m {
        if p[j] != 0 {
            let (r, c) = if transpose { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            out[r] = Some(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[r][c])).sum()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matches_exhaustive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
                let best = permutations(n)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                let a = hungarian(&cost);
                assert!((total(&cost, &a) - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rectangular_both_ways() {
        let cost = vec![vec![5.0, 1.0, 9.0], vec![2.0, 8.0, 7.0]];
        assert_eq!(hungarian(&cost), vec![Some(1), Some(0)]);
        let t: Vec<Vec<f64>> = (0..3).map(|c| (0..2).map(|r| cost[r][c]).collect()).collect();
        assert_eq!(hungarian(&t), vec![Some(1), Some(0), None]);
    }
}
