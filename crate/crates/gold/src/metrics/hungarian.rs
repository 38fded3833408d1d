//! Optimal assignment on small dense matrices (potentials / shortest
//! augmenting path, O(n³)).

use ndarray::Array2;

/// Minimum-cost assignment of rows to columns. Requires
/// `rows <= cols`; returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "min_cost_assignment needs rows <= cols");
    // 1-based potentials; job[w] = row assigned to column w
    let mut ys = vec![0.0f64; n + 1];
    let mut yt = vec![0.0f64; m + 1];
    let mut job = vec![usize::MAX; m + 1];
    for row in 1..=n {
        let mut w0 = m; // virtual column index m (0-based sentinel uses slot m)
        job[w0] = row;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut prv = vec![usize::MAX; m + 1];
        let mut in_z = vec![false; m + 1];
        loop {
            in_z[w0] = true;
            let j = job[w0];
            let mut delta = f64::INFINITY;
            let mut w_next = 0;
            for w in 0..m {
                if !in_z[w] {
                    let reduced = cost[[j - 1, w]] - ys[j] - yt[w];
                    if reduced < min_to[w] {
                        min_to[w] = reduced;
                        prv[w] = w0;
                    }
                    if min_to[w] < delta {
                        delta = min_to[w];
                        w_next = w;
                    }
                }
            }
            for w in 0..=m {
                if in_z[w] {
                    if job[w] != usize::MAX {
                        ys[job[w]] += delta;
                    }
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w0 = w_next;
            if job[w0] == usize::MAX {
                break;
            }
        }
        // augment along the alternating path
        while w0 != m {
            let w_prev = prv[w0];
            job[w0] = job[w_prev];
            w0 = w_prev;
        }
    }
    let mut assign = vec![usize::MAX; n];
    for w in 0..m {
        if job[w] != usize::MAX {
            assign[job[w] - 1] = w;
        }
    }
    assign
}

/// Maximum-weight assignment of rows to columns (`rows <= cols`).
pub fn max_weight_assignment(weights: &Array2<f64>) -> Vec<usize> {
    let cost = weights.mapv(|w| -w);
    min_cost_assignment(&cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_max(weights: &Array2<f64>) -> f64 {
        let (n, m) = weights.dim();
        let cols: Vec<usize> = (0..m).collect();
        let mut best = f64::NEG_INFINITY;
        permute(&cols, n, &mut vec![], &mut |perm| {
            let total: f64 = perm.iter().enumerate().map(|(r, &c)| weights[[r, c]]).sum();
            if total > best {
                best = total;
            }
        });
        best
    }

    fn permute(cols: &[usize], take: usize, acc: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if acc.len() == take {
            f(acc);
            return;
        }
        for &c in cols {
            if !acc.contains(&c) {
                acc.push(c);
                permute(cols, take, acc, f);
                acc.pop();
            }
        }
    }

    #[test]
    fn identity_matrix_assigns_diagonal() {
        let w = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(max_weight_assignment(&w), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(n..=5);
            let w = Array2::from_shape_fn((n, m), |_| rng.gen_range(-3.0..3.0));
            let assign = max_weight_assignment(&w);
            let total: f64 = assign.iter().enumerate().map(|(r, &c)| w[[r, c]]).sum();
            let best = brute_force_max(&w);
            assert!(
                (total - best).abs() < 1e-9,
                "got {total}, brute force {best} for {w:?}"
            );
        }
    }
}
