//! Dense all-pairs shortest paths.

use rayon::prelude::*;

/// Floyd–Warshall on a row-major `n×n` weight matrix, in place.
///
/// Rows are relaxed in parallel within each pivot round. Row `k` does not
/// change during round `k` (the diagonal is zero), so every cell sees the
/// same operands whatever the thread count and the output is bit-identical.
pub fn floyd_warshall(w: &mut [f64], n: usize) {
    assert_eq!(w.len(), n * n, "weight matrix is not {n}x{n}");
    let mut pivot = vec![0.0; n];
    for k in 0..n {
        pivot.copy_from_slice(&w[k * n..(k + 1) * n]);
        w.par_chunks_mut(n).for_each(|row| {
            let dik = row[k];
            if !dik.is_finite() {
                return;
            }
            for (cell, &dkj) in row.iter_mut().zip(&pivot) {
                let cand = dik + dkj;
                if cand < *cell {
                    *cell = cand;
                }
            }
        });
    }
}

/// Shortest-path closure of the complete graph with edge weights `weight(i, j)`,
/// symmetrized by taking the smaller of the two directions (they can differ in
/// the last bit through summation order).
pub fn shortest_path_closure<F: Fn(usize, usize) -> f64 + Sync>(n: usize, weight: F) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if i == j {
                0.0
            } else {
                weight(i.min(j), i.max(j))
            }
        })
        .collect();
    floyd_warshall(&mut w, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let m = w[i * n + j].min(w[j * n + i]);
            w[i * n + j] = m;
            w[j * n + i] = m;
        }
    }
    w
}
