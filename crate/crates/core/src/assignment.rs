//! Maximum-score bipartite assignment (Hungarian algorithm with potentials).

/// Result of an assignment: matched `(row, column)` pairs in row order, plus
/// rows and columns left unmatched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// A dense `rows x cols` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged score matrix");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Finds the matching of maximum total score, then drops pairs scoring below
/// `min_score`. Scores must be finite and non-negative.
pub fn solve_assignment(scores: &ScoreMatrix, min_score: f64) -> Assignment {
    let (m, k) = (scores.rows, scores.cols);
    let mut out = Assignment::default();
    if m == 0 || k == 0 {
        out.unmatched_rows = (0..m).collect();
        out.unmatched_cols = (0..k).collect();
        return out;
    }
    debug_assert!(scores.data.iter().all(|s| s.is_finite() && *s >= 0.0));
    let n = m.max(k);
    let top = scores.data.iter().copied().fold(0.0, f64::max);
    // Square minimization problem; padding cells score zero.
    let cost = |i: usize, j: usize| -> f64 {
        if i < m && j < k {
            top - scores.get(i, j)
        } else {
            top
        }
    };

    // 1-based potentials formulation; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
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

    let mut row_of_col = vec![None; k];
    for j in 1..=n {
        let (r, c) = (p[j] - 1, j - 1);
        if r < m && c < k {
            row_of_col[c] = Some(r);
        }
    }
    let mut col_of_row = vec![None; m];
    for (c, r) in row_of_col.iter().enumerate() {
        if let Some(r) = *r {
            if scores.get(r, c) >= min_score {
                col_of_row[r] = Some(c);
            }
        }
    }
    let mut col_used = vec![false; k];
    for (r, c) in col_of_row.iter().enumerate() {
        match c {
            Some(c) => {
                out.pairs.push((r, *c));
                col_used[*c] = true;
            }
            None => out.unmatched_rows.push(r),
        }
    }
    out.unmatched_cols = (0..k).filter(|&c| !col_used[c]).collect();
    out
}

/// Sum of the matched scores in row order.
pub fn total_score(scores: &ScoreMatrix, a: &Assignment) -> f64 {
    a.pairs.iter().map(|&(r, c)| scores.get(r, c)).sum()
}

/// Greedy matching by ascending cost over allowed pairs, ties by
/// `(row, column)`. Used for the nearest-foot ablation.
pub fn greedy_min_cost(costs: &ScoreMatrix, allowed: impl Fn(usize, usize) -> bool) -> Assignment {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for r in 0..costs.rows {
        for c in 0..costs.cols {
            if allowed(r, c) {
                cand.push((costs.get(r, c), r, c));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; costs.rows];
    let mut col_used = vec![false; costs.cols];
    let mut out = Assignment::default();
    for (_, r, c) in cand {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.pairs.push((r, c));
        }
    }
    out.pairs.sort_unstable();
    out.unmatched_rows = (0..costs.rows).filter(|&r| !row_used[r]).collect();
    out.unmatched_cols = (0..costs.cols).filter(|&c| !col_used[c]).collect();
    out
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::ScoreMatrix;

    /// Best total over all injective maps from the smaller side into the
    /// larger, summed in row order.
    pub fn brute_force_best(scores: &ScoreMatrix) -> f64 {
        let (m, k) = (scores.rows(), scores.cols());
        if m == 0 || k == 0 {
            return 0.0;
        }
        let transpose = m > k;
        let (small, large) = if transpose { (k, m) } else { (m, k) };
        let mut best = f64::NEG_INFINITY;
        let mut chosen = Vec::with_capacity(small);
        let mut used = vec![false; large];
        fn rec(
            depth: usize,
            small: usize,
            large: usize,
            transpose: bool,
            scores: &ScoreMatrix,
            chosen: &mut Vec<usize>,
            used: &mut [bool],
            best: &mut f64,
        ) {
            if depth == small {
                let mut pairs: Vec<(usize, usize)> = chosen
                    .iter()
                    .enumerate()
                    .map(|(a, &b)| if transpose { (b, a) } else { (a, b) })
                    .collect();
                pairs.sort_unstable();
                let total: f64 = pairs.iter().map(|&(r, c)| scores.get(r, c)).sum();
                if total > *best {
                    *best = total;
                }
                return;
            }
            for j in 0..large {
                if !used[j] {
                    used[j] = true;
                    chosen.push(j);
                    rec(depth + 1, small, large, transpose, scores, chosen, used, best);
                    chosen.pop();
                    used[j] = false;
                }
            }
        }
        rec(0, small, large, transpose, scores, &mut chosen, &mut used, &mut best);
        best
    }
}
