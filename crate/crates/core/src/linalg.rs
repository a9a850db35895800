//! Dense least squares via Householder QR with column pivoting.
//!
//! Rank-deficient systems are resolved to the minimum-norm solution with a
//! second orthogonal factorisation of the leading trapezoid (a complete
//! orthogonal decomposition).

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ColMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let mut m = ColMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[c * rows + r] = values[r * cols + c];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (head, tail) = self.data.split_at_mut(hi * self.rows);
        head[lo * self.rows..(lo + 1) * self.rows].swap_with_slice(&mut tail[..self.rows]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    pub rank: usize,
}

/// Relative threshold on |R_kk| / |R_00| below which a pivot counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Householder reflector `I - tau v v^T` with an implicit leading 1 in `v`.
/// Returns (tau, beta) and overwrites `x[1..]` with the tail of `v`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let x0 = x[0];
    let tail_sq: f64 = x[1..].iter().map(|v| v * v).sum();
    if tail_sq == 0.0 {
        return (0.0, x0);
    }
    let norm = (x0 * x0 + tail_sq).sqrt();
    let beta = if x0 >= 0.0 { -norm } else { norm };
    let scale = 1.0 / (x0 - beta);
    for v in &mut x[1..] {
        *v *= scale;
    }
    ((beta - x0) / beta, beta)
}

/// Applies `I - tau v v^T` (v = [1, tail]) to `y`.
fn apply_reflector(tail: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let mut w = y[0];
    for (v, yi) in tail.iter().zip(&y[1..]) {
        w += v * yi;
    }
    w *= tau;
    y[0] -= w;
    for (v, yi) in tail.iter().zip(y[1..].iter_mut()) {
        *yi -= w * v;
    }
}

/// Minimises `||A x - b||`, returning the minimum-norm minimiser when `A`
/// is rank deficient.
pub fn lstsq(a: &ColMatrix, b: &[f64]) -> LstsqSolution {
    assert_eq!(a.rows, b.len(), "row count mismatch");
    let m = a.rows;
    let n = a.cols;
    let mut qr = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut norms: Vec<f64> = (0..n).map(|j| qr.col(j).iter().map(|v| v * v).sum()).collect();
    let mut ref_norms = norms.clone();
    let steps = m.min(n);
    let mut taus = vec![0.0; steps];
    let mut diag = vec![0.0; steps];
    let mut qtb = b.to_vec();

    for k in 0..steps {
        let p = (k..n)
            .max_by(|&i, &j| norms[i].partial_cmp(&norms[j]).unwrap_or(std::cmp::Ordering::Equal).then(j.cmp(&i)))
            .unwrap_or(k);
        if p != k {
            qr.swap_cols(k, p);
            norms.swap(k, p);
            ref_norms.swap(k, p);
            perm.swap(k, p);
        }
        let (tau, beta) = householder(&mut qr.col_mut(k)[k..]);
        taus[k] = tau;
        diag[k] = beta;
        let (head, tail) = qr.data.split_at_mut((k + 1) * m);
        let v_tail = &head[k * m + k + 1..(k + 1) * m];
        for j in (k + 1)..n {
            let col = &mut tail[(j - k - 1) * m..(j - k) * m];
            apply_reflector(v_tail, tau, &mut col[k..]);
            let r = col[k];
            norms[j] -= r * r;
            if norms[j] <= 1e-8 * ref_norms[j] {
                let fresh: f64 = col[k + 1..].iter().map(|v| v * v).sum();
                norms[j] = fresh;
                ref_norms[j] = fresh;
            }
        }
        apply_reflector(v_tail, tau, &mut qtb[k..]);
        qr.set(k, k, beta);
    }

    let lead = diag.first().map(|d| d.abs()).unwrap_or(0.0);
    let rank = if lead == 0.0 {
        0
    } else {
        diag.iter().take_while(|d| d.abs() > RANK_TOLERANCE * lead).count()
    };

    let mut z = vec![0.0; n];
    if rank == n {
        for i in (0..n).rev() {
            let mut s = qtb[i];
            for j in (i + 1)..n {
                s -= qr.get(i, j) * z[j];
            }
            z[i] = s / qr.get(i, i);
        }
    } else if rank > 0 {
        // T = R[0..rank, 0..n]; factor T^T = Q2 R2, then z = Q2 R2^{-T} c.
        let mut tt = ColMatrix::zeros(n, rank);
        for i in 0..rank {
            for j in i..n {
                tt.set(j, i, qr.get(i, j));
            }
        }
        let mut taus2 = vec![0.0; rank];
        for k in 0..rank {
            let (tau, beta) = householder(&mut tt.col_mut(k)[k..]);
            taus2[k] = tau;
            let (head, tail) = tt.data.split_at_mut((k + 1) * n);
            let v_tail = &head[k * n + k + 1..(k + 1) * n];
            for j in (k + 1)..rank {
                let col = &mut tail[(j - k - 1) * n..(j - k) * n];
                apply_reflector(v_tail, tau, &mut col[k..]);
            }
            tt.set(k, k, beta);
        }
        // Forward substitution with R2^T (lower triangular).
        for i in 0..rank {
            let mut s = qtb[i];
            for j in 0..i {
                s -= tt.get(j, i) * z[j];
            }
            z[i] = s / tt.get(i, i);
        }
        for k in (0..rank).rev() {
            let v_tail = &tt.col(k)[k + 1..];
            apply_reflector(v_tail, taus2[k], &mut z[k..]);
        }
    }

    let mut coef = vec![0.0; n];
    for (j, &p) in perm.iter().enumerate() {
        coef[p] = z[j];
    }
    LstsqSolution { coef, rank }
}
