//! Singular value decomposition by Householder bidiagonalization followed by
//! implicit-shift QR sweeps on the bidiagonal (Golub–Kahan–Reinsch).
//!
//! The working buffers are column-major so the Householder reflections and the
//! Givens rotations applied to `U` and `V` walk contiguous memory.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Thin SVD `a = u · diag(sigma) · vt`.
///
/// `u` is `m × p`, `vt` is `p × n`, `sigma` has length `p`, nonnegative and
/// nonincreasing. Each column of `u` has its largest-magnitude entry positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub vt: Matrix<T>,
}

impl<T: Scalar> SvdFactors<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Keeps the leading `r` triplets. Ranks past the end are clamped.
    pub fn truncate(&self, r: usize) -> Result<SvdFactors<T>> {
        if r == 0 {
            return Err(Error::invalid("truncation rank must be at least 1"));
        }
        if r >= self.sigma.len() {
            return Ok(self.clone());
        }
        Ok(SvdFactors {
            u: self.u.col_range(0, r),
            sigma: self.sigma[..r].to_vec(),
            vt: self.vt.row_range(0, r),
        })
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        self.u
            .matmul(&self.vt.scale_rows(&self.sigma))
            .expect("factor shapes agree by construction")
    }

    pub fn cast<U: Scalar>(&self) -> SvdFactors<U> {
        SvdFactors {
            u: self.u.cast(),
            sigma: self.sigma.iter().map(|&s| U::of(s.as_f64())).collect(),
            vt: self.vt.cast(),
        }
    }

    /// Number of singular values above `rel_tol · sigma[0]`.
    pub fn numerical_rank(&self, rel_tol: T) -> usize {
        match self.sigma.first() {
            Some(&s0) if s0 > T::zero() => self.sigma.iter().filter(|&&s| s > rel_tol * s0).count(),
            _ => 0,
        }
    }
}

pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<SvdFactors<T>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(SvdFactors {
            u: Matrix::zeros(m, 0),
            sigma: Vec::new(),
            vt: Matrix::zeros(0, n),
        });
    }
    let mut f = if m >= n {
        let (u, sigma, vt) = decompose_tall(a);
        SvdFactors { u, sigma, vt }
    } else {
        // a^T = U' S V'^T  =>  a = V' S U'^T
        let (u2, sigma, vt2) = decompose_tall(&a.transpose());
        SvdFactors { u: vt2.transpose(), sigma, vt: u2.transpose() }
    };
    normalize_signs(&mut f);
    Ok(f)
}

/// Flips each (u_k, v_k) pair so the largest-magnitude entry of u_k is positive
/// (first such entry on ties).
fn normalize_signs<T: Scalar>(f: &mut SvdFactors<T>) {
    let (m, p) = f.u.shape();
    for k in 0..p {
        let mut best = 0;
        let mut best_abs = T::neg_infinity();
        for i in 0..m {
            let v = f.u[(i, k)].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if f.u[(best, k)] < T::zero() {
            for i in 0..m {
                f.u[(i, k)] = -f.u[(i, k)];
            }
            for v in f.vt.row_mut(k) {
                *v = -*v;
            }
        }
    }
}

/// Decomposes an `m × n` matrix with `m >= n`. Returns `(u, sigma, vt)` with
/// `u: m × n`, `vt: n × n`.
fn decompose_tall<T: Scalar>(input: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let (m, n) = input.shape();
    debug_assert!(m >= n && n > 0);
    let zero = T::zero();
    let one = T::one();

    // Column-major working copies: a[j*m + i] = A(i, j), u[j*m + i] = U(i, j),
    // v[j*n + i] = V(i, j).
    let mut a = vec![zero; m * n];
    for i in 0..m {
        for j in 0..n {
            a[j * m + i] = input[(i, j)];
        }
    }
    let nu = n;
    let mut s = vec![zero; n];
    let mut u = vec![zero; nu * m];
    let mut v = vec![zero; n * n];
    let mut e = vec![zero; n];
    let mut work = vec![zero; m];

    let nct = (m - 1).min(n);
    let nrt = (n.saturating_sub(2)).min(m);

    // Reduce to bidiagonal form.
    for k in 0..nct.max(nrt) {
        if k < nct {
            let col = &mut a[k * m..(k + 1) * m];
            let mut norm = zero;
            for &x in &col[k..] {
                norm = norm.hypot(x);
            }
            if norm != zero {
                if col[k] < zero {
                    norm = -norm;
                }
                for x in &mut col[k..] {
                    *x /= norm;
                }
                col[k] += one;
            }
            s[k] = -norm;
        }
        for j in k + 1..n {
            if k < nct && s[k] != zero {
                let (left, right) = a.split_at_mut(j * m);
                let ck = &left[k * m..(k + 1) * m];
                let cj = &mut right[..m];
                let mut t = zero;
                for i in k..m {
                    t += ck[i] * cj[i];
                }
                t = -t / ck[k];
                for i in k..m {
                    cj[i] += t * ck[i];
                }
            }
            e[j] = a[j * m + k];
        }
        if k < nct {
            u[k * m + k..(k + 1) * m].copy_from_slice(&a[k * m + k..(k + 1) * m]);
        }
        if k < nrt {
            let mut norm = zero;
            for &x in &e[k + 1..] {
                norm = norm.hypot(x);
            }
            if norm != zero {
                if e[k + 1] < zero {
                    norm = -norm;
                }
                for x in &mut e[k + 1..] {
                    *x /= norm;
                }
                e[k + 1] += one;
            }
            e[k] = -norm;
            if k + 1 < m && e[k] != zero {
                for w in &mut work[k + 1..] {
                    *w = zero;
                }
                for j in k + 1..n {
                    let cj = &a[j * m..(j + 1) * m];
                    for i in k + 1..m {
                        work[i] += e[j] * cj[i];
                    }
                }
                for j in k + 1..n {
                    let t = -e[j] / e[k + 1];
                    let cj = &mut a[j * m..(j + 1) * m];
                    for i in k + 1..m {
                        cj[i] += t * work[i];
                    }
                }
            }
            for i in k + 1..n {
                v[k * n + i] = e[i];
            }
        }
    }

    let mut p = n.min(m + 1);
    if nct < n {
        s[nct] = a[nct * m + nct];
    }
    if m < p {
        s[p - 1] = zero;
    }
    if nrt + 1 < p {
        e[nrt] = a[(p - 1) * m + nrt];
    }
    e[p - 1] = zero;

    // Accumulate U.
    for j in nct..nu {
        for x in &mut u[j * m..(j + 1) * m] {
            *x = zero;
        }
        u[j * m + j] = one;
    }
    for k in (0..nct).rev() {
        if s[k] != zero {
            for j in k + 1..nu {
                let (left, right) = u.split_at_mut(j * m);
                let ck = &left[k * m..(k + 1) * m];
                let cj = &mut right[..m];
                let mut t = zero;
                for i in k..m {
                    t += ck[i] * cj[i];
                }
                t = -t / ck[k];
                for i in k..m {
                    cj[i] += t * ck[i];
                }
            }
            let ck = &mut u[k * m..(k + 1) * m];
            for x in &mut ck[k..] {
                *x = -*x;
            }
            ck[k] += one;
            for x in &mut ck[..k] {
                *x = zero;
            }
        } else {
            let ck = &mut u[k * m..(k + 1) * m];
            for x in ck.iter_mut() {
                *x = zero;
            }
            ck[k] = one;
        }
    }

    // Accumulate V.
    for k in (0..n).rev() {
        if k < nrt && e[k] != zero {
            for j in k + 1..n {
                let (left, right) = v.split_at_mut(j * n);
                let ck = &left[k * n..(k + 1) * n];
                let cj = &mut right[..n];
                let mut t = zero;
                for i in k + 1..n {
                    t += ck[i] * cj[i];
                }
                t = -t / ck[k + 1];
                for i in k + 1..n {
                    cj[i] += t * ck[i];
                }
            }
        }
        let ck = &mut v[k * n..(k + 1) * n];
        for x in ck.iter_mut() {
            *x = zero;
        }
        ck[k] = one;
    }

    // Diagonalize the bidiagonal.
    let pp = p - 1;
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let max_sweeps = 75 * n.max(8);
    let mut sweeps = 0usize;

    while p > 0 {
        // Find the largest k < p-1 with negligible e[k]; k = -1 when none.
        let mut k: isize = p as isize - 2;
        while k >= 0 {
            let ku = k as usize;
            if e[ku].abs() <= tiny + eps * (s[ku].abs() + s[ku + 1].abs()) {
                e[ku] = zero;
                break;
            }
            k -= 1;
        }
        let kase;
        if k == p as isize - 2 {
            kase = 4;
        } else {
            let mut ks: isize = p as isize - 1;
            while ks > k {
                let ksu = ks as usize;
                let t = (if ksu != p { e[ksu].abs() } else { zero })
                    + (if ks != k + 1 { e[ksu - 1].abs() } else { zero });
                if s[ksu].abs() <= tiny + eps * t {
                    s[ksu] = zero;
                    break;
                }
                ks -= 1;
            }
            if ks == k {
                kase = 3;
            } else if ks == p as isize - 1 {
                kase = 1;
            } else {
                kase = 2;
                k = ks;
            }
        }
        let k = (k + 1) as usize;

        match kase {
            // Deflate negligible s[p-1].
            1 => {
                let mut f = e[p - 2];
                e[p - 2] = zero;
                for j in (k..=p - 2).rev() {
                    let t = s[j].hypot(f);
                    let cs = s[j] / t;
                    let sn = f / t;
                    s[j] = t;
                    if j != k {
                        f = -sn * e[j - 1];
                        e[j - 1] = cs * e[j - 1];
                    }
                    rotate(&mut v, n, j, p - 1, cs, sn);
                }
            }
            // Split at negligible s[k-1].
            2 => {
                let mut f = e[k - 1];
                e[k - 1] = zero;
                for j in k..p {
                    let t = s[j].hypot(f);
                    let cs = s[j] / t;
                    let sn = f / t;
                    s[j] = t;
                    f = -sn * e[j];
                    e[j] = cs * e[j];
                    rotate(&mut u, m, j, k - 1, cs, sn);
                }
            }
            // One implicit-shift QR sweep.
            3 => {
                let scale = s[p - 1]
                    .abs()
                    .max(s[p - 2].abs())
                    .max(e[p - 2].abs())
                    .max(s[k].abs())
                    .max(e[k].abs());
                let sp = s[p - 1] / scale;
                let spm1 = s[p - 2] / scale;
                let epm1 = e[p - 2] / scale;
                let sk = s[k] / scale;
                let ek = e[k] / scale;
                let b = ((spm1 + sp) * (spm1 - sp) + epm1 * epm1) / T::two();
                let c = (sp * epm1) * (sp * epm1);
                let mut shift = zero;
                if b != zero || c != zero {
                    shift = (b * b + c).sqrt();
                    if b < zero {
                        shift = -shift;
                    }
                    shift = c / (b + shift);
                }
                let mut f = (sk + sp) * (sk - sp) + shift;
                let mut g = sk * ek;
                for j in k..p - 1 {
                    let mut t = f.hypot(g);
                    let mut cs = f / t;
                    let mut sn = g / t;
                    if j != k {
                        e[j - 1] = t;
                    }
                    f = cs * s[j] + sn * e[j];
                    e[j] = cs * e[j] - sn * s[j];
                    g = sn * s[j + 1];
                    s[j + 1] = cs * s[j + 1];
                    rotate(&mut v, n, j, j + 1, cs, sn);
                    t = f.hypot(g);
                    cs = f / t;
                    sn = g / t;
                    s[j] = t;
                    f = cs * e[j] + sn * s[j + 1];
                    s[j + 1] = -sn * e[j] + cs * s[j + 1];
                    g = sn * e[j + 1];
                    e[j + 1] = cs * e[j + 1];
                    if j < m - 1 {
                        rotate(&mut u, m, j, j + 1, cs, sn);
                    }
                }
                e[p - 2] = f;
                sweeps += 1;
                if sweeps > max_sweeps {
                    // Unreachable for finite input in practice; force deflation
                    // rather than spin forever.
                    e[p - 2] = zero;
                }
            }
            // Convergence of s[k]: make it nonnegative and bubble into order.
            _ => {
                let mut k = k;
                if s[k] <= zero {
                    s[k] = if s[k] < zero { -s[k] } else { zero };
                    for x in &mut v[k * n..(k + 1) * n] {
                        *x = -*x;
                    }
                }
                while k < pp && s[k] < s[k + 1] {
                    s.swap(k, k + 1);
                    swap_blocks(&mut v, n, k, k + 1);
                    swap_blocks(&mut u, m, k, k + 1);
                    k += 1;
                }
                sweeps = 0;
                p -= 1;
            }
        }
    }

    let u_mat = Matrix::from_fn(m, nu, |i, j| u[j * m + i]);
    let vt_mat = Matrix::from_vec(n, n, v).expect("n*n buffer");
    (u_mat, s, vt_mat)
}

/// Applies the plane rotation `(x_j, x_k) <- (c x_j + s x_k, -s x_j + c x_k)`
/// to columns `j` and `k` of a column-major buffer with column length `len`.
#[inline]
fn rotate<T: Scalar>(buf: &mut [T], len: usize, j: usize, k: usize, cs: T, sn: T) {
    let (cj, ck) = two_blocks(buf, len, j, k);
    for (x, y) in cj.iter_mut().zip(ck.iter_mut()) {
        let t = cs * *x + sn * *y;
        *y = -sn * *x + cs * *y;
        *x = t;
    }
}

#[inline]
fn swap_blocks<T: Scalar>(buf: &mut [T], len: usize, j: usize, k: usize) {
    let (cj, ck) = two_blocks(buf, len, j, k);
    cj.swap_with_slice(ck);
}

#[inline]
fn two_blocks<T>(buf: &mut [T], len: usize, j: usize, k: usize) -> (&mut [T], &mut [T]) {
    debug_assert_ne!(j, k);
    if j < k {
        let (lo, hi) = buf.split_at_mut(k * len);
        (&mut lo[j * len..(j + 1) * len], &mut hi[..len])
    } else {
        let (lo, hi) = buf.split_at_mut(j * len);
        let ck = &mut lo[k * len..(k + 1) * len];
        (&mut hi[..len], ck)
    }
}
