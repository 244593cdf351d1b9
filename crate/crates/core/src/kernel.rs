//! Dense matrix product used by every layer.
//!
//! `c[i][j] += Σ_p a[i][p]·b[p][j]` with `p` ascending for every entry, so an
//! entry's value does not depend on the matrix sizes or on the tiling. With
//! `std` on x86-64 an AVX2 build of the same loop is selected at run time;
//! it performs the identical sequence of (unfused) multiplies and adds.

const MR: usize = 4;
const NR: usize = 8;

#[inline(always)]
fn gemm_body(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // B packed into column panels of width NR: panel q holds b[p][q·NR + t] at p·NR + t
    let panels = n / NR;
    let mut bp = alloc::vec![0.0; panels * k * NR];
    for q in 0..panels {
        let dst = &mut bp[q * k * NR..(q + 1) * k * NR];
        for p in 0..k {
            dst[p * NR..(p + 1) * NR].copy_from_slice(&b[p * n + q * NR..p * n + (q + 1) * NR]);
        }
    }
    let mut ap = alloc::vec![0.0; k * MR];
    let mut i = 0;
    while i + MR <= m {
        for p in 0..k {
            for r in 0..MR {
                ap[p * MR + r] = a[(i + r) * k + p];
            }
        }
        for q in 0..panels {
            let j = q * NR;
            let mut acc = [[0.0f64; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            let panel = &bp[q * k * NR..(q + 1) * k * NR];
            for (av, bv) in ap.chunks_exact(MR).zip(panel.chunks_exact(NR)) {
                let av: &[f64; MR] = av.try_into().unwrap();
                let bv: &[f64; NR] = bv.try_into().unwrap();
                for r in 0..MR {
                    for t in 0..NR {
                        acc[r][t] += av[r] * bv[t];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
        }
        for r in i..i + MR {
            edge(k, n, panels * NR, a, b, c, r);
        }
        i += MR;
    }
    for r in i..m {
        for q in 0..panels {
            let j = q * NR;
            let mut acc: [f64; NR] = c[r * n + j..r * n + j + NR].try_into().unwrap();
            let panel = &bp[q * k * NR..(q + 1) * k * NR];
            for (&av, bv) in a[r * k..(r + 1) * k].iter().zip(panel.chunks_exact(NR)) {
                let bv: &[f64; NR] = bv.try_into().unwrap();
                for t in 0..NR {
                    acc[t] += av * bv[t];
                }
            }
            c[r * n + j..r * n + j + NR].copy_from_slice(&acc);
        }
        edge(k, n, panels * NR, a, b, c, r);
    }
}

/// Columns `j0..n` of row `r`.
#[inline(always)]
fn edge(k: usize, n: usize, j0: usize, a: &[f64], b: &[f64], c: &mut [f64], r: usize) {
    for j in j0..n {
        let mut s = c[r * n + j];
        for p in 0..k {
            s += a[r * k + p] * b[p * n + j];
        }
        c[r * n + j] = s;
    }
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_body(m, k, n, a, b, c)
}

/// `c += a·b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { gemm_avx2(m, k, n, a, b, c) };
            return;
        }
    }
    gemm_body(m, k, n, a, b, c)
}

/// Row-major transpose of an `rows × cols` matrix.
pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize) -> alloc::vec::Vec<f64> {
    let mut out = alloc::vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
