use super::Real;

/// Row-major `C (m x n) = op(A) op(B) + beta * C`, where `op(A)` is `m x k`.
///
/// `a_t` means `A` is stored as `k x m`; `b_t` means `B` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: A has {} values, needs {}", a.len(), m * k);
    assert!(b.len() >= k * n, "gemm: B has {} values, needs {}", b.len(), k * n);
    assert!(c.len() >= m * n, "gemm: C has {} values, needs {}", c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every strided access; the borrow
    // checker guarantees `c` does not alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
