//! Bessel functions of the first kind and their zeros, for the disk kernel.

/// `J_n(x)` for integer `n ≥ 0`, `x ≥ 0`, by Miller's backward recurrence
/// normalised with `J_0 + 2 Σ J_{2k} = 1`.
pub fn bessel_j(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let x = x.abs();
    let top = (n as f64).max(x);
    let mut m = (top + 20.0 + (40.0 * top).sqrt()) as usize;
    m += m % 2;
    let two_over_x = 2.0 / x;
    let mut j_next = 0.0;
    let mut j_cur = 1e-280;
    let mut result = 0.0;
    let mut norm = 0.0;
    for k in (1..=m).rev() {
        let j_prev = k as f64 * two_over_x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            result *= 1e-250;
            norm *= 1e-250;
        }
        // j_cur now holds J_{k-1}
        if k - 1 == n {
            result = j_cur;
        }
        if (k - 1) % 2 == 0 && k > 1 {
            norm += 2.0 * j_cur;
        }
    }
    norm += j_cur;
    result / norm
}

/// Positive zeros of `J_n` below `x_max`, in increasing order.
pub fn bessel_j_zeros(n: usize, x_max: f64) -> Vec<f64> {
    let mut zeros = Vec::new();
    let step = 0.25;
    let mut a = (n as f64).max(0.5);
    let mut fa = bessel_j(n, a);
    while a < x_max {
        let b = a + step;
        let fb = bessel_j(n, b);
        if fa == 0.0 {
            zeros.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = bessel_j(n, mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 * mid {
                    break;
                }
            }
            let z = 0.5 * (lo + hi);
            if z < x_max {
                zeros.push(z);
            }
        }
        a = b;
        fa = fb;
    }
    zeros
}
