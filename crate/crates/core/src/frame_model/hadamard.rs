//! 8×8 Hadamard cost (SA8D) on source luma.

/// An 8×8 block of signed samples, row-major.
pub type Block8 = [[i32; 8]; 8];

/// Unnormalized Sylvester-ordered Hadamard matrix: `H[i][j] = (-1)^popcount(i & j)`.
pub const HADAMARD_8: [[i32; 8]; 8] = {
    let mut h = [[0i32; 8]; 8];
    let mut i = 0;
    while i < 8 {
        let mut j = 0;
        while j < 8 {
            h[i][j] = if (i & j).count_ones() % 2 == 0 { 1 } else { -1 };
            j += 1;
        }
        i += 1;
    }
    h
};

/// In-place fast Walsh-Hadamard transform of 8 values (Sylvester order).
#[inline]
fn wht8(v: &mut [i64; 8]) {
    let mut len = 1;
    while len < 8 {
        for start in (0..8).step_by(2 * len) {
            for j in start..start + len {
                let (a, b) = (v[j], v[j + len]);
                v[j] = a + b;
                v[j + len] = a - b;
            }
        }
        len *= 2;
    }
}

/// Σ|H·block·H| with exact integer arithmetic.
///
/// `H` is symmetric, so the row pass followed by the column pass yields
/// `H·B·H` directly.
pub fn sa8d_block(block: &Block8) -> u64 {
    let mut coeffs = [[0i64; 8]; 8];
    for (dst, src) in coeffs.iter_mut().zip(block) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = i64::from(s);
        }
        wht8(dst);
    }
    let mut sum = 0u64;
    for col in 0..8 {
        let mut v = [0i64; 8];
        for row in 0..8 {
            v[row] = coeffs[row][col];
        }
        wht8(&mut v);
        sum += v.iter().map(|c| c.unsigned_abs()).sum::<u64>();
    }
    sum
}
