//! Arithmetic in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1.

const POLY: u16 = 0x11B;

const fn build_tables() -> ([u8; 256], [u8; 510]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 510];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        exp[i + 255] = x as u8;
        log[x as usize] = i as u8;
        // multiply by the generator 3 = x + 1
        x ^= x << 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 510]) = build_tables();
const LOG: [u8; 256] = TABLES.0;
const EXP: [u8; 510] = TABLES.1;

pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
}

/// Multiplicative inverse; `None` for zero.
pub fn inv(a: u8) -> Option<u8> {
    (a != 0).then(|| EXP[255 - LOG[a as usize] as usize])
}

pub fn div(a: u8, b: u8) -> Option<u8> {
    inv(b).map(|ib| mul(a, ib))
}

/// Horner evaluation of `coeffs[0] + coeffs[1] x + ...`.
pub fn eval_poly(coeffs: &[u8], x: u8) -> u8 {
    coeffs.iter().rev().fold(0, |acc, &c| add(mul(acc, x), c))
}

/// Lagrange interpolation of the points at x = 0. Points must have distinct x.
pub fn interpolate_at_zero(points: &[(u8, u8)]) -> u8 {
    points.iter().enumerate().fold(0, |acc, (i, &(xi, yi))| {
        let (num, den) = points.iter().enumerate().filter(|&(j, _)| j != i).fold((1u8, 1u8), |(n, d), (_, &(xj, _))| {
            (mul(n, xj), mul(d, add(xj, xi)))
        });
        add(acc, mul(yi, div(num, den).expect("distinct x values")))
    })
}
