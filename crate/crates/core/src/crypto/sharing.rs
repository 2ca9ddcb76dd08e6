//! Secret splitting for policy gates: XOR shares for AND, Shamir shares over
//! GF(2^8) (bytewise, reduction polynomial 0x11b) for k-of-n.

use rand::RngCore;

pub type Secret = [u8; 32];

/// Splits `secret` into `n` shares whose XOR is the secret.
pub fn xor_split<R: RngCore + ?Sized>(secret: &Secret, n: usize, rng: &mut R) -> Vec<Secret> {
    assert!(n >= 1);
    let mut shares = vec![[0u8; 32]; n];
    let mut last = *secret;
    for share in shares.iter_mut().take(n - 1) {
        rng.fill_bytes(share);
        for (l, s) in last.iter_mut().zip(share.iter()) {
            *l ^= s;
        }
    }
    shares[n - 1] = last;
    shares
}

pub fn xor_combine<'a>(shares: impl IntoIterator<Item = &'a Secret>) -> Secret {
    let mut out = [0u8; 32];
    for share in shares {
        for (o, s) in out.iter_mut().zip(share) {
            *o ^= s;
        }
    }
    out
}

mod gf256 {
    const fn tables() -> ([u8; 256], [u8; 255]) {
        let mut log = [0u8; 256];
        let mut exp = [0u8; 255];
        let mut x: u8 = 1;
        let mut i = 0;
        while i < 255 {
            exp[i] = x;
            log[x as usize] = i as u8;
            // multiply by the generator 3
            let mut hi = x << 1;
            if x & 0x80 != 0 {
                hi ^= 0x1b;
            }
            x ^= hi;
            i += 1;
        }
        (log, exp)
    }

    const TABLES: ([u8; 256], [u8; 255]) = tables();

    pub fn mul(a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            return 0;
        }
        let (log, exp) = &TABLES;
        exp[(log[a as usize] as usize + log[b as usize] as usize) % 255]
    }

    pub fn inv(a: u8) -> u8 {
        assert_ne!(a, 0, "zero has no inverse");
        let (log, exp) = &TABLES;
        exp[(255 - log[a as usize] as usize) % 255]
    }
}

/// Splits `secret` into `n` Shamir shares with threshold `k`. Share `i`
/// (0-based) is the polynomial evaluated at `x = i + 1`.
pub fn shamir_split<R: RngCore + ?Sized>(secret: &Secret, k: usize, n: usize, rng: &mut R) -> Vec<Secret> {
    assert!(1 <= k && k <= n && n <= 255);
    // coeffs[j][b]: coefficient of x^(j+1) for byte b
    let mut coeffs = vec![[0u8; 32]; k - 1];
    for c in coeffs.iter_mut() {
        rng.fill_bytes(c);
    }
    (1..=n as u8)
        .map(|x| {
            let mut share = [0u8; 32];
            for (b, out) in share.iter_mut().enumerate() {
                // Horner from the highest coefficient down to the secret.
                let mut acc = 0u8;
                for c in coeffs.iter().rev() {
                    acc = gf256::mul(acc, x) ^ c[b];
                }
                *out = gf256::mul(acc, x) ^ secret[b];
            }
            share
        })
        .collect()
}

/// Interpolates the secret from shares given as `(x, share)` with distinct
/// non-zero `x`. Exactly `k` shares are needed; extra shares are harmless only
/// if they lie on the same polynomial.
pub fn shamir_combine(shares: &[(u8, Secret)]) -> Secret {
    let mut out = [0u8; 32];
    for (i, (xi, yi)) in shares.iter().enumerate() {
        // Lagrange basis at zero: prod_{j != i} x_j / (x_j - x_i); subtraction is XOR.
        let mut basis = 1u8;
        for (j, (xj, _)) in shares.iter().enumerate() {
            if i != j {
                basis = gf256::mul(basis, gf256::mul(*xj, gf256::inv(xj ^ xi)));
            }
        }
        for (o, y) in out.iter_mut().zip(yi) {
            *o ^= gf256::mul(basis, *y);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Carry-less multiply with explicit reduction; independent of the tables.
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn field_matches_schoolbook() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(gf256::mul(a, b), slow_mul(a, b));
            }
            if a != 0 {
                assert_eq!(slow_mul(a, gf256::inv(a)), 1);
            }
        }
    }

    #[test]
    fn xor_shares() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let secret = [7u8; 32];
        for n in 1..5 {
            let shares = xor_split(&secret, n, &mut rng);
            assert_eq!(xor_combine(&shares), secret);
            if n > 1 {
                assert_ne!(xor_combine(&shares[1..]), secret);
            }
        }
    }

    #[test]
    fn every_k_subset_recovers() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        for n in 1..=5usize {
            for k in 1..=n {
                let shares = shamir_split(&secret, k, n, &mut rng);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let picked: Vec<(u8, Secret)> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| (i as u8 + 1, shares[i]))
                        .collect();
                    assert_eq!(shamir_combine(&picked), secret, "k={k} n={n} mask={mask:b}");
                }
            }
        }
    }

    #[test]
    fn fewer_than_k_shares_do_not_recover() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let secret = [0x5a; 32];
        let shares = shamir_split(&secret, 3, 5, &mut rng);
        let two = [(1, shares[0]), (2, shares[1])];
        assert_ne!(shamir_combine(&two), secret);
    }
}
