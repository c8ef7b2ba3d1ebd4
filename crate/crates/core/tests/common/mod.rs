#![allow(dead_code)]

use granular_core::heightfield::HeightMap;
use proptest::prelude::*;

/// Random maps up to 12×12 with heights in `[0, max_h]` on 1 cm cells.
pub fn arb_map(max_h: f64) -> impl Strategy<Value = HeightMap> {
    (2usize..=12, 2usize..=12).prop_flat_map(move |(rows, cols)| {
        prop::collection::vec(0.0..=max_h, rows * cols)
            .prop_map(move |h| HeightMap::from_vec(rows, cols, 0.01, h).unwrap())
    })
}

/// Direct per-pair repose relaxation used as an independent oracle: visits
/// every ordered pair of 8-neighbours and moves material until no pair
/// exceeds the stable drop by more than `tol`.
pub fn naive_relax(h: &mut [f64], rows: usize, cols: usize, cell: f64, tan: f64, k: f64, tol: f64, max_iter: usize) -> bool {
    for _ in 0..max_iter {
        let snapshot = h.to_vec();
        let mut delta = vec![0.0; h.len()];
        let mut worst = 0.0f64;
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        if (dr, dc) == (0, 0) {
                            continue;
                        }
                        let (nr, nc) = (r + dr, c + dc);
                        if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                            continue;
                        }
                        let i = (r as usize) * cols + c as usize;
                        let j = (nr as usize) * cols + nc as usize;
                        let dist = cell * ((dr * dr + dc * dc) as f64).sqrt();
                        let excess = snapshot[i] - snapshot[j] - dist * tan;
                        if excess > 0.0 {
                            worst = worst.max(excess);
                            let q = k * excess / 2.0;
                            delta[i] -= q;
                            delta[j] += q;
                        }
                    }
                }
            }
        }
        if worst <= tol {
            return true;
        }
        for (x, d) in h.iter_mut().zip(&delta) {
            *x += d;
        }
    }
    false
}

/// Relaxed 32×32 bed at 6 cm with 1–4 Gaussian bumps or dents of up to
/// 3 cm and 2–5 cells width.
pub fn bumpy_map<R: rand::Rng>(rng: &mut R) -> HeightMap {
    use granular_core::heightfield::{relax_in_place, ReposeConfig};
    let n = 32;
    let mut h = vec![0.06; n * n];
    for _ in 0..rng.random_range(1..=4) {
        let (br, bc) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let amp = rng.random_range(-0.03..0.03);
        let sigma: f64 = rng.random_range(2.0..5.0);
        for r in 0..n {
            for c in 0..n {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                h[r * n + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for x in &mut h {
        *x = x.clamp(0.0, 0.2);
    }
    let mut map = HeightMap::from_vec(n, n, 0.01, h).unwrap();
    relax_in_place(&mut map, &ReposeConfig::default()).unwrap();
    map
}
