//! Straight-line reference for one reallocation step, written against
//! plain `Vec<bool>` masks and independent of [`crate::realloc`].

use rand::seq::index;
use rand_chacha::ChaCha20Rng;

/// One tensor as the oracle sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTensor {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub tensors: Vec<OracleTensor>,
    pub pruned: Vec<usize>,
    pub grown: Vec<usize>,
    pub threshold_next: f64,
}

/// Prune below `h`, adapt `h` around `target` with tolerance `tol`, grow
/// in proportion to survivors with the rounding and capacity guards.
pub fn oracle_step(input: &[OracleTensor], h: f64, target: usize, tol: f64, rng: &mut ChaCha20Rng) -> OracleStep {
    let n_t = input.len();
    let mut ts = input.to_vec();

    // prune
    let mut pruned = vec![0usize; n_t];
    for l in 0..n_t {
        for i in 0..ts[l].values.len() {
            if ts[l].mask[i] && ts[l].values[i].abs() < h {
                ts[l].mask[i] = false;
                ts[l].values[i] = 0.0;
                pruned[l] += 1;
            }
        }
    }
    let k: usize = pruned.iter().sum();

    // threshold
    let lo = (1.0 - tol) * target as f64;
    let hi = (1.0 + tol) * target as f64;
    let threshold_next = if (k as f64) < lo {
        h * 2.0
    } else if (k as f64) > hi {
        h / 2.0
    } else {
        h
    };

    // growth counts
    let surv: Vec<usize> = ts.iter().map(|t| t.mask.iter().filter(|&&b| b).count()).collect();
    let cap: Vec<usize> = ts.iter().zip(&surv).map(|(t, &r)| t.values.len() - r).collect();
    let mut grown = vec![0usize; n_t];
    if k > 0 {
        let total_r: usize = surv.iter().sum();
        let w: Vec<usize> = if total_r == 0 { cap.clone() } else { surv.clone() };
        let den: i128 = w.iter().map(|&x| x as i128).sum();
        // round half up: floor((2 num + den) / (2 den))
        let mut resid = vec![0i128; n_t];
        for l in 0..n_t {
            let num = w[l] as i128 * k as i128;
            grown[l] = ((2 * num + den) / (2 * den)) as usize;
            resid[l] = num - grown[l] as i128 * den;
        }
        let mut sum: usize = grown.iter().sum();
        while sum < k {
            // largest residual, lowest index first
            let mut best = 0;
            for l in 1..n_t {
                if resid[l] > resid[best] {
                    best = l;
                }
            }
            grown[best] += 1;
            resid[best] = i128::MIN;
            sum += 1;
        }
        while sum > k {
            let mut best = usize::MAX;
            for l in 0..n_t {
                if grown[l] > 0 && (best == usize::MAX || resid[l] < resid[best]) {
                    best = l;
                }
            }
            grown[best] -= 1;
            resid[best] = i128::MAX;
            sum -= 1;
        }
        // capacity
        let mut excess = 0usize;
        for l in 0..n_t {
            if grown[l] > cap[l] {
                excess += grown[l] - cap[l];
                grown[l] = cap[l];
            }
        }
        if excess > 0 {
            let room: Vec<usize> = (0..n_t).map(|l| cap[l] - grown[l]).collect();
            let room_total: u128 = room.iter().map(|&r| r as u128).sum();
            let mut extra = vec![0usize; n_t];
            let mut rem = vec![0u128; n_t];
            for l in 0..n_t {
                let num = excess as u128 * room[l] as u128;
                extra[l] = (num / room_total) as usize;
                rem[l] = num % room_total;
            }
            let mut left = excess - extra.iter().sum::<usize>();
            let mut done = vec![false; n_t];
            while left > 0 {
                let mut best = usize::MAX;
                for l in 0..n_t {
                    if !done[l] && extra[l] < room[l] && (best == usize::MAX || rem[l] > rem[best]) {
                        best = l;
                    }
                }
                extra[best] += 1;
                done[best] = true;
                left -= 1;
            }
            for l in 0..n_t {
                grown[l] += extra[l];
            }
        }
    }

    // placement
    for l in 0..n_t {
        if grown[l] == 0 {
            continue;
        }
        let free: Vec<usize> = (0..ts[l].mask.len()).filter(|&i| !ts[l].mask[i]).collect();
        let mut picks = index::sample(rng, free.len(), grown[l]).into_vec();
        picks.sort_unstable();
        for p in picks {
            ts[l].mask[free[p]] = true;
            ts[l].values[free[p]] = 0.0;
        }
    }

    OracleStep {
        tensors: ts,
        pruned,
        grown,
        threshold_next,
    }
}
