//! Viterbi decoding in the log domain.

/// Log probabilities are floored at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

pub fn safe_ln(p: f64) -> f64 {
    (p + PROB_FLOOR).ln()
}

/// Most likely state sequence for a dense HMM.
///
/// `log_trans[i][j]` is the log probability of moving from state `i` to `j`,
/// `log_emit[t][j]` the log likelihood of frame `t` under state `j`. Ties are
/// broken towards the lowest state index. Returns the path and its log score.
pub fn viterbi_dense(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_emit: &[Vec<f64>],
) -> (Vec<usize>, f64) {
    let n = log_init.len();
    if log_emit.is_empty() || n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut delta: Vec<f64> = (0..n).map(|j| log_init[j] + log_emit[0][j]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(log_emit.len());
    back.push(vec![0; n]);
    for emit in &log_emit[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut ptr = vec![0; n];
        for j in 0..n {
            for i in 0..n {
                let v = delta[i] + log_trans[i][j];
                if v > next[j] {
                    next[j] = v;
                    ptr[j] = i;
                }
            }
            next[j] += emit[j];
        }
        delta = next;
        back.push(ptr);
    }
    backtrack(&delta, &back)
}

fn backtrack(delta: &[f64], back: &[Vec<usize>]) -> (Vec<usize>, f64) {
    let (mut state, score) = delta
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
            if v > best.1 {
                (j, v)
            } else {
                best
            }
        });
    let mut path = vec![0; back.len()];
    for t in (0..back.len()).rev() {
        path[t] = state;
        state = back[t][state];
    }
    (path, score)
}

/// Transition structure of the pitch HMM: `n_bins` pitch states, each either
/// voiced or unvoiced. Pitch moves follow a triangular kernel of half-width
/// `half_width` bins (rows renormalized at the edges); voicing flips with
/// probability `switch_prob`.
#[derive(Debug, Clone)]
pub struct PitchHmm {
    pub n_bins: usize,
    pub half_width: usize,
    pub switch_prob: f64,
    /// `log_tri[i][k]`: log weight of moving from bin `i` to `i + k - half_width`.
    log_tri: Vec<Vec<f64>>,
}

impl PitchHmm {
    pub fn new(n_bins: usize, half_width: usize, switch_prob: f64) -> Self {
        let h = half_width as isize;
        let log_tri = (0..n_bins as isize)
            .map(|i| {
                let weights: Vec<f64> = (-h..=h)
                    .map(|k| {
                        let j = i + k;
                        if j < 0 || j >= n_bins as isize {
                            0.0
                        } else {
                            (h + 1 - k.abs()) as f64
                        }
                    })
                    .collect();
                let z: f64 = weights.iter().sum();
                weights.iter().map(|w| safe_ln(w / z)).collect()
            })
            .collect();
        Self {
            n_bins,
            half_width,
            switch_prob,
            log_tri,
        }
    }

    pub fn n_states(&self) -> usize {
        2 * self.n_bins
    }

    /// Dense transition matrix; states `0..n_bins` are voiced.
    pub fn dense_log_transitions(&self) -> Vec<Vec<f64>> {
        let n = self.n_bins;
        let (stay, switch) = (safe_ln(1.0 - self.switch_prob), safe_ln(self.switch_prob));
        let mut m = vec![vec![safe_ln(0.0); 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                let k = j as isize - i as isize + self.half_width as isize;
                if k < 0 || k > 2 * self.half_width as isize {
                    continue;
                }
                let tri = self.log_tri[i][k as usize];
                m[i][j] = stay + tri;
                m[n + i][n + j] = stay + tri;
                m[i][n + j] = switch + tri;
                m[n + i][j] = switch + tri;
            }
        }
        m
    }

    /// Banded Viterbi equivalent to [`viterbi_dense`] on
    /// [`Self::dense_log_transitions`] with a uniform initial distribution.
    pub fn decode(&self, log_emit: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = self.n_bins;
        let ns = 2 * n;
        if log_emit.is_empty() || n == 0 {
            return (Vec::new(), 0.0);
        }
        let (stay, switch) = (safe_ln(1.0 - self.switch_prob), safe_ln(self.switch_prob));
        let log_init = -(ns as f64).ln();
        let mut delta: Vec<f64> = log_emit[0].iter().map(|e| log_init + e).collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(log_emit.len());
        back.push(vec![0; ns]);
        let h = self.half_width as isize;
        // best source per bin for each target voicing
        let mut src_val = vec![0.0; n];
        let mut src_idx = vec![0usize; n];
        for emit in &log_emit[1..] {
            let mut next = vec![f64::NEG_INFINITY; ns];
            let mut ptr = vec![0usize; ns];
            for target_voiced in [true, false] {
                for i in 0..n {
                    let (from_v, from_u) = if target_voiced {
                        (delta[i] + stay, delta[n + i] + switch)
                    } else {
                        (delta[i] + switch, delta[n + i] + stay)
                    };
                    // lower index wins ties, matching the dense decoder
                    if from_v >= from_u {
                        src_val[i] = from_v;
                        src_idx[i] = i;
                    } else {
                        src_val[i] = from_u;
                        src_idx[i] = n + i;
                    }
                }
                let offset = if target_voiced { 0 } else { n };
                for j in 0..n as isize {
                    let lo = (j - h).max(0);
                    let hi = (j + h).min(n as isize - 1);
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0usize;
                    for i in lo..=hi {
                        let k = (j - i + h) as usize;
                        let v = src_val[i as usize] + self.log_tri[i as usize][k];
                        let cand = src_idx[i as usize];
                        if v > best || (v == best && cand < arg) {
                            best = v;
                            arg = cand;
                        }
                    }
                    let t = offset + j as usize;
                    next[t] = best + emit[t];
                    ptr[t] = arg;
                }
            }
            delta = next;
            back.push(ptr);
        }
        backtrack(&delta, &back)
    }
}
