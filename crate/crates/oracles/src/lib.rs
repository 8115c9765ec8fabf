//! Slow, obviously-correct reference implementations for the test suites.
//!
//! Nothing here depends on `meldfair-core`: inputs are plain numbers so the
//! oracles cannot share a bug with the code under test through its types.

use rand::Rng;

/// Sum of `x` with Neumaier compensation, divided by its length.
pub fn compensated_mean(x: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &v in x {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    (sum + c) / x.len() as f64
}

/// Next states allowed from `s` in a blank-expanded sequence.
pub fn ctc_successors(expanded: &[u32], s: usize, blank: u32) -> Vec<usize> {
    let mut out = vec![s];
    if s + 1 < expanded.len() {
        out.push(s + 1);
    }
    if s + 2 < expanded.len() && expanded[s + 2] != blank && expanded[s + 2] != expanded[s] {
        out.push(s + 2);
    }
    out
}

fn is_start(s: usize, len: usize) -> bool {
    s == 0 || (s == 1 && len > 1)
}

fn is_end(s: usize, len: usize) -> bool {
    s + 1 == len || s + 2 == len
}

pub fn path_score(logp: &[Vec<f64>], expanded: &[u32], path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &s)| logp[t][expanded[s] as usize]).sum()
}

#[derive(Debug, Clone)]
pub struct BruteCtc {
    pub best: f64,
    /// Every state path scoring within `1e-12` of `best`.
    pub optimal: Vec<Vec<usize>>,
    pub paths_seen: usize,
}

/// Enumerates every valid state path over all frames.
pub fn ctc_exhaustive(logp: &[Vec<f64>], expanded: &[u32], blank: u32) -> Option<BruteCtc> {
    let t_len = logp.len();
    let s_len = expanded.len();
    let mut all: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut stack: Vec<Vec<usize>> = (0..s_len.min(2)).filter(|&s| is_start(s, s_len)).map(|s| vec![s]).collect();
    while let Some(path) = stack.pop() {
        if path.len() == t_len {
            if is_end(*path.last().unwrap(), s_len) {
                all.push((path_score(logp, expanded, &path), path));
            }
            continue;
        }
        for next in ctc_successors(expanded, *path.last().unwrap(), blank) {
            let mut p = path.clone();
            p.push(next);
            stack.push(p);
        }
    }
    let best = all.iter().map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    if all.is_empty() {
        return None;
    }
    let paths_seen = all.len();
    let optimal = all.into_iter().filter(|(v, _)| (best - v).abs() <= 1e-12).map(|(_, p)| p).collect();
    Some(BruteCtc { best, optimal, paths_seen })
}

/// Frame at which each non-blank state (odd index) is first entered.
pub fn emission_frames(path: &[usize], expanded_len: usize) -> Vec<Option<usize>> {
    (0..expanded_len / 2).map(|i| path.iter().position(|&s| s == 2 * i + 1)).collect()
}

/// Fewest transitions from each state to a final state.
fn steps_to_end(expanded: &[u32], blank: u32) -> Vec<usize> {
    let n = expanded.len();
    let mut dist = vec![usize::MAX; n];
    for s in (0..n).rev() {
        if is_end(s, n) {
            dist[s] = 0;
            continue;
        }
        dist[s] = ctc_successors(expanded, s, blank)
            .into_iter()
            .filter(|&x| x != s)
            .map(|x| dist[x].saturating_add(1))
            .min()
            .unwrap_or(usize::MAX);
    }
    dist
}

/// A random valid state path over `frames` frames, or `None` if none exists.
pub fn random_ctc_path<R: Rng>(rng: &mut R, expanded: &[u32], frames: usize, blank: u32) -> Option<Vec<usize>> {
    let dist = steps_to_end(expanded, blank);
    let fits = |s: usize, remaining: usize| dist[s] <= remaining;
    if frames == 0 {
        return None;
    }
    let starts: Vec<usize> =
        (0..expanded.len().min(2)).filter(|&s| is_start(s, expanded.len()) && fits(s, frames - 1)).collect();
    if starts.is_empty() {
        return None;
    }
    let mut path = vec![starts[rng.gen_range(0..starts.len())]];
    for t in 1..frames {
        let remaining = frames - 1 - t;
        let options: Vec<usize> = ctc_successors(expanded, *path.last().unwrap(), blank)
            .into_iter()
            .filter(|&s| fits(s, remaining))
            .collect();
        path.push(options[rng.gen_range(0..options.len())]);
    }
    Some(path)
}

/// Conflict-free subset of `0..n` maximising total count, then minimising
/// size, then the smallest ascending index tuple. Checks all `2^n` subsets.
pub fn best_independent_set(n: usize, edges: &[(usize, usize)], counts: &[u64]) -> Vec<usize> {
    let mut best: Option<(u64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        if edges.iter().any(|&(a, b)| mask & (1 << a) != 0 && mask & (1 << b) != 0) {
            continue;
        }
        let total: u64 = members.iter().map(|&i| counts[i]).sum();
        let better = match &best {
            None => true,
            Some((bt, bm)) => {
                total > *bt
                    || (total == *bt && (members.len() < bm.len() || (members.len() == bm.len() && members < *bm)))
            }
        };
        if better {
            best = Some((total, members));
        }
    }
    best.map(|(_, m)| m).unwrap_or_default()
}

/// Sorted score vector and the pairs it came from.
type Scored = (Vec<f64>, Vec<(usize, usize)>);

/// One-to-one matching over pairs scoring above `theta` whose scores,
/// sorted in descending order, form the lexicographically largest vector.
/// Tries every matching.
pub fn best_matching(scores: &[Vec<f64>], theta: f64) -> Vec<(usize, usize)> {
    let cols = scores.first().map_or(0, Vec::len);
    let mut best: Option<Scored> = None;
    let mut current = Vec::new();
    let mut used = vec![false; cols];
    fn recurse(
        i: usize,
        scores: &[Vec<f64>],
        theta: f64,
        used: &mut [bool],
        current: &mut Vec<(usize, usize)>,
        best: &mut Option<Scored>,
    ) {
        if i == scores.len() {
            let mut key: Vec<f64> = current.iter().map(|&(a, b)| scores[a][b]).collect();
            key.sort_by(|a, b| b.total_cmp(a));
            let wins = match best {
                None => true,
                Some((bk, _)) => {
                    let ord = key.iter().zip(bk.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne());
                    match ord {
                        Some(o) => o.is_gt(),
                        None => key.len() > bk.len(),
                    }
                }
            };
            if wins {
                let mut pairs = current.clone();
                pairs.sort_unstable();
                *best = Some((key, pairs));
            }
            return;
        }
        recurse(i + 1, scores, theta, used, current, best);
        for j in 0..used.len() {
            if !used[j] && scores[i][j] > theta {
                used[j] = true;
                current.push((i, j));
                recurse(i + 1, scores, theta, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    recurse(0, scores, theta, &mut used, &mut current, &mut best);
    best.map(|(_, p)| p).unwrap_or_default()
}
