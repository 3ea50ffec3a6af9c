//! Exhaustive edit-distance oracle: breadth-first search over single-symbol
//! edits on every string up to a length bound.

use std::collections::VecDeque;

use cslr_core::metrics::edit_ops;

pub const SYMBOLS: usize = 4;

/// Every string of length ≤ `max_len` over SYMBOLS, shortest first.
pub fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut start = 0;
    for _ in 0..max_len {
        let end = out.len();
        for i in start..end {
            for s in 0..SYMBOLS as u8 {
                let mut w = out[i].clone();
                w.push(s);
                out.push(w);
            }
        }
        start = end;
    }
    out
}

/// Dense index of a string in `all_strings` order.
fn index_of(w: &[u8]) -> usize {
    let offset: usize = (0..w.len()).map(|k| SYMBOLS.pow(k as u32)).sum();
    offset + w.iter().fold(0, |acc, &s| acc * SYMBOLS + s as usize)
}

/// Neighbours of every string under one deletion, insertion or
/// substitution, staying within `max_len`.
fn edit_graph(strings: &[Vec<u8>], max_len: usize) -> Vec<Vec<u32>> {
    strings
        .iter()
        .map(|w| {
            let mut next = Vec::new();
            for i in 0..w.len() {
                let mut del = w.clone();
                del.remove(i);
                next.push(index_of(&del) as u32);
                for s in 0..SYMBOLS as u8 {
                    if s != w[i] {
                        let mut sub = w.clone();
                        sub[i] = s;
                        next.push(index_of(&sub) as u32);
                    }
                }
            }
            if w.len() < max_len {
                for i in 0..=w.len() {
                    for s in 0..SYMBOLS as u8 {
                        let mut ins = w.clone();
                        ins.insert(i, s);
                        next.push(index_of(&ins) as u32);
                    }
                }
            }
            next
        })
        .collect()
}

/// Breadth-first distances from `source`. Some optimal script never grows
/// past the longer of its two ends (deletions and substitutions first,
/// insertions last), so the length bound keeps every distance exact.
fn distances_from(graph: &[Vec<u32>], source: usize, dist: &mut [u8], queue: &mut VecDeque<usize>) {
    dist.fill(u8::MAX);
    dist[source] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let d = dist[u] + 1;
        for &v in &graph[u] {
            let v = v as usize;
            if dist[v] == u8::MAX {
                dist[v] = d;
                queue.push_back(v);
            }
        }
    }
}

/// Checks [`edit_ops`] against the search on every ordered pair of strings
/// up to `max_len`: same error count, `n` equal to the reference length and
/// `|hyp| = n − D + I`. Returns `(pairs, mismatches)`.
pub fn check_all_pairs(max_len: usize) -> (usize, usize) {
    let strings = all_strings(max_len);
    let graph = edit_graph(&strings, max_len);
    let mut dist = vec![0; strings.len()];
    let mut queue = VecDeque::new();
    let mut mismatches = 0;
    for (source, r) in strings.iter().enumerate() {
        distances_from(&graph, source, &mut dist, &mut queue);
        for (h, &d) in strings.iter().zip(&dist) {
            let ops = edit_ops(r, h);
            let consistent = ops.n == r.len() && h.len() + ops.d == ops.n + ops.i;
            if ops.errors() != d as usize || !consistent {
                mismatches += 1;
            }
        }
    }
    (strings.len() * strings.len(), mismatches)
}
