//! Greedy O(ND) shortest edit script.
//!
//! A D-path starts at (0, 0) and has exactly D non-diagonal edges. Round `d`
//! extends every furthest-reaching (d-1)-path by one edit and then follows the
//! snake of matching elements. `v[k]` keeps the x coordinate of the furthest
//! endpoint on diagonal `k = x - y`; y is recovered as `x - k`. The snapshot of
//! `v` taken at the start of each round is enough to walk the path back.

/// One step of an index-based edit script. `Keep` carries the positions on
/// both sides, `Delete` a position in the old sequence, `Insert` a position in
/// the new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Keep { old: usize, new: usize },
    Delete { old: usize },
    Insert { new: usize },
}

struct Frontier {
    offset: isize,
    v: Vec<usize>,
}

impl Frontier {
    fn new(max_d: usize) -> Self {
        Frontier {
            offset: max_d as isize + 1,
            v: vec![0; 2 * max_d + 3],
        }
    }

    fn get(&self, k: isize) -> usize {
        self.v[(k + self.offset) as usize]
    }

    fn set(&mut self, k: isize, x: usize) {
        self.v[(k + self.offset) as usize] = x;
    }
}

// Whether the path reaching diagonal `k` in round `d` comes down from `k + 1`
// (an insertion) rather than across from `k - 1` (a deletion).
fn from_above(v: &Frontier, k: isize, d: isize) -> bool {
    k == -d || (k != d && v.get(k - 1) < v.get(k + 1))
}

/// Minimal edit script turning `old` into `new`. The number of `Delete` plus
/// `Insert` operations equals the insert/delete edit distance.
pub fn diff<T: PartialEq>(old: &[T], new: &[T]) -> Vec<DiffOp> {
    let (n, m) = (old.len(), new.len());
    let max_d = n + m;
    if max_d == 0 {
        return Vec::new();
    }

    let mut v = Frontier::new(max_d);
    let mut trace: Vec<Frontier> = Vec::new();

    'rounds: for d in 0..=max_d as isize {
        trace.push(Frontier {
            offset: v.offset,
            v: v.v.clone(),
        });
        let mut k = -d;
        while k <= d {
            let mut x = if from_above(&v, k, d) {
                v.get(k + 1)
            } else {
                v.get(k - 1) + 1
            };
            let mut y = (x as isize - k) as usize;
            while x < n && y < m && old[x] == new[y] {
                x += 1;
                y += 1;
            }
            v.set(k, x);
            if x >= n && y >= m {
                break 'rounds;
            }
            k += 2;
        }
    }

    let mut ops = Vec::with_capacity(max_d);
    let (mut x, mut y) = (n, m);
    for (d, v) in trace.iter().enumerate().rev() {
        let d = d as isize;
        if d == 0 {
            while x > 0 && y > 0 {
                x -= 1;
                y -= 1;
                ops.push(DiffOp::Keep { old: x, new: y });
            }
            break;
        }
        let k = x as isize - y as isize;
        let prev_k = if from_above(v, k, d) { k + 1 } else { k - 1 };
        let prev_x = v.get(prev_k);
        let prev_y = (prev_x as isize - prev_k) as usize;
        while x > prev_x && y > prev_y {
            x -= 1;
            y -= 1;
            ops.push(DiffOp::Keep { old: x, new: y });
        }
        if x == prev_x {
            ops.push(DiffOp::Insert { new: prev_y });
        } else {
            ops.push(DiffOp::Delete { old: prev_x });
        }
        x = prev_x;
        y = prev_y;
    }
    ops.reverse();
    ops
}
