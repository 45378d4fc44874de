//! Exact k-nearest-neighbor search. Candidates are ordered by squared
//! distance and then by point index, so equal distances resolve to the
//! lowest index in every search path.

use std::collections::HashMap;

/// Largest point count searched by brute force.
pub const BRUTE_FORCE_LIMIT: usize = 4096;

/// Neighbor lists in compressed form: the neighbors of point `i` are
/// `indices[bounds[i]..bounds[i + 1]]`, nearest first, the point itself
/// included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbors {
    pub bounds: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Neighbors {
    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.bounds[i]..self.bounds[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_lists(lists: impl Iterator<Item = Vec<usize>>) -> Self {
        let mut bounds = vec![0];
        let mut indices = Vec::new();
        for l in lists {
            indices.extend(l);
            bounds.push(indices.len());
        }
        Self { bounds, indices }
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` smallest candidates, sorted.
fn smallest(mut cands: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, by_distance);
        cands.truncate(k);
    }
    cands.sort_unstable_by(by_distance);
    cands.into_iter().map(|(_, j)| j).collect()
}

/// `min(k, K)` nearest neighbors of every point; brute force up to
/// [`BRUTE_FORCE_LIMIT`] points, a uniform grid beyond.
pub fn knn(points: &[[f64; 3]], k: usize) -> Neighbors {
    if points.len() <= BRUTE_FORCE_LIMIT {
        knn_brute_force(points, k)
    } else {
        knn_grid(points, k)
    }
}

pub fn knn_brute_force(points: &[[f64; 3]], k: usize) -> Neighbors {
    assert!(k >= 1, "k must be positive");
    let k = k.min(points.len());
    Neighbors::from_lists(points.iter().map(|p| {
        let cands = points.iter().enumerate().map(|(j, q)| (dist2(p, q), j)).collect();
        smallest(cands, k)
    }))
}

/// Grid search: visits cells in growing cubic shells around the query until
/// the k-th candidate is strictly closer than any unvisited cell can be.
pub fn knn_grid(points: &[[f64; 3]], k: usize) -> Neighbors {
    assert!(k >= 1, "k must be positive");
    let n = points.len();
    let k = k.min(n);
    if n == 0 {
        return Neighbors::from_lists(std::iter::empty());
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let volume: f64 = (0..3).map(|a| (hi[a] - lo[a]).max(1e-6)).product();
    // Roughly k points per cell on a uniform cloud.
    let cell = (volume * k as f64 / n as f64).cbrt().max(1e-6);
    let key = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let extent = key(&hi).into_iter().max().unwrap_or(0) + 1;

    Neighbors::from_lists(points.iter().map(|p| {
        let c = key(p);
        let mut cands: Vec<(f64, usize)> = Vec::new();
        let mut r: i64 = 0;
        loop {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(members) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            cands.extend(members.iter().map(|&j| (dist2(p, &points[j]), j)));
                        }
                    }
                }
            }
            // Any point outside the visited shells is at least r cells away.
            let reach = r as f64 * cell;
            if cands.len() >= k {
                cands.select_nth_unstable_by(k - 1, by_distance);
                cands.truncate(k);
                if cands[k - 1].0.sqrt() < reach || r > extent {
                    break;
                }
            } else if r > extent {
                break;
            }
            r += 1;
        }
        smallest(cands, k)
    }))
}
