//! Exact squared Euclidean distance transform (Felzenszwalb–Huttenlocher),
//! in cell units.

const INF: f64 = 1e20;

/// 1-D lower envelope of parabolas rooted at `(q, f[q])`. Non-seed cells
/// carry the large finite cost `INF`, which never enters the envelope while
/// any finite cost is present.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -f64::INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = (dq * dq + f[v[k]]).min(INF);
    }
}

/// Squared distance (cells²) from every cell of a `height × width` grid to
/// the nearest seed. Cells are addressed row-major. Returns `None` when
/// there are no seeds.
pub fn squared_edt(seeds: impl IntoIterator<Item = usize>, height: usize, width: usize) -> Option<Vec<f64>> {
    let mut grid = vec![INF; height * width];
    let mut any = false;
    for s in seeds {
        grid[s] = 0.0;
        any = true;
    }
    if !any {
        return None;
    }
    let n = height.max(width);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = d[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    Some(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(seeds: &[usize], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                seeds
                    .iter()
                    .map(|&s| {
                        let (sr, sc) = ((s / w) as f64, (s % w) as f64);
                        (r - sr).powi(2) + (c - sc).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = crate::rng::RngStream::new(5, "edt");
        for trial in 0..30 {
            let (h, w) = (5 + trial % 7, 4 + trial % 9);
            let n = 1 + rng.index(6);
            let seeds: Vec<usize> = (0..n).map(|_| rng.index(h * w)).collect();
            let got = squared_edt(seeds.iter().copied(), h, w).unwrap();
            assert_eq!(got, brute(&seeds, h, w));
        }
        assert!(squared_edt(std::iter::empty(), 3, 3).is_none());
    }
}
