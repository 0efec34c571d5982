//! Independent test oracles. Nothing here calls into the crate's solvers.
#![allow(dead_code)]

/// Exhaustive L2 isotonic regression: try every split of `0..n` into
/// contiguous blocks, set each block to its mean, keep the best feasible one.
pub fn brute_isotonic(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut values = vec![0.0; n];
        let mut start = 0;
        for end in 1..=n {
            let boundary = end == n || cuts & (1 << (end - 1)) != 0;
            if boundary {
                let m = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                values[start..end].fill(m);
                start = end;
            }
        }
        if values.windows(2).any(|w| w[0] > w[1] + 1e-12) {
            continue;
        }
        let obj: f64 = values.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
            best = Some((obj, values));
        }
    }
    best.unwrap().1
}

/// Is `y` inside the permutahedron of `(1, …, n)`? (majorization test)
fn in_permutahedron(y: &[f64]) -> bool {
    let n = y.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut cap = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        acc += v;
        cap += (n - k) as f64;
        if acc > cap + 1e-9 {
            return false;
        }
    }
    (acc - cap).abs() <= 1e-9
}

/// Euclidean projection of `z` onto the permutahedron of `(1, …, n)` by
/// enumerating every face. Faces correspond to ordered set partitions
/// `(B₁, …, B_m)`: block `B_j` receives the next `|B_j|` largest values of
/// `(n, …, 1)` as its sum. The projection onto a face's affine hull shifts each
/// block by a constant; the closest feasible such point is the projection.
pub fn permutahedron_projection(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let m = labels.iter().max().unwrap() + 1;
        let surjective = (0..m).all(|j| labels.contains(&j));
        if surjective {
            let mut y = vec![0.0; n];
            let mut next = n;
            for j in 0..m {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
                let size = members.len();
                let target: f64 = (0..size).map(|k| (next - k) as f64).sum();
                next -= size;
                let zsum: f64 = members.iter().map(|&i| z[i]).sum();
                let shift = (target - zsum) / size as f64;
                for &i in &members {
                    y[i] = z[i] + shift;
                }
            }
            if in_permutahedron(&y) {
                let d: f64 = y.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
                if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                    best = Some((d, y));
                }
            }
        }
        // next label assignment in base n
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < n {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    best.unwrap().1
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, or the plain difference when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

pub fn min_gap(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Hard ascending ranks for distinct values.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| 1.0 + x.iter().filter(|u| *u < v).count() as f64)
        .collect()
}
