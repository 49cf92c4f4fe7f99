//! Reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::implicit_saturating_sub, clippy::int_plus_one)]

// Straightforward reference formulas; logits stay small enough that no
// shifting is needed.

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn naive_ce(z: &[f64], y: usize) -> f64 {
    -naive_softmax(z)[y].ln()
}

pub fn naive_dice(p: &[f64], m: &[u8], eps: f64) -> f64 {
    let inter: f64 = p.iter().zip(m).map(|(a, &b)| a * b as f64).sum();
    let ps: f64 = p.iter().sum();
    let ms: f64 = m.iter().map(|&b| b as f64).sum();
    1.0 - (2.0 * inter + eps) / (ps + ms + eps)
}

pub fn naive_seg(logits: &[f64], m: &[u8], eps: f64) -> f64 {
    let n = m.len();
    let mut ce = 0.0;
    let mut fg = Vec::with_capacity(n);
    for v in 0..n {
        let p = naive_softmax(&[logits[v], logits[n + v]]);
        ce -= p[m[v] as usize].ln();
        fg.push(p[1]);
    }
    ce / n as f64 + naive_dice(&fg, m, eps)
}

pub fn naive_text(i: &[f64], e: &[f64], y: usize, t: f64) -> f64 {
    let s: Vec<f64> = e
        .chunks(i.len())
        .map(|r| r.iter().zip(i).map(|(a, b)| a * b).sum::<f64>() / t)
        .collect();
    naive_ce(&s, y)
}


fn heaviside(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d == 0.0 {
        0.5
    } else {
        0.0
    }
}

fn split_classes(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let pos = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    (pos, neg)
}

/// Pairwise Mann-Whitney count.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (pos, neg) = split_classes(scores, labels);
    let mut w = 0.0;
    for p in &pos {
        for n in &neg {
            w += heaviside(p - n);
        }
    }
    w / (pos.len() * neg.len()) as f64
}

/// Placement values by direct pair counting.
pub fn naive_placements(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let (pos, neg) = split_classes(scores, labels);
    let v10 = pos
        .iter()
        .map(|p| neg.iter().map(|n| heaviside(p - n)).sum::<f64>() / neg.len() as f64)
        .collect();
    let v01 = neg
        .iter()
        .map(|n| pos.iter().map(|p| heaviside(p - n)).sum::<f64>() / pos.len() as f64)
        .collect();
    (v10, v01)
}

/// Covariance matrix of two correlated AUCs from explicit sums.
pub fn naive_delong_cov(a: &[f64], b: &[f64], labels: &[u8]) -> [[f64; 2]; 2] {
    let (a10, a01) = naive_placements(a, labels);
    let (b10, b01) = naive_placements(b, labels);
    let m = a10.len() as f64;
    let n = a01.len() as f64;
    let s = |x: &[f64], y: &[f64]| {
        let k = x.len() as f64;
        let mx = x.iter().sum::<f64>() / k;
        let my = y.iter().sum::<f64>() / k;
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += (x[i] - mx) * (y[i] - my);
        }
        acc / (k - 1.0)
    };
    let aa = s(&a10, &a10) / m + s(&a01, &a01) / n;
    let bb = s(&b10, &b10) / m + s(&b01, &b01) / n;
    let ab = s(&a10, &b10) / m + s(&a01, &b01) / n;
    [[aa, ab], [ab, bb]]
}

/// `2|A∩B| / (|A|+|B|)` on binary masks, `None` when both are empty.
pub fn naive_mask_dice(a: &[u8], b: &[u8]) -> Option<f64> {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x != 0 && y != 0).count();
    let total = a.iter().filter(|&&x| x != 0).count() + b.iter().filter(|&&x| x != 0).count();
    (total > 0).then(|| 2.0 * inter as f64 / total as f64)
}

/// Expected ROI box `(lo, hi)` in z, y, x order: the tight box of the mask
/// grown by `margin = [mx, my, mz]` and clamped to `dims = [z, y, x]`.
pub fn naive_roi(mask: &[u8], dims: [usize; 3], margin: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                if mask[(z * dims[1] + y) * dims[2] + x] != 0 {
                    for (a, c) in [z, y, x].into_iter().enumerate() {
                        lo[a] = lo[a].min(c);
                        hi[a] = hi[a].max(c);
                    }
                }
            }
        }
    }
    let m = [margin[2], margin[1], margin[0]];
    let mut out_lo = [0; 3];
    let mut out_hi = [0; 3];
    for a in 0..3 {
        out_lo[a] = if lo[a] >= m[a] { lo[a] - m[a] } else { 0 };
        out_hi[a] = if hi[a] + m[a] <= dims[a] - 1 { hi[a] + m[a] } else { dims[a] - 1 };
    }
    (out_lo, out_hi)
}

pub fn mean_var(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Location filter by union-find over 26-neighbourhoods: keep components
/// whose mean z lies within half a slice of the reported bin.
pub fn naive_location_filter(mask: &[u8], organ: &[u8], dims: [usize; 3], location: u8) -> Vec<u8> {
    let [dz, dy, dx] = dims;
    let idx = |z: usize, y: usize, x: usize| (z * dy + y) * dx + x;
    let mut out = vec![0u8; mask.len()];
    let zs: Vec<usize> = (0..mask.len()).filter(|&i| organ[i] != 0).map(|i| i / (dy * dx)).collect();
    if location == 0 || zs.is_empty() {
        return out;
    }
    let (zlo, zhi) = (*zs.iter().min().unwrap(), *zs.iter().max().unwrap());
    let n = zhi - zlo + 1;
    let b = location as usize - 1;
    let first = zlo + b * n / 4;
    let last = (zlo + (b + 1) * n / 4).max(first + 1) - 1;

    let mut parent: Vec<usize> = (0..mask.len()).collect();
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                if mask[idx(z, y, x)] == 0 {
                    continue;
                }
                for (oz, oy, ox) in [(0i64, 0i64, 1i64), (0, 1, -1), (0, 1, 0), (0, 1, 1)]
                    .into_iter()
                    .chain((-1..=1).flat_map(|a| (-1..=1).map(move |c| (1, a, c))))
                {
                    let (nz, ny, nx) = (z as i64 + oz, y as i64 + oy, x as i64 + ox);
                    if nz < 0 || ny < 0 || nx < 0 || nz >= dz as i64 || ny >= dy as i64 || nx >= dx as i64 {
                        continue;
                    }
                    let j = idx(nz as usize, ny as usize, nx as usize);
                    if mask[j] != 0 {
                        let (a, c) = (find(&mut parent, idx(z, y, x)), find(&mut parent, j));
                        parent[a] = c;
                    }
                }
            }
        }
    }
    let mut sums = std::collections::HashMap::<usize, (f64, f64)>::new();
    for i in 0..mask.len() {
        if mask[i] != 0 {
            let r = find(&mut parent, i);
            let e = sums.entry(r).or_insert((0.0, 0.0));
            e.0 += (i / (dy * dx)) as f64;
            e.1 += 1.0;
        }
    }
    for i in 0..mask.len() {
        if mask[i] != 0 {
            let (s, c) = sums[&find(&mut parent, i)];
            let cz = s / c;
            out[i] = u8::from(cz >= first as f64 - 0.5 && cz < last as f64 + 0.5);
        }
    }
    out
}
