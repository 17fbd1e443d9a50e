//! Exact Euclidean distance transform (separable lower-envelope method).

/// Squared distance, in voxel units, from every cell to the nearest seed.
/// Cells are indexed `i + nx * (j + ny * k)`. Without seeds every value is
/// `f64::INFINITY`.
pub fn squared_edt(dims: [usize; 3], seeds: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    assert_eq!(seeds.len(), nx * ny * nz, "seed mask size");
    let mut f: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n_max = nx.max(ny).max(nz);
    let mut line = vec![0.0; n_max];
    let mut out = vec![0.0; n_max];
    let mut v = vec![0usize; n_max];
    let mut z = vec![0.0; n_max + 1];

    // x lines
    for k in 0..nz {
        for j in 0..ny {
            let base = nx * (j + ny * k);
            line[..nx].copy_from_slice(&f[base..base + nx]);
            transform_1d(&line[..nx], &mut out[..nx], &mut v, &mut z);
            f[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y lines
    for k in 0..nz {
        for i in 0..nx {
            for j in 0..ny {
                line[j] = f[i + nx * (j + ny * k)];
            }
            transform_1d(&line[..ny], &mut out[..ny], &mut v, &mut z);
            for j in 0..ny {
                f[i + nx * (j + ny * k)] = out[j];
            }
        }
    }
    // z lines
    for j in 0..ny {
        for i in 0..nx {
            for k in 0..nz {
                line[k] = f[i + nx * (j + ny * k)];
            }
            transform_1d(&line[..nz], &mut out[..nz], &mut v, &mut z);
            for k in 0..nz {
                f[i + nx * (j + ny * k)] = out[k];
            }
        }
    }
    f
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas). Infinite samples contribute no parabola.
fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        loop {
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                if k < 0 {
                    k = 0;
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}
