//! Independent reference implementations used by the integration and
//! acceptance tests. Plain `Vec` arithmetic only; nothing here calls into the
//! library's numerics.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub type Mat = Vec<Vec<f64>>;

/// Solves `A z = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Mat = a.iter().zip(b).map(|(r, &bi)| {
        let mut row = r.clone();
        row.push(bi);
        row
    }).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut z = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * z[k]).sum();
        z[r] = (m[r][n] - s) / m[r][r];
    }
    Some(z)
}

/// Gauss-Jordan inverse.
pub fn invert(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Rank by Gaussian elimination with complete pivoting; entries below
/// `tol · max|a|` count as zero.
pub fn rank(a: &Mat, tol: f64) -> usize {
    let mut m = a.clone();
    let (rows, cols) = (m.len(), m.first().map_or(0, Vec::len));
    let scale = m.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut r = 0;
    let mut used = vec![false; cols];
    while r < rows.min(cols) {
        let mut best = (0.0, 0, 0);
        for i in r..rows {
            for j in (0..cols).filter(|&j| !used[j]) {
                if m[i][j].abs() > best.0 {
                    best = (m[i][j].abs(), i, j);
                }
            }
        }
        if best.0 <= tol * scale {
            break;
        }
        let (_, pi, pj) = best;
        m.swap(r, pi);
        used[pj] = true;
        for i in r + 1..rows {
            let f = m[i][pj] / m[r][pj];
            for j in 0..cols {
                m[i][j] -= f * m[r][j];
            }
        }
        r += 1;
    }
    r
}

/// Canonical-link families the IRLS oracle knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Canonical {
    NormalIdentity,
    PoissonLog,
    BinomialLogit,
}

impl Canonical {
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Canonical::NormalIdentity => eta,
            Canonical::PoissonLog => eta.exp(),
            Canonical::BinomialLogit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// `dμ/dη`, which equals `V(μ)` under the canonical link.
    pub fn var(self, mu: f64) -> f64 {
        match self {
            Canonical::NormalIdentity => 1.0,
            Canonical::PoissonLog => mu,
            Canonical::BinomialLogit => mu * (1.0 - mu),
        }
    }
}

/// Textbook weighted IRLS: `β ← (XᵗWX)⁻¹XᵗWz`, `W = w·V(μ)`, `z = η + (y − μ)/V(μ)`.
pub fn naive_irls(x: &Mat, y: &[f64], w: &[f64], fam: Canonical) -> Vec<f64> {
    let (n, p) = (x.len(), x[0].len());
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    let mut eta: Vec<f64> = y
        .iter()
        .map(|&yi| {
            let m = 0.5 * (yi + ybar);
            match fam {
                Canonical::NormalIdentity => m,
                Canonical::PoissonLog => m.max(0.1).ln(),
                Canonical::BinomialLogit => {
                    let m = m.clamp(0.05, 0.95);
                    (m / (1.0 - m)).ln()
                }
            }
        })
        .collect();
    let mut beta = vec![0.0; p];
    for it in 0..500 {
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for i in 0..n {
            let mu = fam.mean(eta[i]);
            let v = fam.var(mu);
            let z = eta[i] + (y[i] - mu) / v;
            let wi = w[i] * v;
            for j in 0..p {
                b[j] += wi * x[i][j] * z;
                for k in 0..p {
                    a[j][k] += wi * x[i][j] * x[i][k];
                }
            }
        }
        let next = solve(&a, &b).expect("oracle normal equations singular");
        let change = next.iter().zip(&beta).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        beta = next;
        for i in 0..n {
            eta[i] = (0..p).map(|j| x[i][j] * beta[j]).sum();
        }
        if it > 0 && change < 1e-14 * (1.0 + beta.iter().fold(0.0_f64, |m, b| m.max(b.abs()))) {
            break;
        }
    }
    beta
}

/// One observation for the sandwich oracle.
pub struct Obs<'a> {
    pub x: &'a [f64],
    pub y: f64,
    pub w: f64,
    pub mu: f64,
    pub stratum: &'a str,
    pub psu: &'a str,
}

/// Linearization covariance written as explicit loops over strata `h`, PSUs
/// `i` within `h` and observations `j` within PSU `hi`, with the dispersion kept
/// in both `Q` and the scores. `var(μ)` is `V(μ)` and `dlink(μ)` is `g′(μ)`.
pub fn naive_sandwich(
    obs: &[Obs<'_>],
    fpc: &BTreeMap<String, f64>,
    var: impl Fn(f64) -> f64,
    dlink: impl Fn(f64) -> f64,
    phi: f64,
) -> Mat {
    let n = obs.len();
    let p = obs[0].x.len();
    let mut q = vec![vec![0.0; p]; p];
    for o in obs {
        let g1 = dlink(o.mu);
        let c = o.w / (phi * var(o.mu) * g1 * g1);
        for a in 0..p {
            for b in 0..p {
                q[a][b] += c * o.x[a] * o.x[b];
            }
        }
    }

    let mut strata: Vec<&str> = obs.iter().map(|o| o.stratum).collect();
    strata.sort_unstable();
    strata.dedup();
    let mut g = vec![vec![0.0; p]; p];
    for h in strata {
        let mut psus: Vec<&str> = obs.iter().filter(|o| o.stratum == h).map(|o| o.psu).collect();
        psus.sort_unstable();
        psus.dedup();
        let n_h = psus.len() as f64;
        let mut totals = Vec::new();
        for i in &psus {
            let mut e = vec![0.0; p];
            for o in obs.iter().filter(|o| o.stratum == h && o.psu == *i) {
                let c = o.w * (o.y - o.mu) / (phi * var(o.mu) * dlink(o.mu));
                for a in 0..p {
                    e[a] += c * o.x[a];
                }
            }
            totals.push(e);
        }
        let mean: Vec<f64> = (0..p).map(|a| totals.iter().map(|e| e[a]).sum::<f64>() / n_h).collect();
        let f_h = fpc.get(h).copied().unwrap_or(0.0);
        let scale = n_h * (1.0 - f_h) / (n_h - 1.0);
        for e in &totals {
            for a in 0..p {
                for b in 0..p {
                    g[a][b] += scale * (e[a] - mean[a]) * (e[b] - mean[b]);
                }
            }
        }
    }
    let factor = (n as f64 - 1.0) / (n as f64 - p as f64);
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
    let qi = invert(&q).expect("oracle Q singular");
    matmul(&matmul(&qi, &g), &qi)
}

/// Five-point central difference of `f` along each coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|j| {
            let eval = |d: f64| {
                let mut b = at.to_vec();
                b[j] += d;
                f(&b)
            };
            (eval(-2.0 * h) - 8.0 * eval(-h) + 8.0 * eval(h) - eval(2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Five-point central-difference Jacobian of a vector function; column `j`
/// holds the derivative along coordinate `j`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, at: &[f64], h: f64) -> Mat {
    let p = at.len();
    let mut jac = vec![vec![0.0; p]; f(at).len()];
    for j in 0..p {
        let eval = |d: f64| {
            let mut b = at.to_vec();
            b[j] += d;
            f(&b)
        };
        let (m2, m1, p1, p2) = (eval(-2.0 * h), eval(-h), eval(h), eval(2.0 * h));
        for i in 0..jac.len() {
            jac[i][j] = (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) / (12.0 * h);
        }
    }
    jac
}

/// `‖a − b‖ / max(‖b‖, floor)` in the Euclidean (Frobenius) norm.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol.max(f64::EPSILON * (left + right).abs()) {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫₀ᶜ t^(a−1) (1−t)^(b−1) dt` for `c ≤ 1/2`. When `a < 1` the substitution
/// `t = u^(1/a)` removes the endpoint singularity.
fn beta_head(a: f64, b: f64, c: f64) -> f64 {
    let tol = 1e-14;
    if a < 1.0 {
        let g = |u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0);
        integrate(&g, 0.0, c.powf(a), tol) / a
    } else {
        let g = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
        integrate(&g, 0.0, c, tol)
    }
}

/// Regularized incomplete beta `I_x(a, b)` by quadrature.
pub fn beta_inc_quadrature(a: f64, b: f64, x: f64) -> f64 {
    // mass on [0, c] and on [1 − c, 1] for c ≤ 1/2
    let head = |c: f64| beta_head(a, b, c);
    let tail = |c: f64| beta_head(b, a, c);
    let total = head(0.5) + tail(0.5);
    if x <= 0.5 {
        head(x) / total
    } else {
        1.0 - tail(1.0 - x) / total
    }
}

/// `P(F > f)` for `F(d1, d2)` via quadrature of the beta density.
pub fn f_survival_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    let x = d2 / (d2 + d1 * f);
    beta_inc_quadrature(0.5 * d2, 0.5 * d1, x)
}
