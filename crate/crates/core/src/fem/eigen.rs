//! Banded symmetric storage, LDLᵀ factorization with inertia, and a
//! shift-invert Lanczos driver for the generalized problem K y = λ M y.

use nalgebra::DMatrix;

use super::FemError;

/// Symmetric matrix stored by its lower band. Row `i` holds columns
/// `i - b ..= i` at offsets `0 ..= b`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSym {
    pub n: usize,
    pub b: usize,
    pub data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, b: usize) -> Self {
        Self { n, b, data: vec![0.0; n * (b + 1)] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b);
        i * (self.b + 1) + (j + self.b - i)
    }

    /// Adds `v` to entry (i, j); only the lower triangle is stored, so
    /// upper-triangle contributions are dropped.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if j <= i {
            let s = self.slot(i, j);
            self.data[s] += v;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let b = self.b;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = &self.data[i * (b + 1)..(i + 1) * (b + 1)];
            let j0 = i.saturating_sub(b);
            let off = j0 + b - i;
            let band = &row[off..b];
            y[i] += row[b] * x[i] + dot(band, &x[j0..i]);
            axpy(x[i], band, &mut y[j0..i]);
        }
    }

    /// `self - sigma * other`, both with the same shape.
    pub fn shifted(&self, sigma: f64, other: &BandedSym) -> BandedSym {
        let data = self.data.iter().zip(&other.data).map(|(a, m)| a - sigma * m).collect();
        BandedSym { n: self.n, b: self.b, data }
    }

    #[cfg(test)]
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut t = vec![0.0; self.n];
        self.matvec(y, &mut t);
        dot(x, &t)
    }
}

/// Unpivoted banded LDLᵀ. Stable for the shifted FEM pencils used here
/// as long as the shift does not hit an eigenvalue.
pub(crate) struct Ldlt {
    n: usize,
    b: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl Ldlt {
    pub fn factor(a: &BandedSym) -> Result<Self, FemError> {
        let (n, b) = (a.n, a.b);
        let w = b + 1;
        let mut l = a.data.clone();
        let mut d = vec![0.0; n];
        let mut tmp = vec![0.0; w];
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            let base = i * w + b - i;
            for j in j0..i {
                // L[i][j] = (A[i][j] - sum_k L[i][k] D[k] L[j][k]) / D[j], with
                // tmp holding L[i][k] D[k].
                let jb = j * w + b - j;
                let s = l[base + j] - dot(&tmp[j0 + b - i..j + b - i], &l[jb + j0..jb + j]);
                tmp[j + b - i] = s;
                l[base + j] = s / d[j];
            }
            let di = l[base + i] - dot(&tmp[j0 + b - i..b], &l[base + j0..base + i]);
            if !di.is_finite() || di.abs() < 1e-300 {
                return Err(FemError::EigensolverFailure(format!("zero pivot at row {i}")));
            }
            d[i] = di;
        }
        Ok(Self { n, b, l, d })
    }

    /// Number of negative pivots: the count of eigenvalues below the shift.
    pub fn negative_count(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn solve(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            let base = i * w + b - i;
            x[i] -= dot(&self.l[base + j0..base + i], &x[j0..i]);
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let v = x[i];
            let j0 = i.saturating_sub(b);
            let base = i * w + b - i;
            let (head, _) = x.split_at_mut(i);
            axpy(-v, &self.l[base + j0..base + i], &mut head[j0..]);
        }
    }
}

/// Dot product with four independent accumulators (fixed summation
/// order, so results are reproducible).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let (x, y) = (&a[4 * c..4 * c + 4], &b[4 * c..4 * c + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(v, u)| *v += alpha * u);
}

/// Deterministic pseudo-random start vector (splitmix64).
fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x1234_5678);
    (0..n)
        .map(|_| {
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// An M-orthonormal eigenpair.
#[derive(Debug, Clone)]
pub(crate) struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
}

const RITZ_TOL: f64 = 1e-10;

/// One shift-invert Lanczos pass at shift `sigma`, M-orthogonal to
/// `locked`. Returns the converged Ritz pairs nearest `sigma`.
fn lanczos_pass(
    fac: &Ldlt,
    m: &BandedSym,
    sigma: f64,
    locked: &[(Vec<f64>, Vec<f64>)],
    want: usize,
    seed: u64,
) -> Vec<Eigenpair> {
    let n = m.n;
    let max_steps = n.min((3 * want + 60).max(120)).min(600);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(max_steps + 1);
    let mut mq: Vec<Vec<f64>> = Vec::with_capacity(max_steps + 1);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    // Gram-Schmidt in the M inner product, repeated only when the first
    // sweep cancels most of the vector.
    let project = |w: &mut Vec<f64>, q: &[Vec<f64>], mq: &[Vec<f64>]| {
        let before = dot(w, w);
        for sweep in 0..2 {
            if sweep == 1 && dot(w, w) > 0.5 * before {
                break;
            }
            for (v, mv) in locked {
                let c = dot(mv, w);
                axpy(-c, v, w);
            }
            for (v, mv) in q.iter().zip(mq) {
                let c = dot(mv, w);
                axpy(-c, v, w);
            }
        }
    };

    let mut v = start_vector(n, seed);
    project(&mut v, &q, &mq);
    let mut mv = vec![0.0; n];
    m.matvec(&v, &mut mv);
    let nrm = dot(&v, &mv).sqrt();
    if nrm == 0.0 || !nrm.is_finite() {
        return Vec::new();
    }
    v.iter_mut().for_each(|x| *x /= nrm);
    mv.iter_mut().for_each(|x| *x /= nrm);
    q.push(v);
    mq.push(mv);

    let mut result = Vec::new();
    let mut step = 0;
    loop {
        let j = q.len() - 1;
        let mut w = mq[j].clone();
        fac.solve(&mut w);
        let a = dot(&mq[j], &w);
        alpha.push(a);
        project(&mut w, &q, &mq);
        let mut mw = vec![0.0; n];
        m.matvec(&w, &mut mw);
        let bnorm = dot(&w, &mw).max(0.0).sqrt();
        step += 1;
        let done = step >= max_steps || bnorm <= 1e-13 * a.abs().max(1e-300);
        let check = done || (step >= want + 10 && step % 20 == 0);
        if check {
            let k = alpha.len();
            let mut t = DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alpha[i];
                if i + 1 < k {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = t.symmetric_eigen();
            let mut order: Vec<usize> = (0..k).collect();
            // Largest |theta| first: eigenvalues closest to sigma on either side.
            order.sort_by(|&x, &y| eig.eigenvalues[y].abs().total_cmp(&eig.eigenvalues[x].abs()));
            let mut conv = Vec::new();
            for &idx in &order {
                let th = eig.eigenvalues[idx];
                let resid = (bnorm * eig.eigenvectors[(k - 1, idx)]).abs();
                if resid > RITZ_TOL * th.abs() {
                    break;
                }
                conv.push(idx);
            }
            if conv.len() >= want || done {
                for idx in conv {
                    let th = eig.eigenvalues[idx];
                    let mut x = vec![0.0; n];
                    for (i, qi) in q.iter().enumerate() {
                        axpy(eig.eigenvectors[(i, idx)], qi, &mut x);
                    }
                    result.push(Eigenpair { value: sigma + 1.0 / th, vector: x });
                }
                break;
            }
        }
        if done {
            break;
        }
        beta.push(bnorm);
        w.iter_mut().for_each(|x| *x /= bnorm);
        mw.iter_mut().for_each(|x| *x /= bnorm);
        q.push(w);
        mq.push(mw);
    }
    result
}

/// Lowest `nev` eigenpairs of K y = λ M y, M-normalized and ascending.
///
/// Spectrum slicing: each pass runs shift-invert Lanczos, deflated
/// against all locked vectors, at a shift just above the part of the
/// spectrum already certified complete by a Sylvester inertia count.
/// Exact or near degeneracies missed by one pass show up as an inertia
/// excess and are recovered by the next.
pub(crate) fn lowest_eigenpairs(
    k: &BandedSym,
    m: &BandedSym,
    nev: usize,
    guess: f64,
) -> Result<Vec<Eigenpair>, FemError> {
    let n = k.n;
    if nev == 0 || nev > n {
        return Err(FemError::EigensolverFailure(format!("cannot extract {nev} of {n} eigenpairs")));
    }
    let mut sigma = guess.min(-1e-3);
    let mut fac = None;
    for _ in 0..60 {
        match Ldlt::factor(&k.shifted(sigma, m)) {
            Ok(f) if f.negative_count() == 0 => {
                fac = Some(f);
                break;
            }
            _ => sigma = 2.0 * sigma - 1.0,
        }
    }
    let mut fac = fac.ok_or_else(|| FemError::EigensolverFailure("no shift below the spectrum".into()))?;

    let mut locked: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let batch = (nev + 1).min(12);
    let max_passes = 8 + 4 * nev.div_ceil(batch);
    for pass in 0..max_passes {
        let found = lanczos_pass(&fac, m, sigma, &locked, batch, 17 + pass as u64);
        for p in found {
            let mut mv = vec![0.0; n];
            m.matvec(&p.vector, &mut mv);
            values.push(p.value);
            locked.push((p.vector, mv));
        }
        if values.len() >= n {
            break;
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // Certify the largest prefix we can: probe between the last two
        // computed values so that the top one (possibly with missing
        // neighbours) is excluded.
        let (probe, expect) = match sorted.len() {
            0 => {
                sigma = 0.5 * sigma;
                fac = Ldlt::factor(&k.shifted(sigma, m))?;
                continue;
            }
            1 => (sorted[0] + 1e-9 * sorted[0].abs().max(1e-6), 1),
            len => (0.5 * (sorted[len - 2] + sorted[len - 1]), len - 1),
        };
        let inertia = Ldlt::factor(&k.shifted(probe, m))?.negative_count();
        if inertia < expect {
            return Err(FemError::EigensolverFailure(format!(
                "inertia {inertia} below computed count {expect}"
            )));
        }
        if inertia == expect && expect >= nev {
            let mut pairs: Vec<Eigenpair> = locked
                .into_iter()
                .zip(values)
                .map(|((vector, _), value)| Eigenpair { value, vector })
                .collect();
            pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
            pairs.truncate(nev);
            return Ok(pairs);
        }
        sigma = if inertia == expect {
            // Complete so far; move past the top computed value.
            let top = sorted[sorted.len() - 1];
            let spacing = if sorted.len() >= 2 { top - sorted[sorted.len() - 2] } else { top.abs() * 0.1 };
            top + (0.5 * spacing).min(0.5 * top.abs()).max(1e-9 * top.abs().max(1e-6))
        } else {
            // Something below the probe is missing. Bisect on the gaps
            // between computed values for the first one whose inertia
            // exceeds the computed count, and shift into it.
            let gap_probe = |j: usize| 0.5 * (sorted[j - 1] + sorted[j]);
            let (mut lo, mut hi) = (0usize, expect);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if Ldlt::factor(&k.shifted(gap_probe(mid), m))?.negative_count() > mid {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let upper = gap_probe(hi);
            let lower = if lo == 0 { sigma.min(sorted[0] - (upper - sorted[0])) } else { gap_probe(lo) };
            lower + 0.37 * (upper - lower)
        };
        fac = Ldlt::factor(&k.shifted(sigma, m))?;
    }
    Err(FemError::EigensolverFailure(format!("could not certify {nev} lowest eigenpairs")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> (BandedSym, BandedSym) {
        let mut k = BandedSym::zeros(n, 1);
        let mut m = BandedSym::zeros(n, 1);
        for i in 0..n {
            k.add(i, i, 2.0);
            m.add(i, i, 1.0);
            if i > 0 {
                k.add(i, i - 1, -1.0);
            }
        }
        (k, m)
    }

    #[test]
    fn ldlt_solves_and_counts_inertia() {
        let (k, m) = laplacian_1d(50);
        let f = Ldlt::factor(&k).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        k.matvec(&x, &mut b);
        f.solve(&mut b);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        // eigenvalues 2 - 2cos(k pi/(n+1)); count those below 1
        let expect = (1..=50).filter(|&j| 2.0 - 2.0 * (j as f64 * std::f64::consts::PI / 51.0).cos() < 1.1).count();
        assert_eq!(Ldlt::factor(&k.shifted(1.1, &m)).unwrap().negative_count(), expect);
    }

    #[test]
    fn lanczos_matches_closed_form() {
        let n = 200;
        let (k, m) = laplacian_1d(n);
        let pairs = lowest_eigenpairs(&k, &m, 8, -0.5).unwrap();
        for (j, p) in pairs.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((p.value - exact).abs() < 1e-10 * exact.max(1e-3), "{j}: {} vs {exact}", p.value);
            assert!((m.quadratic_form(&p.vector, &p.vector) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_pairs_are_all_found() {
        // Two decoupled identical chains: every eigenvalue is doubled.
        let n = 60;
        let mut k = BandedSym::zeros(2 * n, 1);
        let mut m = BandedSym::zeros(2 * n, 1);
        for i in 0..2 * n {
            k.add(i, i, 2.0);
            m.add(i, i, 1.0);
            if i > 0 && i != n {
                k.add(i, i - 1, -1.0);
            }
        }
        let pairs = lowest_eigenpairs(&k, &m, 6, -0.5).unwrap();
        for j in 0..3 {
            let exact = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((pairs[2 * j].value - exact).abs() < 1e-9);
            assert!((pairs[2 * j + 1].value - exact).abs() < 1e-9);
        }
    }
}
