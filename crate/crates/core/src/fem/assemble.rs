//! Tensor-product bilinear elements on the compressed (η, θ) rectangle.
//!
//! In the rescaled frame z' = z/√γ the kinetic operator is isotropic. With
//! F = Φ(φ) Y(η, θ) / r' and r' = r₀ tan η the weak form reads
//!
//! ```text
//! K = ∫ ½ cos²η/r₀ sinθ ∂ηY∂ηY + ½ /(r₀ sin²η) (sinθ ∂θY∂θY + m²/sinθ Y²)
//!       + V r₀ sec²η sinθ Y²   dη dθ
//! M = ∫ r₀ sec²η sinθ Y²       dη dθ
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use super::eigen::BandedSym;

const GAUSS_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
/// Sub-cells per direction for elements straddling the central-cell edge.
const CUT_SUBDIVISION: usize = 4;

/// Uniform (η, θ) grid. `nt` counts θ cells over `[0, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub ne: usize,
    pub nt: usize,
    pub theta_max: f64,
}

impl Grid {
    pub fn he(&self) -> f64 {
        FRAC_PI_2 / self.ne as f64
    }
    pub fn ht(&self) -> f64 {
        self.theta_max / self.nt as f64
    }
    pub fn nodes(&self) -> usize {
        (self.ne + 1) * (self.nt + 1)
    }
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.nt + 1) + j
    }
}

/// A quadrature point inside element (i, j) with bilinear shape data.
#[derive(Debug, Clone, Copy)]
pub(crate) struct QPoint {
    pub eta: f64,
    pub theta: f64,
    pub weight: f64,
    pub n: [f64; 4],
    pub dn_eta: [f64; 4],
    pub dn_theta: [f64; 4],
}

/// Element-local node order: (i,j), (i+1,j), (i,j+1), (i+1,j+1).
pub(crate) fn element_nodes(g: &Grid, i: usize, j: usize) -> [usize; 4] {
    [g.node(i, j), g.node(i + 1, j), g.node(i, j + 1), g.node(i + 1, j + 1)]
}

/// Gauss points of element (i, j), optionally on a `sub`×`sub` split.
pub(crate) fn element_points(g: &Grid, i: usize, j: usize, sub: usize, out: &mut Vec<QPoint>) {
    out.clear();
    let (he, ht) = (g.he(), g.ht());
    let inv = 1.0 / sub as f64;
    for si in 0..sub {
        for sj in 0..sub {
            for (a, wa) in GAUSS_X.iter().zip(GAUSS_W) {
                let s = (si as f64 + 0.5 * (a + 1.0)) * inv;
                for (bq, wb) in GAUSS_X.iter().zip(GAUSS_W) {
                    let t = (sj as f64 + 0.5 * (bq + 1.0)) * inv;
                    out.push(QPoint {
                        eta: (i as f64 + s) * he,
                        theta: (j as f64 + t) * ht,
                        weight: 0.25 * wa * wb * he * ht * inv * inv,
                        n: [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t],
                        dn_eta: [-(1.0 - t) / he, (1.0 - t) / he, -t / he, t / he],
                        dn_theta: [-(1.0 - s) / ht, -s / ht, (1.0 - s) / ht, s / ht],
                    });
                }
            }
        }
    }
}

/// Potential terms in effective atomic units, evaluated in the primed frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Potential {
    pub gamma: f64,
    pub charge: f64,
    pub cc_depth: f64,
    pub cc_radius: f64,
    pub field: f64,
    pub field_onset: f64,
    pub field_cutoff: f64,
}

impl Potential {
    /// Ratio of the true radius to r' at polar angle θ.
    #[inline]
    pub fn radial_factor(&self, theta: f64) -> f64 {
        let c = theta.cos();
        (1.0 - (1.0 - self.gamma) * c * c).sqrt()
    }

    #[inline]
    pub fn value(&self, r: f64, theta: f64) -> f64 {
        let fac = self.radial_factor(theta);
        let mut v = -self.charge / (r * fac);
        if self.cc_depth != 0.0 && r * fac < self.cc_radius {
            v += self.cc_depth;
        }
        if self.field != 0.0 && r > self.field_onset {
            v += self.field * self.gamma.sqrt() * r.min(self.field_cutoff) * theta.cos();
        }
        v
    }

    /// Whether the central-cell boundary passes through element (i, j).
    fn cuts(&self, g: &Grid, r0: f64, i: usize, j: usize) -> bool {
        if self.cc_depth == 0.0 || self.cc_radius <= 0.0 {
            return false;
        }
        let (he, ht) = (g.he(), g.ht());
        let r_lo = r0 * (i as f64 * he).tan();
        let r_hi = r0 * ((i + 1) as f64 * he).tan();
        let mut f_lo = f64::INFINITY;
        let mut f_hi = 0.0f64;
        // radial_factor is monotone on each side of θ = π/2.
        for th in [j as f64 * ht, (j + 1) as f64 * ht] {
            let f = self.radial_factor(th);
            f_lo = f_lo.min(f);
            f_hi = f_hi.max(f);
        }
        if (j as f64 * ht) < FRAC_PI_2 && ((j + 1) as f64 * ht) > FRAC_PI_2 {
            f_hi = 1.0;
        }
        r_lo * f_lo < self.cc_radius && r_hi * f_hi > self.cc_radius
    }
}

/// Assembled stiffness (with potential) and mass matrices on free DOFs.
pub(crate) struct System {
    pub k: BandedSym,
    pub m: BandedSym,
    /// Grid node of each free DOF.
    pub free: Vec<usize>,
}

/// Dirichlet pattern on the solved domain.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Boundary {
    pub axis_zero: bool,
    pub equator_zero: bool,
}

pub(crate) fn assemble(g: &Grid, r0: f64, m_q: u32, pot: &Potential, bc: Boundary) -> System {
    let full = g.theta_max > FRAC_PI_2 + 1e-12;
    let mut map = vec![usize::MAX; g.nodes()];
    let mut free = Vec::new();
    for i in 1..g.ne {
        for j in 0..=g.nt {
            if bc.axis_zero && (j == 0 || (full && j == g.nt)) {
                continue;
            }
            if !full && bc.equator_zero && j == g.nt {
                continue;
            }
            map[g.node(i, j)] = free.len();
            free.push(g.node(i, j));
        }
    }
    let n = free.len();
    let band = g.nt + 2;
    let mut k = BandedSym::zeros(n, band);
    let mut m = BandedSym::zeros(n, band);
    let m2 = (m_q as f64).powi(2);
    let mut pts = Vec::with_capacity(9 * CUT_SUBDIVISION * CUT_SUBDIVISION);
    for i in 0..g.ne {
        for j in 0..g.nt {
            let sub = if pot.cuts(g, r0, i, j) { CUT_SUBDIVISION } else { 1 };
            element_points(g, i, j, sub, &mut pts);
            let mut ke = [[0.0; 4]; 4];
            let mut me = [[0.0; 4]; 4];
            for p in &pts {
                let (se, ce) = p.eta.sin_cos();
                let st = p.theta.sin();
                let r = r0 * se / ce;
                let jac = r0 / (ce * ce);
                let kr = 0.5 * ce * ce / r0 * st * p.weight;
                let ka = 0.5 / (r0 * se * se) * p.weight;
                let mw = jac * st * p.weight;
                let vw = pot.value(r, p.theta) * mw + ka * m2 / st;
                for a in 0..4 {
                    for b in 0..4 {
                        ke[a][b] += kr * p.dn_eta[a] * p.dn_eta[b]
                            + ka * st * p.dn_theta[a] * p.dn_theta[b]
                            + vw * p.n[a] * p.n[b];
                        me[a][b] += mw * p.n[a] * p.n[b];
                    }
                }
            }
            let nodes = element_nodes(g, i, j);
            for a in 0..4 {
                let fa = map[nodes[a]];
                if fa == usize::MAX {
                    continue;
                }
                for b in 0..4 {
                    let fb = map[nodes[b]];
                    if fb == usize::MAX || fb > fa {
                        continue;
                    }
                    k.add(fa, fb, ke[a][b]);
                    m.add(fa, fb, me[a][b]);
                }
            }
        }
    }
    System { k, m, free }
}

/// ∫ Ya Yb w(r', θ) r₀ sec²η sinθ dη dθ over the full θ grid, with both
/// surfaces bilinear on `g`. With w = 1 this is the primed-frame overlap.
pub(crate) fn integrate_pair<W: Fn(f64, f64) -> f64>(g: &Grid, r0: f64, ya: &[f64], yb: &[f64], w: W) -> f64 {
    let mut pts = Vec::with_capacity(9);
    let mut total = 0.0;
    for i in 0..g.ne {
        for j in 0..g.nt {
            let nodes = element_nodes(g, i, j);
            let va = nodes.map(|k| ya[k]);
            let vb = nodes.map(|k| yb[k]);
            if va.iter().all(|&x| x == 0.0) || vb.iter().all(|&x| x == 0.0) {
                continue;
            }
            element_points(g, i, j, 1, &mut pts);
            for p in &pts {
                let (se, ce) = p.eta.sin_cos();
                let r = r0 * se / ce;
                let fa: f64 = (0..4).map(|k| p.n[k] * va[k]).sum();
                let fb: f64 = (0..4).map(|k| p.n[k] * vb[k]).sum();
                total += fa * fb * w(r, p.theta) * r0 / (ce * ce) * p.theta.sin() * p.weight;
            }
        }
    }
    total
}

/// Bilinear interpolation of a full-grid surface at (η, θ).
pub(crate) fn interpolate(g: &Grid, y: &[f64], eta: f64, theta: f64) -> f64 {
    if !(0.0..FRAC_PI_2).contains(&eta) {
        return 0.0;
    }
    let theta = theta.clamp(0.0, PI);
    let fe = eta / g.he();
    let ft = theta / g.ht();
    let i = (fe.floor() as usize).min(g.ne - 1);
    let j = (ft.floor() as usize).min(g.nt - 1);
    let s = fe - i as f64;
    let t = ft - j as f64;
    let n = element_nodes(g, i, j);
    (1.0 - s) * (1.0 - t) * y[n[0]] + s * (1.0 - t) * y[n[1]] + (1.0 - s) * t * y[n[2]] + s * t * y[n[3]]
}
