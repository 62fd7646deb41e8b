//! Proximal step of one bus agent.
//!
//! The agent for bus `j` with parent `i` holds the copy vector
//!
//! ```text
//! [v_j, v_i, P_j, Q_j, l_j, P_k1, Q_k1, P_k2, Q_k2, ...]
//! ```
//!
//! where `(P_j, Q_j, l_j)` belong to the branch `i → j` and `(P_k, Q_k)` are
//! copies of the sending-end flows towards each child `k`. The step minimizes
//!
//! ```text
//! r·l_j + (ρ/2)·‖x − w‖²
//! ```
//!
//! subject to power balance at `j`, the voltage drop along `i → j`, the cone
//! `P_j² + Q_j² ≤ v_i·l_j` and the boxes on `v_j` and `l_j`.
//!
//! `v_j` and the child copies enter only through linear equalities and
//! separable quadratics, so they are minimized out in closed form. What is
//! left is a strongly convex quadratic in `y = (v_i, P_j, Q_j, l_j)` with a
//! rotated cone. Each combination of active boxes is a face; on a face the
//! equalities are removed by a null-space parametrization and, when the cone
//! binds, its multiplier is the root of a monotone scalar function that is
//! evaluated in the eigenbasis of the cone metric.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};

const VP: usize = 0;
const P: usize = 1;
const Q: usize = 2;
const L: usize = 3;

/// Offsets into the agent copy vector.
pub const V_OWN: usize = 0;
pub const V_PARENT: usize = 1;
pub const P_OWN: usize = 2;
pub const Q_OWN: usize = 3;
pub const L_OWN: usize = 4;
pub const CHILD_BASE: usize = 5;

/// Static data of a non-root bus agent.
#[derive(Debug, Clone, PartialEq)]
pub struct BusBlock {
    pub r: f64,
    pub x: f64,
    /// Net demand (load − generation) at the bus, per-unit.
    pub p_demand: f64,
    pub q_demand: f64,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub l_max: f64,
    pub n_children: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Result of a face solve in reduced coordinates.
struct Candidate {
    y: Vector4<f64>,
    objective: f64,
}

impl BusBlock {
    pub fn n_copies(&self) -> usize {
        CHILD_BASE + 2 * self.n_children
    }

    fn drop_row(&self) -> Vector4<f64> {
        Vector4::new(
            1.0,
            -2.0 * self.r,
            -2.0 * self.x,
            self.r * self.r + self.x * self.x,
        )
    }

    /// Minimizes the augmented local objective against targets `w`.
    /// Returns `None` when the local constraints have no feasible point.
    pub fn prox(&self, w: &[f64], rho: f64) -> Option<Vec<f64>> {
        debug_assert_eq!(w.len(), self.n_copies());
        let (h, g) = self.reduced_objective(w, rho, Bound::Free);

        let free = self.solve_face(&h, &g, Bound::Free, false);
        let best = match free {
            Some(c) if self.boxes_hold(&c.y, Bound::Free, false) => c,
            _ => {
                let mut best: Option<Candidate> = None;
                for v_face in [Bound::Free, Bound::Lower, Bound::Upper] {
                    let (h, g) = self.reduced_objective(w, rho, v_face);
                    for l_at_max in [false, true] {
                        if let Some(c) = self.solve_face(&h, &g, v_face, l_at_max) {
                            if self.boxes_hold(&c.y, v_face, l_at_max)
                                && best.as_ref().is_none_or(|b| c.objective < b.objective)
                            {
                                best = Some(c);
                            }
                        }
                    }
                }
                best?
            }
        };
        Some(self.expand(&best.y, w))
    }

    /// Quadratic `½yᵀHy − gᵀy` left after eliminating `v_j` (unless it sits
    /// on a bound) and the child copies.
    fn reduced_objective(
        &self,
        w: &[f64],
        rho: f64,
        v_face: Bound,
    ) -> (Matrix4<f64>, Vector4<f64>) {
        let mut h = Matrix4::identity() * rho;
        let mut g = Vector4::new(w[V_PARENT], w[P_OWN], w[Q_OWN], w[L_OWN]) * rho;
        g[L] -= self.r;
        let mut add = |a: Vector4<f64>, b: f64, weight: f64| {
            h += a * a.transpose() * weight;
            g += a * (b * weight);
        };
        if v_face == Bound::Free {
            add(self.drop_row(), w[V_OWN], rho);
        }
        if self.n_children > 0 {
            let n = self.n_children as f64;
            let (sum_p, sum_q) = self.child_target_sums(w);
            add(
                Vector4::new(0.0, 1.0, 0.0, -self.r),
                self.p_demand + sum_p,
                rho / n,
            );
            add(
                Vector4::new(0.0, 0.0, 1.0, -self.x),
                self.q_demand + sum_q,
                rho / n,
            );
        }
        (h, g)
    }

    fn child_target_sums(&self, w: &[f64]) -> (f64, f64) {
        (0..self.n_children).fold((0.0, 0.0), |(sp, sq), k| {
            (sp + w[CHILD_BASE + 2 * k], sq + w[CHILD_BASE + 2 * k + 1])
        })
    }

    fn equalities(&self, v_face: Bound, l_at_max: bool) -> (Vec<Vector4<f64>>, Vec<f64>) {
        let mut rows = Vec::with_capacity(4);
        let mut rhs = Vec::with_capacity(4);
        if self.n_children == 0 {
            rows.push(Vector4::new(0.0, 1.0, 0.0, -self.r));
            rhs.push(self.p_demand);
            rows.push(Vector4::new(0.0, 0.0, 1.0, -self.x));
            rhs.push(self.q_demand);
        }
        match v_face {
            Bound::Free => {}
            Bound::Lower => {
                rows.push(self.drop_row());
                rhs.push(self.v_min_sq);
            }
            Bound::Upper => {
                rows.push(self.drop_row());
                rhs.push(self.v_max_sq);
            }
        }
        if l_at_max {
            rows.push(Vector4::new(0.0, 0.0, 0.0, 1.0));
            rhs.push(self.l_max);
        }
        (rows, rhs)
    }

    fn boxes_hold(&self, y: &Vector4<f64>, v_face: Bound, l_at_max: bool) -> bool {
        let tol = 1e-12;
        let v_ok = v_face != Bound::Free || {
            let v = self.drop_row().dot(y);
            v >= self.v_min_sq - tol && v <= self.v_max_sq + tol
        };
        let l_ok = l_at_max || y[L] <= self.l_max + tol;
        v_ok && l_ok
    }

    fn solve_face(
        &self,
        h: &Matrix4<f64>,
        g: &Vector4<f64>,
        v_face: Bound,
        l_at_max: bool,
    ) -> Option<Candidate> {
        let (rows, rhs) = self.equalities(v_face, l_at_max);
        let space = AffineSpace::new(&rows, &rhs)?;
        let k = space.basis.ncols();
        let h_dyn = DMatrix::from_column_slice(4, 4, h.as_slice());
        let hr = space.basis.transpose() * &h_dyn * &space.basis;
        let gr = space.basis.transpose()
            * (DVector::from_column_slice(g.as_slice()) - &h_dyn * &space.origin);

        let objective = |y: &Vector4<f64>| 0.5 * y.dot(&(h * y)) - g.dot(y);

        let inner = if k == 0 {
            space.origin.clone()
        } else {
            let chol = hr.clone().cholesky()?;
            &space.origin + &space.basis * chol.solve(&gr)
        };
        let y = to_vec4(&inner);
        if cone_value(&y) <= 0.0 && y[VP] >= 0.0 && y[L] >= 0.0 {
            return Some(Candidate {
                objective: objective(&y),
                y,
            });
        }
        if k == 0 {
            return None;
        }
        let y = cone_face(&space, &hr, &gr)?;
        if y[VP] < 0.0 || y[L] < -1e-14 {
            return None;
        }
        Some(Candidate {
            objective: objective(&y),
            y,
        })
    }

    /// Recovers the full copy vector from the reduced solution.
    fn expand(&self, y: &Vector4<f64>, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_copies()];
        out[V_OWN] = self.drop_row().dot(y);
        out[V_PARENT] = y[VP];
        out[P_OWN] = y[P];
        out[Q_OWN] = y[Q];
        // The cone implies l ≥ 0; drop rounding noise below it.
        out[L_OWN] = y[L].max(0.0);
        if self.n_children > 0 {
            let n = self.n_children as f64;
            let (sum_p, sum_q) = self.child_target_sums(w);
            let shift_p = (y[P] - self.r * y[L] - self.p_demand - sum_p) / n;
            let shift_q = (y[Q] - self.x * y[L] - self.q_demand - sum_q) / n;
            for k in 0..self.n_children {
                out[CHILD_BASE + 2 * k] = w[CHILD_BASE + 2 * k] + shift_p;
                out[CHILD_BASE + 2 * k + 1] = w[CHILD_BASE + 2 * k + 1] + shift_q;
            }
        }
        out
    }
}

fn to_vec4(v: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(v[0], v[1], v[2], v[3])
}

/// `P² + Q² − v_i·l`.
fn cone_value(y: &Vector4<f64>) -> f64 {
    y[P] * y[P] + y[Q] * y[Q] - y[VP] * y[L]
}

/// Symmetric matrix `C` with `yᵀCy = P² + Q² − v_i·l`.
fn cone_matrix() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(4, 4);
    c[(P, P)] = 1.0;
    c[(Q, Q)] = 1.0;
    c[(VP, L)] = -0.5;
    c[(L, VP)] = -0.5;
    c
}

/// `{origin + basis·θ}` = solution set of the face equalities.
struct AffineSpace {
    origin: DVector<f64>,
    basis: DMatrix<f64>,
}

impl AffineSpace {
    fn new(rows: &[Vector4<f64>], rhs: &[f64]) -> Option<Self> {
        if rows.is_empty() {
            return Some(Self {
                origin: DVector::zeros(4),
                basis: DMatrix::identity(4, 4),
            });
        }
        let m = rows.len();
        let e = DMatrix::from_fn(m, 4, |i, j| rows[i][j]);
        let f = DVector::from_column_slice(rhs);
        // Full SVD via the 4×4 Gram matrix keeps the null space explicit.
        let gram = e.transpose() * &e;
        let eig = SymmetricEigen::new(gram);
        let scale = eig.eigenvalues.amax().max(1.0);
        let mut range = Vec::new();
        let mut null = Vec::new();
        for i in 0..4 {
            if eig.eigenvalues[i] > 1e-13 * scale {
                range.push(i);
            } else {
                null.push(i);
            }
        }
        // Minimum-norm solution restricted to the row space.
        let mut origin = DVector::zeros(4);
        let etf = e.transpose() * &f;
        for &i in &range {
            let vec = eig.eigenvectors.column(i);
            origin += vec * (vec.dot(&etf) / eig.eigenvalues[i]);
        }
        let consistent = (&e * &origin - &f).amax() <= 1e-10 * f.amax().max(1.0);
        if !consistent {
            return None;
        }
        let basis = DMatrix::from_fn(4, null.len(), |i, j| eig.eigenvectors[(i, null[j])]);
        Some(Self { origin, basis })
    }
}

/// Minimizer of `½θᵀHθ − gᵀθ` on the face with the cone boundary
/// `(origin + Bθ)ᵀC(origin + Bθ) = 0`, found through the cone multiplier.
fn cone_face(space: &AffineSpace, h: &DMatrix<f64>, g: &DVector<f64>) -> Option<Vector4<f64>> {
    let k = h.nrows();
    let c = cone_matrix();
    let b = &space.basis;
    let c_red = b.transpose() * &c * b;
    let c_lin = b.transpose() * &c * &space.origin;
    let c0 = space.origin.dot(&(&c * &space.origin));

    // With H = LLᵀ and L⁻¹ C̃ L⁻ᵀ = U Λ Uᵀ, the stationarity condition
    // (H + 2μC̃)θ = g − 2μc decouples in η = UᵀLᵀθ.
    let chol = h.clone().cholesky()?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse()?;
    let m = &l_inv * &c_red * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let lam = eig.eigenvalues.clone();
    let u = eig.eigenvectors.clone();
    let g_hat = u.transpose() * (&l_inv * g);
    let c_hat = u.transpose() * (&l_inv * &c_lin);

    let eta = |mu: f64| {
        DVector::from_fn(k, |i, _| {
            (g_hat[i] - 2.0 * mu * c_hat[i]) / (1.0 + 2.0 * mu * lam[i])
        })
    };
    let phi_of = |e: &DVector<f64>| {
        (0..k)
            .map(|i| lam[i] * e[i] * e[i] + 2.0 * c_hat[i] * e[i])
            .sum::<f64>()
            + c0
    };
    let phi = |mu: f64| phi_of(&eta(mu));

    // The multiplier keeps H + 2μC̃ positive definite.
    let mu_max = (0..k)
        .filter(|&i| lam[i] < 0.0)
        .map(|i| -0.5 / lam[i])
        .fold(f64::INFINITY, f64::min);

    let mut lo = 0.0;
    let eta_star;
    if mu_max.is_finite() {
        // Step towards the pole until φ turns negative.
        let mut probe = mu_max * (1.0 - 1e-3);
        let mut found = false;
        for _ in 0..60 {
            if phi(probe) < 0.0 {
                found = true;
                break;
            }
            lo = probe;
            probe = mu_max - (mu_max - probe) * 1e-2;
            if probe >= mu_max {
                break;
            }
        }
        if found {
            eta_star = eta(bisect(&phi, lo, probe));
        } else {
            eta_star = hard_case(&eta, &lam, &c_hat, &g_hat, c0, mu_max)?;
        }
    } else {
        let mut hi = 1.0;
        let mut found = false;
        for _ in 0..200 {
            if phi(hi) < 0.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 4.0;
        }
        if !found {
            return None;
        }
        eta_star = eta(bisect(&phi, lo, hi));
    }

    let theta = l_inv.transpose() * (&u * eta_star);
    Some(to_vec4(&(&space.origin + b * theta)))
}

fn bisect(phi: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The pole of φ cancels: the multiplier sits at the definiteness limit and
/// the critical coordinate is fixed by the cone equation itself.
fn hard_case(
    eta: &impl Fn(f64) -> DVector<f64>,
    lam: &DVector<f64>,
    c_hat: &DVector<f64>,
    g_hat: &DVector<f64>,
    c0: f64,
    mu_max: f64,
) -> Option<DVector<f64>> {
    let k = lam.len();
    let crit = (0..k)
        .filter(|&i| lam[i] < 0.0)
        .min_by(|&a, &b| lam[a].total_cmp(&lam[b]))?;
    let mut e = eta(mu_max * (1.0 - 1e-12));
    let rest: f64 = (0..k)
        .filter(|&i| i != crit)
        .map(|i| lam[i] * e[i] * e[i] + 2.0 * c_hat[i] * e[i])
        .sum::<f64>()
        + c0;
    // λ t² + 2ĉ t + rest = 0
    let (a, b2, c) = (lam[crit], c_hat[crit], rest);
    let disc = b2 * b2 - a * c;
    if disc < 0.0 {
        return None;
    }
    let roots = [(-b2 + disc.sqrt()) / a, (-b2 - disc.sqrt()) / a];
    let obj = |t: f64| 0.5 * t * t - g_hat[crit] * t;
    let t = if obj(roots[0]) <= obj(roots[1]) {
        roots[0]
    } else {
        roots[1]
    };
    e[crit] = t;
    Some(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf() -> BusBlock {
        BusBlock {
            r: 0.01,
            x: 0.02,
            p_demand: 0.5,
            q_demand: 0.2,
            v_min_sq: 0.81,
            v_max_sq: 1.21,
            l_max: 2.0,
            n_children: 0,
        }
    }

    fn objective(b: &BusBlock, x: &[f64], w: &[f64], rho: f64) -> f64 {
        b.r * x[L_OWN] + 0.5 * rho * x.iter().zip(w).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
    }

    fn feasible(b: &BusBlock, x: &[f64], tol: f64) -> bool {
        let (sp, sq) = (0..b.n_children).fold((0.0, 0.0), |(a, c), k| {
            (a + x[CHILD_BASE + 2 * k], c + x[CHILD_BASE + 2 * k + 1])
        });
        let bal_p = x[P_OWN] - b.r * x[L_OWN] - sp - b.p_demand;
        let bal_q = x[Q_OWN] - b.x * x[L_OWN] - sq - b.q_demand;
        let drop = x[V_OWN] - x[V_PARENT] + 2.0 * (b.r * x[P_OWN] + b.x * x[Q_OWN])
            - (b.r * b.r + b.x * b.x) * x[L_OWN];
        let cone = x[P_OWN].powi(2) + x[Q_OWN].powi(2) - x[V_PARENT] * x[L_OWN];
        bal_p.abs() < tol
            && bal_q.abs() < tol
            && drop.abs() < tol
            && cone < tol
            && x[V_OWN] >= b.v_min_sq - tol
            && x[V_OWN] <= b.v_max_sq + tol
            && x[L_OWN] <= b.l_max + tol
    }

    #[test]
    fn interior_point_without_objective_pull_is_fixed() {
        // With zero resistance there is no objective pull, so a feasible
        // point with slack in the cone is its own proximal point.
        let b = BusBlock {
            r: 0.0,
            x: 0.02,
            p_demand: 0.0,
            q_demand: 0.0,
            ..leaf()
        };
        let l = 0.3;
        let q = 0.02 * l;
        let w = vec![1.0 - 2.0 * 0.02 * q + 0.02 * 0.02 * l, 1.0, 0.0, q, l];
        let x = b.prox(&w, 1.0).unwrap();
        for (a, c) in x.iter().zip(&w) {
            assert!((a - c).abs() < 1e-12, "{x:?} vs {w:?}");
        }
    }

    #[test]
    fn binding_cone_solution_is_feasible_and_tight() {
        let b = leaf();
        let w = vec![0.98, 1.0, 0.5, 0.2, 0.0];
        let x = b.prox(&w, 1.0).unwrap();
        assert!(feasible(&b, &x, 1e-10), "{x:?}");
        let cone = x[P_OWN].powi(2) + x[Q_OWN].powi(2) - x[V_PARENT] * x[L_OWN];
        assert!(cone.abs() < 1e-12);
    }

    #[test]
    fn respects_voltage_floor() {
        let b = BusBlock {
            v_min_sq: 0.99,
            ..leaf()
        };
        let w = vec![0.9, 1.0, 0.5, 0.2, 0.29];
        let x = b.prox(&w, 1.0).unwrap();
        assert!(feasible(&b, &x, 1e-10), "{x:?}");
        assert!((x[V_OWN] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn infeasible_current_limit() {
        let b = BusBlock {
            l_max: 1e-4,
            ..leaf()
        };
        assert!(b.prox(&[0.98, 1.0, 0.5, 0.2, 0.29], 1.0).is_none());
    }

    #[test]
    fn random_targets_beat_perturbations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n_children = trial % 3;
            let b = BusBlock {
                r: rng.random_range(0.001..0.05),
                x: rng.random_range(0.001..0.05),
                p_demand: rng.random_range(-0.2..0.5),
                q_demand: rng.random_range(-0.1..0.3),
                n_children,
                ..leaf()
            };
            let w: Vec<f64> = (0..b.n_copies())
                .map(|i| match i {
                    V_OWN | V_PARENT => rng.random_range(0.9..1.05),
                    L_OWN => rng.random_range(0.0..0.3),
                    _ => rng.random_range(-0.3..0.6),
                })
                .collect();
            let rho = rng.random_range(0.5..3.0);
            let x = b.prox(&w, rho).unwrap();
            assert!(feasible(&b, &x, 1e-9), "trial {trial}: {x:?}");
            let best = objective(&b, &x, &w, rho);
            // Random feasible points nearby are never better.
            for _ in 0..50 {
                let mut z: Vec<f64> = x
                    .iter()
                    .map(|v| v + rng.random_range(-1e-3..1e-3))
                    .collect();
                // Re-impose the equalities; the cone is checked below.
                if n_children == 0 {
                    z[P_OWN] = b.p_demand + b.r * z[L_OWN];
                    z[Q_OWN] = b.q_demand + b.x * z[L_OWN];
                } else {
                    let sp: f64 = (1..n_children).map(|k| z[CHILD_BASE + 2 * k]).sum();
                    let sq: f64 = (1..n_children).map(|k| z[CHILD_BASE + 2 * k + 1]).sum();
                    z[CHILD_BASE] = z[P_OWN] - b.r * z[L_OWN] - b.p_demand - sp;
                    z[CHILD_BASE + 1] = z[Q_OWN] - b.x * z[L_OWN] - b.q_demand - sq;
                }
                z[V_OWN] = z[V_PARENT] - 2.0 * (b.r * z[P_OWN] + b.x * z[Q_OWN])
                    + (b.r * b.r + b.x * b.x) * z[L_OWN];
                if feasible(&b, &z, 0.0) {
                    assert!(objective(&b, &z, &w, rho) >= best - 1e-12, "trial {trial}");
                }
            }
        }
    }
}
