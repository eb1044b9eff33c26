//! Lennard-Jones pair potential, forces, and the system Hamiltonian.
//!
//! Pure functions of immutable inputs. Forces are evaluated over all pairs
//! with no cutoff; per-particle sums run in ascending neighbor order so
//! results are bit-identical at any thread count.

use crate::error::{Error, Result};
use crate::par;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Physical parameters of the particle system: particle count, damping
/// coefficient, and the L-J well depth / minimum-distance pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    pub n_particles: usize,
    pub damping: f64,
    pub lj_depth: f64,
    pub lj_rmin: f64,
}

impl SystemParams {
    pub fn new(n_particles: usize, damping: f64, lj_depth: f64, lj_rmin: f64) -> Result<Self> {
        if n_particles < 1 {
            return Err(Error::InvalidParam("n_particles must be >= 1".into()));
        }
        for (name, v) in [("damping", damping), ("lj_depth", lj_depth), ("lj_rmin", lj_rmin)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(Self { n_particles, damping, lj_depth, lj_rmin })
    }

    /// Distances below this are treated as coincident particles. The noise-free
    /// dynamics never legitimately reach this regime (the pair-distance floor is
    /// orders of magnitude larger), so hitting it signals integrator misuse.
    pub fn coincidence_threshold(&self) -> f64 {
        1e-9 * self.lj_rmin
    }
}

/// Positions and velocities of all particles at one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl SystemState {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::Shape(format!(
                "positions ({}) and velocities ({}) differ in length",
                positions.len(),
                velocities.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::Shape("state must contain at least one particle".into()));
        }
        let finite = |vs: &[Vec3]| vs.iter().all(|v| v.iter().all(|c| c.is_finite()));
        if !finite(&positions) || !finite(&velocities) {
            return Err(Error::Domain("state contains non-finite components".into()));
        }
        Ok(Self { positions, velocities })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// Minimum pairwise distance; +inf for a single particle.
    pub fn min_pair_distance(&self) -> f64 {
        let n = self.n();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = (self.positions[j] - self.positions[i]).norm();
                if r < min {
                    min = r;
                }
            }
        }
        min
    }
}

/// L-J pair potential: eps * ((rm/r)^12 - 2 (rm/r)^6). Well depth -eps at r = rm.
pub fn lj_potential(r: f64, params: &SystemParams) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Domain(format!("lj_potential requires finite r > 0, got {r}")));
    }
    let s6 = (params.lj_rmin / r).powi(6);
    Ok(params.lj_depth * (s6 * s6 - 2.0 * s6))
}

/// Radial force coefficient c(r) such that f_ij = c * (x_j - x_i), expressed
/// in the squared distance: c = 12 eps (rm^6/r^8 - rm^12/r^14).
fn pair_coeff(r2: f64, params: &SystemParams) -> f64 {
    let s2 = params.lj_rmin * params.lj_rmin / r2;
    let s6 = s2 * s2 * s2;
    12.0 * params.lj_depth * s6 * (1.0 - s6) / r2
}

/// d c(r) / d r, needed for the force Jacobian.
fn pair_coeff_deriv(r: f64, params: &SystemParams) -> f64 {
    let rm6 = params.lj_rmin.powi(6);
    let rm12 = rm6 * rm6;
    12.0 * params.lj_depth * (-8.0 * rm6 / r.powi(9) + 14.0 * rm12 / r.powi(15))
}

/// Force on particle i due to particle j: 12 eps (rm^6/r^8 - rm^12/r^14)(x_j - x_i).
pub fn pair_force(x_i: &Vec3, x_j: &Vec3, params: &SystemParams) -> Result<Vec3> {
    let d = x_j - x_i;
    let r2 = d.norm_squared();
    let thr = params.coincidence_threshold();
    if r2 < thr * thr {
        return Err(Error::Domain(format!(
            "coincident positions (r = {:.3e} < {:.3e})",
            r2.sqrt(),
            thr
        )));
    }
    Ok(pair_coeff(r2, params) * d)
}

/// Total force on each particle, summed over all other particles.
///
/// Parallelizes over particles; each per-particle sum accumulates neighbors in
/// ascending index order, so the result matches the sequential evaluation.
pub fn total_forces(state: &SystemState, params: &SystemParams) -> Result<Vec<Vec3>> {
    let n = state.n();
    let pos = &state.positions;
    let thr = params.coincidence_threshold();
    par::try_map_indices(n, move |i| {
        let mut f = Vec3::zeros();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = pos[j] - pos[i];
            let r2 = d.norm_squared();
            if r2 < thr * thr {
                return Err(Error::CoincidentPair {
                    i: i.min(j),
                    j: i.max(j),
                    r: r2.sqrt(),
                });
            }
            f += pair_coeff(r2, params) * d;
        }
        Ok(f)
    })
}

/// Total energy: kinetic (unit particle mass) plus the pairwise L-J sum.
pub fn hamiltonian(state: &SystemState, params: &SystemParams) -> Result<f64> {
    let n = state.n();
    let thr = params.coincidence_threshold();
    let mut pe = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = (state.positions[j] - state.positions[i]).norm();
            if r < thr {
                return Err(Error::CoincidentPair { i, j, r });
            }
            let s6 = (params.lj_rmin / r).powi(6);
            pe += params.lj_depth * (s6 * s6 - 2.0 * s6);
        }
    }
    Ok(state.kinetic_energy() + pe)
}

/// Lower bound on any pair distance along a noise-free trajectory started at
/// energy `h0`: the largest s = (rm/r)^6 admissible under
/// eps (s^2 - 2 s) <= h0 + eps N(N-1)/2, solved in closed form.
pub fn pairwise_distance_floor(h0: f64, params: &SystemParams) -> f64 {
    let n = params.n_particles as f64;
    let c = h0 / params.lj_depth + n * (n - 1.0) / 2.0;
    let s = 1.0 + (1.0 + c).max(0.0).sqrt();
    params.lj_rmin / s.powf(1.0 / 6.0)
}

/// Vector-Jacobian product of the total-force field: returns (df/dx)^T w.
///
/// Each pair contributes a symmetric 3x3 block c I + (c'/r) d d^T; blocks are
/// accumulated in ascending (i, j) order.
pub fn force_vjp(state: &SystemState, w: &[Vec3], params: &SystemParams) -> Result<Vec<Vec3>> {
    let n = state.n();
    if w.len() != n {
        return Err(Error::Shape(format!("vjp weight length {} != {}", w.len(), n)));
    }
    let thr = params.coincidence_threshold();
    let mut g = vec![Vec3::zeros(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = state.positions[j] - state.positions[i];
            let r2 = d.norm_squared();
            if r2 < thr * thr {
                return Err(Error::CoincidentPair { i, j, r: r2.sqrt() });
            }
            let r = r2.sqrt();
            let c = pair_coeff(r2, params);
            let cp = pair_coeff_deriv(r, params);
            let wd = w[i] - w[j];
            let t = c * wd + (cp / r) * d.dot(&wd) * d;
            g[i] -= t;
            g[j] += t;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn params(n: usize, eps: f64, rmin: f64) -> SystemParams {
        SystemParams::new(n, 1.0, eps, rmin).unwrap()
    }

    #[test]
    fn potential_at_well_minimum_is_minus_depth() {
        let p = params(2, 3.0, 2.0);
        assert_abs_diff_eq!(lj_potential(2.0, &p).unwrap(), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn potential_zero_crossing() {
        let p = params(2, 7.5, 2.0);
        let r = 2.0 * 2.0_f64.powf(-1.0 / 6.0);
        assert_abs_diff_eq!(lj_potential(r, &p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn potential_direct_substitution() {
        // eps (2^12 - 2*2^6) = 4096 - 128
        let p = params(2, 1.0, 2.0);
        assert_abs_diff_eq!(lj_potential(1.0, &p).unwrap(), 3968.0, epsilon = 1e-10);
    }

    #[test]
    fn potential_rejects_bad_radius() {
        let p = params(2, 1.0, 2.0);
        assert!(lj_potential(0.0, &p).is_err());
        assert!(lj_potential(-1.0, &p).is_err());
        assert!(lj_potential(f64::NAN, &p).is_err());
        assert!(lj_potential(f64::INFINITY, &p).is_err());
    }

    #[test]
    fn pair_force_zero_at_minimum() {
        let p = params(2, 1.0, 2.0);
        let f = pair_force(&Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0), &p).unwrap();
        assert_eq!(f, Vec3::zeros());
    }

    #[test]
    fn pair_force_hand_value() {
        // coefficient 12 (2^6 - 2^12) = -48384 at r = 1
        let p = params(2, 1.0, 2.0);
        let f = pair_force(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), &p).unwrap();
        assert_abs_diff_eq!(f.x, -48384.0, epsilon = 1e-8);
        assert_eq!(f.y, 0.0);
        assert_eq!(f.z, 0.0);
    }

    #[test]
    fn pair_force_rejects_coincident() {
        let p = params(2, 1.0, 2.0);
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert!(pair_force(&x, &x, &p).is_err());
    }

    #[test]
    fn pair_force_sign_structure() {
        let p = params(2, 1.0, 2.0);
        let origin = Vec3::zeros();
        // r < rm: repulsion, force on i points away from j (negative x here)
        let f = pair_force(&origin, &Vec3::new(1.5, 0.0, 0.0), &p).unwrap();
        assert!(f.x < 0.0);
        // r > rm: attraction, force on i points toward j
        let f = pair_force(&origin, &Vec3::new(3.0, 0.0, 0.0), &p).unwrap();
        assert!(f.x > 0.0);
    }

    proptest! {
        #[test]
        fn force_antisymmetry_exact(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, az in -5.0..5.0f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bz in -5.0..5.0f64,
        ) {
            let p = params(2, 1.3, 2.0);
            let a = Vec3::new(ax, ay, az);
            let b = Vec3::new(bx, by, bz);
            prop_assume!((a - b).norm() > 0.1);
            let fab = pair_force(&a, &b, &p).unwrap();
            let fba = pair_force(&b, &a, &p).unwrap();
            // same floating expression with swapped sign of d, so exactly opposite
            prop_assert_eq!(fab, -fba);
        }

        #[test]
        fn force_matches_negative_potential_gradient(r_frac in 0.5..3.0f64) {
            let p = params(2, 2.0, 2.0);
            let r = r_frac * p.lj_rmin;
            let h = 1e-6 * p.lj_rmin;
            let dphi = (lj_potential(r + h, &p).unwrap() - lj_potential(r - h, &p).unwrap()) / (2.0 * h);
            // radial component of f_i toward j equals +dPhi/dr in the c(r) convention
            let f = pair_force(&Vec3::zeros(), &Vec3::new(r, 0.0, 0.0), &p).unwrap();
            prop_assert!((f.x - dphi).abs() <= 1e-6 * dphi.abs().max(1e-6));
        }

        #[test]
        fn hamiltonian_translation_and_permutation_invariant(
            seed in 0u64..1000, tx in -3.0..3.0f64, ty in -3.0..3.0f64, tz in -3.0..3.0f64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = params(5, 1.0, 2.0);
            let pos: Vec<Vec3> = (0..5).map(|i| Vec3::new(
                3.0 * i as f64 + rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>(),
            )).collect();
            let vel: Vec<Vec3> = (0..5).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let s = SystemState::new(pos.clone(), vel.clone()).unwrap();
            let h = hamiltonian(&s, &p).unwrap();

            let t = Vec3::new(tx, ty, tz);
            let shifted = SystemState::new(pos.iter().map(|x| x + t).collect(), vel.clone()).unwrap();
            prop_assert!((hamiltonian(&shifted, &p).unwrap() - h).abs() <= 1e-9 * h.abs().max(1.0));

            let perm = [2usize, 0, 4, 1, 3];
            let permuted = SystemState::new(
                perm.iter().map(|&i| pos[i]).collect(),
                perm.iter().map(|&i| vel[i]).collect(),
            ).unwrap();
            prop_assert!((hamiltonian(&permuted, &p).unwrap() - h).abs() <= 1e-12 * h.abs().max(1.0));
        }
    }

    #[test]
    fn total_forces_single_particle_is_zero() {
        let p = params(1, 1.0, 2.0);
        let s = SystemState::new(vec![Vec3::zeros()], vec![Vec3::zeros()]).unwrap();
        assert_eq!(total_forces(&s, &p).unwrap(), vec![Vec3::zeros()]);
    }

    #[test]
    fn total_forces_pair_at_minimum_is_zero() {
        let p = params(2, 1.0, 2.0);
        let s = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap();
        assert_eq!(total_forces(&s, &p).unwrap(), vec![Vec3::zeros(); 2]);
    }

    #[test]
    fn total_forces_matches_pairwise_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let p = params(3, 1.0, 2.0);
        let pos: Vec<Vec3> = (0..3)
            .map(|i| Vec3::new(4.0 * i as f64 + rng.gen::<f64>(), rng.gen(), rng.gen()))
            .collect();
        let s = SystemState::new(pos.clone(), vec![Vec3::zeros(); 3]).unwrap();
        let f = total_forces(&s, &p).unwrap();
        // independent O(N^2) oracle via pair_force
        for i in 0..3 {
            let mut expect = Vec3::zeros();
            for j in 0..3 {
                if j != i {
                    expect += pair_force(&pos[i], &pos[j], &p).unwrap();
                }
            }
            assert_relative_eq!(f[i].x, expect.x, max_relative = 1e-12);
            assert_relative_eq!(f[i].y, expect.y, max_relative = 1e-12);
            assert_relative_eq!(f[i].z, expect.z, max_relative = 1e-12);
        }
    }

    #[test]
    fn total_forces_momentum_neutral() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = params(12, 1.0, 2.0);
        let pos: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(10.0 * rng.gen::<f64>(), 10.0 * rng.gen::<f64>(), 10.0 * rng.gen::<f64>()))
            .collect();
        let s = SystemState::new(pos, vec![Vec3::zeros(); 12]).unwrap();
        let f = total_forces(&s, &p).unwrap();
        let grand: Vec3 = f.iter().sum();
        let fmax = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(grand.norm() <= 1e-10 * fmax.max(1.0));
    }

    #[test]
    fn total_forces_reports_coincident_pair() {
        let p = params(3, 1.0, 2.0);
        let x = Vec3::new(1.0, 1.0, 1.0);
        let s = SystemState::new(vec![Vec3::zeros(), x, x], vec![Vec3::zeros(); 3]).unwrap();
        match total_forces(&s, &p) {
            Err(Error::CoincidentPair { i, j, .. }) => assert_eq!((i, j), (1, 2)),
            other => panic!("expected coincident-pair error, got {other:?}"),
        }
    }

    #[test]
    fn hamiltonian_two_particles_at_rest_at_minimum() {
        let p = params(2, 3.0, 2.0);
        let s = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap();
        assert_abs_diff_eq!(hamiltonian(&s, &p).unwrap(), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn hamiltonian_single_particle_pure_kinetic() {
        let p = params(1, 1.0, 2.0);
        let s = SystemState::new(vec![Vec3::zeros()], vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(hamiltonian(&s, &p).unwrap(), 0.5);
    }

    #[test]
    fn hamiltonian_matches_brute_force_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = params(30, 1.0, 2.0);
        let pos: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(10.0 * rng.gen::<f64>(), 10.0 * rng.gen::<f64>(), 10.0 * rng.gen::<f64>()))
            .collect();
        let vel: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let s = SystemState::new(pos.clone(), vel.clone()).unwrap();
        let mut expect = 0.5 * vel.iter().map(|v| v.norm_squared()).sum::<f64>();
        for i in 0..30 {
            for j in (i + 1)..30 {
                expect += lj_potential((pos[j] - pos[i]).norm(), &p).unwrap();
            }
        }
        assert_relative_eq!(hamiltonian(&s, &p).unwrap(), expect, max_relative = 1e-12);
    }

    // Independent oracle: bisection on Phi(r) = h0 + eps N(N-1)/2.
    fn floor_by_bisection(h0: f64, p: &SystemParams) -> f64 {
        let n = p.n_particles as f64;
        let rhs = h0 + p.lj_depth * n * (n - 1.0) / 2.0;
        let (mut lo, mut hi) = (1e-6 * p.lj_rmin, p.lj_rmin);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lj_potential(mid, p).unwrap() > rhs {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn distance_floor_quadratic_root() {
        let p = params(20, 1.0, 2.0);
        let floor = pairwise_distance_floor(50.0, &p);
        assert_relative_eq!(floor, floor_by_bisection(50.0, &p), max_relative = 1e-9);
        // per the stated quadratic: s = 1 + sqrt(1 + 240)
        let s = 1.0 + 241.0_f64.sqrt();
        assert_relative_eq!(floor, 2.0 / s.powf(1.0 / 6.0), max_relative = 1e-12);
    }

    #[test]
    fn distance_floor_two_particle_ground_state() {
        // H(0) = -eps N(N-1)/2 makes the constraint Phi(r) <= 0, whose binding
        // root is s = 2, i.e. r = rm 2^(-1/6).
        let p = params(2, 1.0, 2.0);
        let floor = pairwise_distance_floor(-1.0, &p);
        assert_relative_eq!(floor, 2.0 * 2.0_f64.powf(-1.0 / 6.0), max_relative = 1e-12);
        assert_relative_eq!(floor, floor_by_bisection(-1.0, &p), max_relative = 1e-9);
    }

    #[test]
    fn distance_floor_vanishes_for_large_energy() {
        let p = params(2, 1.0, 2.0);
        let f1 = pairwise_distance_floor(1e6, &p);
        let f2 = pairwise_distance_floor(1e12, &p);
        // floor ~ rm (h0/eps)^(-1/12): 2e6^(-1/12)*2 ~ 0.63, 1e12^(-1/12)*2 ~ 0.2
        assert!(f1 > f2 && f2 > 0.0);
        assert_relative_eq!(f2, 2.0 * 1e-1, max_relative = 1e-5);
    }

    #[test]
    fn force_vjp_matches_finite_difference_jacobian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = params(4, 1.0, 2.0);
        let pos: Vec<Vec3> = (0..4)
            .map(|i| Vec3::new(2.5 * i as f64 + 0.3 * rng.gen::<f64>(), rng.gen(), rng.gen()))
            .collect();
        let s = SystemState::new(pos.clone(), vec![Vec3::zeros(); 4]).unwrap();
        let w: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let g = force_vjp(&s, &w, &p).unwrap();
        // finite-difference oracle: (J^T w)_jc = d/dx_jc sum_i w_i . f_i
        let h = 1e-6;
        for j in 0..4 {
            for c in 0..3 {
                let mut plus = pos.clone();
                plus[j][c] += h;
                let mut minus = pos.clone();
                minus[j][c] -= h;
                let fp = total_forces(&SystemState::new(plus, vec![Vec3::zeros(); 4]).unwrap(), &p).unwrap();
                let fm = total_forces(&SystemState::new(minus, vec![Vec3::zeros(); 4]).unwrap(), &p).unwrap();
                let dot = |f: &[Vec3]| f.iter().zip(&w).map(|(a, b)| a.dot(b)).sum::<f64>();
                let fd = (dot(&fp) - dot(&fm)) / (2.0 * h);
                assert_relative_eq!(g[j][c], fd, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }
}
