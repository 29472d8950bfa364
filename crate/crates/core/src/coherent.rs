//! SU(n) coherent-state algebra: amplitudes over the number basis, overlaps,
//! the coherent-state integration measure, Husimi Q grids and the SU(2)
//! sphere embedding.
//!
//! A coherent state is labeled by n-1 complex numbers w; the last mode
//! carries no label. All combinatorial weights are assembled in log space.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::fock::{basis_dimension, FockBasis, FockVector, ModeBasis};
use crate::util::{dot_conj, norm_sqr};

#[derive(Debug, Error)]
pub enum CoherentError {
    #[error("phase vector has {found} components, basis needs {expected}")]
    WrongDimension { expected: usize, found: usize },
    #[error("state has zero norm; Q function undefined")]
    ZeroState,
    #[error("operation requires a sphere-parametrized grid")]
    NotASphereGrid,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("sphere grids are defined for the two-mode case only (n = {0})")]
    SphereNeedsTwoModes(usize),
}

/// sigma(n) = (n-1)! / pi^(n-1), the N-independent part of the measure.
pub fn sigma(modes: usize) -> f64 {
    let mut fact = 1.0;
    for k in 2..modes {
        fact *= k as f64;
    }
    fact / std::f64::consts::PI.powi(modes as i32 - 1)
}

/// Density of the coherent-state resolution of the identity at w:
/// sigma(n) * dim / (1 + |w|^2)^n.
pub fn measure_weight(w: &[C64], modes: usize, particles: u32) -> f64 {
    let dim = basis_dimension(modes, particles) as f64;
    sigma(modes) * dim / (1.0 + norm_sqr(w)).powi(modes as i32)
}

/// Amplitudes of the coherent state |w> over the number basis:
/// sqrt(N!/(m_1!...m_n!)) * prod_j w_j^{m_j} / (1 + |w|^2)^{N/2}.
pub fn coherent_amplitudes(
    basis: &FockBasis,
    w: &[C64],
) -> Result<FockVector, CoherentError> {
    let d = basis.modes() - 1;
    if w.len() != d {
        return Err(CoherentError::WrongDimension {
            expected: d,
            found: w.len(),
        });
    }
    let ln_mult = basis.ln_multinomials();
    let mut out = basis.zero_vector(ModeBasis::Native);
    write_amplitudes(basis, &ln_mult, w, &mut out.amps);
    Ok(out)
}

/// Core amplitude evaluation into a preallocated buffer.
fn write_amplitudes(basis: &FockBasis, ln_mult: &[f64], w: &[C64], out: &mut [C64]) {
    let n_part = basis.particles() as f64;
    let d = basis.modes() - 1;
    let ln_norm = (1.0 + norm_sqr(w)).ln();
    let ln_w: Vec<C64> = w
        .iter()
        .map(|z| {
            if z.norm() == 0.0 {
                C64::new(f64::NEG_INFINITY, 0.0)
            } else {
                z.ln()
            }
        })
        .collect();
    for (slot, (m, lm)) in out.iter_mut().zip(basis.states().iter().zip(ln_mult)) {
        let mut log_amp = C64::new(0.5 * lm - 0.5 * n_part * ln_norm, 0.0);
        let mut zero = false;
        for j in 0..d {
            if m[j] == 0 {
                continue;
            }
            if ln_w[j].re == f64::NEG_INFINITY {
                zero = true;
                break;
            }
            log_amp += (m[j] as f64) * ln_w[j];
        }
        *slot = if zero {
            C64::new(0.0, 0.0)
        } else {
            log_amp.exp()
        };
    }
}

/// Overlap <wp|w> = (1 + wp^dag w)^N / [(1+|wp|^2)(1+|w|^2)]^{N/2}.
pub fn overlap(wp: &[C64], w: &[C64], particles: u32) -> C64 {
    let n = particles as f64;
    let cross = C64::new(1.0, 0.0) + dot_conj(wp, w);
    if cross.norm() == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let log = n * cross.ln()
        - C64::new(
            0.5 * n * ((1.0 + norm_sqr(wp)).ln() + (1.0 + norm_sqr(w)).ln()),
            0.0,
        );
    log.exp()
}

/// Coordinates attached to a Q-grid sample point.
#[derive(Debug, Clone)]
pub enum GridCoord {
    /// Cartesian (Re, Im) box sample of the phase vector itself.
    Plane,
    /// SU(2) sphere angles with w = e^{-i phi} tan(theta/2).
    Sphere { theta: f64, phi: f64 },
}

#[derive(Debug, Clone)]
pub struct QPoint {
    /// coherent-state label of the sample
    pub w: Vec<C64>,
    pub coord: GridCoord,
    /// measure density times the cell volume of the quadrature
    pub weight: f64,
    /// Q value (filled by `q_function`)
    pub q: f64,
}

/// Husimi Q function sampled on a grid, with quadrature weights folded in so
/// that sum(weight * q) approximates the phase-space integral.
#[derive(Debug, Clone)]
pub struct QGrid {
    pub points: Vec<QPoint>,
    /// integral of Q dmu before normalization (1 for a normalized state, up
    /// to grid error)
    pub raw_integral: f64,
}

impl QGrid {
    pub fn integral(&self) -> f64 {
        self.points.iter().map(|p| p.weight * p.q).sum()
    }
}

/// Uniform midpoint lattice in (Re w_j, Im w_j) over a box, with the measure
/// density folded into the weights. `points_per_axis` samples per real axis.
pub fn box_grid(
    modes: usize,
    particles: u32,
    center: &[C64],
    half_width: f64,
    points_per_axis: usize,
) -> Vec<QPoint> {
    let d = modes - 1;
    assert_eq!(center.len(), d);
    let p = points_per_axis;
    let h = 2.0 * half_width / p as f64; // midpoint cells
    let axes = 2 * d;
    let total = p.pow(axes as u32);
    let mut out = Vec::with_capacity(total);
    let cell = h.powi(axes as i32);
    for idx in 0..total {
        let mut rem = idx;
        let mut w = vec![C64::new(0.0, 0.0); d];
        // row-major: last axis fastest
        let mut offsets = vec![0.0f64; axes];
        for ax in (0..axes).rev() {
            let k = rem % p;
            rem /= p;
            offsets[ax] = -half_width + (k as f64 + 0.5) * h;
        }
        for j in 0..d {
            w[j] = center[j] + C64::new(offsets[2 * j], offsets[2 * j + 1]);
        }
        let weight = measure_weight(&w, modes, particles) * cell;
        out.push(QPoint {
            w,
            coord: GridCoord::Plane,
            weight,
            q: 0.0,
        });
    }
    out
}

/// Uniform midpoint grid in the sphere angles (theta, phi) for the two-mode
/// case; the measure reduces to (N+1)/(4 pi) sin(theta) dtheta dphi.
pub fn sphere_grid(particles: u32, theta_points: usize, phi_points: usize) -> Vec<QPoint> {
    let dtheta = std::f64::consts::PI / theta_points as f64;
    let dphi = std::f64::consts::TAU / phi_points as f64;
    let density = (particles as f64 + 1.0) / (4.0 * std::f64::consts::PI);
    let mut out = Vec::with_capacity(theta_points * phi_points);
    for kt in 0..theta_points {
        let theta = (kt as f64 + 0.5) * dtheta;
        for kp in 0..phi_points {
            let phi = (kp as f64 + 0.5) * dphi;
            let w = vec![C64::from_polar((theta / 2.0).tan(), -phi)];
            out.push(QPoint {
                w,
                coord: GridCoord::Sphere { theta, phi },
                weight: density * theta.sin() * dtheta * dphi,
                q: 0.0,
            });
        }
    }
    out
}

/// Evaluate Q(w) = |<w|psi>|^2 on the grid and rescale so the quadrature of
/// Q dmu equals one. Semiclassical states arrive unnormalized; `raw_integral`
/// keeps the pre-scaling value for diagnostics.
pub fn q_function(
    basis: &FockBasis,
    psi: &FockVector,
    mut grid: Vec<QPoint>,
) -> Result<QGrid, CoherentError> {
    if grid.is_empty() {
        return Err(CoherentError::EmptyGrid);
    }
    let norm = psi.norm();
    if norm < 1e-300 {
        return Err(CoherentError::ZeroState);
    }
    let ln_mult = basis.ln_multinomials();
    grid.par_iter_mut().for_each(|pt| {
        let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
        write_amplitudes(basis, &ln_mult, &pt.w, &mut amps);
        let ip: C64 = amps
            .iter()
            .zip(&psi.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        pt.q = ip.norm_sqr();
    });
    let raw_integral: f64 = grid.iter().map(|p| p.weight * p.q).sum();
    if raw_integral <= 0.0 {
        return Err(CoherentError::ZeroState);
    }
    let inv = 1.0 / raw_integral;
    for p in &mut grid {
        p.q *= inv;
    }
    Ok(QGrid {
        points: grid,
        raw_integral,
    })
}

/// Radial embedding of a sphere-parametrized Q grid: each sample maps to
/// [Q+1] * (sin t cos p, sin t sin p, -cos t), so Q == 0 draws the unit
/// sphere and the south pole sits at theta = 0.
pub fn sphere_embedding(grid: &QGrid) -> Result<Vec<[f64; 3]>, CoherentError> {
    grid.points
        .iter()
        .map(|p| match p.coord {
            GridCoord::Sphere { theta, phi } => {
                let r = p.q + 1.0;
                Ok([
                    r * theta.sin() * phi.cos(),
                    r * theta.sin() * phi.sin(),
                    -r * theta.cos(),
                ])
            }
            _ => Err(CoherentError::NotASphereGrid),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockBasis;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_c(rng: &mut StdRng, scale: f64) -> C64 {
        C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
    }

    #[test]
    fn vacuum_label_piles_everything_in_the_last_mode() {
        let basis = FockBasis::new(3, 5).unwrap();
        let psi = coherent_amplitudes(&basis, &[C64::new(0.0, 0.0); 2]).unwrap();
        let target = basis.index_of(&[0, 0, 5]).unwrap();
        for (k, a) in psi.amps.iter().enumerate() {
            let expect = if k == target { 1.0 } else { 0.0 };
            assert!((a - C64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn two_mode_two_particle_amplitudes_by_hand() {
        let basis = FockBasis::new(2, 2).unwrap();
        let psi = coherent_amplitudes(&basis, &[C64::new(1.0, 0.0)]).unwrap();
        let expect = [
            (vec![2u32, 0u32], 0.5),
            (vec![1, 1], std::f64::consts::FRAC_1_SQRT_2),
            (vec![0, 2], 0.5),
        ];
        for (m, val) in expect {
            let idx = basis.index_of(&m).unwrap();
            assert!((psi.amps[idx] - C64::new(val, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn amplitudes_are_normalized_for_random_labels() {
        let mut rng = StdRng::seed_from_u64(41);
        for (n, big_n) in [(2usize, 30u32), (3, 18)] {
            let basis = FockBasis::new(n, big_n).unwrap();
            for _ in 0..20 {
                let w: Vec<C64> = (0..n - 1).map(|_| rand_c(&mut rng, 2.0)).collect();
                let psi = coherent_amplitudes(&basis, &w).unwrap();
                assert!((psi.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overlap_properties() {
        let mut rng = StdRng::seed_from_u64(43);
        let w: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 1.5)).collect();
        let wp: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 1.5)).collect();
        assert!((overlap(&w, &w, 30) - C64::new(1.0, 0.0)).norm() < 1e-12);
        let a = overlap(&wp, &w, 30);
        let b = overlap(&w, &wp, 30);
        assert!((a - b.conj()).norm() < 1e-12);
    }

    #[test]
    fn overlap_matches_fock_inner_product() {
        let mut rng = StdRng::seed_from_u64(47);
        for (n, big_n) in [(2usize, 30u32), (3, 30), (3, 7)] {
            let basis = FockBasis::new(n, big_n).unwrap();
            for _ in 0..34 {
                let w: Vec<C64> = (0..n - 1).map(|_| rand_c(&mut rng, 1.3)).collect();
                let wp: Vec<C64> = (0..n - 1).map(|_| rand_c(&mut rng, 1.3)).collect();
                let psi = coherent_amplitudes(&basis, &w).unwrap();
                let psip = coherent_amplitudes(&basis, &wp).unwrap();
                let direct = psip.inner(&psi);
                let closed = overlap(&wp, &w, big_n);
                assert!(
                    (direct - closed).norm() < 1e-10,
                    "n={n} N={big_n}: {direct} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn measure_weight_closed_form_and_monotonicity() {
        let w0 = [C64::new(0.0, 0.0)];
        for big_n in [1u32, 10, 30] {
            let expect = (big_n as f64 + 1.0) / std::f64::consts::PI;
            assert!((measure_weight(&w0, 2, big_n) - expect).abs() < 1e-12);
        }
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let w = [C64::new(0.1 * k as f64, 0.0)];
            let m = measure_weight(&w, 2, 30);
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn sphere_identity_resolution_reproduces_random_vectors() {
        let basis = FockBasis::new(2, 8).unwrap();
        let grid = sphere_grid(8, 400, 128);
        let mut rng = StdRng::seed_from_u64(53);
        let ln_mult = basis.ln_multinomials();
        for _ in 0..10 {
            let mut psi = basis.zero_vector(ModeBasis::Native);
            for a in &mut psi.amps {
                *a = rand_c(&mut rng, 1.0);
            }
            psi.normalize().unwrap();
            let mut rebuilt = vec![C64::new(0.0, 0.0); basis.dim()];
            let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
            for pt in &grid {
                write_amplitudes(&basis, &ln_mult, &pt.w, &mut amps);
                let ip: C64 = amps.iter().zip(&psi.amps).map(|(a, b)| a.conj() * b).sum();
                for (r, a) in rebuilt.iter_mut().zip(&amps) {
                    *r += pt.weight * ip * a;
                }
            }
            let err: f64 = rebuilt
                .iter()
                .zip(&psi.amps)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 5e-5, "identity defect {err:.2e}");
        }
    }

    #[test]
    fn box_identity_resolution_error_shrinks_under_refinement() {
        let identity_defect = |modes: usize,
                               big_n: u32,
                               half: f64,
                               pts: usize,
                               rng: &mut StdRng|
         -> f64 {
            let basis = FockBasis::new(modes, big_n).unwrap();
            let center = vec![C64::new(0.0, 0.0); modes - 1];
            let grid = box_grid(modes, big_n, &center, half, pts);
            let ln_mult = basis.ln_multinomials();
            let mut psi = basis.zero_vector(ModeBasis::Native);
            for a in &mut psi.amps {
                *a = rand_c(rng, 1.0);
            }
            psi.normalize().unwrap();
            let mut rebuilt = vec![C64::new(0.0, 0.0); basis.dim()];
            let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
            for pt in &grid {
                write_amplitudes(&basis, &ln_mult, &pt.w, &mut amps);
                let ip: C64 = amps.iter().zip(&psi.amps).map(|(a, b)| a.conj() * b).sum();
                for (r, a) in rebuilt.iter_mut().zip(&amps) {
                    *r += pt.weight * ip * a;
                }
            }
            rebuilt
                .iter()
                .zip(&psi.amps)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let mut rng = StdRng::seed_from_u64(59);
        let coarse = identity_defect(2, 6, 5.0, 51, &mut rng);
        let mut rng = StdRng::seed_from_u64(59);
        let fine = identity_defect(2, 6, 10.0, 201, &mut rng);
        assert!(fine < 0.5 * coarse, "coarse {coarse:.2e}, fine {fine:.2e}");
        // three-mode case: one coarse/fine pair over the 4-real-dim box
        let mut rng = StdRng::seed_from_u64(61);
        let coarse = identity_defect(3, 2, 3.0, 13, &mut rng);
        let mut rng = StdRng::seed_from_u64(61);
        let fine = identity_defect(3, 2, 6.0, 35, &mut rng);
        assert!(fine < 0.5 * coarse, "coarse {coarse:.2e}, fine {fine:.2e}");
    }

    #[test]
    fn q_function_peaks_at_the_label_and_normalizes() {
        let basis = FockBasis::new(2, 30).unwrap();
        let v0 = C64::new(0.35, -0.2);
        let psi = coherent_amplitudes(&basis, &[v0]).unwrap();
        let grid = sphere_grid(30, 181, 181);
        let q = q_function(&basis, &psi, grid).unwrap();
        // normalized input: quadrature close to one before rescaling
        assert!((q.raw_integral - 1.0).abs() < 1e-3);
        assert!((q.integral() - 1.0).abs() < 1e-12);
        let best = q
            .points
            .iter()
            .max_by(|a, b| a.q.total_cmp(&b.q))
            .unwrap();
        assert!((best.w[0] - v0).norm() < 0.05, "peak at {}", best.w[0]);
    }

    #[test]
    fn q_function_rejects_zero_states() {
        let basis = FockBasis::new(2, 4).unwrap();
        let psi = basis.zero_vector(ModeBasis::Native);
        let grid = sphere_grid(4, 16, 16);
        assert!(matches!(
            q_function(&basis, &psi, grid),
            Err(CoherentError::ZeroState)
        ));
    }

    #[test]
    fn sphere_embedding_geometry() {
        // Q = 0 everywhere embeds as the unit sphere
        let mut grid = sphere_grid(4, 16, 16);
        for p in &mut grid {
            p.q = 0.0;
        }
        let g = QGrid {
            points: grid,
            raw_integral: 1.0,
        };
        for (pt, xyz) in g.points.iter().zip(sphere_embedding(&g).unwrap()) {
            let r = (xyz[0].powi(2) + xyz[1].powi(2) + xyz[2].powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            // theta = 0 points toward negative z
            if let GridCoord::Sphere { theta, .. } = pt.coord {
                if theta < 0.2 {
                    assert!(xyz[2] < 0.0);
                }
            }
        }
    }

    #[test]
    fn coherent_peak_lands_at_the_expected_angles() {
        // v = tan(pi/8) on the positive real axis sits at theta = pi/4, phi = 0
        let basis = FockBasis::new(2, 30).unwrap();
        let v = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
        let psi = coherent_amplitudes(&basis, &[v]).unwrap();
        let q = q_function(&basis, &psi, sphere_grid(30, 301, 301)).unwrap();
        let best = q
            .points
            .iter()
            .max_by(|a, b| a.q.total_cmp(&b.q))
            .unwrap();
        if let GridCoord::Sphere { theta, phi } = best.coord {
            assert!((theta - std::f64::consts::FRAC_PI_4).abs() < 0.02);
            let phi_dist = phi.min(std::f64::consts::TAU - phi);
            assert!(phi_dist < 0.02, "phi = {phi}");
        } else {
            panic!("expected sphere coords");
        }
    }
}
