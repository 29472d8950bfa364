//! Number-basis bookkeeping for n bosonic modes with fixed particle number,
//! the model Hamiltonian as a dense matrix, exact quantum propagation by
//! eigendecomposition, and mode-rotated observables.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::ModelParams;
use crate::util::LnFactorials;

/// Hard guard against accidentally huge bases; the library targets desk scale.
pub const DIM_CAP: usize = 20_000;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("mode count must be at least 2 (got {0})")]
    BadModeCount(usize),
    #[error("particle count must be at least 1 (got {0})")]
    BadParticleCount(u32),
    #[error("basis dimension {dim} exceeds the cap {cap}; use smaller N or n")]
    DimensionTooLarge { dim: usize, cap: usize },
    #[error("interaction term requires N >= 2 (division by N-1), got N = {0}")]
    ChiRequiresTwoParticles(u32),
    #[error("matrix is not Hermitian (max |H - H^dag| = {0:.3e})")]
    NonHermitian(f64),
    #[error("state vector length {found} does not match basis dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operation requires a state tagged {expected:?}, found {found:?}")]
    WrongModeBasis { expected: ModeBasis, found: ModeBasis },
    #[error("mode rotation is defined for the three-mode model only (n = {0})")]
    RotationNeedsThreeModes(usize),
    #[error("observable {0:?} is not defined for this basis/mode count")]
    UnsupportedObservable(Observable),
    #[error("state has (near-)zero norm")]
    ZeroNorm,
    #[error("state is not normalized (|norm - 1| = {0:.3e})")]
    NotNormalized(f64),
    #[error("unsupported mode count {0}; the model is built for n = 2 or n = 3")]
    UnsupportedModes(usize),
}

/// Which single-particle basis the amplitudes of a `FockVector` refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeBasis {
    /// The native modes of the model (trap wells for n = 3; the effective
    /// symmetric pair (b1, b2) for the reduced n = 2 model).
    Native,
    /// The rotated modes b1 = (a1+a2)/sqrt2, b2 = a3, b3 = (a1-a2)/sqrt2.
    Rotated,
}

/// Occupation-number multi-index; entries sum to the particle number.
pub type FockIndex = Vec<u32>;

/// Ordered basis of the N-particle sector of n modes.
///
/// States are enumerated in descending lexicographic order of the occupation
/// vector, so indices are stable and reproducible across runs.
#[derive(Debug, Clone)]
pub struct FockBasis {
    modes: usize,
    particles: u32,
    states: Vec<FockIndex>,
    lookup: HashMap<FockIndex, usize>,
}

impl FockBasis {
    pub fn new(modes: usize, particles: u32) -> Result<Self, FockError> {
        Self::with_cap(modes, particles, DIM_CAP)
    }

    /// Like [`FockBasis::new`] with an explicit dimension cap.
    pub fn with_cap(modes: usize, particles: u32, cap: usize) -> Result<Self, FockError> {
        if modes < 2 {
            return Err(FockError::BadModeCount(modes));
        }
        if particles < 1 {
            return Err(FockError::BadParticleCount(particles));
        }
        let dim = basis_dimension(modes, particles);
        if dim > cap as u128 {
            return Err(FockError::DimensionTooLarge {
                dim: dim.min(usize::MAX as u128) as usize,
                cap,
            });
        }
        let mut states = Vec::with_capacity(dim as usize);
        let mut current = vec![0u32; modes];
        enumerate_rec(modes, particles, 0, &mut current, &mut states);
        let lookup = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            modes,
            particles,
            states,
            lookup,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn particles(&self) -> u32 {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[FockIndex] {
        &self.states
    }

    pub fn index_of(&self, state: &[u32]) -> Option<usize> {
        self.lookup.get(state).copied()
    }

    /// An all-zero amplitude vector tagged with the given mode basis.
    pub fn zero_vector(&self, tag: ModeBasis) -> FockVector {
        FockVector {
            amps: vec![C64::new(0.0, 0.0); self.dim()],
            tag,
        }
    }

    /// ln of N!/(m_1!...m_n!) for every basis state, in basis order.
    pub fn ln_multinomials(&self) -> Vec<f64> {
        let lf = LnFactorials::up_to(self.particles as usize + self.modes);
        self.states.iter().map(|m| lf.ln_multinomial(m)).collect()
    }
}

/// dim of the fixed-N sector: (N+n-1)! / (N! (n-1)!).
pub fn basis_dimension(modes: usize, particles: u32) -> u128 {
    // C(N + n - 1, n - 1) with exact integer arithmetic.
    let n = particles as u128 + modes as u128 - 1;
    let k = modes as u128 - 1;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn enumerate_rec(
    modes: usize,
    remaining: u32,
    pos: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<FockIndex>,
) {
    if pos == modes - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    // descending lexicographic: highest occupation of the leading mode first
    for m in (0..=remaining).rev() {
        current[pos] = m;
        enumerate_rec(modes, remaining - m, pos + 1, current, out);
    }
}

/// Complex amplitudes over a `FockBasis`, tagged with the mode basis they
/// refer to.
#[derive(Debug, Clone)]
pub struct FockVector {
    pub amps: Vec<C64>,
    pub tag: ModeBasis,
}

impl FockVector {
    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) -> Result<(), FockError> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(FockError::ZeroNorm);
        }
        let inv = 1.0 / n;
        for z in &mut self.amps {
            *z *= inv;
        }
        Ok(())
    }

    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |<self|other>| with both sides normalized.
    pub fn fidelity(&self, other: &FockVector) -> f64 {
        self.inner(other).norm() / (self.norm() * other.norm())
    }
}

/// Dense Hermitian Hamiltonian over a `FockBasis`.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub mat: DMatrix<C64>,
    pub params: ModelParams,
}

/// Build the model Hamiltonian over the given basis.
///
/// n = 3 is the triple well: hopping `omega * sum_{j!=k} adag_j a_k` plus the
/// on-site interaction `chi/(N-1) * sum_j adag_j^2 a_j^2`. n = 2 is the same
/// Hamiltonian restricted to the symmetric two-mode sector: in the rotated
/// modes b1 = (a1+a2)/sqrt2, b2 = a3 the triple well becomes, after dropping
/// every term that touches the (initially empty) antisymmetric mode b3,
///
///   omega * [ n1 + sqrt2 (b1dag b2 + b2dag b1) ]
///     + chi/(N-1) * [ n1(n1-1)/2 + n2(n2-1) ].
pub fn build_hamiltonian(
    params: &ModelParams,
    basis: &FockBasis,
) -> Result<HamiltonianMatrix, FockError> {
    if basis.modes() != params.modes {
        return Err(FockError::UnsupportedModes(basis.modes()));
    }
    if params.chi != 0.0 && params.particles < 2 {
        return Err(FockError::ChiRequiresTwoParticles(params.particles));
    }
    let dim = basis.dim();
    let mut mat = DMatrix::<C64>::zeros(dim, dim);
    let chi_scale = if params.chi == 0.0 {
        0.0
    } else {
        params.chi / (params.particles as f64 - 1.0)
    };
    match params.modes {
        3 => {
            for (col, m) in basis.states().iter().enumerate() {
                let diag: f64 = m
                    .iter()
                    .map(|&mj| (mj as f64) * (mj as f64 - 1.0))
                    .sum::<f64>()
                    * chi_scale;
                mat[(col, col)] += C64::new(diag, 0.0);
                for j in 0..3 {
                    for k in 0..3 {
                        if j == k || m[k] == 0 {
                            continue;
                        }
                        let mut target = m.clone();
                        target[k] -= 1;
                        target[j] += 1;
                        let row = basis.index_of(&target).expect("hop stays in sector");
                        let amp = ((m[k] as f64) * (m[j] as f64 + 1.0)).sqrt();
                        mat[(row, col)] += C64::new(params.omega * amp, 0.0);
                    }
                }
            }
        }
        2 => {
            let sqrt2 = std::f64::consts::SQRT_2;
            for (col, m) in basis.states().iter().enumerate() {
                let (m1, m2) = (m[0] as f64, m[1] as f64);
                let diag = params.omega * m1
                    + chi_scale * (0.5 * m1 * (m1 - 1.0) + m2 * (m2 - 1.0));
                mat[(col, col)] += C64::new(diag, 0.0);
                if m[1] > 0 {
                    // b1dag b2
                    let row = basis.index_of(&[m[0] + 1, m[1] - 1]).unwrap();
                    let amp = (m2 * (m1 + 1.0)).sqrt();
                    mat[(row, col)] += C64::new(params.omega * sqrt2 * amp, 0.0);
                }
                if m[0] > 0 {
                    // b2dag b1
                    let row = basis.index_of(&[m[0] - 1, m[1] + 1]).unwrap();
                    let amp = (m1 * (m2 + 1.0)).sqrt();
                    mat[(row, col)] += C64::new(params.omega * sqrt2 * amp, 0.0);
                }
            }
        }
        other => return Err(FockError::UnsupportedModes(other)),
    }
    let herm = hermiticity_defect(&mat);
    if herm > 1e-12 {
        return Err(FockError::NonHermitian(herm));
    }
    Ok(HamiltonianMatrix {
        mat,
        params: params.clone(),
    })
}

fn hermiticity_defect(mat: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..mat.nrows() {
        for j in i..mat.ncols() {
            let d = (mat[(i, j)] - mat[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Exact propagator e^{-iHt} realized through the eigendecomposition of the
/// Hermitian matrix. At desk-scale dimensions this gives a machine-precision
/// reference without ODE error stacking.
pub struct EigenPropagator {
    eigvals: Vec<f64>,
    eigvecs: DMatrix<C64>,
}

impl EigenPropagator {
    pub fn new(h: &HamiltonianMatrix) -> Result<Self, FockError> {
        let defect = hermiticity_defect(&h.mat);
        if defect > 1e-12 {
            return Err(FockError::NonHermitian(defect));
        }
        let eig = h.mat.clone().symmetric_eigen();
        Ok(Self {
            eigvals: eig.eigenvalues.iter().copied().collect(),
            eigvecs: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    /// psi(t) = V exp(-i Lambda t) V^dag psi0 at each requested time.
    pub fn evolve(
        &self,
        psi0: &FockVector,
        times: &[f64],
    ) -> Result<Vec<FockVector>, FockError> {
        let dim = self.eigvals.len();
        if psi0.amps.len() != dim {
            return Err(FockError::DimensionMismatch {
                expected: dim,
                found: psi0.amps.len(),
            });
        }
        let norm = psi0.norm();
        if !((norm - 1.0).abs() <= 1e-8) {
            return Err(FockError::NotNormalized((norm - 1.0).abs()));
        }
        let psi0_vec = nalgebra::DVector::from_column_slice(&psi0.amps);
        let coeffs = self.eigvecs.adjoint() * &psi0_vec;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let mut rotated = coeffs.clone();
            for (c, &e) in rotated.iter_mut().zip(&self.eigvals) {
                *c *= C64::from_polar(1.0, -e * t);
            }
            let psi_t = &self.eigvecs * rotated;
            out.push(FockVector {
                amps: psi_t.iter().copied().collect(),
                tag: psi0.tag,
            });
        }
        Ok(out)
    }
}

/// Unitary Fock-space matrix induced by the single-particle rotation to the
/// modes b1 = (a1+a2)/sqrt2, b2 = a3, b3 = (a1-a2)/sqrt2.
pub struct ModeRotation {
    mat: DMatrix<C64>,
}

impl ModeRotation {
    pub fn new(basis: &FockBasis) -> Result<Self, FockError> {
        if basis.modes() != 3 {
            return Err(FockError::RotationNeedsThreeModes(basis.modes()));
        }
        // adag_j expressed in the rotated creation operators:
        //   adag_1 = (b1 + b3)/sqrt2, adag_2 = (b1 - b3)/sqrt2, adag_3 = b2.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let coeff = [
            [s, 0.0, s],  // adag_1 -> (b1, b2, b3) coefficients
            [s, 0.0, -s], // adag_2
            [0.0, 1.0, 0.0], // adag_3
        ];
        let dim = basis.dim();
        let lf = LnFactorials::up_to(basis.particles() as usize + 3);
        let mut mat = DMatrix::<C64>::zeros(dim, dim);
        for (col, m) in basis.states().iter().enumerate() {
            // expand prod_j (sum_i coeff[j][i] * bdag_i)^{m_j} |0>
            let mut terms: HashMap<FockIndex, f64> = HashMap::new();
            terms.insert(vec![0, 0, 0], 1.0);
            for (j, &mj) in m.iter().enumerate() {
                if mj == 0 {
                    continue;
                }
                let mut next: HashMap<FockIndex, f64> = HashMap::new();
                for (occ, val) in &terms {
                    // multinomial expansion over the three target modes
                    for k1 in 0..=mj {
                        for k2 in 0..=(mj - k1) {
                            let k3 = mj - k1 - k2;
                            let c = [k1, k2, k3]
                                .iter()
                                .zip(coeff[j].iter())
                                .map(|(&ki, &ci)| ci.powi(ki as i32))
                                .product::<f64>();
                            if c == 0.0 {
                                continue;
                            }
                            let weight = (lf.get(mj as usize)
                                - lf.get(k1 as usize)
                                - lf.get(k2 as usize)
                                - lf.get(k3 as usize))
                            .exp();
                            let mut occ2 = occ.clone();
                            occ2[0] += k1;
                            occ2[1] += k2;
                            occ2[2] += k3;
                            *next.entry(occ2).or_insert(0.0) += val * c * weight;
                        }
                    }
                }
                terms = next;
            }
            let denom = 0.5 * m.iter().map(|&mj| lf.get(mj as usize)).sum::<f64>();
            for (occ, val) in terms {
                let row = basis.index_of(&occ).expect("rotation preserves N");
                let numer = 0.5 * occ.iter().map(|&p| lf.get(p as usize)).sum::<f64>();
                mat[(row, col)] += C64::new(val * (numer - denom).exp(), 0.0);
            }
        }
        Ok(Self { mat })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    /// Re-express native-mode amplitudes in the rotated modes.
    pub fn forward(&self, psi: &FockVector) -> Result<FockVector, FockError> {
        if psi.tag != ModeBasis::Native {
            return Err(FockError::WrongModeBasis {
                expected: ModeBasis::Native,
                found: psi.tag,
            });
        }
        Ok(FockVector {
            amps: self.apply(&psi.amps, false),
            tag: ModeBasis::Rotated,
        })
    }

    /// Inverse rotation, back to the native modes.
    pub fn inverse(&self, psi: &FockVector) -> Result<FockVector, FockError> {
        if psi.tag != ModeBasis::Rotated {
            return Err(FockError::WrongModeBasis {
                expected: ModeBasis::Rotated,
                found: psi.tag,
            });
        }
        Ok(FockVector {
            amps: self.apply(&psi.amps, true),
            tag: ModeBasis::Native,
        })
    }

    fn apply(&self, amps: &[C64], adjoint: bool) -> Vec<C64> {
        let v = nalgebra::DVector::from_column_slice(amps);
        let w = if adjoint {
            self.mat.adjoint() * v
        } else {
            &self.mat * v
        };
        w.iter().copied().collect()
    }
}

/// Named observables evaluated on Fock vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// <S_z>/S with S = N/2: population imbalance of the two effective modes.
    /// Needs rotated modes for n = 3; native for n = 2.
    PopulationImbalance,
    /// <n_b3>/N, the fractional occupation of the antisymmetric mode (n = 3,
    /// rotated only).
    ThirdModeFraction,
    /// <n_j>, plain occupation of mode j (0-based) in the state's own basis.
    Occupation(usize),
}

/// Real expectation value of a named observable; the state must be normalized.
pub fn expectation(
    basis: &FockBasis,
    psi: &FockVector,
    obs: Observable,
) -> Result<f64, FockError> {
    if psi.amps.len() != basis.dim() {
        return Err(FockError::DimensionMismatch {
            expected: basis.dim(),
            found: psi.amps.len(),
        });
    }
    let norm = psi.norm();
    if !((norm - 1.0).abs() <= 1e-8) {
        return Err(FockError::NotNormalized((norm - 1.0).abs()));
    }
    let n = basis.particles() as f64;
    match obs {
        Observable::PopulationImbalance => {
            if basis.modes() == 3 && psi.tag != ModeBasis::Rotated {
                return Err(FockError::WrongModeBasis {
                    expected: ModeBasis::Rotated,
                    found: psi.tag,
                });
            }
            let mut acc = 0.0;
            for (m, a) in basis.states().iter().zip(&psi.amps) {
                acc += a.norm_sqr() * (m[0] as f64 - m[1] as f64);
            }
            Ok(acc / n)
        }
        Observable::ThirdModeFraction => {
            if basis.modes() != 3 {
                return Err(FockError::UnsupportedObservable(obs));
            }
            if psi.tag != ModeBasis::Rotated {
                return Err(FockError::WrongModeBasis {
                    expected: ModeBasis::Rotated,
                    found: psi.tag,
                });
            }
            let mut acc = 0.0;
            for (m, a) in basis.states().iter().zip(&psi.amps) {
                acc += a.norm_sqr() * m[2] as f64;
            }
            Ok(acc / n)
        }
        Observable::Occupation(j) => {
            if j >= basis.modes() {
                return Err(FockError::UnsupportedObservable(obs));
            }
            let mut acc = 0.0;
            for (m, a) in basis.states().iter().zip(&psi.amps) {
                acc += a.norm_sqr() * m[j] as f64;
            }
            Ok(acc)
        }
    }
}
