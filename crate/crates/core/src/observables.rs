//! Uniform observable evaluation across the three approaches (exact quantum,
//! semiclassical reconstruction, classical principal trajectory) and simple
//! series comparison utilities.

use thiserror::Error;

use crate::fock::{expectation, FockBasis, FockError, FockVector, ModeRotation, Observable};
use crate::ivr::{IvrError, IvrIntegralTable};
use crate::util::fmt_f64;

#[derive(Debug, Error)]
pub enum ObservablesError {
    #[error("time grids differ; series are not comparable")]
    GridMismatch,
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Ivr(#[from] IvrError),
}

/// Which route produced a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Exact,
    Semiclassical,
    Classical,
}

impl Approach {
    pub fn label(&self) -> &'static str {
        match self {
            Approach::Exact => "exact",
            Approach::Semiclassical => "semiclassical",
            Approach::Classical => "classical",
        }
    }
}

/// One observable as a function of time.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub approach: Approach,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, approach: Approach) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.windows(2).all(|p| p[1] > p[0]));
        Self {
            times,
            values,
            approach,
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("t,value,label\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(*t),
                fmt_f64(*v),
                self.approach.label()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Metric {
    MaxAbs,
    Rms,
}

/// Scalar deviation between two series on the same time grid.
pub fn compare(a: &TimeSeries, b: &TimeSeries, metric: Metric) -> Result<f64, ObservablesError> {
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(ObservablesError::GridMismatch);
    }
    let diffs = a.values.iter().zip(&b.values).map(|(x, y)| x - y);
    Ok(match metric {
        Metric::MaxAbs => diffs.map(f64::abs).fold(0.0, f64::max),
        Metric::Rms => {
            (diffs.map(|d| d * d).sum::<f64>() / a.values.len() as f64).sqrt()
        }
    })
}

/// Evaluate a named observable on a list of states (one per time). For the
/// three-mode model the states are rotated to the effective modes first.
pub fn series_from_states(
    basis: &FockBasis,
    states: &[FockVector],
    times: &[f64],
    obs: Observable,
    rotation: Option<&ModeRotation>,
    approach: Approach,
) -> Result<TimeSeries, ObservablesError> {
    assert_eq!(states.len(), times.len());
    let mut values = Vec::with_capacity(states.len());
    for psi in states {
        let value = if let Some(rot) = rotation {
            let rotated = rot.forward(psi)?;
            expectation(basis, &rotated, obs)?
        } else {
            expectation(basis, psi, obs)?
        };
        values.push(value);
    }
    Ok(TimeSeries::new(times.to_vec(), values, approach))
}

/// Observable series of the normalized semiclassical reconstruction.
pub fn series_semiclassical(
    basis: &FockBasis,
    table: &IvrIntegralTable,
    obs: Observable,
    rotation: Option<&ModeRotation>,
) -> Result<TimeSeries, ObservablesError> {
    let mut values = Vec::with_capacity(table.times.len());
    for ti in 0..table.times.len() {
        let psi = crate::ivr::reconstruct_state(table, basis, ti)?;
        let value = if let Some(rot) = rotation {
            let rotated = rot.forward(&psi)?;
            expectation(basis, &rotated, obs)?
        } else {
            expectation(basis, &psi, obs)?
        };
        values.push(value);
    }
    Ok(TimeSeries::new(
        table.times.clone(),
        values,
        Approach::Semiclassical,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherent::{coherent_amplitudes, q_function, sphere_grid};
    use crate::dynamics::IntegratorConfig;
    use crate::fock::{build_hamiltonian, EigenPropagator};
    use crate::ivr::{normal_symbol, run_ensemble, ClassicalObservable, FilterConfig, GridSpec};
    use crate::model::{ModelParams, Su2Model};
    use crate::util::linspace;
    use num_complex::Complex64 as C64;

    #[test]
    fn compare_basics() {
        let t = linspace(1.0, 5);
        let a = TimeSeries::new(t.clone(), vec![0.0, 0.5, 1.0, 0.5, 0.0], Approach::Exact);
        let b = TimeSeries::new(
            t.clone(),
            vec![0.1, 0.5, 0.9, 0.5, 0.0],
            Approach::Classical,
        );
        assert_eq!(compare(&a, &a, Metric::MaxAbs).unwrap(), 0.0);
        assert_eq!(compare(&a, &a, Metric::Rms).unwrap(), 0.0);
        let ab = compare(&a, &b, Metric::MaxAbs).unwrap();
        let ba = compare(&b, &a, Metric::MaxAbs).unwrap();
        assert_eq!(ab, ba);
        assert!((ab - 0.1).abs() < 1e-15);
        let short = TimeSeries::new(linspace(1.0, 3), vec![0.0; 3], Approach::Exact);
        assert!(matches!(
            compare(&a, &short, Metric::Rms),
            Err(ObservablesError::GridMismatch)
        ));
    }

    #[test]
    fn csv_shape() {
        let s = TimeSeries::new(linspace(1.0, 3), vec![0.1, 0.2, 0.3], Approach::Semiclassical);
        let csv = s.csv();
        assert!(csv.starts_with("t,value,label\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().ends_with(",semiclassical"));
    }

    /// All three approaches agree at t = 0 and stay within the spectral
    /// bounds of the imbalance.
    #[test]
    fn t0_agreement_and_bounds() {
        let n_part = 30u32;
        let params = ModelParams {
            modes: 2,
            particles: n_part,
            omega: -1.0,
            chi: -1.0,
        };
        let model = Su2Model::new(params.clone()).unwrap();
        let basis = FockBasis::new(2, n_part).unwrap();
        let v_i = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
        let times = linspace(2.0, 21);
        let cfg = IntegratorConfig::default();

        let h = build_hamiltonian(&params, &basis).unwrap();
        let prop = EigenPropagator::new(&h).unwrap();
        let psi0 = coherent_amplitudes(&basis, &[v_i]).unwrap();
        let states = prop.evolve(&psi0, &times).unwrap();
        let exact = series_from_states(
            &basis,
            &states,
            &times,
            Observable::PopulationImbalance,
            None,
            Approach::Exact,
        )
        .unwrap();

        let res = run_ensemble(
            &model,
            &basis,
            &[v_i],
            &GridSpec::centered(vec![v_i.conj()], 0.8, 15),
            &FilterConfig { lambda: 10.0 },
            &times,
            &cfg,
        )
        .unwrap();
        let sc = series_semiclassical(&basis, &res.table, Observable::PopulationImbalance, None)
            .unwrap();

        let classical = crate::ivr::classical_approximation(
            &model,
            &[v_i],
            ClassicalObservable::PopulationImbalance,
            &times,
            &cfg,
        )
        .unwrap();

        let expect0 = -std::f64::consts::FRAC_1_SQRT_2;
        assert!((exact.values[0] - expect0).abs() < 1e-9);
        assert!((sc.values[0] - expect0).abs() < 1e-3);
        assert!((classical[0] - expect0).abs() < 1e-12);
        for series in [&exact, &sc] {
            for v in &series.values {
                assert!(v.abs() <= 1.0 + 1e-9);
            }
        }
    }

    /// Observable means computed in the number basis must agree with the
    /// phase-space route: <Sz>/S = ((S+1)/S) * integral of dmu n_z(v) Q(v),
    /// the antinormal-symbol mean evaluated by sphere quadrature. Spot-checked
    /// on the semiclassical reconstruction at three times.
    #[test]
    fn fock_means_equal_phase_space_means() {
        let n_part = 30u32;
        let model = Su2Model::new(ModelParams {
            modes: 2,
            particles: n_part,
            omega: -1.0,
            chi: -1.0,
        })
        .unwrap();
        let basis = FockBasis::new(2, n_part).unwrap();
        let v_i = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
        let times = [0.0, 1.0, 2.0];
        let res = run_ensemble(
            &model,
            &basis,
            &[v_i],
            &GridSpec::centered(vec![v_i.conj()], 0.8, 15),
            &FilterConfig { lambda: 10.0 },
            &times,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let s = n_part as f64 / 2.0;
        for ti in 0..times.len() {
            let psi = crate::ivr::reconstruct_state(&res.table, &basis, ti).unwrap();
            let fock_mean =
                expectation(&basis, &psi, Observable::PopulationImbalance).unwrap();
            let q = q_function(&basis, &psi, sphere_grid(n_part, 241, 241)).unwrap();
            let mut acc = 0.0;
            for pt in &q.points {
                acc += pt.weight
                    * pt.q
                    * normal_symbol(ClassicalObservable::PopulationImbalance, &pt.w);
            }
            let q_mean = (s + 1.0) / s * acc;
            assert!(
                (fock_mean - q_mean).abs() < 1e-4,
                "t={}: fock {fock_mean} vs phase-space {q_mean}",
                times[ti]
            );
        }
    }
}
