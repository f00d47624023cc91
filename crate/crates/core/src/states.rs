//! Initial-state families.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::symplectic::GaussianState;
use crate::{Error, Result};

/// Largest accepted `|r|`.
pub const MAX_SQUEEZING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFamily {
    Vacuum,
    Thermal,
    Squeezed1,
    Squeezed2,
    BassetHound,
}

impl StateFamily {
    pub fn n_modes(self) -> usize {
        match self {
            StateFamily::Vacuum | StateFamily::Thermal | StateFamily::Squeezed1 => 1,
            StateFamily::Squeezed2 => 2,
            StateFamily::BassetHound => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateFamily::Vacuum => "vacuum",
            StateFamily::Thermal => "thermal",
            StateFamily::Squeezed1 => "squeezed1",
            StateFamily::Squeezed2 => "squeezed2",
            StateFamily::BassetHound => "basset_hound",
        }
    }
}

impl fmt::Display for StateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "vacuum" => Ok(StateFamily::Vacuum),
            "thermal" => Ok(StateFamily::Thermal),
            "squeezed1" | "single_mode_squeezed" => Ok(StateFamily::Squeezed1),
            "squeezed2" | "two_mode_squeezed" | "twin_beam" => Ok(StateFamily::Squeezed2),
            "basset_hound" | "bassethound" => Ok(StateFamily::BassetHound),
            other => Err(Error::invalid(format!("unknown state family '{other}'"))),
        }
    }
}

/// Parameters of one initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub family: StateFamily,
    /// Squeezing parameter.
    pub r: f64,
    /// Mean thermal occupation, used by [`StateFamily::Thermal`].
    pub n_bar: f64,
}

impl StateSpec {
    pub fn vacuum() -> Self {
        Self { family: StateFamily::Vacuum, r: 0.0, n_bar: 0.0 }
    }

    pub fn thermal(n_bar: f64) -> Self {
        Self { family: StateFamily::Thermal, r: 0.0, n_bar }
    }

    pub fn squeezed(r: f64) -> Self {
        Self { family: StateFamily::Squeezed1, r, n_bar: 0.0 }
    }

    pub fn two_mode_squeezed(r: f64) -> Self {
        Self { family: StateFamily::Squeezed2, r, n_bar: 0.0 }
    }

    pub fn basset_hound(r: f64) -> Self {
        Self { family: StateFamily::BassetHound, r, n_bar: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() || self.r.abs() > MAX_SQUEEZING {
            return Err(Error::invalid(format!(
                "squeezing r = {} must be finite with |r| <= {MAX_SQUEEZING}",
                self.r
            )));
        }
        if !self.n_bar.is_finite() || self.n_bar < 0.0 {
            return Err(Error::invalid(format!("n_bar = {} must be >= 0", self.n_bar)));
        }
        Ok(())
    }
}

/// Builds the covariance matrix of `spec`.
///
/// - `squeezed1`: `diag(e^{−2r}, e^{2r})`
/// - `squeezed2`: `cosh 2r` on the diagonal, `±sinh 2r` correlations
/// - `basset_hound`: bisymmetric three-mode state with `a = cosh 2r`
/// - `vacuum`: identity, `thermal`: `(2n̄ + 1) I₂`
pub fn make_state(spec: &StateSpec) -> Result<GaussianState> {
    spec.validate()?;
    let r = spec.r;
    let cm = match spec.family {
        StateFamily::Vacuum => DMatrix::identity(2, 2),
        StateFamily::Thermal => DMatrix::identity(2, 2) * (2.0 * spec.n_bar + 1.0),
        StateFamily::Squeezed1 => {
            DMatrix::from_row_slice(2, 2, &[(-2.0 * r).exp(), 0.0, 0.0, (2.0 * r).exp()])
        }
        StateFamily::Squeezed2 => {
            let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
            #[rustfmt::skip]
            let m = DMatrix::from_row_slice(4, 4, &[
                c,   0.0, s,   0.0,
                0.0, c,   0.0, -s,
                s,   0.0, c,   0.0,
                0.0, -s,  0.0, c,
            ]);
            m
        }
        StateFamily::BassetHound => basset_hound_cm(r),
    };
    GaussianState::new(cm)
}

fn basset_hound_cm(r: f64) -> DMatrix<f64> {
    let a = (2.0 * r).cosh();
    let local_1 = a;
    let local_23 = (a + 1.0) / 2.0;
    let corr_23 = (a - 1.0) / 2.0;
    let corr_1 = (a * a - 1.0).max(0.0).sqrt() / 2f64.sqrt();
    let mut cm = DMatrix::zeros(6, 6);
    for k in 0..2 {
        cm[(k, k)] = local_1;
        cm[(2 + k, 2 + k)] = local_23;
        cm[(4 + k, 4 + k)] = local_23;
        cm[(2 + k, 4 + k)] = corr_23;
        cm[(4 + k, 2 + k)] = corr_23;
        let sign = if k == 0 { 1.0 } else { -1.0 };
        for other in [2, 4] {
            cm[(k, other + k)] = sign * corr_1;
            cm[(other + k, k)] = sign * corr_1;
        }
    }
    cm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{check_bona_fide, symplectic_eigenvalues};

    #[test]
    fn unsqueezed_states_are_vacua() {
        assert_eq!(make_state(&StateSpec::squeezed(0.0)).unwrap().cm(), &DMatrix::identity(2, 2));
        assert_eq!(
            make_state(&StateSpec::two_mode_squeezed(0.0)).unwrap().cm(),
            &DMatrix::identity(4, 4)
        );
        assert_eq!(make_state(&StateSpec::vacuum()).unwrap().cm(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn thermal_occupation() {
        let s = make_state(&StateSpec::thermal(1.5)).unwrap();
        assert_eq!(s.cm(), &(DMatrix::identity(2, 2) * 4.0));
    }

    #[test]
    fn basset_hound_r2() {
        let s = make_state(&StateSpec::basset_hound(2.0)).unwrap();
        assert!((s.cm()[(0, 0)] - 27.308232836016487).abs() < 1e-9);
        assert!(check_bona_fide(&s).valid);
        for nu in symplectic_eigenvalues(&s).unwrap() {
            assert!((nu - 1.0).abs() < 1e-9, "{nu}");
        }
    }

    #[test]
    fn basset_hound_is_bisymmetric() {
        let s = make_state(&StateSpec::basset_hound(1.3)).unwrap();
        let red = s.reduced(&[1, 2]).unwrap();
        let swapped = s.reduced(&[2, 1]).unwrap();
        assert_eq!(red.cm(), swapped.cm());
    }

    #[test]
    fn every_family_is_bona_fide_and_pure_when_squeezed() {
        for r in [-1.5, -0.2, 0.0, 0.7, 2.0, 3.0] {
            for spec in [StateSpec::squeezed(r), StateSpec::two_mode_squeezed(r), StateSpec::basset_hound(r)] {
                let s = make_state(&spec).unwrap();
                assert!(check_bona_fide(&s).valid, "{spec:?}");
                for nu in symplectic_eigenvalues(&s).unwrap() {
                    assert!((nu - 1.0).abs() < 1e-9, "{spec:?}: {nu}");
                }
            }
            let tms = make_state(&StateSpec::two_mode_squeezed(r)).unwrap();
            assert!((tms.cm().determinant() - 1.0).abs() < 1e-9 * (4.0 * r).cosh().powi(2));
        }
        assert!(check_bona_fide(&make_state(&StateSpec::thermal(2.0)).unwrap()).valid);
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_state(&StateSpec::squeezed(11.0)).is_err());
        assert!(make_state(&StateSpec::squeezed(f64::NAN)).is_err());
        assert!(make_state(&StateSpec::thermal(-0.1)).is_err());
        assert!("ghz".parse::<StateFamily>().is_err());
        assert_eq!("basset-hound".parse::<StateFamily>().unwrap(), StateFamily::BassetHound);
    }
}
