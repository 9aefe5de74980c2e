//! Product priors over parameter vectors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Independent coordinates, either standard normal or standard Student-t.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    #[default]
    Gaussian,
    StudentT { dof: u32 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Gaussian => Ok(()),
            PriorSpec::StudentT { dof: 3 | 5 } => Ok(()),
            PriorSpec::StudentT { dof } => Err(Error::Config(format!(
                "student_t prior supports 3 or 5 degrees of freedom, got {dof}"
            ))),
        }
    }

    /// Log density of one coordinate.
    pub fn coord_logpdf(&self, x: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian => -0.5 * (x * x + (2.0 * std::f64::consts::PI).ln()),
            PriorSpec::StudentT { dof } => {
                let nu = f64::from(dof);
                ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
                    - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
            }
        }
    }

    /// Derivative of the negative log density of one coordinate.
    pub fn coord_neg_score(&self, x: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian => x,
            PriorSpec::StudentT { dof } => {
                let nu = f64::from(dof);
                (nu + 1.0) * x / (nu + x * x)
            }
        }
    }
}

/// `n` independent draws of dimension `dim`.
pub fn prior_sample<R: Rng + ?Sized>(spec: &PriorSpec, dim: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let draws = match *spec {
        PriorSpec::Gaussian => (0..n)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
        PriorSpec::StudentT { dof } => {
            let t = StudentT::new(f64::from(dof)).map_err(|e| Error::Config(e.to_string()))?;
            (0..n).map(|_| (0..dim).map(|_| t.sample(rng)).collect()).collect()
        }
    };
    Ok(draws)
}

pub fn prior_logpdf(spec: &PriorSpec, theta: &[f64]) -> f64 {
    theta.iter().map(|&x| spec.coord_logpdf(x)).sum()
}

/// Gradient of `-log prior(theta)`.
pub fn prior_neg_log_grad(spec: &PriorSpec, theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|&x| spec.coord_neg_score(x)).collect()
}
