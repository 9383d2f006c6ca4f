use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Hermite;
use crate::model::{CustomCoefficients, DiffusionSpec};

/// `[[y, value], ...]` with strictly increasing `y`.
pub type CoefficientTable = Vec<[f64; 2]>;

/// On-disk model description.
///
/// ```json
/// {"kind":"gbm","alpha":0.04,"beta":0.3,"r":0.05}
/// {"kind":"constant","mu":0.04,"sigma":0.3,"r":0.05}
/// {"kind":"custom","mu_table":[[0.1,0.004],...],"sigma_table":[[0.1,0.03],...],"r":0.05}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelFile {
    Gbm {
        alpha: f64,
        beta: f64,
        r: f64,
    },
    Constant {
        mu: f64,
        sigma: f64,
        r: f64,
    },
    Custom {
        mu_table: CoefficientTable,
        sigma_table: CoefficientTable,
        r: f64,
    },
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_spec(&self) -> Result<DiffusionSpec> {
        match self {
            ModelFile::Gbm { alpha, beta, r } => DiffusionSpec::gbm(*alpha, *beta, *r),
            ModelFile::Constant { mu, sigma, r } => DiffusionSpec::constant(*mu, *sigma, *r),
            ModelFile::Custom {
                mu_table,
                sigma_table,
                r,
            } => {
                let mu = table_interpolant("mu_table", mu_table)?;
                let sigma = table_interpolant("sigma_table", sigma_table)?;
                let lo = mu.x_min().max(sigma.x_min());
                let hi = mu.x_max().min(sigma.x_max());
                if !(lo > 0.0 && hi > lo) {
                    return Err(Error::ModelFile(
                        "coefficient tables must overlap on a subset of (0, inf)".into(),
                    ));
                }
                let (mu_d, sigma_d) = (mu.clone(), sigma.clone());
                DiffusionSpec::custom(
                    CustomCoefficients {
                        mu: Arc::new(move |y| mu.eval(y)),
                        sigma: Arc::new(move |y| sigma.eval(y)),
                        dmu: Some(Arc::new(move |y| mu_d.derivative(y))),
                        dsigma: Some(Arc::new(move |y| sigma_d.derivative(y))),
                        support: Some((lo, hi)),
                    },
                    *r,
                )
            }
        }
    }
}

fn table_interpolant(name: &str, table: &CoefficientTable) -> Result<Hermite> {
    if table.len() < 2 {
        return Err(Error::ModelFile(format!("{name} needs at least two rows")));
    }
    let xs: Vec<f64> = table.iter().map(|r| r[0]).collect();
    let ys: Vec<f64> = table.iter().map(|r| r[1]).collect();
    if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(Error::ModelFile(format!(
            "{name} abscissae must be finite and strictly increasing"
        )));
    }
    Ok(Hermite::pchip(xs, ys))
}
