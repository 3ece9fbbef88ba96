use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Conversion constant between volumetric perfusion omega (1/s) and the
/// clinical rate w (ml/(min kg)): w = (omega / rho) * 60e6.
const W_PER_OMEGA: f64 = 60.0e6;

/// Thermal and dielectric record of one tissue at the operating frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueProperties {
    pub name: String,
    /// Mass density, kg/m^3.
    pub rho: f64,
    /// Thermal conductivity, W/(m °C).
    pub k: f64,
    /// Perfusion, ml/(min kg).
    pub w: f64,
    /// Relative permittivity.
    pub eps_r: f64,
    /// Electrical conductivity, S/m.
    pub sigma: f64,
}

impl TissueProperties {
    pub fn new(name: &str, rho: f64, k: f64, w: f64, eps_r: f64, sigma: f64) -> Result<Self> {
        if !(rho > 0.0 && k > 0.0 && w >= 0.0 && eps_r >= 1.0 && sigma >= 0.0) {
            return Err(Error::Config(format!(
                "tissue `{name}`: require rho>0, k>0, w>=0, eps_r>=1, sigma>=0 \
                 (got rho={rho}, k={k}, w={w}, eps_r={eps_r}, sigma={sigma})"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            rho,
            k,
            w,
            eps_r,
            sigma,
        })
    }

    /// Volumetric perfusion rate omega in 1/s.
    pub fn omega(&self) -> f64 {
        self.w * self.rho / W_PER_OMEGA
    }

    /// Inverse of [`TissueProperties::omega`], for round-trip checks.
    pub fn w_from_omega(omega: f64, rho: f64) -> f64 {
        omega / rho * W_PER_OMEGA
    }
}

/// Blood parameters entering the perfusion heat sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BloodModel {
    /// Blood density, kg/m^3.
    pub rho_b: f64,
    /// Blood specific heat, J/(kg °C).
    pub cp_b: f64,
    /// Arterial temperature, °C.
    pub t_a: f64,
}

impl Default for BloodModel {
    fn default() -> Self {
        // rho_b and cp_b are literature averages; the arterial temperature
        // is the conventional 37 °C.
        Self {
            rho_b: 1050.0,
            cp_b: 3617.0,
            t_a: 37.0,
        }
    }
}

impl BloodModel {
    pub fn validate(&self) -> Result<()> {
        if self.rho_b > 0.0 && self.cp_b > 0.0 && self.t_a > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("blood model fields must be positive".into()))
        }
    }
}

/// Material name whose cells count as internal air (convective cavity walls,
/// no SAR deposition, excluded from the thermal unknowns).
pub const INTERNAL_AIR: &str = "internal_air";

/// Tissue database: the built-in 434 MHz records plus user registrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueDb {
    tissues: Vec<TissueProperties>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TissueDb {
    /// Built-in database at f = 434 MHz.
    pub fn builtin() -> Self {
        let records = [
            ("skin", 1109.0, 0.37, 106.0, 49.4, 0.681),
            ("fat", 911.0, 0.21, 33.0, 11.6, 0.082),
            ("muscle", 1090.0, 0.49, 39.1, 56.9, 0.805),
            ("bone", 1908.0, 0.32, 10.0, 13.1, 0.094),
            ("spinal_cord", 1075.0, 0.51, 160.0, 35.0, 0.456),
            ("tumor", 1050.0, 0.51, 72.3, 59.0, 0.89),
            (INTERNAL_AIR, 1.15, 0.026, 0.0, 1.0, 0.0),
        ];
        let mut db = Self {
            tissues: Vec::new(),
            index: HashMap::new(),
        };
        for (name, rho, k, w, eps_r, sigma) in records {
            db.register(TissueProperties::new(name, rho, k, w, eps_r, sigma).unwrap());
        }
        db
    }

    /// Add or replace a record.
    pub fn register(&mut self, props: TissueProperties) {
        if let Some(&i) = self.index.get(&props.name) {
            self.tissues[i] = props;
        } else {
            self.index.insert(props.name.clone(), self.tissues.len());
            self.tissues.push(props);
        }
    }

    pub fn lookup(&self, name: &str) -> Result<&TissueProperties> {
        self.index
            .get(name)
            .map(|&i| &self.tissues[i])
            .ok_or_else(|| Error::UnknownTissue(name.to_string()))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTissue(name.to_string()))
    }

    pub fn by_index(&self, idx: usize) -> &TissueProperties {
        &self.tissues[idx]
    }

    pub fn len(&self) -> usize {
        self.tissues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tissues.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TissueProperties> {
        self.tissues.iter()
    }

    /// Rebuild the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tissues
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
    }

    /// Scale the perfusion of one tissue by `factor` (sensitivity studies).
    pub fn scale_perfusion(&mut self, name: &str, factor: f64) -> Result<()> {
        let i = self.index_of(name)?;
        let new_w = self.tissues[i].w * factor;
        if new_w < 0.0 {
            return Err(Error::Config(format!(
                "perfusion scaling of `{name}` by {factor} yields negative w"
            )));
        }
        self.tissues[i].w = new_w;
        Ok(())
    }
}
