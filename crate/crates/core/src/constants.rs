//! Physical constants and unit conversions.
//!
//! Fields are carried in V/cm everywhere in this crate; frequency-equivalent
//! fields (MHz) appear only at presentation boundaries, where a susceptibility
//! multiplies them. Charge densities are specified in ppm of carbon lattice
//! sites and converted once, here.

use serde::{Deserialize, Serialize};

use crate::FieldError;

/// CODATA values plus the two diamond-specific constants the charge model
/// needs (relative permittivity and lattice-site density).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// Vacuum permittivity (F/m).
    pub vacuum_permittivity: f64,
    /// Relative permittivity of diamond (dimensionless).
    pub relative_permittivity_diamond: f64,
    /// Elementary charge (C).
    pub elementary_charge: f64,
    /// Planck constant (J·s).
    pub planck_h: f64,
    /// Bohr magneton (J/T).
    pub bohr_magneton: f64,
    /// Vacuum permeability (T·m/A).
    pub vacuum_permeability: f64,
    /// Electron g-factor (dimensionless).
    pub electron_g_factor: f64,
    /// Carbon lattice-site density of diamond (cm⁻³); converts ppm to
    /// volumetric density.
    pub diamond_atom_density_cm3: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            vacuum_permittivity: 8.854_187_812_8e-12,
            relative_permittivity_diamond: 5.7,
            elementary_charge: 1.602_176_634e-19,
            planck_h: 6.626_070_15e-34,
            bohr_magneton: 9.274_010_078_3e-24,
            vacuum_permeability: 1.256_637_062_12e-6,
            electron_g_factor: 2.0,
            diamond_atom_density_cm3: 1.76e23,
        }
    }
}

impl PhysicalConstants {
    /// Checks that every constant is strictly positive.
    pub fn validate(&self) -> Result<(), FieldError> {
        let fields = [
            ("vacuum_permittivity", self.vacuum_permittivity),
            (
                "relative_permittivity_diamond",
                self.relative_permittivity_diamond,
            ),
            ("elementary_charge", self.elementary_charge),
            ("planck_h", self.planck_h),
            ("bohr_magneton", self.bohr_magneton),
            ("vacuum_permeability", self.vacuum_permeability),
            ("electron_g_factor", self.electron_g_factor),
            ("diamond_atom_density_cm3", self.diamond_atom_density_cm3),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(FieldError::InvalidConstant {
                    name,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Coulomb prefactor e/(4πε₀ε_r) in V·m (multiply by 1/r² in meters for
    /// the field of one elementary charge in diamond, in V/m).
    pub fn coulomb_prefactor_vm(&self) -> f64 {
        self.elementary_charge
            / (4.0
                * std::f64::consts::PI
                * self.vacuum_permittivity
                * self.relative_permittivity_diamond)
    }
}

/// A charge (or NV) density, stored in ppm of lattice sites.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChargeDensity {
    ppm: f64,
}

impl ChargeDensity {
    pub fn from_ppm(ppm: f64) -> Result<Self, FieldError> {
        if !ppm.is_finite() || ppm < 0.0 {
            return Err(FieldError::NegativeDensity { ppm });
        }
        Ok(Self { ppm })
    }

    pub fn ppm(&self) -> f64 {
        self.ppm
    }

    /// Volumetric density in cm⁻³: ppm × 10⁻⁶ × diamond lattice-site density.
    pub fn per_cm3(&self, consts: &PhysicalConstants) -> f64 {
        self.ppm * 1e-6 * consts.diamond_atom_density_cm3
    }

    /// Volumetric density in m⁻³.
    pub fn per_m3(&self, consts: &PhysicalConstants) -> f64 {
        self.per_cm3(consts) * 1e6
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            ppm: self.ppm * factor,
        }
    }
}
