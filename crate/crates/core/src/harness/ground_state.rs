use serde::Serialize;

use crate::dmrg::{build_tfim_mpo, dmrg_ground_state, exact_diag, MAX_EXACT_DIM};
use crate::error::{Error, Result};

/// Largest accepted gap between the DMRG and exact energies.
pub const DMRG_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DmrgRow {
    pub n: usize,
    pub j: f64,
    pub h: f64,
    pub chi: usize,
    pub sweeps: usize,
    pub e_dmrg: f64,
    pub e_exact: Option<f64>,
    pub delta: Option<f64>,
    pub sweep_energies: Vec<f64>,
    pub converged: bool,
}

impl DmrgRow {
    /// True when no reference was computed or the gap is within tolerance.
    pub fn passed(&self) -> bool {
        self.delta.map_or(true, |d| d <= DMRG_TOLERANCE)
    }
}

/// Transverse-field Ising ground state by DMRG, optionally against exact
/// diagonalization.
pub fn dmrg_row(n: usize, j: f64, h: f64, chi: usize, sweeps: usize, exact: bool) -> Result<DmrgRow> {
    if exact && (n >= usize::BITS as usize || 1usize << n > MAX_EXACT_DIM) {
        return Err(Error::Capability(format!("exact diagonalization is limited to {MAX_EXACT_DIM} states, N = {n} needs 2^{n}")));
    }
    let mpo = build_tfim_mpo::<f64>(n, j, h)?;
    let st = dmrg_ground_state(&mpo, chi, sweeps)?;
    let e_exact = if exact { Some(exact_diag(&mpo)?.energy) } else { None };
    Ok(DmrgRow {
        n,
        j,
        h,
        chi,
        sweeps,
        e_dmrg: st.energy,
        e_exact,
        delta: e_exact.map(|e| (st.energy - e).abs()),
        sweep_energies: st.sweep_energies,
        converged: st.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_chain_matches_exact() {
        let row = dmrg_row(6, 1.0, 0.7, 8, 4, true).unwrap();
        assert!(row.passed(), "{row:?}");
        assert_eq!(row.sweep_energies.len(), 4);
    }

    #[test]
    fn exact_reference_is_capped() {
        assert!(matches!(dmrg_row(13, 1.0, 1.0, 4, 1, true), Err(Error::Capability(_))));
        assert!(dmrg_row(13, 1.0, 1.0, 4, 1, false).unwrap().e_exact.is_none());
    }
}
