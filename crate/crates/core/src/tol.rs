//! Global numerical tolerances.
//!
//! Defaults leave double-precision headroom for dense problems up to
//! dimension ~1000. The `MXCONC_TOL` environment variable overrides both
//! tolerances with a single value.

use std::sync::atomic::{AtomicU64, Ordering};

const DEFAULT_HERMITICITY: f64 = 1e-12;
const DEFAULT_UNITARITY: f64 = 1e-10;

static HERMITICITY: AtomicU64 = AtomicU64::new(u64::MAX);
static UNITARITY: AtomicU64 = AtomicU64::new(u64::MAX);

fn load(cell: &AtomicU64, default: f64) -> f64 {
    let bits = cell.load(Ordering::Relaxed);
    if bits == u64::MAX {
        default
    } else {
        f64::from_bits(bits)
    }
}

/// Relative tolerance for accepting a matrix as Hermitian.
pub fn hermiticity() -> f64 {
    load(&HERMITICITY, DEFAULT_HERMITICITY)
}

/// Frobenius tolerance for accepting a matrix as unitary.
pub fn unitarity() -> f64 {
    load(&UNITARITY, DEFAULT_UNITARITY)
}

pub fn set_hermiticity(tol: f64) {
    HERMITICITY.store(tol.to_bits(), Ordering::Relaxed);
}

pub fn set_unitarity(tol: f64) {
    UNITARITY.store(tol.to_bits(), Ordering::Relaxed);
}

/// Apply the `MXCONC_TOL` override if the variable is set and parses.
pub fn apply_env_override() {
    if let Ok(s) = std::env::var("MXCONC_TOL") {
        if let Ok(v) = s.trim().parse::<f64>() {
            if v.is_finite() && v > 0.0 {
                set_hermiticity(v);
                set_unitarity(v);
            }
        }
    }
}
