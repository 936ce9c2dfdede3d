use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{enumerate_assignments, Assignment, Formula, MAX_VARS};
use crate::rng::stream_rng;

/// How valuations are collected: over every assignment, or over `samples`
/// uniform assignments drawn from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl KernelMode {
    pub fn is_exact(&self) -> bool {
        matches!(self, KernelMode::Exact)
    }

    /// The assignments a signature in this mode is evaluated on.
    pub fn assignments(&self, n: usize) -> Result<Vec<Assignment>> {
        match *self {
            KernelMode::Exact => enumerate_assignments(n),
            KernelMode::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::Config("Monte Carlo mode needs at least one sample".into()));
                }
                if n > MAX_VARS {
                    return Err(Error::Config(format!("at most {MAX_VARS} variables are supported")));
                }
                let mut rng = stream_rng(seed, 0);
                Ok((0..samples).map(|_| Assignment::new(n, rng.random::<u64>())).collect())
            }
        }
    }
}

/// Valuations (`±1`) of one formula over the assignments of a mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticSignature {
    pub values: Vec<i8>,
    pub mode: KernelMode,
    pub n: usize,
}

impl SemanticSignature {
    /// Wraps raw valuations, e.g. observed assignment outcomes. In exact mode
    /// the values must follow the enumeration order.
    pub fn from_values(values: Vec<i8>, n: usize, mode: KernelMode) -> Result<Self> {
        let expected = match mode {
            KernelMode::Exact => {
                if n > crate::logic::MAX_ENUMERATION_VARS {
                    return Err(Error::EnumerationOverflow { n, max: crate::logic::MAX_ENUMERATION_VARS });
                }
                1usize << n
            }
            KernelMode::MonteCarlo { samples, .. } => samples,
        };
        if values.len() != expected {
            return Err(Error::Data(format!("signature has {} values, expected {expected}", values.len())));
        }
        if values.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::Data("signature values must be +1 or -1".into()));
        }
        Ok(SemanticSignature { values, mode, n })
    }

    fn check_compatible(&self, other: &SemanticSignature) -> Result<()> {
        if self.mode != other.mode || self.n != other.n || self.values.len() != other.values.len() {
            return Err(Error::Mismatch(format!(
                "signatures differ in mode or size ({:?}/n={} vs {:?}/n={})",
                self.mode, self.n, other.mode, other.n
            )));
        }
        Ok(())
    }

    fn require_exact(&self) -> Result<()> {
        if !self.mode.is_exact() {
            return Err(Error::Mismatch("statistic requires exact-mode signatures".into()));
        }
        Ok(())
    }

    pub fn satisfied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Valuations of `f` over the assignments of `mode`.
pub fn signature(f: &Formula, n: usize, mode: KernelMode) -> Result<SemanticSignature> {
    let assignments = mode.assignments(n)?;
    Ok(signature_on(f, n, mode, &assignments))
}

/// Valuations of `f` over a precomputed assignment list for `mode`.
pub fn signature_on(f: &Formula, n: usize, mode: KernelMode, assignments: &[Assignment]) -> SemanticSignature {
    SemanticSignature { values: assignments.iter().map(|tau| f.evaluate(tau)).collect(), mode, n }
}

/// Mean of the elementwise product of two valuation vectors.
pub fn kernel(a: &SemanticSignature, b: &SemanticSignature) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(raw_kernel(&a.values, &b.values))
}

pub(crate) fn raw_kernel(a: &[i8], b: &[i8]) -> f64 {
    let dot: i64 = a.iter().zip(b).map(|(&x, &y)| (x as i64) * (y as i64)).sum();
    dot as f64 / a.len() as f64
}

/// Fraction of assignments on which the two formulae take the same value.
pub fn agreement(a: &SemanticSignature, b: &SemanticSignature) -> Result<f64> {
    a.check_compatible(b)?;
    a.require_exact()?;
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.values.len() as f64)
}

/// Jaccard index of the satisfying sets; two unsatisfiable formulae score 1.
pub fn jaccard(a: &SemanticSignature, b: &SemanticSignature) -> Result<f64> {
    a.check_compatible(b)?;
    a.require_exact()?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        inter += (x == 1 && y == 1) as usize;
        union += (x == 1 || y == 1) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
