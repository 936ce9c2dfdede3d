use crate::error::{Error, Result};
use crate::kernel::signature::{raw_kernel, signature_on, KernelMode, SemanticSignature};
use crate::logic::Formula;
use crate::par::{self, Execution};

/// Pairwise kernel values over an ordered anchor list.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    /// Canonical strings of the anchors, in row order.
    pub anchors: Vec<String>,
    pub n: usize,
    pub mode: KernelMode,
    /// Row-major `N x N`.
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.anchors.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.values[i * n..(i + 1) * n]
    }

    /// Smallest eigenvalue, computed with the Jacobi solver.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let e = crate::kernel::jacobi::symmetric_eigen(
            &self.values,
            self.size(),
            crate::kernel::jacobi::DEFAULT_TOLERANCE,
            crate::kernel::jacobi::DEFAULT_MAX_SWEEPS,
        )?;
        Ok(e.values.last().copied().unwrap_or(0.0))
    }
}

/// Signatures of many formulae sharing one assignment list.
pub fn signatures(formulas: &[Formula], n: usize, mode: KernelMode, exec: Execution) -> Result<Vec<SemanticSignature>> {
    let assignments = mode.assignments(n)?;
    if let Some(f) = formulas.iter().find(|f| f.max_var() > n) {
        return Err(Error::Data(format!("formula {f} uses variables beyond x{n}")));
    }
    Ok(par::map_slice(exec, formulas, |_, f| signature_on(f, n, mode, &assignments)))
}

pub fn gram_matrix(anchors: &[Formula], n: usize, mode: KernelMode) -> Result<GramMatrix> {
    gram_matrix_with(anchors, n, mode, Execution::default())
}

/// Gram matrix with an explicit execution strategy. Rows are computed
/// independently, so results do not depend on `exec`.
pub fn gram_matrix_with(anchors: &[Formula], n: usize, mode: KernelMode, exec: Execution) -> Result<GramMatrix> {
    if anchors.is_empty() {
        return Err(Error::Data("gram matrix needs at least one anchor".into()));
    }
    let sigs = signatures(anchors, n, mode, exec)?;
    Ok(gram_from_signatures(anchors, &sigs, n, mode, exec))
}

pub(crate) fn gram_from_signatures(
    anchors: &[Formula],
    sigs: &[SemanticSignature],
    n: usize,
    mode: KernelMode,
    exec: Execution,
) -> GramMatrix {
    let size = sigs.len();
    let rows = par::map_range(exec, size, |i| {
        (0..size).map(|j| raw_kernel(&sigs[i].values, &sigs[j].values)).collect::<Vec<f64>>()
    });
    GramMatrix {
        anchors: anchors.iter().map(Formula::to_canonical).collect(),
        n,
        mode,
        values: rows.into_iter().flatten().collect(),
    }
}
