//! Boolean semantic kernel, Gram matrices and kernel-PCA context vectors.

mod gram;
pub mod jacobi;
mod pca;
mod signature;

pub use gram::{gram_matrix, gram_matrix_with, signatures, GramMatrix};
pub use pca::{
    center_gram, kernel_pca_fit, load_gram, save_gram, ContextVector, GramManifest, PcaManifest, PcaModel,
    PCA_FORMAT_VERSION,
};
pub use signature::{agreement, jaccard, kernel, signature, signature_on, KernelMode, SemanticSignature};

use crate::error::Result;
use crate::logic::Formula;

/// Kernel value and context-vector distance for every pair of `formulas`,
/// as used for correlation plots.
pub fn kernel_distance_pairs(formulas: &[Formula], pca: &PcaModel) -> Result<Vec<(f64, f64)>> {
    let sigs = signatures(formulas, pca.n, pca.mode, crate::par::Execution::default())?;
    let ys = sigs.iter().map(|s| pca.embed_signature(s)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(formulas.len() * formulas.len().saturating_sub(1) / 2);
    for i in 0..formulas.len() {
        for j in i + 1..formulas.len() {
            let d = ys[i].iter().zip(&ys[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            out.push((signature::raw_kernel(&sigs[i].values, &sigs[j].values), d));
        }
    }
    Ok(out)
}

/// CSV with header `kernel,distance`.
pub fn kernel_distance_csv(pairs: &[(f64, f64)]) -> String {
    let mut s = String::from("kernel,distance\n");
    for (k, d) in pairs {
        s.push_str(&format!("{k},{d}\n"));
    }
    s
}
