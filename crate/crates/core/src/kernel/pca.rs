//! Kernel PCA over a Gram matrix of anchor formulae.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{fingerprint, read_f64_le, write_f64_le};
use crate::error::{Error, Result};
use crate::kernel::gram::GramMatrix;
use crate::kernel::jacobi::{symmetric_eigen, DEFAULT_MAX_SWEEPS, DEFAULT_TOLERANCE};
use crate::kernel::signature::{raw_kernel, signature_on, KernelMode, SemanticSignature};
use crate::logic::{parse, Formula};

/// Semantic context vector: projection of a kernel row onto the principal
/// components.
pub type ContextVector = Vec<f64>;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct PcaModel {
    pub anchors: Vec<String>,
    pub n: usize,
    pub mode: KernelMode,
    pub k: usize,
    /// All eigenvalues of the centered Gram matrix, descending, clamped at 0.
    pub eigenvalues: Vec<f64>,
    /// `eigenvalue_i / Σ eigenvalues` for every component.
    pub explained_variance: Vec<f64>,
    /// Row-major `N x k`: eigenvector `j` scaled by `eigenvalue_j^{-1/2}`.
    components: Vec<f64>,
    eigenvectors: Vec<f64>,
    gram: GramMatrix,
    col_means: Vec<f64>,
    total_mean: f64,
    anchor_signatures: Vec<SemanticSignature>,
}

/// Double-centers a row-major square matrix.
pub fn center_gram(values: &[f64], size: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let col_means: Vec<f64> =
        (0..size).map(|j| (0..size).map(|i| values[i * size + j]).sum::<f64>() / size as f64).collect();
    let total_mean = col_means.iter().sum::<f64>() / size as f64;
    let mut centered = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            // the matrix is symmetric, so row means equal column means
            centered[i * size + j] = values[i * size + j] - col_means[i] - col_means[j] + total_mean;
        }
    }
    (centered, col_means, total_mean)
}

/// Fits kernel PCA keeping `k` components.
pub fn kernel_pca_fit(gram: &GramMatrix, k: usize) -> Result<PcaModel> {
    let size = gram.size();
    if k == 0 || k > size {
        return Err(Error::Config(format!("component count {k} must lie in 1..={size}")));
    }
    let anchors: Vec<Formula> = gram
        .anchors
        .iter()
        .map(|a| parse(a, gram.n).map_err(|e| Error::Data(format!("anchor {a:?}: {e}"))))
        .collect::<Result<_>>()?;
    let assignments = gram.mode.assignments(gram.n)?;
    let anchor_signatures = anchors.iter().map(|f| signature_on(f, gram.n, gram.mode, &assignments)).collect();
    let (centered, col_means, total_mean) = center_gram(&gram.values, size);
    let eig = symmetric_eigen(&centered, size, DEFAULT_TOLERANCE, DEFAULT_MAX_SWEEPS)?;
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let explained_variance = eigenvalues.iter().map(|&l| if total > 0.0 { l / total } else { 0.0 }).collect();
    let mut model = PcaModel {
        anchors: gram.anchors.clone(),
        n: gram.n,
        mode: gram.mode,
        k,
        eigenvalues,
        explained_variance,
        components: Vec::new(),
        eigenvectors: eig.vectors,
        gram: gram.clone(),
        col_means,
        total_mean,
        anchor_signatures,
    };
    model.components = model.scaled_components(k);
    Ok(model)
}

impl PcaModel {
    fn scaled_components(&self, k: usize) -> Vec<f64> {
        let size = self.anchors.len();
        let lambda_max = self.eigenvalues.first().copied().unwrap_or(0.0);
        let scales: Vec<f64> = self.eigenvalues[..k]
            .iter()
            .map(|&l| if l > RANK_CUTOFF * lambda_max && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 })
            .collect();
        let mut out = vec![0.0; size * k];
        for i in 0..size {
            for j in 0..k {
                out[i * k + j] = self.eigenvectors[i * size + j] * scales[j];
            }
        }
        out
    }

    /// Same fit with a different component count.
    pub fn with_components(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.anchors.len() {
            return Err(Error::Config(format!("component count {k} must lie in 1..={}", self.anchors.len())));
        }
        let mut m = self.clone();
        m.k = k;
        m.components = m.scaled_components(k);
        Ok(m)
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    /// Sum of the first `k` explained-variance ratios.
    pub fn cumulative_explained(&self, k: usize) -> f64 {
        self.explained_variance.iter().take(k).sum()
    }

    /// Projects a raw kernel row (kernel of one formula against each anchor).
    pub fn project_row(&self, row: &[f64]) -> Result<ContextVector> {
        let size = self.anchors.len();
        if row.len() != size {
            return Err(Error::Shape { op: "project_row", detail: format!("row of {} for {size} anchors", row.len()) });
        }
        let row_mean = row.iter().sum::<f64>() / size as f64;
        let mut y = vec![0.0; self.k];
        for (l, &kl) in row.iter().enumerate() {
            let c = kl - self.col_means[l] - row_mean + self.total_mean;
            let comps = &self.components[l * self.k..(l + 1) * self.k];
            for (yj, &a) in y.iter_mut().zip(comps) {
                *yj += c * a;
            }
        }
        Ok(y)
    }

    pub fn anchor_signatures(&self) -> &[SemanticSignature] {
        &self.anchor_signatures
    }

    /// [`PcaModel::project_row`] written as `y = A·row + c`; returns `A`
    /// (row-major `k x N`) and `c`.
    pub fn projection_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let size = self.anchors.len();
        let k = self.k;
        let col_sums: Vec<f64> = (0..k).map(|j| (0..size).map(|l| self.components[l * k + j]).sum()).collect();
        let mut a = vec![0.0; k * size];
        let mut c = vec![0.0; k];
        for j in 0..k {
            for l in 0..size {
                let comp = self.components[l * k + j];
                a[j * size + l] = comp - col_sums[j] / size as f64;
                c[j] += (self.total_mean - self.col_means[l]) * comp;
            }
        }
        (a, c)
    }

    /// Kernel row of a signature against the anchors.
    pub fn kernel_row(&self, sig: &SemanticSignature) -> Result<Vec<f64>> {
        if sig.mode != self.mode || sig.n != self.n {
            return Err(Error::Mismatch(format!(
                "signature ({:?}, n={}) does not match the PCA model ({:?}, n={})",
                sig.mode, sig.n, self.mode, self.n
            )));
        }
        Ok(self.anchor_signatures.iter().map(|a| raw_kernel(&sig.values, &a.values)).collect())
    }

    /// Context vector of a formula.
    pub fn embed(&self, f: &Formula) -> Result<ContextVector> {
        if f.max_var() > self.n {
            return Err(Error::Data(format!("formula {f} uses variables beyond x{}", self.n)));
        }
        let assignments = self.mode.assignments(self.n)?;
        self.embed_signature(&signature_on(f, self.n, self.mode, &assignments))
    }

    /// Context vector from valuations alone.
    pub fn embed_signature(&self, sig: &SemanticSignature) -> Result<ContextVector> {
        self.project_row(&self.kernel_row(sig)?)
    }

    /// Projections of the anchors themselves, row `i` for anchor `i`.
    pub fn training_projection(&self) -> Vec<ContextVector> {
        (0..self.anchors.len()).map(|i| self.project_row(self.gram.row(i)).expect("gram rows match")).collect()
    }

    /// Identifies anchors, mode and component count.
    pub fn fingerprint(&self) -> String {
        let mode = serde_json::to_string(&self.mode).unwrap_or_default();
        fingerprint(&format!("{}\n{}\n{}\n{}", self.anchors.join("\n"), self.n, mode, self.k))
    }

    /// Writes `manifest.json`, `gram.bin` and `eigenvectors.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = PcaManifest {
            format_version: PCA_FORMAT_VERSION,
            anchors: self.anchors.clone(),
            n: self.n,
            mode: self.mode,
            k: self.k,
            eigenvalues: self.eigenvalues.clone(),
            explained_variance: self.explained_variance.clone(),
            gram_file: "gram.bin".into(),
            eigenvectors_file: "eigenvectors.bin".into(),
            fingerprint: self.fingerprint(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        write_f64_le(&dir.join(&manifest.gram_file), &self.gram.values)?;
        write_f64_le(&dir.join(&manifest.eigenvectors_file), &self.eigenvectors)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<PcaModel> {
        let manifest: PcaManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != PCA_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported PCA format version {}", manifest.format_version)));
        }
        let size = manifest.anchors.len();
        let values = read_f64_le(&dir.join(&manifest.gram_file))?;
        let eigenvectors = read_f64_le(&dir.join(&manifest.eigenvectors_file))?;
        if values.len() != size * size || eigenvectors.len() != size * size || manifest.eigenvalues.len() != size {
            return Err(Error::Data("PCA files do not match the manifest's anchor count".into()));
        }
        let gram = GramMatrix { anchors: manifest.anchors.clone(), n: manifest.n, mode: manifest.mode, values };
        let anchors: Vec<Formula> = manifest
            .anchors
            .iter()
            .map(|a| parse(a, manifest.n).map_err(|e| Error::Data(format!("anchor {a:?}: {e}"))))
            .collect::<Result<_>>()?;
        let assignments = manifest.mode.assignments(manifest.n)?;
        let (_, col_means, total_mean) = center_gram(&gram.values, size);
        let mut model = PcaModel {
            anchors: manifest.anchors,
            n: manifest.n,
            mode: manifest.mode,
            k: manifest.k,
            eigenvalues: manifest.eigenvalues,
            explained_variance: manifest.explained_variance,
            components: Vec::new(),
            eigenvectors,
            gram,
            col_means,
            total_mean,
            anchor_signatures: anchors
                .iter()
                .map(|f| signature_on(f, manifest.n, manifest.mode, &assignments))
                .collect(),
        };
        model.components = model.scaled_components(model.k);
        Ok(model)
    }
}

pub const PCA_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaManifest {
    pub format_version: u32,
    pub anchors: Vec<String>,
    pub n: usize,
    pub mode: KernelMode,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub gram_file: String,
    pub eigenvectors_file: String,
    pub fingerprint: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramManifest {
    pub anchors: Vec<String>,
    pub n: usize,
    pub mode: KernelMode,
    pub values_file: String,
}

/// Writes a Gram matrix as `manifest.json` + `gram.bin` into `dir`.
pub fn save_gram(gram: &GramMatrix, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest =
        GramManifest { anchors: gram.anchors.clone(), n: gram.n, mode: gram.mode, values_file: "gram.bin".into() };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    write_f64_le(&dir.join(&manifest.values_file), &gram.values)
}

pub fn load_gram(dir: &Path) -> Result<GramMatrix> {
    let manifest: GramManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let values = read_f64_le(&dir.join(&manifest.values_file))?;
    if values.len() != manifest.anchors.len() * manifest.anchors.len() {
        return Err(Error::Data("gram file does not match the manifest's anchor count".into()));
    }
    Ok(GramMatrix { anchors: manifest.anchors, n: manifest.n, mode: manifest.mode, values })
}
