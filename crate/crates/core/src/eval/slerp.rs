//! Spherical interpolation between a formula's posterior mean and a random
//! point of the same norm.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::nn::standard_normal;
use crate::error::{Error, Result};
use crate::logic::Formula;
use crate::model::{Autoencoder, DecodeMode};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// Smallest angle between endpoints that slerp accepts.
pub const MIN_SLERP_ANGLE: f64 = 1e-6;
const MAX_ENDPOINT_DRAWS: usize = 100;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

/// Point at fraction `t` of the great-circle arc from `z0` to `z1`.
pub fn slerp(z0: &[f64], z1: &[f64], t: f64) -> Result<Vec<f64>> {
    if z0.len() != z1.len() {
        return Err(Error::Shape { op: "slerp", detail: format!("{} vs {}", z0.len(), z1.len()) });
    }
    let omega = angle(z0, z1);
    if !(omega >= MIN_SLERP_ANGLE) {
        return Err(Error::Data(format!("endpoints are {omega:e} rad apart")));
    }
    let s = omega.sin();
    let (a, b) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(z0.iter().zip(z1).map(|(x, y)| a * x + b * y).collect())
}

/// Uniform point on the sphere of radius `‖z0‖`, redrawn while it is within
/// [`MIN_SLERP_ANGLE`] of `z0`.
pub fn random_same_norm(z0: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let r = norm(z0);
    if !(r > 0.0) {
        return Err(Error::Data("slerp needs a non-zero starting point".into()));
    }
    for _ in 0..MAX_ENDPOINT_DRAWS {
        let d = standard_normal(rng, z0.len());
        let dn = norm(&d);
        if dn == 0.0 {
            continue;
        }
        let z1: Vec<f64> = d.iter().map(|x| x * r / dn).collect();
        if angle(z0, &z1) >= MIN_SLERP_ANGLE {
            return Ok(z1);
        }
    }
    Err(Error::Data("could not draw a distinct slerp endpoint".into()))
}

/// Positions at which the depth-first type sequences differ, counting the
/// unmatched tail of the longer one.
pub fn node_edit_count(a: &Formula, b: &Formula) -> usize {
    let (ta, tb) = (a.preorder_types(), b.preorder_types());
    let common = ta.iter().zip(&tb).filter(|(x, y)| x != y).count();
    common + ta.len().abs_diff(tb.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlerpConfig {
    pub num_points: usize,
    pub decodes_per_point: usize,
    pub seed: u64,
}

impl Default for SlerpConfig {
    fn default() -> Self {
        SlerpConfig { num_points: 35, decodes_per_point: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlerpPoint {
    pub t: f64,
    pub z: Vec<f64>,
    #[serde(skip)]
    pub formula: Option<Formula>,
    /// Canonical text of the modal decode.
    pub canonical: Option<String>,
    pub valid_decodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlerpResult {
    pub anchor: String,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub omega: f64,
    pub points: Vec<SlerpPoint>,
}

impl SlerpResult {
    /// Edits between consecutive modal formulae; `None` where either side
    /// has no valid decode.
    pub fn edit_counts(&self) -> Vec<Option<usize>> {
        self.points
            .windows(2)
            .map(|w| match (&w[0].formula, &w[1].formula) {
                (Some(a), Some(b)) => Some(node_edit_count(a, b)),
                _ => None,
            })
            .collect()
    }

    /// Mean of the defined edit counts.
    pub fn mean_edit_distance(&self) -> f64 {
        let e: Vec<usize> = self.edit_counts().into_iter().flatten().collect();
        if e.is_empty() {
            f64::NAN
        } else {
            e.iter().sum::<usize>() as f64 / e.len() as f64
        }
    }

    /// `step,t,formula,edits` with one row per point; `edits` compares
    /// with the previous point.
    pub fn edits_csv(&self) -> String {
        let edits = self.edit_counts();
        let mut s = String::from("step,t,formula,edits\n");
        for (i, p) in self.points.iter().enumerate() {
            let e = if i == 0 { String::new() } else { edits[i - 1].map(|e| e.to_string()).unwrap_or_default() };
            let f = p.canonical.as_deref().unwrap_or("");
            let _ = writeln!(s, "{i},{},\"{f}\",{e}", p.t);
        }
        s
    }

    /// Left-to-right strip of the modal formulae.
    pub fn to_dot(&self) -> String {
        let edits = self.edit_counts();
        let mut s = String::from("digraph slerp {\n  rankdir=LR;\n  node [shape=box];\n");
        for (i, p) in self.points.iter().enumerate() {
            let f = p.canonical.as_deref().unwrap_or("invalid");
            let _ = writeln!(s, "  p{i} [label=\"t={:.3}\\n{}\"];", p.t, f.replace('"', "\\\""));
        }
        for (i, e) in edits.iter().enumerate() {
            let label = e.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "  p{i} -> p{} [label=\"{label}\"];", i + 1);
        }
        s.push_str("}\n");
        s
    }
}

/// Decodes evenly spaced points on the arc from the posterior mean of
/// `anchor` to a random point of equal norm.
pub fn slerp_interpolate<M: Autoencoder + ?Sized>(
    model: &M,
    anchor: &Formula,
    y: Option<&[f64]>,
    cfg: &SlerpConfig,
    exec: Execution,
) -> Result<SlerpResult> {
    if cfg.num_points < 2 || cfg.decodes_per_point == 0 {
        return Err(Error::Config("slerp needs at least two points and one decode per point".into()));
    }
    let z0 = model.posterior(anchor, y)?.mu;
    let z1 = random_same_norm(&z0, &mut stream_rng(cfg.seed, 0))?;
    let decode_seed = derive_seed(cfg.seed, 1);
    let last = (cfg.num_points - 1) as f64;
    let points = par::try_map_range(exec, cfg.num_points, |i| {
        let t = i as f64 / last;
        let z = slerp(&z0, &z1, t)?;
        let mut rng = stream_rng(decode_seed, i as u64);
        let traces = (0..cfg.decodes_per_point)
            .map(|_| model.decode(&z, y, DecodeMode::Sample(&mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let formula = super::modal_formula(&traces);
        Ok::<_, Error>(SlerpPoint {
            t,
            z,
            canonical: formula.as_ref().map(Formula::to_canonical),
            formula,
            valid_decodes: traces.iter().filter(|t| t.is_valid()).count(),
        })
    })?;
    Ok(SlerpResult { anchor: anchor.to_canonical(), omega: angle(&z0, &z1), z0, z1, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{and, not, var};

    #[test]
    fn orthogonal_midpoint() {
        let m = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-15 && (m[1] - h).abs() < 1e-15);
    }

    #[test]
    fn degenerate_arc_is_rejected() {
        assert!(slerp(&[1.0, 2.0], &[2.0, 4.0], 0.3).is_err());
        assert!(random_same_norm(&[0.0, 0.0], &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn edit_counts() {
        assert_eq!(node_edit_count(&var(1), &var(1)), 0);
        assert_eq!(node_edit_count(&var(1), &var(2)), 1);
        // & x1 x2 vs ~ x1: two positions differ plus one extra node
        assert_eq!(node_edit_count(&and(var(1), var(2)), &not(var(1))), 2);
    }
}
