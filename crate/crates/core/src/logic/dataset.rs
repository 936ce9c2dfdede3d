//! Dataset files: UTF-8 text, one canonical formula per line, preceded by
//! `# key=value` header lines.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::logic::formula::Formula;
use crate::logic::generate::GeneratorConfig;
use crate::logic::parse::parse;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub n: usize,
    pub p_leaf: Option<f64>,
    pub max_nodes: Option<usize>,
    pub seed: Option<u64>,
    pub count: usize,
}

impl DatasetHeader {
    pub fn from_generator(cfg: &GeneratorConfig, count: usize) -> Self {
        DatasetHeader {
            n: cfg.n,
            p_leaf: Some(cfg.p_leaf),
            max_nodes: Some(cfg.max_nodes),
            seed: Some(cfg.seed),
            count,
        }
    }
}

pub fn write_dataset<W: Write>(mut out: W, header: &DatasetHeader, formulas: &[Formula]) -> Result<()> {
    writeln!(out, "# n={}", header.n)?;
    if let Some(p) = header.p_leaf {
        writeln!(out, "# p_leaf={p}")?;
    }
    if let Some(m) = header.max_nodes {
        writeln!(out, "# max_nodes={m}")?;
    }
    if let Some(s) = header.seed {
        writeln!(out, "# seed={s}")?;
    }
    writeln!(out, "# count={}", formulas.len())?;
    for f in formulas {
        writeln!(out, "{}", f.to_canonical())?;
    }
    Ok(())
}

/// Reads a dataset. `n` falls back to `default_n` when the header omits it.
pub fn read_dataset<R: BufRead>(input: R, default_n: Option<usize>) -> Result<(DatasetHeader, Vec<Formula>)> {
    let mut n = default_n;
    let (mut p_leaf, mut max_nodes, mut seed, mut count) = (None, None, None, None);
    let mut lines = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = rest.trim().split_once('=') {
                let value = value.trim();
                let bad = || Error::Data(format!("line {}: bad header value {value:?}", lineno + 1));
                match key.trim() {
                    "n" => n = Some(value.parse().map_err(|_| bad())?),
                    "p_leaf" => p_leaf = Some(value.parse().map_err(|_| bad())?),
                    "max_nodes" => max_nodes = Some(value.parse().map_err(|_| bad())?),
                    "seed" => seed = Some(value.parse().map_err(|_| bad())?),
                    "count" => count = Some(value.parse::<usize>().map_err(|_| bad())?),
                    _ => {}
                }
            }
            continue;
        }
        lines.push((lineno + 1, trimmed.to_string()));
    }
    let n = n.ok_or_else(|| Error::Data("dataset header does not state n".into()))?;
    let formulas = lines
        .into_iter()
        .map(|(lineno, text)| parse(&text, n).map_err(|e| Error::Data(format!("line {lineno}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = count {
        if c != formulas.len() {
            return Err(Error::Data(format!("header declares {c} formulae, found {}", formulas.len())));
        }
    }
    Ok((DatasetHeader { n, p_leaf, max_nodes, seed, count: formulas.len() }, formulas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::generate::generate_dataset;

    #[test]
    fn write_then_read() {
        let cfg = GeneratorConfig { seed: 5, ..Default::default() };
        let fs = generate_dataset(&cfg, 50).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &DatasetHeader::from_generator(&cfg, fs.len()), &fs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# n=3\n# p_leaf=0.4\n"));
        let (h, back) = read_dataset(&buf[..], None).unwrap();
        assert_eq!(h.n, 3);
        assert_eq!(h.seed, Some(5));
        assert_eq!(back, fs);
    }

    #[test]
    fn count_mismatch_and_bad_lines() {
        assert!(read_dataset(&b"# n=2\n# count=3\nx1\n"[..], None).is_err());
        assert!(read_dataset(&b"# n=2\nx3\n"[..], None).is_err());
        assert!(read_dataset(&b"x1\n"[..], None).is_err());
        assert_eq!(read_dataset(&b"x1\n"[..], Some(1)).unwrap().1.len(), 1);
    }
}
