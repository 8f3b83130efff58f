//! Discrete cell architectures and their text format.
//!
//! ```text
//! genotype v1
//! normal:
//! 0->2:sep_conv_3x3
//! 1->2:skip_connect
//! ...
//! reduce:
//! ...
//! ```
//!
//! Entries are sorted by (dst, src); every intermediate node `2..n-1` has
//! exactly two in-edges; `none` never appears. The format is canonical: a
//! file parses only if it is byte-identical to the serialization of the
//! genotype it describes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ops::OperatorKind;

pub const HEADER: &str = "genotype v1";
/// In-edges kept per intermediate node.
pub const IN_DEGREE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenoEdge {
    pub src: usize,
    pub dst: usize,
    pub op: OperatorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub normal: Vec<GenoEdge>,
    pub reduce: Vec<GenoEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellType {
    Normal,
    Reduce,
}

impl CellType {
    /// 0 for normal, 1 for reduce.
    pub fn from_index(i: usize) -> CellType {
        if i == 0 {
            CellType::Normal
        } else {
            CellType::Reduce
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::Normal => "normal",
            CellType::Reduce => "reduce",
        }
    }
}

impl Genotype {
    pub fn edges(&self, cell: CellType) -> &[GenoEdge] {
        match cell {
            CellType::Normal => &self.normal,
            CellType::Reduce => &self.reduce,
        }
    }

    /// Total node count per cell (two inputs, intermediates, one output).
    pub fn nodes(&self) -> usize {
        self.normal.iter().chain(&self.reduce).map(|e| e.dst).max().map_or(3, |d| d + 2)
    }

    /// Checks the structural invariants; see the module docs.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        for cell in [CellType::Normal, CellType::Reduce] {
            validate_section(cell.name(), self.edges(cell), n)?;
        }
        Ok(())
    }

    /// Same edges with every operator replaced by `op`.
    pub fn relabel(&self, op: OperatorKind) -> Genotype {
        let map = |es: &[GenoEdge]| es.iter().map(|e| GenoEdge { op, ..*e }).collect();
        Genotype {
            normal: map(&self.normal),
            reduce: map(&self.reduce),
        }
    }

    /// Canonical text; the input must be valid.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for cell in [CellType::Normal, CellType::Reduce] {
            out.push_str(cell.name());
            out.push_str(":\n");
            let mut edges = self.edges(cell).to_vec();
            edges.sort_by_key(|e| (e.dst, e.src));
            for e in edges {
                let _ = writeln!(out, "{}->{}:{}", e.src, e.dst, e.op);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Genotype> {
        let err = |line: usize, msg: String| CoreError::Genotype(format!("line {line}: {msg}"));
        if !text.ends_with('\n') {
            return Err(CoreError::Genotype("missing final newline".into()));
        }
        let lines: Vec<&str> = text[..text.len() - 1].split('\n').collect();
        if lines.first() != Some(&HEADER) {
            return Err(err(1, format!("expected header {HEADER:?}")));
        }
        if lines.get(1) != Some(&"normal:") {
            return Err(err(2, "expected \"normal:\"".into()));
        }
        let Some(split) = lines.iter().position(|l| *l == "reduce:") else {
            return Err(CoreError::Genotype("missing \"reduce:\" section".into()));
        };
        let mut sections = [Vec::new(), Vec::new()];
        for (i, line) in lines.iter().enumerate().skip(2) {
            if i == split {
                continue;
            }
            let edge = parse_edge(line).map_err(|m| err(i + 1, m))?;
            sections[usize::from(i > split)].push(edge);
        }
        let [normal, reduce] = sections;
        let g = Genotype { normal, reduce };
        g.validate()?;
        Ok(g)
    }
}

fn parse_index(s: &str) -> Option<usize> {
    let canonical = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    if canonical {
        s.parse().ok()
    } else {
        None
    }
}

fn parse_edge(line: &str) -> std::result::Result<GenoEdge, String> {
    let bad = || format!("malformed edge {line:?}, expected src->dst:op");
    let (nodes, op) = line.split_once(':').ok_or_else(bad)?;
    let (src, dst) = nodes.split_once("->").ok_or_else(bad)?;
    let src = parse_index(src).ok_or_else(bad)?;
    let dst = parse_index(dst).ok_or_else(bad)?;
    let op: OperatorKind = op.parse().map_err(|e: CoreError| e.to_string())?;
    Ok(GenoEdge { src, dst, op })
}

fn validate_section(name: &str, edges: &[GenoEdge], n: usize) -> Result<()> {
    let fail = |msg: String| Err(CoreError::Genotype(format!("{name} cell: {msg}")));
    if edges.is_empty() {
        return fail("no edges".into());
    }
    let mut in_edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in edges {
        if e.op == OperatorKind::Zero {
            return fail(format!("edge {}->{} uses \"none\"", e.src, e.dst));
        }
        if e.dst < 2 || e.dst + 1 >= n {
            return fail(format!("edge {}->{} targets a non-intermediate node", e.src, e.dst));
        }
        if e.src >= e.dst {
            return fail(format!("edge {}->{} does not point forward", e.src, e.dst));
        }
        in_edges.entry(e.dst).or_default().push(e.src);
    }
    for node in 2..n - 1 {
        let count = in_edges.get(&node).map_or(0, Vec::len);
        if count != IN_DEGREE {
            return fail(format!("node {node} has {count} in-edges, expected {IN_DEGREE}"));
        }
    }
    for (i, e) in edges.iter().enumerate() {
        if edges[..i].iter().any(|o| (o.src, o.dst) == (e.src, e.dst)) {
            return fail(format!("duplicate edge {}->{}", e.src, e.dst));
        }
        if i > 0 && (edges[i - 1].dst, edges[i - 1].src) > (e.dst, e.src) {
            return fail(format!("edge {}->{} out of (dst, src) order", e.src, e.dst));
        }
    }
    Ok(())
}
