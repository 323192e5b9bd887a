//! Versioned solution files.
//!
//! Layout: `b"MSBS"`, `u32` format version, `u64` header length, the JSON
//! header, then one little-endian `f64` block per scaling vector in canonical
//! node order. Kernels are not stored; they are rebuilt from the dataset and
//! checked against `kernel_fingerprint`.

use std::io::{Read, Write};
use std::path::PathBuf;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Normalization, StructureKind};
use crate::model::{GraphStructure, NodeId};
use crate::sinkhorn::SolverConfig;

pub const MAGIC: &[u8; 4] = b"MSBS";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the JSON header, to reject garbage before allocating.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionHeader {
    pub structure: StructureKind,
    pub cores: usize,
    pub snapshots: usize,
    /// Barycenter support size; 0 unless `structure` is `bc`.
    pub n0: usize,
    pub times: Vec<f64>,
    pub config: SolverConfig,
    /// Where the profile dataset was read from.
    pub dataset: PathBuf,
    pub strict: bool,
    pub normalize: bool,
    pub seed: u64,
    pub normalization: Option<Normalization>,
    pub kernel_fingerprint: String,
    pub iterations: usize,
    pub converged: bool,
    /// `(core, snapshot, length)` of each stored block, in file order.
    pub blocks: Vec<(usize, usize, usize)>,
}

impl SolutionHeader {
    pub fn graph(&self) -> Result<GraphStructure> {
        match self.structure {
            StructureKind::Path => GraphStructure::path(self.snapshots),
            StructureKind::Bc => GraphStructure::barycentric(self.cores, self.snapshots, self.n0),
            StructureKind::Sp => GraphStructure::series_parallel(self.cores, self.snapshots),
        }
    }
}

pub fn write_solution<W: Write>(
    mut out: W,
    header: &SolutionHeader,
    scalings: &[Array1<f64>],
) -> Result<()> {
    if header.blocks.len() != scalings.len()
        || header
            .blocks
            .iter()
            .zip(scalings)
            .any(|(b, u)| b.2 != u.len())
    {
        return Err(Error::Internal(
            "solution header does not describe the scaling blocks".into(),
        ));
    }
    let json = serde_json::to_vec(header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for u in scalings {
        for x in u {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_solution<R: Read>(mut input: R) -> Result<(SolutionHeader, Vec<Array1<f64>>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a solution file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "solution format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(Error::invalid(format!(
            "solution header of {len} bytes is implausible"
        )));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: SolutionHeader = serde_json::from_slice(&json)?;

    let st = header.graph()?;
    let nodes = st.nodes();
    if header.blocks.len() != nodes.len()
        || header
            .blocks
            .iter()
            .zip(&nodes)
            .any(|(b, n)| NodeId::new(b.0, b.1) != *n || b.2 == 0)
    {
        return Err(Error::invalid(
            "solution blocks do not match the declared structure",
        ));
    }
    let mut scalings = Vec::with_capacity(nodes.len());
    for &(_, _, n) in &header.blocks {
        let mut raw = vec![0u8; n * 8];
        input.read_exact(&mut raw)?;
        let u: Array1<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        scalings.push(u);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::invalid(
            "trailing bytes after the last scaling block",
        ));
    }
    Ok((header, scalings))
}
