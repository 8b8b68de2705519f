//! Receptive-field coverage analysis: per-cell branch-support multiplicity
//! over the K_max x K_max window. A cell's count is the number of branches
//! whose tap set includes it (0/1 per branch, independent of weight
//! magnitude). Axial-strip branches contribute their composed rank-1 k x k
//! support; square branches contribute their dilation-spaced grids.

use crate::error::{Error, Result};
use crate::pks::{BranchKind, BranchSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    k_max: usize,
    counts: Vec<u32>,
}

impl CoverageMap {
    pub fn new(k_max: usize, counts: Vec<u32>) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Config("coverage map needs k_max >= 1".into()));
        }
        if counts.len() != k_max * k_max {
            return Err(Error::DataLength {
                expected: k_max * k_max,
                got: counts.len(),
            });
        }
        Ok(Self { k_max, counts })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.k_max + j]
    }

    pub fn center(&self) -> u32 {
        let c = self.k_max / 2;
        self.get(c, c)
    }
}

/// Marks each branch's tap set and sums the marks per cell.
pub fn coverage_map(branches: &[BranchSpec], k_max: usize) -> Result<CoverageMap> {
    if k_max == 0 || k_max.is_multiple_of(2) {
        return Err(Error::EvenKernel {
            kh: k_max,
            kw: k_max,
        });
    }
    let mut counts = vec![0u32; k_max * k_max];
    let c0 = k_max / 2;
    for spec in branches {
        spec.validate()?;
        if spec.span() > k_max {
            return Err(Error::SpanOverflow {
                span: spec.span(),
                k_max,
            });
        }
        let (k, d) = match spec.kind {
            // composed rank-1 support: a dense k x k block
            BranchKind::AxialStrip => (spec.k, 1),
            BranchKind::SparseSquare | BranchKind::DenseSquare => (spec.k, spec.d),
        };
        let c1 = k / 2;
        for i in 0..k {
            let row = c0 + i * d - c1 * d;
            for j in 0..k {
                let col = c0 + j * d - c1 * d;
                counts[row * k_max + col] += 1;
            }
        }
    }
    CoverageMap::new(k_max, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// One character per cell, row per line. Counts above 9 render as '#'.
    TextGrid,
    /// K_max rows of comma-separated integers.
    Csv,
}

pub fn coverage_report(map: &CoverageMap, format: ReportFormat) -> String {
    let k = map.k_max();
    let mut out = String::new();
    for i in 0..k {
        match format {
            ReportFormat::TextGrid => {
                for j in 0..k {
                    let v = map.get(i, j);
                    if v <= 9 {
                        out.push(char::from_digit(v, 10).unwrap());
                    } else {
                        out.push('#');
                    }
                }
            }
            ReportFormat::Csv => {
                let row: Vec<String> = (0..k).map(|j| map.get(i, j).to_string()).collect();
                out.push_str(&row.join(","));
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV form back into a map; inverse of `coverage_report(_, Csv)`.
pub fn parse_coverage_csv(text: &str) -> Result<CoverageMap> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let k = rows.len();
    let mut counts = Vec::with_capacity(k * k);
    for row in &rows {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != k {
            return Err(Error::Config(format!(
                "coverage csv must be square, got row of {} cells in a {k}-row grid",
                cells.len()
            )));
        }
        for cell in cells {
            let v: u32 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad coverage cell '{cell}'")))?;
            counts.push(v);
        }
    }
    CoverageMap::new(k, counts)
}
