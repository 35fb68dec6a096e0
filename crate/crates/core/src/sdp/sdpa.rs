//! SDPA sparse format (`.dat-s`) reader and writer.
//!
//! The SDPA primal is `min c'x  s.t.  X = sum_i F_i x_i - F_0 >= 0`, with `X`
//! block diagonal. A standard form `h - G x in K` maps to `F_i = -smat(G_i)`
//! and `F_0 = -smat(h)`. Equalities `A x = b` become a diagonal block holding
//! both `A x - b >= 0` and `b - A x >= 0`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::compile::{svec_len, ConeDims, StandardForm};
use super::ConicProblem;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One nonzero of `F_matno`, upper triangle, 1-indexed.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpaEntry {
    pub matno: usize,
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Parsed SDPA problem. Negative block sizes denote diagonal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpaProblem {
    pub block_struct: Vec<i64>,
    pub c: Vec<f64>,
    pub entries: Vec<SdpaEntry>,
}

impl SdpaProblem {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn from_standard_form<T: Real>(f: &StandardForm<T>) -> Self {
        let nx = f.c.len();
        let p = f.a.nrows();
        let mut block_struct = Vec::new();
        let mut entries = Vec::new();
        let mut push = |matno: usize, block: usize, i: usize, j: usize, v: f64| {
            if v != 0.0 {
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                entries.push(SdpaEntry {
                    matno,
                    block,
                    i: i + 1,
                    j: j + 1,
                    value: v,
                });
            }
        };
        let mut blk = 0;
        if p > 0 {
            blk += 1;
            block_struct.push(-((2 * p) as i64));
            for r in 0..p {
                let b = f.b[r].to_f64_lossy();
                push(0, blk, r, r, b);
                push(0, blk, p + r, p + r, -b);
                for k in 0..nx {
                    let a = f.a[(r, k)].to_f64_lossy();
                    push(k + 1, blk, r, r, a);
                    push(k + 1, blk, p + r, p + r, -a);
                }
            }
        }
        let l = f.cones.nonneg;
        if l > 0 {
            blk += 1;
            block_struct.push(-(l as i64));
            for r in 0..l {
                push(0, blk, r, r, -f.h[r].to_f64_lossy());
                for k in 0..nx {
                    push(k + 1, blk, r, r, -f.g[(r, k)].to_f64_lossy());
                }
            }
        }
        let inv = 1.0 / std::f64::consts::SQRT_2;
        let mut off = l;
        for &k in &f.cones.psd {
            blk += 1;
            block_struct.push(k as i64);
            let mut idx = off;
            for j in 0..k {
                for i in j..k {
                    let w = if i == j { 1.0 } else { inv };
                    push(0, blk, i, j, -f.h[idx].to_f64_lossy() * w);
                    for var in 0..nx {
                        push(var + 1, blk, i, j, -f.g[(idx, var)].to_f64_lossy() * w);
                    }
                    idx += 1;
                }
            }
            off += svec_len(k);
        }
        entries.sort_by_key(|e| (e.matno, e.block, e.i, e.j));
        Self {
            block_struct,
            c: f.c.iter().map(|v| v.to_f64_lossy()).collect(),
            entries,
        }
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} = mDIM", self.c.len());
        let _ = writeln!(out, "{} = nBLOCK", self.block_struct.len());
        let bs: Vec<String> = self.block_struct.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(out, "{} = bLOCKsTRUCT", bs.join(" "));
        let cs: Vec<String> = self.c.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", cs.join(" "));
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {:.17e}",
                e.matno, e.block, e.i, e.j, e.value
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("SDPA: {msg}"));
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
        let tokens = |line: &str| -> Vec<String> {
            line.split(|ch: char| ch.is_whitespace() || ",{}()".contains(ch))
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        // Header lines may carry trailing annotations such as `= mDIM`.
        let numbers = |line: &str| -> Vec<String> {
            let data = line.split('=').next().unwrap_or("");
            tokens(data)
        };
        let first_int = |line: Option<&str>, what: &str| -> Result<i64> {
            let line = line.ok_or_else(|| bad(format!("missing {what}")))?;
            numbers(line)
                .first()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(format!("bad {what} line `{line}`")))
        };
        let m = first_int(lines.next(), "mDIM")?;
        let nblock = first_int(lines.next(), "nBLOCK")?;
        if m < 0 || nblock < 0 {
            return Err(bad("negative dimension".into()));
        }
        let (m, nblock) = (m as usize, nblock as usize);

        let struct_line = lines
            .next()
            .ok_or_else(|| bad("missing block structure".into()))?;
        // Remaining tokens: c, then entries. Lines may wrap.
        let rest: Vec<String> = lines.flat_map(tokens).collect();
        let mut struct_tokens = numbers(struct_line).into_iter();
        let mut it = rest.into_iter();
        let mut block_struct = Vec::with_capacity(nblock);
        for _ in 0..nblock {
            let t = struct_tokens
                .next()
                .ok_or_else(|| bad("truncated block structure".into()))?;
            let v: i64 = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v != 0.0)
                .map(|v| v as i64)
                .ok_or_else(|| bad(format!("bad block size `{t}`")))?;
            block_struct.push(v);
        }
        let num = |t: Option<String>, what: &str| -> Result<f64> {
            let t = t.ok_or_else(|| bad(format!("truncated {what}")))?;
            t.parse::<f64>()
                .map_err(|_| bad(format!("bad number `{t}` in {what}")))
        };
        let mut c = Vec::with_capacity(m);
        for _ in 0..m {
            c.push(num(it.next(), "objective vector")?);
        }
        let mut entries = Vec::new();
        while let Some(t) = it.next() {
            let idx = |t: Option<String>| -> Result<usize> {
                let v = num(t, "entry")?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(bad(format!("bad index {v}")));
                }
                Ok(v as usize)
            };
            let matno = idx(Some(t))?;
            let block = idx(it.next())?;
            let i = idx(it.next())?;
            let j = idx(it.next())?;
            let value = num(it.next(), "entry")?;
            if matno > m || block == 0 || block > nblock {
                return Err(bad(format!("entry index out of range: {matno} {block}")));
            }
            let size = block_struct[block - 1].unsigned_abs() as usize;
            if i == 0 || j == 0 || i > size || j > size {
                return Err(bad(format!(
                    "entry position ({i}, {j}) outside block {block}"
                )));
            }
            if block_struct[block - 1] < 0 && i != j {
                return Err(bad(format!("off-diagonal entry in diagonal block {block}")));
            }
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            entries.push(SdpaEntry {
                matno,
                block,
                i,
                j,
                value,
            });
        }
        Ok(Self {
            block_struct,
            c,
            entries,
        })
    }

    /// Conic standard form without equality rows: all diagonal blocks are
    /// merged into the nonnegative orthant, PSD blocks follow in order.
    pub fn to_standard_form(&self) -> StandardForm<f64> {
        let nx = self.c.len();
        let mut lp_offset = Vec::with_capacity(self.block_struct.len());
        let mut nonneg = 0;
        for &b in &self.block_struct {
            lp_offset.push(nonneg);
            if b < 0 {
                nonneg += b.unsigned_abs() as usize;
            }
        }
        let mut psd = Vec::new();
        let mut psd_offset = vec![0; self.block_struct.len()];
        let mut off = nonneg;
        for (k, &b) in self.block_struct.iter().enumerate() {
            if b > 0 {
                psd_offset[k] = off;
                psd.push(b as usize);
                off += svec_len(b as usize);
            }
        }
        let cones = ConeDims { nonneg, psd };
        let dim = cones.dim();
        let mut g = DMatrix::zeros(dim, nx);
        let mut h = DVector::zeros(dim);
        let s2 = std::f64::consts::SQRT_2;
        for e in &self.entries {
            let b = e.block - 1;
            let (row, w) = if self.block_struct[b] < 0 {
                (lp_offset[b] + e.i - 1, 1.0)
            } else {
                let k = self.block_struct[b] as usize;
                // svec of the lower triangle: (hi, lo) with hi >= lo.
                let (lo, hi) = (e.i - 1, e.j - 1);
                let idx = lo * k - lo * (lo + 1) / 2 + hi;
                (psd_offset[b] + idx, if lo == hi { 1.0 } else { s2 })
            };
            if e.matno == 0 {
                h[row] -= e.value * w;
            } else {
                g[(row, e.matno - 1)] -= e.value * w;
            }
        }
        StandardForm {
            c: DVector::from_vec(self.c.clone()),
            a: DMatrix::zeros(0, nx),
            b: DVector::zeros(0),
            g,
            h,
            cones,
        }
    }
}

/// Export a standard-form program as SDPA sparse text.
pub fn export_standard_form<T: Real>(f: &StandardForm<T>) -> String {
    SdpaProblem::from_standard_form(f).write()
}

/// Compile and export a conic problem as SDPA sparse text.
pub fn export_problem<T: Real>(p: &ConicProblem<T>) -> Result<String> {
    Ok(export_standard_form(&p.to_standard_form()?))
}
