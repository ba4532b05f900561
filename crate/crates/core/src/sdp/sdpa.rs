//! SDPA sparse-format (`.dat-s`) export and import.
//!
//! The file's variable vector corresponds to our row multipliers, so a
//! problem in our standard primal form embeds as the file's *dual*: `F_0`
//! holds the negated objective blocks, `F_j` the `j`-th row's coefficient
//! blocks, and the file's cost vector is our right-hand side. The file
//! objective value is therefore the negated problem objective.
//!
//! Scalar variables ride along as diagonal blocks (negative dimensions in
//! the header): one block holding all nonnegative scalars and one of twice
//! the free-variable count holding the split `w = p - q`, `p, q >= 0`. That
//! split is not recoverable from the `.dat-s` file alone, which is what the
//! sidecar is for: a small line-oriented text file recording the PSD block
//! dimensions and the scalar counts. [`read_sdpa`] requires it and
//! reconstructs a [`BlockSdp`] that is structurally identical to the one
//! exported (entries are printed with 17 significant digits, so every
//! `f64` survives the trip bit for bit).

use std::io;

use nalgebra::DMatrix;

use super::{BlockSdp, BlockSdpBuilder, RowExpr, SdpError};
use crate::model::SymMatrix;

/// Scalar-variable layout behind a `.dat-s` file; the part of the problem
/// structure the format itself cannot express.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaMeta {
    pub psd_dims: Vec<usize>,
    pub n_nonneg: usize,
    pub n_free: usize,
    /// Nonnegative scalars meant to be binary (the file itself only says
    /// `>= 0`; the `[0, 1]` rows are ordinary constraints).
    pub binary_indices: Vec<usize>,
    /// Big-M constant behind the selection rows, when there are any.
    pub big_m: Option<f64>,
}

impl SdpaMeta {
    pub fn from_problem(sdp: &BlockSdp) -> Self {
        SdpaMeta {
            psd_dims: sdp.psd_dims().to_vec(),
            n_nonneg: sdp.n_nonneg(),
            n_free: sdp.n_free(),
            binary_indices: Vec::new(),
            big_m: None,
        }
    }

    /// Block dimensions as they appear in the file header: PSD blocks first,
    /// then the nonnegative diagonal block, then the free split block.
    fn file_dims(&self) -> Vec<i64> {
        let mut dims: Vec<i64> = self.psd_dims.iter().map(|&k| k as i64).collect();
        if self.n_nonneg > 0 {
            dims.push(-(self.n_nonneg as i64));
        }
        if self.n_free > 0 {
            dims.push(-(2 * self.n_free as i64));
        }
        dims
    }

    pub fn parse(text: &str) -> Result<Self, SdpError> {
        let bad = |msg: String| SdpError::SidecarParse(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty sidecar".into()))?;
        if header.trim() != "sdpa-sidecar-v1" {
            return Err(bad(format!("unrecognized header {header:?}")));
        }
        let mut expect = |key: &str| -> Result<usize, SdpError> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(k), Some(v), None) if k == key => v
                    .parse::<usize>()
                    .map_err(|e| bad(format!("bad `{key}` value {v:?}: {e}"))),
                _ => Err(bad(format!("expected `{key} <n>`, found {line:?}"))),
            }
        };
        let n_blocks = expect("psd_blocks")?;
        let mut psd_dims = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            psd_dims.push(expect("psd_dim")?);
        }
        let n_nonneg = expect("nonneg")?;
        let n_free = expect("free")?;
        let mut binary_indices = Vec::new();
        let mut big_m = None;
        for line in lines {
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some("binary"), Some(v), None) => binary_indices.push(
                    v.parse::<usize>()
                        .map_err(|e| bad(format!("bad `binary` index {v:?}: {e}")))?,
                ),
                (Some("big_m"), Some(v), None) if big_m.is_none() => {
                    big_m = Some(
                        v.parse::<f64>()
                            .map_err(|e| bad(format!("bad `big_m` value {v:?}: {e}")))?,
                    );
                }
                _ => return Err(bad(format!("unexpected sidecar line {line:?}"))),
            }
        }
        Ok(SdpaMeta {
            psd_dims,
            n_nonneg,
            n_free,
            binary_indices,
            big_m,
        })
    }
}

/// Writes the sidecar (see [`SdpaMeta`]).
pub fn write_sidecar<W: io::Write>(meta: &SdpaMeta, out: &mut W) -> io::Result<()> {
    writeln!(out, "sdpa-sidecar-v1")?;
    writeln!(out, "psd_blocks {}", meta.psd_dims.len())?;
    for k in &meta.psd_dims {
        writeln!(out, "psd_dim {k}")?;
    }
    writeln!(out, "nonneg {}", meta.n_nonneg)?;
    writeln!(out, "free {}", meta.n_free)?;
    for i in &meta.binary_indices {
        writeln!(out, "binary {i}")?;
    }
    if let Some(m) = meta.big_m {
        writeln!(out, "big_m {m:.16e}")?;
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `sdp` in SDPA sparse format.
pub fn write_sdpa<W: io::Write>(sdp: &BlockSdp, out: &mut W) -> io::Result<()> {
    let meta = SdpaMeta::from_problem(sdp);
    let dims = meta.file_dims();
    let nonneg_blk = meta.psd_dims.len() + 1;
    let free_blk = nonneg_blk + usize::from(meta.n_nonneg > 0);

    writeln!(
        out,
        "* block SDP in standard primal form, embedded as this file's dual"
    )?;
    writeln!(
        out,
        "* file objective = -(problem objective); see the sidecar for block roles"
    )?;
    writeln!(out, "{}", sdp.n_rows())?;
    writeln!(out, "{}", dims.len())?;
    let dim_line: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(out, "{}", dim_line.join(" "))?;
    let rhs_line: Vec<String> = sdp.rows().iter().map(|r| fmt(r.rhs)).collect();
    writeln!(out, "{}", rhs_line.join(" "))?;

    let mut entry = |matno: usize, blkno: usize, i: usize, j: usize, v: f64| -> io::Result<()> {
        if v != 0.0 {
            writeln!(out, "{matno} {blkno} {i} {j} {}", fmt(v))?;
        }
        Ok(())
    };

    // F0 = negated objective.
    for (b, c) in sdp.obj_psd().iter().enumerate() {
        for p in 0..c.dim() {
            for q in p..c.dim() {
                entry(0, b + 1, p + 1, q + 1, -c.get(p, q))?;
            }
        }
    }
    for (i, d) in sdp.obj_nonneg().iter().enumerate() {
        entry(0, nonneg_blk, i + 1, i + 1, -d)?;
    }
    for (l, d) in sdp.obj_free().iter().enumerate() {
        entry(0, free_blk, l + 1, l + 1, -d)?;
        entry(0, free_blk, meta.n_free + l + 1, meta.n_free + l + 1, *d)?;
    }

    // F_j = row coefficients.
    for (j, row) in sdp.rows().iter().enumerate() {
        let matno = j + 1;
        for (b, a) in &row.psd {
            for p in 0..a.dim() {
                for q in p..a.dim() {
                    entry(matno, b + 1, p + 1, q + 1, a.get(p, q))?;
                }
            }
        }
        for (i, e) in &row.nonneg {
            entry(matno, nonneg_blk, i + 1, i + 1, *e)?;
        }
        for (l, f) in &row.free {
            entry(matno, free_blk, l + 1, l + 1, *f)?;
            entry(
                matno,
                free_blk,
                meta.n_free + l + 1,
                meta.n_free + l + 1,
                -f,
            )?;
        }
    }
    Ok(())
}

/// One parsed token with the 1-based line it came from.
struct Tok<'a> {
    line: usize,
    text: &'a str,
}

fn parse_err(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::SdpaParse {
        line,
        msg: msg.into(),
    }
}

fn next_tok<'b, 'a>(
    cursor: &mut std::slice::Iter<'b, Tok<'a>>,
    last_line: usize,
    what: &str,
) -> Result<&'b Tok<'a>, SdpError> {
    cursor.next().ok_or_else(|| {
        parse_err(
            last_line,
            format!("unexpected end of file, expected {what}"),
        )
    })
}

/// Reads a `.dat-s` file back into a [`BlockSdp`], using the sidecar
/// metadata to assign block roles.
pub fn read_sdpa(text: &str, meta: &SdpaMeta) -> Result<BlockSdp, SdpError> {
    // Tokenize, dropping comment lines (leading '*' or '"') and the
    // brace/comma punctuation that classic files sprinkle around numbers.
    let mut tokens: Vec<Tok> = Vec::new();
    let mut header_vals: Vec<(usize, i64)> = Vec::new(); // m and nblocks
    let mut lines_seen = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') || trimmed.starts_with('"') {
            continue;
        }
        let cleaned: String = raw
            .chars()
            .map(|c| if "{}(),".contains(c) { ' ' } else { c })
            .collect();
        if header_vals.len() < 2 {
            // Header lines ("7 = mDIM" style): first numeric token wins,
            // the rest of the line is commentary.
            let val = cleaned
                .split_whitespace()
                .find_map(|t| t.parse::<i64>().ok())
                .ok_or_else(|| parse_err(line_no, "expected an integer header value"))?;
            header_vals.push((line_no, val));
            lines_seen = line_no;
            continue;
        }
        for t in cleaned.split_whitespace() {
            // Borrow from `text`, not the cleaned copy.
            let start = t.as_ptr() as usize - cleaned.as_ptr() as usize;
            let tok = &raw[start..start + t.len()];
            tokens.push(Tok {
                line: line_no,
                text: tok,
            });
        }
        lines_seen = line_no;
    }
    let last_line = lines_seen.max(1);
    if header_vals.len() < 2 {
        return Err(parse_err(
            last_line,
            "missing header (measure count / block count)",
        ));
    }
    let (m_line, m_raw) = header_vals[0];
    let (nb_line, nb_raw) = header_vals[1];
    let m = usize::try_from(m_raw).map_err(|_| parse_err(m_line, "negative row count"))?;
    let n_blocks =
        usize::try_from(nb_raw).map_err(|_| parse_err(nb_line, "negative block count"))?;

    let mut cursor = tokens.iter();

    let mut dims = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let t = next_tok(&mut cursor, last_line, "a block dimension")?;
        let d: i64 = t
            .text
            .parse()
            .map_err(|_| parse_err(t.line, format!("bad block dimension {:?}", t.text)))?;
        dims.push(d);
    }
    if dims != meta.file_dims() {
        return Err(SdpError::SidecarParse(format!(
            "block layout mismatch: file header has {:?}, sidecar implies {:?}",
            dims,
            meta.file_dims()
        )));
    }

    let mut rhs = Vec::with_capacity(m);
    for _ in 0..m {
        let t = next_tok(&mut cursor, last_line, "a right-hand-side value")?;
        let v: f64 = t
            .text
            .parse()
            .map_err(|_| parse_err(t.line, format!("bad right-hand side {:?}", t.text)))?;
        rhs.push(v);
    }

    // Accumulators: dense per (matrix, block) storage, zeros skipped later.
    let n_psd = meta.psd_dims.len();
    let nonneg_blk = n_psd + 1;
    let free_blk = nonneg_blk + usize::from(meta.n_nonneg > 0);
    let mats = m + 1; // F0 plus one per row
    let mut psd_acc: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; n_psd]; mats];
    let mut nonneg_acc = vec![vec![0.0f64; meta.n_nonneg]; mats];
    let mut free_p = vec![vec![0.0f64; meta.n_free]; mats];
    let mut free_q = vec![vec![0.0f64; meta.n_free]; mats];

    loop {
        let t = match cursor.next() {
            Some(t) => t,
            None => break,
        };
        let line = t.line;
        let parse_usize = |t: &Tok, what: &str| -> Result<usize, SdpError> {
            t.text
                .parse()
                .map_err(|_| parse_err(t.line, format!("bad {what} {:?}", t.text)))
        };
        let matno: usize = parse_usize(t, "matrix number")?;
        let blkno: usize = parse_usize(
            next_tok(&mut cursor, last_line, "a block number")?,
            "block number",
        )?;
        let i: usize = parse_usize(
            next_tok(&mut cursor, last_line, "a row index")?,
            "row index",
        )?;
        let j: usize = parse_usize(
            next_tok(&mut cursor, last_line, "a column index")?,
            "column index",
        )?;
        let vt = next_tok(&mut cursor, last_line, "an entry value")?;
        let v: f64 = vt
            .text
            .parse()
            .map_err(|_| parse_err(vt.line, format!("bad entry value {:?}", vt.text)))?;

        if matno > m {
            return Err(parse_err(
                line,
                format!("matrix number {matno} exceeds row count {m}"),
            ));
        }
        if blkno == 0 || blkno > dims.len() {
            return Err(parse_err(
                line,
                format!("block number {blkno} out of range"),
            ));
        }
        let blk_dim = dims[blkno - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > blk_dim || j > blk_dim {
            return Err(parse_err(
                line,
                format!("entry ({i},{j}) outside block {blkno}"),
            ));
        }
        if blkno <= n_psd {
            let k = meta.psd_dims[blkno - 1];
            let acc = psd_acc[matno][blkno - 1].get_or_insert_with(|| DMatrix::zeros(k, k));
            acc[(i - 1, j - 1)] += v;
            if i != j {
                acc[(j - 1, i - 1)] += v;
            }
        } else {
            if i != j {
                return Err(parse_err(
                    line,
                    "off-diagonal entry in a diagonal block".to_string(),
                ));
            }
            if meta.n_nonneg > 0 && blkno == nonneg_blk {
                nonneg_acc[matno][i - 1] += v;
            } else if meta.n_free > 0 && blkno == free_blk {
                if i <= meta.n_free {
                    free_p[matno][i - 1] += v;
                } else {
                    free_q[matno][i - 1 - meta.n_free] += v;
                }
            } else {
                return Err(parse_err(
                    line,
                    format!("block number {blkno} out of range"),
                ));
            }
        }
    }

    // The free split must be antisymmetric: q entries mirror p entries.
    for mat in 0..mats {
        for l in 0..meta.n_free {
            if free_q[mat][l] != -free_p[mat][l] {
                return Err(SdpError::SdpaParse {
                    line: 0,
                    msg: format!(
                        "free-variable split mismatch in matrix {mat}: +{} vs {}",
                        free_p[mat][l], free_q[mat][l]
                    ),
                });
            }
        }
    }

    let mut b = BlockSdpBuilder::new();
    let psd_vars: Vec<_> = meta
        .psd_dims
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let cost = match &psd_acc[0][idx] {
                Some(mneg) => SymMatrix::symmetric_part(&(-mneg)),
                None => SymMatrix::zeros(k),
            };
            b.add_psd_block(k, cost)
        })
        .collect();
    let free_vars: Vec<_> = (0..meta.n_free)
        .map(|l| b.add_free(-free_p[0][l]))
        .collect();
    let nonneg_vars: Vec<_> = (0..meta.n_nonneg)
        .map(|i| b.add_nonneg(-nonneg_acc[0][i]))
        .collect();

    for (j, &rhs_j) in rhs.iter().enumerate() {
        let mat = j + 1;
        let mut expr = RowExpr::new();
        for (idx, acc) in psd_acc[mat].iter().enumerate() {
            if let Some(mdense) = acc {
                expr = expr.psd(psd_vars[idx], SymMatrix::symmetric_part(mdense));
            }
        }
        for (i, &e) in nonneg_acc[mat].iter().enumerate() {
            if e != 0.0 {
                expr = expr.nonneg(nonneg_vars[i], e);
            }
        }
        for (l, &f) in free_p[mat].iter().enumerate() {
            if f != 0.0 {
                expr = expr.free(free_vars[l], f);
            }
        }
        b.eq(expr, rhs_j);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::BlockSdpBuilder;

    fn sample() -> BlockSdp {
        let mut b = BlockSdpBuilder::new();
        let x = b.add_psd_block(
            2,
            SymMatrix::new(&[vec![1.0, 0.25], vec![0.25, 0.0]]).unwrap(),
        );
        let y = b.add_psd_block(1, SymMatrix::identity(1));
        let w = b.add_free(0.1 + 1.0 / 3.0);
        let v = b.add_nonneg(-2.5);
        b.eq(
            RowExpr::new()
                .psd(x, SymMatrix::from_diagonal(&[1.0, -1.0]))
                .free(w, 2.0)
                .nonneg(v, 1.0),
            0.75,
        );
        b.leq(
            RowExpr::new().psd(y, SymMatrix::identity(1)).free(w, -0.5),
            1.0 / 7.0,
        );
        b.finish().unwrap()
    }

    #[test]
    fn round_trip_exact() {
        let sdp = sample();
        let mut dat = Vec::new();
        write_sdpa(&sdp, &mut dat).unwrap();
        let mut side = Vec::new();
        write_sidecar(&SdpaMeta::from_problem(&sdp), &mut side).unwrap();
        let meta = SdpaMeta::parse(std::str::from_utf8(&side).unwrap()).unwrap();
        assert_eq!(meta, SdpaMeta::from_problem(&sdp));
        let back = read_sdpa(std::str::from_utf8(&dat).unwrap(), &meta).unwrap();
        assert_eq!(sdp, back);
    }

    #[test]
    fn sidecar_carries_binaries_and_big_m() {
        let meta = SdpaMeta {
            psd_dims: vec![2, 1],
            n_nonneg: 7,
            n_free: 1,
            binary_indices: vec![3, 5],
            big_m: Some(12.0 + 1.0 / 3.0),
        };
        let mut side = Vec::new();
        write_sidecar(&meta, &mut side).unwrap();
        let back = SdpaMeta::parse(std::str::from_utf8(&side).unwrap()).unwrap();
        assert_eq!(back, meta);
        // a second big_m line is rejected
        let mut text = String::from_utf8(side).unwrap();
        text.push_str("big_m 1.0\n");
        assert!(SdpaMeta::parse(&text).is_err());
    }

    #[test]
    fn classic_header_style() {
        let text = r#"* a comment
" another comment
2 = mDIM
2 = nBLOCK
{2, -1}
{1.0, 2.0}
0 1 1 1 -1.0
1 1 1 2 0.5
1 2 1 1 1.0
2 1 2 2 1.0
"#;
        let meta = SdpaMeta {
            psd_dims: vec![2],
            n_nonneg: 1,
            n_free: 0,
            binary_indices: vec![],
            big_m: None,
        };
        let sdp = read_sdpa(text, &meta).unwrap();
        assert_eq!(sdp.n_rows(), 2);
        assert_eq!(sdp.obj_psd()[0].get(0, 0), 1.0);
        assert_eq!(sdp.rows()[0].psd[0].1.get(0, 1), 0.5);
        assert_eq!(sdp.rows()[0].nonneg[0], (0, 1.0));
        assert_eq!(sdp.rows()[1].rhs, 2.0);
    }

    #[test]
    fn diagonal_block_rejects_off_diagonal() {
        let text = "1\n1\n-2\n1.0\n1 1 1 2 3.0\n";
        let meta = SdpaMeta {
            psd_dims: vec![],
            n_nonneg: 2,
            n_free: 0,
            binary_indices: vec![],
            big_m: None,
        };
        let err = read_sdpa(text, &meta).unwrap_err();
        assert!(matches!(err, SdpError::SdpaParse { .. }), "{err:?}");
    }

    #[test]
    fn sidecar_mismatch_detected() {
        let sdp = sample();
        let mut dat = Vec::new();
        write_sdpa(&sdp, &mut dat).unwrap();
        let meta = SdpaMeta {
            psd_dims: vec![2, 2],
            n_nonneg: 2,
            n_free: 1,
            binary_indices: vec![],
            big_m: None,
        };
        let err = read_sdpa(std::str::from_utf8(&dat).unwrap(), &meta).unwrap_err();
        assert!(matches!(err, SdpError::SidecarParse(_)), "{err:?}");
    }

    #[test]
    fn free_split_mismatch_detected() {
        let text = "1\n1\n-2\n1.0\n1 1 1 1 3.0\n1 1 2 2 -2.0\n";
        let meta = SdpaMeta {
            psd_dims: vec![],
            n_nonneg: 0,
            n_free: 1,
            binary_indices: vec![],
            big_m: None,
        };
        let err = read_sdpa(text, &meta).unwrap_err();
        assert!(matches!(err, SdpError::SdpaParse { .. }), "{err:?}");
    }

    #[test]
    fn sidecar_rejects_garbage() {
        assert!(SdpaMeta::parse("not-a-sidecar\n").is_err());
        assert!(SdpaMeta::parse("sdpa-sidecar-v1\npsd_blocks 1\nnonneg 0\nfree 0\n").is_err());
    }
}
