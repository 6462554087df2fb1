//! Text formats for datasets, assignments, chains, posteriors and reports.
//!
//! All files are comma-separated with a header row, or flat `key = value`
//! lines. Numbers are written with Rust's shortest round-trip formatting,
//! so reading a file back reproduces the same `f64` bits. Writers go
//! through [`write_atomic`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::combine::{DiskPosterior, QuantileGrid, QuantileSummary};
use crate::error::{DiskError, Result};
use crate::exact::RiskReport;
use crate::kernels::Location;
use crate::model::SpatialDataset;
use crate::partition::SubsetAssignment;
use crate::sampler::SubsetChain;

pub const PARAMS_FILE: &str = "params.csv";
pub const WSTAR_FILE: &str = "wstar.csv";
pub const YSTAR_FILE: &str = "ystar.csv";
pub const META_FILE: &str = "meta.txt";

/// Writes `contents` to a temporary sibling and renames it over `path`,
/// creating parent directories as needed.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| DiskError::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| DiskError::input(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| DiskError::io(&tmp, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| DiskError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DiskError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DiskError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DiskError::io(path, e))
}

fn context_of(path: &Path) -> String {
    path.display().to_string()
}

/// Splits `text` into (1-based line number, fields), skipping blank lines.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
}

fn parse_f64(field: &str, ctx: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| DiskError::parse(ctx, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(DiskError::parse(ctx, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_usize(field: &str, ctx: &str, line: usize) -> Result<usize> {
    field
        .parse()
        .map_err(|_| DiskError::parse(ctx, line, format!("not a non-negative integer: {field:?}")))
}

fn header<'a>(text: &'a str, ctx: &str) -> Result<(usize, Vec<&'a str>)> {
    rows(text).next().ok_or_else(|| DiskError::parse(ctx, 1, "empty file"))
}

fn expect_header(got: &[&str], want: &[&str], ctx: &str, line: usize) -> Result<()> {
    if got != want {
        return Err(DiskError::parse(ctx, line, format!("expected header {}", want.join(","))));
    }
    Ok(())
}

/// Numeric rows after a header, each exactly `width` wide.
fn numeric_body(text: &str, width: usize, ctx: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    rows(text)
        .skip(1)
        .map(|(line, fields)| {
            if fields.len() != width {
                return Err(DiskError::parse(ctx, line, format!("expected {width} fields, got {}", fields.len())));
            }
            let vals = fields.iter().map(|f| parse_f64(f, ctx, line)).collect::<Result<_>>()?;
            Ok((line, vals))
        })
        .collect()
}

fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Dataset CSV: header `s1,...,sd,x1,...,xp,y`.
pub fn format_dataset(data: &SpatialDataset) -> String {
    let mut cols = numbered("s", data.dim());
    cols.extend(numbered("x", data.p()));
    cols.push("y".into());
    let mut out = cols.join(",") + "\n";
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.locations()[i].coords().iter().map(f64::to_string).collect();
        fields.extend(data.x().row(i).iter().map(f64::to_string));
        fields.push(data.y()[i].to_string());
        out += &fields.join(",");
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str, ctx: &str) -> Result<SpatialDataset> {
    let (hline, cols) = header(text, ctx)?;
    let d = cols.iter().take_while(|c| c.starts_with('s')).count();
    let p = cols.len().saturating_sub(d + 1);
    if d == 0 || p == 0 {
        return Err(DiskError::parse(ctx, hline, "header needs s1.., x1.. and y columns"));
    }
    let mut want = numbered("s", d);
    want.extend(numbered("x", p));
    want.push("y".into());
    let want_ref: Vec<&str> = want.iter().map(String::as_str).collect();
    expect_header(&cols, &want_ref, ctx, hline)?;
    let body = numeric_body(text, d + p + 1, ctx)?;
    if body.is_empty() {
        return Err(DiskError::parse(ctx, hline, "no observations"));
    }
    let n = body.len();
    let locations = body
        .iter()
        .map(|(_, r)| Location::new(r[..d].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let x = DMatrix::from_fn(n, p, |i, j| body[i].1[d + j]);
    let y = DVector::from_fn(n, |i, _| body[i].1[d + p]);
    SpatialDataset::new(locations, x, y)
}

pub fn read_dataset(path: &Path) -> Result<SpatialDataset> {
    parse_dataset(&read_text(path)?, &context_of(path))
}

pub fn write_dataset(path: &Path, data: &SpatialDataset) -> Result<()> {
    write_atomic(path, &format_dataset(data))
}

/// Assignment CSV: `subset_id,row_index`, one line per membership.
pub fn format_assignment(a: &SubsetAssignment) -> String {
    let mut out = String::from("subset_id,row_index\n");
    for (j, rows) in a.memberships.iter().enumerate() {
        for r in rows {
            out += &format!("{j},{r}\n");
        }
    }
    out
}

/// Subset ids must be `0..k` with none skipped; `n` is the dataset size.
pub fn parse_assignment(text: &str, n: usize, ctx: &str) -> Result<SubsetAssignment> {
    let (hline, cols) = header(text, ctx)?;
    expect_header(&cols, &["subset_id", "row_index"], ctx, hline)?;
    let mut memberships: Vec<Vec<usize>> = Vec::new();
    for (line, fields) in rows(text).skip(1) {
        if fields.len() != 2 {
            return Err(DiskError::parse(ctx, line, "expected subset_id,row_index"));
        }
        let j = parse_usize(fields[0], ctx, line)?;
        let r = parse_usize(fields[1], ctx, line)?;
        if j > memberships.len() {
            return Err(DiskError::parse(ctx, line, format!("subset {j} appears before subset {}", memberships.len())));
        }
        if j == memberships.len() {
            memberships.push(Vec::new());
        }
        memberships[j].push(r);
    }
    SubsetAssignment::from_memberships(n, memberships)
}

pub fn read_assignment(path: &Path, n: usize) -> Result<SubsetAssignment> {
    parse_assignment(&read_text(path)?, n, &context_of(path))
}

/// `row_index,w0`.
pub fn format_w0(w0: &DVector<f64>) -> String {
    let mut out = String::from("row_index,w0\n");
    for (i, w) in w0.iter().enumerate() {
        out += &format!("{i},{w}\n");
    }
    out
}

pub fn parse_w0(text: &str, ctx: &str) -> Result<DVector<f64>> {
    let (hline, cols) = header(text, ctx)?;
    expect_header(&cols, &["row_index", "w0"], ctx, hline)?;
    let body = numeric_body(text, 2, ctx)?;
    for (i, (line, r)) in body.iter().enumerate() {
        if r[0] != i as f64 {
            return Err(DiskError::parse(ctx, *line, format!("expected row_index {i}")));
        }
    }
    Ok(DVector::from_iterator(body.len(), body.iter().map(|(_, r)| r[1])))
}

/// Flat `key = value` lines; `#` starts a comment.
pub fn format_kv<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{} = {}\n", k.as_ref(), v.as_ref()))
        .collect()
}

/// Parses `key = value` lines. Keys must be unique and non-empty; values
/// may be empty. Anything after `#` on a line is ignored.
pub fn parse_kv(text: &str, ctx: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DiskError::parse(ctx, i + 1, "expected key = value"))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(DiskError::parse(ctx, i + 1, format!("bad key {k:?}")));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(DiskError::parse(ctx, i + 1, format!("duplicate key {k}")));
        }
    }
    Ok(out)
}

fn draws_csv(first: &str, names: &[String], iters: &[usize], m: &DMatrix<f64>) -> String {
    let mut out = std::iter::once(first.to_string())
        .chain(names.iter().cloned())
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for (r, it) in iters.iter().enumerate() {
        out += &it.to_string();
        for v in m.row(r).iter() {
            out.push(',');
            out += &v.to_string();
        }
        out.push('\n');
    }
    out
}

/// Draw files: header `iter,<prefix>1..` (or explicit names), then rows.
/// Returns the iterations and the draw matrix.
pub fn parse_draws(text: &str, names: Option<&[&str]>, prefix: &str, ctx: &str) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let (hline, cols) = header(text, ctx)?;
    if cols.first() != Some(&"iter") {
        return Err(DiskError::parse(ctx, hline, "first column must be iter"));
    }
    let width = cols.len() - 1;
    match names {
        Some(n) => expect_header(&cols[1..], n, ctx, hline)?,
        None => {
            let want = numbered(prefix, width);
            if cols[1..].iter().zip(&want).any(|(a, b)| a != b) {
                return Err(DiskError::parse(ctx, hline, format!("expected columns {prefix}1..{prefix}{width}")));
            }
        }
    }
    let mut iters = Vec::new();
    let mut vals = Vec::new();
    for (line, fields) in rows(text).skip(1) {
        if fields.len() != width + 1 {
            return Err(DiskError::parse(ctx, line, format!("expected {} fields, got {}", width + 1, fields.len())));
        }
        let it = parse_usize(fields[0], ctx, line)?;
        if iters.last().is_some_and(|&last| it <= last) {
            return Err(DiskError::parse(ctx, line, "iterations must increase"));
        }
        iters.push(it);
        for f in &fields[1..] {
            vals.push(parse_f64(f, ctx, line)?);
        }
    }
    let m = DMatrix::from_row_slice(iters.len(), width, &vals);
    Ok((iters, m))
}

fn param_names(p: usize) -> Vec<String> {
    let mut names = numbered("beta_", p);
    names.extend(["sigma2", "tau2", "phi"].map(String::from));
    names
}

/// Chain directory files: `params.csv`, `wstar.csv`, `ystar.csv` and
/// `meta.txt`, as (file name, contents).
pub fn format_chain(chain: &SubsetChain) -> Vec<(&'static str, String)> {
    let mut params = DMatrix::zeros(chain.retained(), chain.p() + 3);
    params.columns_mut(0, chain.p()).copy_from(&chain.beta_draws);
    params.columns_mut(chain.p(), 3).copy_from(&chain.alpha_draws);
    let meta = format_kv(&[
        ("seed", chain.seed.to_string()),
        ("acceptance_rate", chain.acceptance_rate.to_string()),
        ("jitter_events", chain.jitter_events.to_string()),
        ("wall_time_s", chain.wall_time_s.to_string()),
    ]);
    vec![
        (PARAMS_FILE, draws_csv("iter", &param_names(chain.p()), &chain.iterations, &params)),
        (WSTAR_FILE, draws_csv("iter", &numbered("w_", chain.l()), &chain.iterations, &chain.wstar_draws)),
        (YSTAR_FILE, draws_csv("iter", &numbered("y_", chain.l()), &chain.iterations, &chain.ystar_draws)),
        (META_FILE, meta),
    ]
}

pub fn write_chain(dir: &Path, chain: &SubsetChain) -> Result<()> {
    for (name, contents) in format_chain(chain) {
        write_atomic(&dir.join(name), &contents)?;
    }
    Ok(())
}

fn kv_get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, ctx: &str) -> Result<T> {
    let v = kv.get(key).ok_or_else(|| DiskError::parse(ctx, 0, format!("missing key {key}")))?;
    v.parse().map_err(|_| DiskError::parse(ctx, 0, format!("bad value for {key}: {v:?}")))
}

pub fn read_chain(dir: &Path) -> Result<SubsetChain> {
    let path = |f: &str| dir.join(f);
    let ctx = |f: &str| context_of(&path(f));

    let params_text = read_text(&path(PARAMS_FILE))?;
    let (_, cols) = header(&params_text, &ctx(PARAMS_FILE))?;
    let p = cols.len().saturating_sub(4);
    let names = param_names(p);
    let names_ref: Vec<&str> = names.iter().map(String::as_str).collect();
    let (iters, params) = parse_draws(&params_text, Some(&names_ref), "", &ctx(PARAMS_FILE))?;
    if p == 0 {
        return Err(DiskError::parse(&ctx(PARAMS_FILE), 1, "no beta columns"));
    }
    let (w_it, wstar) = parse_draws(&read_text(&path(WSTAR_FILE))?, None, "w_", &ctx(WSTAR_FILE))?;
    let (y_it, ystar) = parse_draws(&read_text(&path(YSTAR_FILE))?, None, "y_", &ctx(YSTAR_FILE))?;
    if w_it != iters || y_it != iters || wstar.ncols() != ystar.ncols() {
        return Err(DiskError::input(format!("chain files in {} disagree on iterations or l", dir.display())));
    }
    let meta = parse_kv(&read_text(&path(META_FILE))?, &ctx(META_FILE))?;
    let mctx = ctx(META_FILE);
    Ok(SubsetChain {
        iterations: iters,
        beta_draws: params.columns(0, p).into_owned(),
        alpha_draws: params.columns(p, 3).into_owned(),
        wstar_draws: wstar,
        ystar_draws: ystar,
        acceptance_rate: kv_get(&meta, "acceptance_rate", &mctx)?,
        jitter_events: kv_get(&meta, "jitter_events", &mctx)?,
        seed: kv_get(&meta, "seed", &mctx)?,
        wall_time_s: kv_get(&meta, "wall_time_s", &mctx)?,
    })
}

/// `quantity,prob,value`, one row per grid point.
pub fn format_disk_posterior(post: &DiskPosterior) -> String {
    let probs = post.grid().probs();
    let mut out = String::from("quantity,prob,value\n");
    for (label, s) in post.entries() {
        for (p, v) in probs.iter().zip(s.values()) {
            out += &format!("{label},{p},{v}\n");
        }
    }
    out
}

/// Quantities must appear as contiguous blocks with the same probability
/// column, which has to be a valid [`QuantileGrid`].
pub fn parse_disk_posterior(text: &str, ctx: &str) -> Result<DiskPosterior> {
    let (hline, cols) = header(text, ctx)?;
    expect_header(&cols, &["quantity", "prob", "value"], ctx, hline)?;
    let mut blocks: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, fields) in rows(text).skip(1) {
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(DiskError::parse(ctx, line, "expected quantity,prob,value"));
        }
        let p = parse_f64(fields[1], ctx, line)?;
        let v = parse_f64(fields[2], ctx, line)?;
        match blocks.last_mut() {
            Some((label, ps, vs)) if label == fields[0] => {
                ps.push(p);
                vs.push(v);
            }
            _ => {
                if blocks.iter().any(|(l, _, _)| l == fields[0]) {
                    return Err(DiskError::parse(ctx, line, format!("{} is not contiguous", fields[0])));
                }
                blocks.push((fields[0].to_string(), vec![p], vec![v]));
            }
        }
    }
    let first = blocks.first().ok_or_else(|| DiskError::parse(ctx, hline, "no quantities"))?;
    let xi = first.1[0];
    let grid = QuantileGrid::new(xi).map_err(|e| DiskError::parse(ctx, hline + 1, e.to_string()))?;
    let probs = grid.probs();
    let mut entries = Vec::with_capacity(blocks.len());
    for (label, ps, vs) in blocks {
        if ps.len() != probs.len() || ps.iter().zip(&probs).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(DiskError::parse(ctx, 0, format!("{label} does not use the grid with xi = {xi}")));
        }
        let s = QuantileSummary::new(grid, vs).map_err(|e| DiskError::parse(ctx, 0, format!("{label}: {e}")))?;
        entries.push((label, s));
    }
    DiskPosterior::new(grid, entries)
}

pub fn read_disk_posterior(path: &Path) -> Result<DiskPosterior> {
    parse_disk_posterior(&read_text(path)?, &context_of(path))
}

/// `n,k,bias2,var_mean,var_disk,total,se` where `se` is the combined
/// Monte-Carlo standard error.
pub fn format_risk_reports(reports: &[RiskReport]) -> String {
    let mut out = String::from("n,k,bias2,var_mean,var_disk,total,se\n");
    for r in reports {
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.n, r.k, r.bias2, r.var_mean, r.var_disk, r.total, r.mc_standard_error
        );
    }
    out
}

/// Row tuples `(n, k, bias2, var_mean, var_disk, total, se)`.
pub type RiskRow = (usize, usize, f64, f64, f64, f64, f64);

pub fn parse_risk_reports(text: &str, ctx: &str) -> Result<Vec<RiskRow>> {
    let (hline, cols) = header(text, ctx)?;
    expect_header(&cols, &["n", "k", "bias2", "var_mean", "var_disk", "total", "se"], ctx, hline)?;
    rows(text)
        .skip(1)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(DiskError::parse(ctx, line, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |i: usize| parse_f64(f[i], ctx, line);
            Ok((
                parse_usize(f[0], ctx, line)?,
                parse_usize(f[1], ctx, line)?,
                num(2)?,
                num(3)?,
                num(4)?,
                num(5)?,
                num(6)?,
            ))
        })
        .collect()
}
