//! Text formats: `cgrid-v1` grids, `shots-v1` shot records, and plot-ready
//! `x y value` tables with a manifest. Every file is written atomically.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{QstError, Result};
use crate::grid::{AxisGrid, ComplexField2D, C64};
use crate::sampling::ShotRecord;
use crate::states::DensityMatrix;

pub const CGRID_MAGIC: &str = "cgrid-v1";
pub const SHOTS_MAGIC: &str = "shots-v1";

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| QstError::Io(e.error))?;
    Ok(())
}

fn parse_err(line: usize, what: impl std::fmt::Display) -> QstError {
    QstError::Parse(format!("line {line}: {what}"))
}

fn next_line<B: BufRead>(lines: &mut std::iter::Enumerate<std::io::Lines<B>>) -> Result<(usize, String)> {
    loop {
        match lines.next() {
            Some((i, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    return Ok((i + 1, l));
                }
            }
            None => return Err(QstError::Parse("unexpected end of file".into())),
        }
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?.parse().map_err(|_| parse_err(line, format!("bad {what}")))
}

/// Serialise a field as `cgrid-v1` (17 significant digits, row-major).
pub fn cgrid_to_string(field: &ComplexField2D) -> String {
    let [a, b] = *field.axes();
    let mut s = String::with_capacity(64 * field.values().len() + 128);
    s.push_str(CGRID_MAGIC);
    s.push('\n');
    for (name, ax) in [("axis1", a), ("axis2", b)] {
        let _ = writeln!(s, "{name} {} {:.16e} {:.16e}", ax.n(), ax.spacing(), ax.offset());
    }
    for i in 0..a.n() {
        for j in 0..b.n() {
            let v = field.get(i, j);
            let _ = writeln!(s, "{i} {j} {:.16e} {:.16e}", v.re, v.im);
        }
    }
    s
}

pub fn write_cgrid<W: Write>(mut w: W, field: &ComplexField2D) -> Result<()> {
    w.write_all(cgrid_to_string(field).as_bytes())?;
    Ok(())
}

pub fn read_cgrid<R: Read>(r: R) -> Result<ComplexField2D> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let (ln, head) = next_line(&mut lines)?;
    if head.trim() != CGRID_MAGIC {
        return Err(parse_err(ln, format!("expected '{CGRID_MAGIC}' header")));
    }
    let mut axes = Vec::with_capacity(2);
    for name in ["axis1", "axis2"] {
        let (ln, l) = next_line(&mut lines)?;
        let mut t = l.split_whitespace();
        if t.next() != Some(name) {
            return Err(parse_err(ln, format!("expected '{name}'")));
        }
        let n: usize = num(t.next(), ln, "n")?;
        let h: f64 = num(t.next(), ln, "spacing")?;
        let o: f64 = num(t.next(), ln, "offset")?;
        axes.push(AxisGrid::new(n, h, o).map_err(|e| parse_err(ln, e))?);
    }
    let axes = [axes[0], axes[1]];
    let (n0, n1) = (axes[0].n(), axes[1].n());
    let mut values = Vec::with_capacity(n0 * n1);
    for idx in 0..n0 * n1 {
        let (ln, l) = next_line(&mut lines)?;
        let mut t = l.split_whitespace();
        let i: usize = num(t.next(), ln, "i")?;
        let j: usize = num(t.next(), ln, "j")?;
        if (i, j) != (idx / n1, idx % n1) {
            return Err(parse_err(ln, format!("expected index ({}, {}), found ({i}, {j})", idx / n1, idx % n1)));
        }
        let re: f64 = num(t.next(), ln, "re")?;
        let im: f64 = num(t.next(), ln, "im")?;
        values.push(C64::new(re, im));
    }
    if let Some((i, l)) = lines.find(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty())) {
        l?;
        return Err(parse_err(i + 1, "trailing data after the last grid point"));
    }
    ComplexField2D::new(axes, values)
}

pub fn save_cgrid(path: &Path, field: &ComplexField2D) -> Result<()> {
    write_atomic(path, cgrid_to_string(field).as_bytes())
}

pub fn load_cgrid(path: &Path) -> Result<ComplexField2D> {
    read_cgrid(std::fs::File::open(path)?)
}

/// Real field as a `cgrid-v1` with zero imaginary part.
pub fn real_field(axes: [AxisGrid; 2], values: &[f64]) -> Result<ComplexField2D> {
    ComplexField2D::new(axes, values.iter().map(|v| C64::new(*v, 0.0)).collect())
}

/// Density matrix on axes `(X, X')`.
pub fn density_field(rho: &DensityMatrix) -> ComplexField2D {
    let ax = *rho.axis();
    let m = rho.matrix();
    let n = ax.n();
    let values = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    ComplexField2D::new([ax, ax], values).expect("square matrix matches its axis")
}

/// Inverse of [`density_field`]; the matrix is checked for physicality.
pub fn density_from_field(field: &ComplexField2D) -> Result<DensityMatrix> {
    let [a, b] = *field.axes();
    if !a.same_nodes(&b) {
        return Err(QstError::AxisMismatch("density matrix needs identical row and column axes".into()));
    }
    let n = a.n();
    DensityMatrix::new(a, DMatrix::from_fn(n, n, |i, j| field.get(i, j)))
}

/// `shots-v1`: header `shots-v1 N seed`, then `J_K J_X` with 15 significant digits.
pub fn shots_to_string(rec: &ShotRecord) -> String {
    let mut s = String::with_capacity(48 * rec.len() + 32);
    let _ = writeln!(s, "{SHOTS_MAGIC} {} {}", rec.len(), rec.seed);
    for [a, b] in &rec.shots {
        let _ = writeln!(s, "{a:.14e} {b:.14e}");
    }
    s
}

pub fn write_shots<W: Write>(mut w: W, rec: &ShotRecord) -> Result<()> {
    w.write_all(shots_to_string(rec).as_bytes())?;
    Ok(())
}

pub fn read_shots<R: Read>(r: R) -> Result<ShotRecord> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let (ln, head) = next_line(&mut lines)?;
    let mut t = head.split_whitespace();
    if t.next() != Some(SHOTS_MAGIC) {
        return Err(parse_err(ln, format!("expected '{SHOTS_MAGIC}' header")));
    }
    let n: usize = num(t.next(), ln, "shot count")?;
    let seed: u64 = num(t.next(), ln, "seed")?;
    let mut shots = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = next_line(&mut lines)?;
        let mut t = l.split_whitespace();
        shots.push([num(t.next(), ln, "J_K")?, num(t.next(), ln, "J_X")?]);
    }
    ShotRecord::new(shots, seed)
}

pub fn save_shots(path: &Path, rec: &ShotRecord) -> Result<()> {
    write_atomic(path, shots_to_string(rec).as_bytes())
}

pub fn load_shots(path: &Path) -> Result<ShotRecord> {
    read_shots(std::fs::File::open(path)?)
}

/// A real-valued field destined for a plot table.
#[derive(Debug, Clone)]
pub struct PlotField {
    pub name: String,
    pub axes: [AxisGrid; 2],
    pub values: Vec<f64>,
}

impl PlotField {
    pub fn new(name: impl Into<String>, axes: [AxisGrid; 2], values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(QstError::InvalidParameter(format!("plot name '{name}' must be [A-Za-z0-9_-]+")));
        }
        if values.len() != axes[0].n() * axes[1].n() {
            return Err(QstError::AxisMismatch(format!(
                "plot '{name}' has {} values for a {}x{} grid",
                values.len(),
                axes[0].n(),
                axes[1].n()
            )));
        }
        Ok(Self { name, axes, values })
    }

    /// Real and imaginary parts as two fields, `<name>_re` and `<name>_im`.
    pub fn complex(name: &str, field: &ComplexField2D) -> Result<[Self; 2]> {
        let axes = *field.axes();
        Ok([
            Self::new(format!("{name}_re"), axes, field.values().iter().map(|v| v.re).collect())?,
            Self::new(format!("{name}_im"), axes, field.values().iter().map(|v| v.im).collect())?,
        ])
    }

    pub fn mask(name: &str, axes: [AxisGrid; 2], mask: &[bool]) -> Result<Self> {
        Self::new(name, axes, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
    }

    fn table(&self) -> String {
        let [a, b] = self.axes;
        let mut s = String::with_capacity(48 * self.values.len());
        for i in 0..a.n() {
            for j in 0..b.n() {
                let _ = writeln!(s, "{:.10e} {:.10e} {:.16e}", a.point(i), b.point(j), self.values[i * b.n() + j]);
            }
            s.push('\n');
        }
        s
    }
}

/// Write `<name>.dat` per field plus `manifest.txt` describing each grid.
/// Returns the paths written, manifest last.
pub fn emit_plot_data(dir: &Path, fields: &[PlotField]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("# file n1 spacing1 offset1 n2 spacing2 offset2\n");
    let mut written = Vec::with_capacity(fields.len() + 1);
    for f in fields {
        let file = format!("{}.dat", f.name);
        let path = dir.join(&file);
        write_atomic(&path, f.table().as_bytes())?;
        let [a, b] = f.axes;
        let _ = writeln!(
            manifest,
            "{file} {} {:.16e} {:.16e} {} {:.16e} {:.16e}",
            a.n(),
            a.spacing(),
            a.offset(),
            b.n(),
            b.spacing(),
            b.offset()
        );
        written.push(path);
    }
    let path = dir.join("manifest.txt");
    write_atomic(&path, manifest.as_bytes())?;
    written.push(path);
    Ok(written)
}
