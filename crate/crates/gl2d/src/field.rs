//! Complex P1 finite element fields: interpolation, exact transfer between nested
//! meshes, norms, global phase alignment, and the line-oriented field file format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::mesh::{Mesh2D, QuadratureRule};
use crate::{Error, Result};

/// A complex-valued piecewise-linear function, stored as real and imaginary nodal
/// coefficient vectors over a shared mesh.
#[derive(Debug, Clone)]
pub struct ComplexField {
    mesh: Arc<Mesh2D>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Norms of a field for a fixed kappa. `hk1` is the kappa-weighted H1 norm,
/// `hk1^2 = h1_semi^2 + kappa^2 * l2^2`.
#[derive(Debug, Clone)]
pub struct NormReport {
    pub l2: f64,
    pub h1_semi: f64,
    pub hk1: f64,
    /// L^p norms for p in {3, 4, 6}. p = 4 is exact for P1 data under the
    /// degree-5 rule; p = 3 and 6 are quadrature approximations.
    pub lp: BTreeMap<u32, f64>,
}

impl ComplexField {
    /// The zero field.
    pub fn zero(mesh: &Arc<Mesh2D>) -> Self {
        let n = mesh.num_nodes();
        ComplexField { mesh: Arc::clone(mesh), re: vec![0.0; n], im: vec![0.0; n] }
    }

    /// The constant field with value `z` at every node.
    pub fn constant(mesh: &Arc<Mesh2D>, z: Complex64) -> Self {
        let n = mesh.num_nodes();
        ComplexField { mesh: Arc::clone(mesh), re: vec![z.re; n], im: vec![z.im; n] }
    }

    /// Nodal interpolation of a pointwise function. Rejects non-finite values.
    pub fn interpolate(
        f: impl Fn(f64, f64) -> Complex64,
        mesh: &Arc<Mesh2D>,
    ) -> Result<Self> {
        let mut re = Vec::with_capacity(mesh.num_nodes());
        let mut im = Vec::with_capacity(mesh.num_nodes());
        for &[x, y] in mesh.coords() {
            let z = f(x, y);
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::NonFinite(format!("interpolated value at ({x}, {y}) is {z}")));
            }
            re.push(z.re);
            im.push(z.im);
        }
        Ok(ComplexField { mesh: Arc::clone(mesh), re, im })
    }

    /// Builds a field from nodal coefficient vectors.
    pub fn from_parts(mesh: &Arc<Mesh2D>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != mesh.num_nodes() || im.len() != mesh.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "coefficient length {}/{} does not match node count {}",
                re.len(),
                im.len(),
                mesh.num_nodes()
            )));
        }
        Ok(ComplexField { mesh: Arc::clone(mesh), re, im })
    }

    pub fn mesh(&self) -> &Arc<Mesh2D> {
        &self.mesh
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn value(&self, node: usize) -> Complex64 {
        Complex64::new(self.re[node], self.im[node])
    }

    pub fn set(&mut self, node: usize, z: Complex64) {
        self.re[node] = z.re;
        self.im[node] = z.im;
    }

    /// Stacked coefficient vector: all real parts, then all imaginary parts.
    pub fn to_stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.re.len());
        v.extend_from_slice(&self.re);
        v.extend_from_slice(&self.im);
        v
    }

    pub fn from_stacked(mesh: &Arc<Mesh2D>, v: &[f64]) -> Result<Self> {
        let n = mesh.num_nodes();
        if v.len() != 2 * n {
            return Err(Error::InvalidInput(format!(
                "stacked vector length {} != 2 * {n}",
                v.len()
            )));
        }
        Ok(ComplexField { mesh: Arc::clone(mesh), re: v[..n].to_vec(), im: v[n..].to_vec() })
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn from_complex(mesh: &Arc<Mesh2D>, v: &[Complex64]) -> Result<Self> {
        if v.len() != mesh.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "complex vector length {} != node count {}",
                v.len(),
                mesh.num_nodes()
            )));
        }
        Ok(ComplexField {
            mesh: Arc::clone(mesh),
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        })
    }

    /// Pointwise multiplication by a complex scalar (e.g. a phase factor).
    pub fn scaled(&self, z: Complex64) -> Self {
        let mut out = self.clone();
        for k in 0..out.re.len() {
            let v = Complex64::new(self.re[k], self.im[k]) * z;
            out.re[k] = v.re;
            out.im[k] = v.im;
        }
        out
    }

    /// Nodal difference `self - other`; the meshes must agree.
    pub fn sub(&self, other: &ComplexField) -> Result<Self> {
        same_mesh(self, other)?;
        let mut out = self.clone();
        for k in 0..out.re.len() {
            out.re[k] -= other.re[k];
            out.im[k] -= other.im[k];
        }
        Ok(out)
    }

    /// Largest nodal modulus.
    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| r.hypot(i))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

fn same_mesh(a: &ComplexField, b: &ComplexField) -> Result<()> {
    if a.mesh.n() != b.mesh.n() {
        return Err(Error::InvalidInput(format!(
            "fields live on different meshes (n = {} vs {})",
            a.mesh.n(),
            b.mesh.n()
        )));
    }
    Ok(())
}

/// Complex L2 inner product `integral of u * conj(v)`, exact for P1 data.
pub fn l2_product(u: &ComplexField, v: &ComplexField) -> Result<Complex64> {
    same_mesh(u, v)?;
    let rule = QuadratureRule::for_degree(5).expect("degree 5 is supported");
    let mesh = u.mesh.as_ref();
    let mut acc = Complex64::new(0.0, 0.0);
    for (t, &det) in mesh.triangles().iter().zip(mesh.dets()) {
        let uv: Vec<Complex64> = t.iter().map(|&i| u.value(i)).collect();
        let vv: Vec<Complex64> = t.iter().map(|&i| v.value(i)).collect();
        let mut local = Complex64::new(0.0, 0.0);
        for (pt, &w) in rule.points().iter().zip(rule.weights()) {
            let uq = pt[0] * uv[0] + pt[1] * uv[1] + pt[2] * uv[2];
            let vq = pt[0] * vv[0] + pt[1] * vv[1] + pt[2] * vv[2];
            local += w * uq * vq.conj();
        }
        acc += det * local;
    }
    Ok(acc)
}

/// Norms of `u` in the kappa-weighted family; see [`NormReport`].
pub fn norms(u: &ComplexField, kappa: f64) -> NormReport {
    let rule = QuadratureRule::for_degree(5).expect("degree 5 is supported");
    let mesh = u.mesh.as_ref();
    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    let mut lp_acc = [0.0_f64; 3]; // p = 3, 4, 6
    for ((t, &det), g) in mesh.triangles().iter().zip(mesh.dets()).zip(mesh.grads()) {
        let vals: Vec<Complex64> = t.iter().map(|&i| u.value(i)).collect();
        // The gradient of a P1 function is constant per triangle.
        let mut gx = Complex64::new(0.0, 0.0);
        let mut gy = Complex64::new(0.0, 0.0);
        for v in 0..3 {
            gx += vals[v] * g[v][0];
            gy += vals[v] * g[v][1];
        }
        h1_sq += 0.5 * det * (gx.norm_sqr() + gy.norm_sqr());
        let mut local_l2 = 0.0;
        let mut local_lp = [0.0_f64; 3];
        for (pt, &w) in rule.points().iter().zip(rule.weights()) {
            let uq = pt[0] * vals[0] + pt[1] * vals[1] + pt[2] * vals[2];
            let m2 = uq.norm_sqr();
            local_l2 += w * m2;
            let m = m2.sqrt();
            local_lp[0] += w * m2 * m;
            local_lp[1] += w * m2 * m2;
            local_lp[2] += w * m2 * m2 * m2;
        }
        l2_sq += det * local_l2;
        for k in 0..3 {
            lp_acc[k] += det * local_lp[k];
        }
    }
    let l2 = l2_sq.sqrt();
    let h1_semi = h1_sq.sqrt();
    let hk1 = (h1_sq + kappa * kappa * l2_sq).sqrt();
    let mut lp = BTreeMap::new();
    lp.insert(3, lp_acc[0].powf(1.0 / 3.0));
    lp.insert(4, lp_acc[1].powf(0.25));
    lp.insert(6, lp_acc[2].powf(1.0 / 6.0));
    NormReport { l2, h1_semi, hk1, lp }
}

/// Rotates `u` by the global phase that makes it L2-orthogonal to `i * v_ref`
/// with nonnegative correlation against `v_ref` (the distance-minimizing root).
///
/// Returns the angle and the rotated field. Fails with
/// [`Error::AlignmentUndefined`] when the complex correlation vanishes.
pub fn align_phase(u: &ComplexField, v_ref: &ComplexField) -> Result<(f64, ComplexField)> {
    let c = l2_product(u, v_ref)?;
    let scale = norms(u, 0.0).l2 * norms(v_ref, 0.0).l2;
    if c.norm() <= 1e-14 * scale {
        return Err(Error::AlignmentUndefined);
    }
    let phi = -c.arg();
    let aligned = u.scaled(Complex64::from_polar(1.0, phi));
    Ok((phi, aligned))
}

pub(crate) fn levels_between(coarse_n: usize, fine_n: usize) -> Result<u32> {
    let mut m = fine_n;
    let mut k = 0;
    while m > coarse_n {
        if m % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "meshes are not nested: {fine_n} is not a power-of-two multiple of {coarse_n}"
            )));
        }
        m /= 2;
        k += 1;
    }
    if m != coarse_n {
        return Err(Error::InvalidInput(format!(
            "meshes are not nested: {fine_n} is not a power-of-two multiple of {coarse_n}"
        )));
    }
    Ok(k)
}

fn prolong_one_level(re: &[f64], im: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let n2 = 2 * n;
    let (np, np2) = (n + 1, n2 + 1);
    let mut re2 = vec![0.0; np2 * np2];
    let mut im2 = vec![0.0; np2 * np2];
    for j in 0..np2 {
        for i in 0..np2 {
            let out = j * np2 + i;
            let (ic, jc) = (i / 2, j / 2);
            let a = jc * np + ic;
            match (i % 2, j % 2) {
                (0, 0) => {
                    re2[out] = re[a];
                    im2[out] = im[a];
                }
                (1, 0) => {
                    re2[out] = 0.5 * (re[a] + re[a + 1]);
                    im2[out] = 0.5 * (im[a] + im[a + 1]);
                }
                (0, 1) => {
                    re2[out] = 0.5 * (re[a] + re[a + np]);
                    im2[out] = 0.5 * (im[a] + im[a + np]);
                }
                // Cell centers sit on the lower-left-to-upper-right diagonal,
                // so the P1 value is the mean of the diagonal endpoints.
                _ => {
                    re2[out] = 0.5 * (re[a] + re[a + np + 1]);
                    im2[out] = 0.5 * (im[a] + im[a + np + 1]);
                }
            }
        }
    }
    (re2, im2)
}

/// Exact P1 embedding of `u` into a nested finer mesh: the result represents the
/// same function pointwise.
pub fn prolong(u: &ComplexField, fine: &Arc<Mesh2D>) -> Result<ComplexField> {
    let k = levels_between(u.mesh.n(), fine.n())?;
    let mut re = u.re.clone();
    let mut im = u.im.clone();
    let mut n = u.mesh.n();
    for _ in 0..k {
        let (r2, i2) = prolong_one_level(&re, &im, n);
        re = r2;
        im = i2;
        n *= 2;
    }
    Ok(ComplexField { mesh: Arc::clone(fine), re, im })
}

/// Nodal interpolation onto a nested coarser mesh: coarse values are copied from
/// the coinciding fine nodes.
pub fn restrict_interpolate(u_fine: &ComplexField, coarse: &Arc<Mesh2D>) -> Result<ComplexField> {
    let k = levels_between(coarse.n(), u_fine.mesh.n())?;
    let stride = 1usize << k;
    let (np_c, np_f) = (coarse.n() + 1, u_fine.mesh.n() + 1);
    let mut re = Vec::with_capacity(np_c * np_c);
    let mut im = Vec::with_capacity(np_c * np_c);
    for j in 0..np_c {
        for i in 0..np_c {
            let f = (j * stride) * np_f + i * stride;
            re.push(u_fine.re[f]);
            im.push(u_fine.im[f]);
        }
    }
    Ok(ComplexField { mesh: Arc::clone(coarse), re, im })
}

/// Writes `u` with its kappa to a field file, atomically (temp file + rename).
///
/// Format: header `n=<int> kappa=<float>`, then one `index,x,y,re,im` line per
/// node in canonical order, all floats in shortest round-trip decimal form.
pub fn write_field(path: &Path, u: &ComplexField, kappa: f64) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("n={} kappa={}\n", u.mesh.n(), kappa));
    for (idx, &[x, y]) in u.mesh.coords().iter().enumerate() {
        text.push_str(&format!("{idx},{x},{y},{},{}\n", u.re[idx], u.im[idx]));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile_path(dir, path);
    let mut file = std::fs::File::create(&tmp)?;
    file.write_all(text.as_bytes())?;
    file.sync_all()?;
    drop(file);
    if std::fs::rename(&tmp, path).is_err() {
        // Retry once with a fresh temp name before giving up.
        tmp = tempfile_path(dir, path);
        std::fs::write(&tmp, text.as_bytes())?;
        std::fs::rename(&tmp, path)?;
    }
    Ok(())
}

fn tempfile_path(dir: &Path, target: &Path) -> std::path::PathBuf {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nonce = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.subsec_nanos()).unwrap_or(0);
    let base = target.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dir.join(format!(".{base}.{nonce}.tmp"))
}

/// Reads a field file written by [`write_field`]; returns the field and its kappa.
pub fn read_field(path: &Path) -> Result<(ComplexField, f64)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty field file".into()))??;
    let (n, kappa) = parse_header(&header)?;
    let mesh = Arc::new(Mesh2D::build_uniform(n)?);
    let nn = mesh.num_nodes();
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let mut count = 0usize;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 fields", lineno + 2)));
        }
        let idx: usize = parts[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad index '{}'", lineno + 2, parts[0])))?;
        if idx != count || idx >= nn {
            return Err(Error::Parse(format!(
                "line {}: node index {idx} out of order (expected {count})",
                lineno + 2
            )));
        }
        let nums: Vec<f64> = parts[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("line {}: bad float", lineno + 2)))?;
        let [x, y] = mesh.coords()[idx];
        if nums[0] != x || nums[1] != y {
            return Err(Error::Parse(format!(
                "line {}: coordinates ({}, {}) disagree with the canonical mesh ({x}, {y})",
                lineno + 2,
                nums[0],
                nums[1]
            )));
        }
        if !nums[2].is_finite() || !nums[3].is_finite() {
            return Err(Error::NonFinite(format!("line {}: non-finite nodal value", lineno + 2)));
        }
        re[idx] = nums[2];
        im[idx] = nums[3];
        count += 1;
    }
    if count != nn {
        return Err(Error::Parse(format!("field file has {count} node lines, expected {nn}")));
    }
    Ok((ComplexField { mesh, re, im }, kappa))
}

fn parse_header(header: &str) -> Result<(usize, f64)> {
    let mut n = None;
    let mut kappa = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad n '{v}'")))?);
        } else if let Some(v) = tok.strip_prefix("kappa=") {
            kappa =
                Some(v.parse::<f64>().map_err(|_| Error::Parse(format!("bad kappa '{v}'")))?);
        } else {
            return Err(Error::Parse(format!("unexpected header token '{tok}'")));
        }
    }
    match (n, kappa) {
        (Some(n), Some(k)) => Ok((n, k)),
        _ => Err(Error::Parse("header must contain n= and kappa=".into())),
    }
}
