//! Matrices of the form `diag(d) ± UᵀU`.
//!
//! Covariance estimates and their inverses are always kept in this factored
//! form. Every operation here costs `O(m²p + m³)` or less, so nothing on the
//! hot path allocates a `p×p` matrix. [`DiagLowRank::to_dense`] exists for
//! tests and small exports only.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, forward_substitute, frobenius_sq};

/// Sign of the low-rank term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    fn from_i8(v: i8) -> Option<Sign> {
        match v {
            1 => Some(Sign::Plus),
            -1 => Some(Sign::Minus),
            _ => None,
        }
    }
}

/// A symmetric `p×p` matrix `diag(d) + sign·UᵀU` with `U` of shape `m×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagLowRank {
    d: Array1<f64>,
    u: Array2<f64>,
    sign: Sign,
}

impl DiagLowRank {
    pub fn new(d: Array1<f64>, u: Array2<f64>, sign: Sign) -> Result<Self> {
        if u.ncols() != d.len() {
            return Err(Error::DimensionMismatch(format!(
                "diagonal has length {} but factors have {} columns",
                d.len(),
                u.ncols()
            )));
        }
        Ok(Self { d, u, sign })
    }

    /// `diag(d)` with an empty (`m = 0`) factor.
    pub fn diagonal(d: Array1<f64>) -> Self {
        let p = d.len();
        Self {
            d,
            u: Array2::zeros((0, p)),
            sign: Sign::Plus,
        }
    }

    pub fn identity(p: usize) -> Self {
        Self::diagonal(Array1::ones(p))
    }

    pub fn p(&self) -> usize {
        self.d.len()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn diag(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn factors(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn into_parts(self) -> (Array1<f64>, Array2<f64>, Sign) {
        (self.d, self.u, self.sign)
    }

    /// `S A S` for `S = diag(scale)`; the result stays diagonal-plus-low-rank.
    pub fn scale_symmetric(&self, scale: &Array1<f64>) -> Result<DiagLowRank> {
        self.check_len(scale.len(), "scale vector")?;
        let d = &self.d * &scale.mapv(|s| s * s);
        let u = &self.u * scale;
        Ok(Self {
            d,
            u,
            sign: self.sign,
        })
    }

    /// Entries of the diagonal of the dense matrix.
    pub fn dense_diagonal(&self) -> Array1<f64> {
        let col_sq = self.u.map(|v| v * v).sum_axis(Axis(0));
        &self.d + &(col_sq * self.sign.value())
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if n != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "{what} has {n} entries, matrix is {p}x{p}",
                p = self.p()
            )));
        }
        Ok(())
    }

    /// `A·X` in `O(mkp)`.
    pub fn matmul(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_len(x.nrows(), "right-hand side")?;
        let ux = self.u.dot(&x);
        let mut out = self.u.t().dot(&ux);
        if self.sign == Sign::Minus {
            out.mapv_inplace(|v| -v);
        }
        for (i, &di) in self.d.iter().enumerate() {
            let xi = x.row(i);
            out.row_mut(i).scaled_add(di, &xi);
        }
        Ok(out)
    }

    /// Quadratic forms `xᵀ A x` for every row `x` of `rows` (`n×p`).
    pub fn quadratic_forms(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_len(rows.ncols(), "sample rows")?;
        let proj = rows.dot(&self.u.t());
        let s = self.sign.value();
        let out = rows
            .axis_iter(Axis(0))
            .zip(proj.axis_iter(Axis(0)))
            .map(|(x, z)| {
                let diag: f64 = x.iter().zip(self.d.iter()).map(|(xi, di)| di * xi * xi).sum();
                let low: f64 = z.iter().map(|v| v * v).sum();
                diag + s * low
            })
            .collect();
        Ok(out)
    }

    fn check_positive_diag(&self) -> Result<()> {
        if let Some((i, v)) = self
            .d
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::NotPositiveDefinite(format!(
                "diagonal entry {i} is {v:e}"
            )));
        }
        Ok(())
    }

    /// `I_m ± U D⁻¹ Uᵀ`, the capacitance matrix shared by log-det and inverse.
    fn capacitance(&self) -> (Array2<f64>, Array2<f64>) {
        let scaled = &self.u / &self.d;
        let mut k = scaled.dot(&self.u.t());
        if self.sign == Sign::Minus {
            k.mapv_inplace(|v| -v);
        }
        for j in 0..k.nrows() {
            k[[j, j]] += 1.0;
        }
        (k, scaled)
    }

    /// `log det A` via the matrix determinant lemma,
    /// `det(D ± UᵀU) = det(I_m ± U D⁻¹ Uᵀ) det(D)`.
    ///
    /// Fails with [`Error::NotPositiveDefinite`] if `A` is not positive definite.
    pub fn log_det(&self) -> Result<f64> {
        self.check_positive_diag()?;
        let (k, _) = self.capacitance();
        let l = cholesky(k.view())?;
        let inner: f64 = l.diag().iter().map(|v| 2.0 * v.ln()).sum();
        let outer: f64 = self.d.iter().map(|v| v.ln()).sum();
        Ok(inner + outer)
    }

    /// Inverse through the Woodbury identity. The result has the opposite sign:
    /// `(D + UᵀU)⁻¹ = D⁻¹ − VᵀV` with `V = L⁻¹ U D⁻¹` and `L Lᵀ = I + U D⁻¹ Uᵀ`.
    pub fn invert(&self) -> Result<DiagLowRank> {
        self.check_positive_diag()?;
        let (k, mut scaled) = self.capacitance();
        let l = cholesky(k.view())?;
        forward_substitute(l.view(), &mut scaled);
        Ok(DiagLowRank {
            d: self.d.mapv(|v| 1.0 / v),
            u: scaled,
            sign: self.sign.flip(),
        })
    }

    /// `‖A − B‖_F²` without forming either matrix.
    pub fn frobenius_diff_sq(&self, other: &DiagLowRank) -> Result<f64> {
        self.check_len(other.p(), "other matrix")?;
        let (sa, sb) = (self.sign.value(), other.sign.value());
        let dd = &self.d - &other.d;
        let term_diag: f64 = dd.iter().map(|v| v * v).sum();

        let ua = self.u.map(|v| v * v).sum_axis(Axis(0));
        let ub = other.u.map(|v| v * v).sum_axis(Axis(0));
        let term_cross: f64 = 2.0
            * dd
                .iter()
                .zip(ua.iter().zip(ub.iter()))
                .map(|(d, (a, b))| d * (sa * a - sb * b))
                .sum::<f64>();

        let uu = self.u.dot(&self.u.t());
        let vv = other.u.dot(&other.u.t());
        let vu = other.u.dot(&self.u.t());
        let term_low =
            frobenius_sq(uu.view()) - 2.0 * sa * sb * frobenius_sq(vu.view()) + frobenius_sq(vv.view());

        Ok(term_diag + term_cross + term_low)
    }

    /// Squared row norms of `A − B`: entry `i` is `Σ_k (A − B)_{ik}²`.
    pub fn per_variable_change(&self, other: &DiagLowRank) -> Result<Array1<f64>> {
        self.check_len(other.p(), "other matrix")?;
        let (sa, sb) = (self.sign.value(), other.sign.value());
        let uu = self.u.dot(&self.u.t());
        let vv = other.u.dot(&other.u.t());
        let uv = self.u.dot(&other.u.t());
        // Columns of G·U for each Gram matrix; contracting with u_i gives the quadratic forms.
        let uu_u = uu.dot(&self.u);
        let vv_v = vv.dot(&other.u);
        let uv_v = uv.dot(&other.u);
        let p = self.p();
        let mut out = Array1::zeros(p);
        for i in 0..p {
            let ui = self.u.column(i);
            let vi = other.u.column(i);
            let a2 = ui.dot(&ui);
            let b2 = vi.dot(&vi);
            let dd = self.d[i] - other.d[i];
            let low = ui.dot(&uu_u.column(i)) - 2.0 * sa * sb * ui.dot(&uv_v.column(i))
                + vi.dot(&vv_v.column(i));
            out[i] = dd * dd + 2.0 * dd * (sa * a2 - sb * b2) + low;
        }
        Ok(out)
    }

    /// Dense `p×p` matrix. Quadratic memory; for tests and small exports.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = self.u.t().dot(&self.u);
        if self.sign == Sign::Minus {
            out.mapv_inplace(|v| -v);
        }
        let p = self.p();
        // Symmetrize exactly; gemm does not guarantee bitwise symmetry.
        for i in 0..p {
            for k in (i + 1)..p {
                let v = out[[i, k]];
                out[[k, i]] = v;
            }
            out[[i, i]] += self.d[i];
        }
        out
    }

    const MAGIC: &'static [u8; 4] = b"DLR1";

    /// Little-endian binary layout: `"DLR1"`, `u32 p`, `u32 m`, `i8 sign`,
    /// `f64[p]` diagonal, `f64[m·p]` factors row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.p() as u32).to_le_bytes())?;
        w.write_all(&(self.m() as u32).to_le_bytes())?;
        w.write_all(&self.sign.as_i8().to_le_bytes())?;
        for v in self.d.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.u.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.binary_len());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn binary_len(&self) -> usize {
        4 + 4 + 4 + 1 + 8 * (self.p() + self.m() * self.p())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |e: std::io::Error| Error::CorruptBinary(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != Self::MAGIC {
            return Err(Error::CorruptBinary(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(corrupt)?;
        let p = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(corrupt)?;
        let m = u32::from_le_bytes(b4) as usize;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(corrupt)?;
        let sign = Sign::from_i8(b1[0] as i8)
            .ok_or_else(|| Error::CorruptBinary(format!("bad sign byte {}", b1[0])))?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b8 = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b8).map_err(corrupt)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let d = Array1::from(read_f64s(p)?);
        let u = Array2::from_shape_vec((m, p), read_f64s(m * p)?)
            .map_err(|e| Error::CorruptBinary(e.to_string()))?;
        Ok(Self { d, u, sign })
    }
}

#[derive(Serialize, Deserialize)]
struct DlrJson {
    p: usize,
    m: usize,
    sign: i8,
    d: Vec<f64>,
    u: Vec<Vec<f64>>,
}

impl Serialize for DiagLowRank {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DlrJson {
            p: self.p(),
            m: self.m(),
            sign: self.sign.as_i8(),
            d: self.d.to_vec(),
            u: self.u.outer_iter().map(|r| r.to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiagLowRank {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DlrJson::deserialize(de)?;
        let sign = Sign::from_i8(raw.sign)
            .ok_or_else(|| D::Error::custom(format!("sign must be +1 or -1, got {}", raw.sign)))?;
        if raw.d.len() != raw.p || raw.u.len() != raw.m {
            return Err(D::Error::custom("declared p/m do not match array sizes"));
        }
        let mut flat = Vec::with_capacity(raw.m * raw.p);
        for row in &raw.u {
            if row.len() != raw.p {
                return Err(D::Error::custom("factor row length differs from p"));
            }
            flat.extend_from_slice(row);
        }
        let u = Array2::from_shape_vec((raw.m, raw.p), flat).map_err(D::Error::custom)?;
        Ok(DiagLowRank {
            d: Array1::from(raw.d),
            u,
            sign,
        })
    }
}
