//! JSON-lines serialization of Fourier matrix fields.
//!
//! Line 1 is a header `{"form":"real"}` or `{"form":"complex"}`; each further
//! line is `{"nu":[..],"m":[re11,im11,re12,im12,re21,im21,re22,im22]}`.
//! [`save_field`] writes records in lexicographic order of `nu`, and
//! loading then saving such a file reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CMat, ComplexMatrixField, MatrixSeries, Nu, RealMatrixField, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Real,
    Complex,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    form: Form,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    nu: Nu,
    m: [f64; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Real(RealMatrixField),
    Complex(ComplexMatrixField),
}

impl Field {
    pub fn form(&self) -> Form {
        match self {
            Field::Real(_) => Form::Real,
            Field::Complex(_) => Form::Complex,
        }
    }

    pub fn series(&self) -> &MatrixSeries {
        match self {
            Field::Real(f) => f.series(),
            Field::Complex(g) => g.series(),
        }
    }

    /// The complex form used by the series and tree machinery.
    pub fn to_complex(&self) -> Result<ComplexMatrixField> {
        match self {
            Field::Real(f) => crate::model::complex_reduce(f),
            Field::Complex(g) => Ok(g.clone()),
        }
    }

    pub fn to_real(&self) -> RealMatrixField {
        match self {
            Field::Real(f) => f.clone(),
            Field::Complex(g) => RealMatrixField::from_complex(g),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parse field text. An empty text is the zero field of dimension `dim_hint`.
pub fn parse_field(text: &str, path: &Path, dim_hint: usize) -> Result<Field> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hl, header)) = lines.next() else {
        return Ok(Field::Complex(ComplexMatrixField::zero(dim_hint)));
    };
    let header: Header = serde_json::from_str(header)
        .map_err(|e| parse_err(path, hl + 1, format!("bad header (expected {{\"form\":...}}): {e}")))?;
    let mut series: Option<MatrixSeries> = None;
    for (i, line) in lines {
        let r: Record = serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let s = series.get_or_insert_with(|| MatrixSeries::new(r.nu.dim()));
        if r.nu.dim() != s.dim {
            return Err(parse_err(path, i + 1, format!("momentum {} has wrong dimension", r.nu)));
        }
        let m = r.m;
        let mat = CMat::new(
            C64::new(m[0], m[1]),
            C64::new(m[2], m[3]),
            C64::new(m[4], m[5]),
            C64::new(m[6], m[7]),
        );
        if s.coeffs.insert(r.nu, mat).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate momentum {}", r.nu)));
        }
    }
    let series = series.unwrap_or_else(|| MatrixSeries::new(dim_hint));
    Ok(match header.form {
        Form::Real => Field::Real(RealMatrixField::new(series)?),
        Form::Complex => Field::Complex(ComplexMatrixField::new(series)?),
    })
}

pub fn load_field(path: &Path, dim_hint: usize) -> Result<Field> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_field(&text, path, dim_hint)
}

pub fn field_to_string(form: Form, series: &MatrixSeries) -> String {
    let mut out = serde_json::to_string(&Header { form }).expect("header serializes");
    out.push('\n');
    for (nu, m) in &series.coeffs {
        let rec = Record {
            nu: *nu,
            m: [
                m[(0, 0)].re,
                m[(0, 0)].im,
                m[(0, 1)].re,
                m[(0, 1)].im,
                m[(1, 0)].re,
                m[(1, 0)].im,
                m[(1, 1)].re,
                m[(1, 1)].im,
            ],
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    let text = field_to_string(field.form(), field.series());
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The two-mode test field g12,(1,0) = 1, g21,(-1,0) = 1 in complex form.
pub fn golden_sparse() -> ComplexMatrixField {
    let mut s = MatrixSeries::new(2);
    let z = C64::default();
    let one = C64::new(1.0, 0.0);
    s.coeffs.insert(Nu::new(&[1, 0]), CMat::new(z, one, z, z));
    s.coeffs.insert(Nu::new(&[-1, 0]), CMat::new(z, z, one, z));
    ComplexMatrixField::new(s).expect("test field is m-symmetric")
}

/// Multi-mode test field with near-resonant golden modes:
/// g11,0 = 0.3i; g12 at (2,-3), (-34,55), (89,-144), (1,0); g11 at (13,-21).
pub fn golden_rich() -> ComplexMatrixField {
    let mut s = MatrixSeries::new(2);
    let z = C64::default();
    let mut put = |nu: [i32; 2], m: CMat| {
        *s.coeffs.entry(Nu::new(&nu)).or_insert_with(CMat::zeros) += m;
    };
    let k = C64::new(0.0, 0.3);
    put([0, 0], CMat::new(k, z, z, -k));
    for (nu, a) in [
        ([2, -3], C64::new(0.5, 0.1)),
        ([-34, 55], C64::new(0.3, -0.2)),
        ([89, -144], C64::new(0.2, 0.1)),
        ([1, 0], C64::new(0.4, 0.0)),
    ] {
        put(nu, CMat::new(z, a, z, z));
        put([-nu[0], -nu[1]], CMat::new(z, z, a.conj(), z));
    }
    let b = C64::new(0.2, 0.1);
    put([13, -21], CMat::new(b, z, z, -b));
    put([-13, 21], CMat::new(-b.conj(), z, z, b.conj()));
    ComplexMatrixField::new(s).expect("test field is m-symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let text = field_to_string(Form::Complex, golden_sparse().series());
        let f = parse_field(&text, Path::new("mem"), 2).unwrap();
        assert_eq!(field_to_string(f.form(), f.series()), text);
        assert_eq!(f, Field::Complex(golden_sparse()));
    }

    #[test]
    fn shipped_fixtures_are_frozen() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        for (name, g) in [
            ("golden_sparse.jsonl", golden_sparse()),
            ("golden_rich.jsonl", golden_rich()),
        ] {
            let text = fs::read_to_string(dir.join(name)).unwrap();
            assert_eq!(text, field_to_string(Form::Complex, g.series()), "{name}");
            let f = load_field(&dir.join(name), 2).unwrap();
            assert_eq!(f.to_complex().unwrap(), g);
        }
    }

    #[test]
    fn real_form_roundtrip() {
        let f = Field::Complex(golden_rich()).to_real();
        let text = field_to_string(Form::Real, f.series());
        let back = parse_field(&text, Path::new("mem"), 2).unwrap();
        assert_eq!(field_to_string(back.form(), back.series()), text);
        let g = back.to_complex().unwrap();
        for (nu, m) in &golden_rich().series().coeffs {
            let d = (g.series().coeffs[nu] - m).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(d < 1e-15);
        }
    }

    #[test]
    fn empty_is_zero() {
        match parse_field("", Path::new("mem"), 2).unwrap() {
            Field::Complex(g) => assert!(g.is_zero() && g.dim() == 2),
            _ => unreachable!(),
        }
    }

    #[test]
    fn trace_rejected() {
        let text = "{\"form\":\"real\"}\n{\"nu\":[0,0],\"m\":[1,0,0,0,0,0,1,0]}\n";
        let err = parse_field(text, Path::new("mem"), 2).unwrap_err();
        assert!(err.to_string().contains("trace"), "{err}");
    }

    #[test]
    fn duplicate_rejected() {
        let text =
            "{\"form\":\"complex\"}\n{\"nu\":[0,0],\"m\":[0,0,0,0,0,0,0,0]}\n{\"nu\":[0,0],\"m\":[0,0,0,0,0,0,0,0]}\n";
        assert!(parse_field(text, Path::new("mem"), 2).is_err());
    }
}
