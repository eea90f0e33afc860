//! Binary container format and PGM export.
//!
//! Layout (little-endian): magic `KSPC`, version `u32`, kind `u32`, rank `u32`,
//! `rank` dims as `u64`, dtype `u32`, then the row-major payload.
//!
//! Data carrying readout oversampling `os > 1` is written with a leading `os`
//! axis (`[os, M, ...]`), which has the same memory layout as `[os·M, ...]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::data::{ImageData, KspaceData, RealImage};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, Network, Padding};
use crate::sampling::{AcsRegion, SamplingMask};
use crate::sense::WavePsf;
use crate::spark::{CorrectionModel, SparkModels};
use crate::tensor::ComplexTensor;

pub const MAGIC: [u8; 4] = *b"KSPC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Tensor = 0,
    Mask = 1,
    Psf = 2,
    Model = 3,
    Maps = 4,
}

impl Kind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => Kind::Tensor,
            1 => Kind::Mask,
            2 => Kind::Psf,
            3 => Kind::Model,
            4 => Kind::Maps,
            _ => return Err(field_err("kind", format!("unknown tag {v}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> u32 {
        match self {
            Payload::Complex(_) => 0,
            Payload::Real(_) => 1,
            Payload::Bytes(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Complex(v) => v.len(),
            Payload::Real(v) => v.len(),
            Payload::Bytes(v) => v.len(),
        }
    }
}

fn width(dtype: u32) -> Result<usize> {
    match dtype {
        0 => Ok(16),
        1 => Ok(8),
        2 => Ok(1),
        _ => Err(field_err("dtype", format!("unknown tag {dtype}"))),
    }
}

fn field_err(field: &'static str, msg: impl Into<String>) -> Error {
    Error::Container { field, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub dims: Vec<u64>,
    pub payload: Payload,
}

impl Container {
    pub fn new(kind: Kind, dims: Vec<u64>, payload: Payload) -> Result<Self> {
        let n = checked_count(&dims)?;
        if n != payload.len() as u64 {
            return Err(field_err(
                "payload",
                format!("{} values for dims {dims:?}", payload.len()),
            ));
        }
        Ok(Self { kind, dims, payload })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.dims.len() + 16 * self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.payload.dtype().to_le_bytes());
        match &self.payload {
            Payload::Complex(v) => {
                for z in v {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
            Payload::Real(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::Bytes(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(field_err("magic", format!("expected KSPC, found {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(field_err("version", format!("unsupported version {version}")));
        }
        let kind = Kind::from_u32(r.u32("kind")?)?;
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
        let dtype = r.u32("dtype")?;
        let w = width(dtype)?;
        let n = checked_count(&dims)?;
        let expected = n
            .checked_mul(w as u64)
            .ok_or_else(|| field_err("dims", "payload size overflows"))?;
        let remaining = (bytes.len() - r.pos) as u64;
        if remaining != expected {
            return Err(field_err(
                "payload",
                format!("length {remaining} bytes, expected {expected}"),
            ));
        }
        let body = &bytes[r.pos..];
        let f64_at = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let n = n as usize;
        let payload = match dtype {
            0 => Payload::Complex((0..n).map(|i| Complex64::new(f64_at(2 * i), f64_at(2 * i + 1))).collect()),
            1 => Payload::Real((0..n).map(f64_at).collect()),
            _ => Payload::Bytes(body.to_vec()),
        };
        Ok(Self { kind, dims, payload })
    }

    fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(field_err("kind", format!("expected {kind:?}, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    fn complex(&self) -> Result<&[Complex64]> {
        match &self.payload {
            Payload::Complex(v) => Ok(v),
            _ => Err(field_err("dtype", "expected complex128")),
        }
    }

    fn complex_tensor(&self) -> Result<ComplexTensor> {
        ComplexTensor::new(self.dims_usize(), self.complex()?.to_vec())
    }

    /// Complex tensor of any rank.
    pub fn from_tensor(t: &ComplexTensor) -> Self {
        let dims = t.dims().iter().map(|&d| d as u64).collect();
        Self {
            kind: Kind::Tensor,
            dims,
            payload: Payload::Complex(t.data().to_vec()),
        }
    }

    pub fn to_tensor(&self) -> Result<ComplexTensor> {
        self.expect_kind(Kind::Tensor)?;
        self.complex_tensor()
    }

    pub fn from_real(img: &RealImage) -> Self {
        Self {
            kind: Kind::Tensor,
            dims: img.dims.iter().map(|&d| d as u64).collect(),
            payload: Payload::Real(img.data.clone()),
        }
    }

    pub fn to_real(&self) -> Result<RealImage> {
        self.expect_kind(Kind::Tensor)?;
        match &self.payload {
            Payload::Real(v) => RealImage::new(self.dims_usize(), v.clone()),
            _ => Err(field_err("dtype", "expected float64")),
        }
    }

    /// Multi-coil k-space `[ro, pe, pa, coil]`, with a leading oversampling axis when `os > 1`.
    pub fn from_kspace(k: &KspaceData) -> Self {
        let os = k.readout_oversample();
        let [nro, npe, npa, nc] = k.dims();
        let dims = if os > 1 {
            vec![os, nro / os, npe, npa, nc]
        } else {
            vec![nro, npe, npa, nc]
        };
        Self {
            kind: Kind::Tensor,
            dims: dims.into_iter().map(|d| d as u64).collect(),
            payload: Payload::Complex(k.tensor().data().to_vec()),
        }
    }

    pub fn to_kspace(&self) -> Result<KspaceData> {
        self.expect_kind(Kind::Tensor)?;
        let d = self.dims_usize();
        let (os, dims) = match d.len() {
            4 => (1, d),
            5 => (d[0], vec![d[0] * d[1], d[2], d[3], d[4]]),
            r => return Err(field_err("rank", format!("k-space needs rank 4 or 5, found {r}"))),
        };
        KspaceData::new(ComplexTensor::new(dims, self.complex()?.to_vec())?, os)
    }

    pub fn from_maps(maps: &ImageData) -> Self {
        Self {
            kind: Kind::Maps,
            ..Self::from_tensor(maps.tensor())
        }
    }

    pub fn to_maps(&self) -> Result<ImageData> {
        self.expect_kind(Kind::Maps)?;
        ImageData::new(self.complex_tensor()?)
    }

    /// Point spread function as `[os, M, N, P]`.
    pub fn from_psf(psf: &WavePsf) -> Self {
        let os = psf.oversample();
        let d = psf.phase().dims();
        Self {
            kind: Kind::Psf,
            dims: [os, d[0] / os, d[1], d[2]].iter().map(|&v| v as u64).collect(),
            payload: Payload::Complex(psf.phase().data().to_vec()),
        }
    }

    pub fn to_psf(&self) -> Result<WavePsf> {
        self.expect_kind(Kind::Psf)?;
        let d = self.dims_usize();
        if d.len() != 4 {
            return Err(field_err("rank", format!("PSF needs rank 4, found {}", d.len())));
        }
        let phase = ComplexTensor::new(vec![d[0] * d[1], d[2], d[3]], self.complex()?.to_vec())?;
        WavePsf::new(phase, d[0])
    }

    /// Mask as `[n_pe, n_pa]` bytes: bit 0 sampled, bit 1 ACS block,
    /// bit 2 exterior lattice point, bit 3 elliptical exterior (set everywhere).
    pub fn from_mask(mask: &SamplingMask) -> Self {
        let (n_pe, n_pa) = (mask.n_pe(), mask.n_pa());
        let mut bytes = Vec::with_capacity(n_pe * n_pa);
        for pe in 0..n_pe {
            for pa in 0..n_pa {
                let mut b = mask.is_sampled(pe, pa) as u8;
                if mask.acs.is_some_and(|a| a.contains(pe, pa)) {
                    b |= 2;
                }
                if mask.on_lattice(pe, pa) {
                    b |= 4;
                }
                if mask.elliptical {
                    b |= 8;
                }
                bytes.push(b);
            }
        }
        Self {
            kind: Kind::Mask,
            dims: vec![n_pe as u64, n_pa as u64],
            payload: Payload::Bytes(bytes),
        }
    }

    pub fn to_mask(&self) -> Result<SamplingMask> {
        self.expect_kind(Kind::Mask)?;
        let Payload::Bytes(bytes) = &self.payload else {
            return Err(field_err("dtype", "expected uint8"));
        };
        let d = self.dims_usize();
        if d.len() != 2 {
            return Err(field_err("rank", format!("mask needs rank 2, found {}", d.len())));
        }
        let (n_pe, n_pa) = (d[0], d[1]);
        let at = |pe: usize, pa: usize| bytes[pe * n_pa + pa];
        let coords = |bit: u8| {
            (0..n_pe).flat_map(move |pe| (0..n_pa).map(move |pa| (pe, pa))).filter(move |&(pe, pa)| at(pe, pa) & bit != 0)
        };
        let grid = bytes.iter().map(|b| b & 1 != 0).collect();
        let lattice: Vec<_> = coords(4).collect();
        let r_pa = spacing(lattice.iter().map(|p| p.1), n_pa);
        let r_pe = spacing(lattice.iter().filter(|p| p.1 == 0).map(|p| p.0), n_pe);
        let shift = lattice
            .iter()
            .filter(|p| p.1 == r_pa)
            .map(|p| p.0 % r_pe)
            .min()
            .unwrap_or(0);
        let mut mask = SamplingMask::from_grid(n_pe, n_pa, grid, (r_pe, r_pa))?;
        mask.shift = shift;
        mask.elliptical = bytes.first().is_some_and(|b| b & 8 != 0);
        let acs: Vec<_> = coords(2).collect();
        if !acs.is_empty() {
            let lo = |f: fn(&(usize, usize)) -> usize| acs.iter().map(f).min().expect("non-empty");
            let hi = |f: fn(&(usize, usize)) -> usize| acs.iter().map(f).max().expect("non-empty");
            let (pe, pa) = ((lo(|p| p.0), hi(|p| p.0)), (lo(|p| p.1), hi(|p| p.1)));
            let sampled: Vec<_> = acs.iter().filter(|&&(e, a)| at(e, a) & 1 != 0).collect();
            // A one-entry extent says nothing about the rate.
            let rate = (
                if pe.0 == pe.1 { 1 } else { spacing(sampled.iter().map(|p| p.0), n_pe) },
                if pa.0 == pa.1 { 1 } else { spacing(sampled.iter().map(|p| p.1), n_pa) },
            );
            mask.acs = Some(AcsRegion { pe, pa, rate });
        }
        Ok(mask)
    }

    /// Every per-coil model as one flat float vector.
    pub fn from_models(models: &SparkModels) -> Self {
        let mut v = vec![models.models.len() as f64];
        for m in &models.models {
            v.push(m.coil_index as f64);
            v.push(m.scale);
            encode_network(&m.network, &mut v);
        }
        Self {
            kind: Kind::Model,
            dims: vec![v.len() as u64],
            payload: Payload::Real(v),
        }
    }

    pub fn to_models(&self) -> Result<SparkModels> {
        self.expect_kind(Kind::Model)?;
        let Payload::Real(v) = &self.payload else {
            return Err(field_err("dtype", "expected float64"));
        };
        let mut r = FloatReader { v, pos: 0 };
        let n = r.count()?;
        let mut models = Vec::with_capacity(n);
        for _ in 0..n {
            let coil_index = r.count()?;
            let scale = r.next()?;
            let network = decode_network(&mut r)?;
            models.push(CorrectionModel {
                coil_index,
                network,
                scale,
            });
        }
        if r.pos != v.len() {
            return Err(field_err("payload", "trailing values after the last model"));
        }
        Ok(SparkModels {
            models,
            reports: Vec::new(),
        })
    }
}

/// Lattice step from the coordinates present: their gcd, or `n` if only 0 occurs.
fn spacing(coords: impl Iterator<Item = usize>, n: usize) -> usize {
    let g = coords.fold(0, gcd);
    if g == 0 {
        n.max(1)
    } else {
        g
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn checked_count(dims: &[u64]) -> Result<u64> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| field_err("dims", format!("{dims:?} overflows")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(field_err(field, format!("file truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

struct FloatReader<'a> {
    v: &'a [f64],
    pos: usize,
}

impl FloatReader<'_> {
    fn next(&mut self) -> Result<f64> {
        let x = *self.v.get(self.pos).ok_or_else(|| field_err("payload", "model truncated"))?;
        self.pos += 1;
        Ok(x)
    }

    fn count(&mut self) -> Result<usize> {
        let x = self.next()?;
        if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(field_err("payload", format!("expected a count, found {x}")));
        }
        Ok(x as usize)
    }

    fn slice(&mut self, n: usize) -> Result<&[f64]> {
        if self.v.len() - self.pos < n {
            return Err(field_err("payload", "model truncated"));
        }
        let s = &self.v[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn encode_network(net: &Network, v: &mut Vec<f64>) {
    v.push(net.layers.len() as f64);
    for (l, act) in net.layers.iter().zip(&net.activations) {
        v.extend([l.in_channels, l.out_channels, l.kernel[0], l.kernel[1], l.kernel[2]].map(|x| x as f64));
        v.push(match l.padding {
            Padding::Same => 0.0,
            Padding::Valid => 1.0,
        });
        v.push(match act {
            Activation::Identity => 0.0,
            Activation::Relu => 1.0,
            Activation::CustomNl => 2.0,
        });
        v.extend_from_slice(&l.weights);
    }
    v.push(net.skips.len() as f64);
    for &(s, d) in &net.skips {
        v.extend([s as f64, d as f64]);
    }
}

fn decode_network(r: &mut FloatReader<'_>) -> Result<Network> {
    let n = r.count()?;
    let mut layers = Vec::with_capacity(n);
    let mut acts = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, o) = (r.count()?, r.count()?);
        let kernel = [r.count()?, r.count()?, r.count()?];
        let padding = match r.count()? {
            0 => Padding::Same,
            1 => Padding::Valid,
            p => return Err(field_err("payload", format!("unknown padding code {p}"))),
        };
        acts.push(match r.count()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::CustomNl,
            a => return Err(field_err("payload", format!("unknown activation code {a}"))),
        });
        let mut layer = ConvLayer::new(i, o, kernel, padding)?;
        let len = layer.weights.len();
        layer.weights.copy_from_slice(r.slice(len)?);
        layers.push(layer);
    }
    let n_skips = r.count()?;
    let skips = (0..n_skips)
        .map(|_| Ok((r.count()?, r.count()?)))
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers, acts, skips)
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&c.encode()).map_err(io)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Container::decode(&bytes)
}

/// Display window for [`export_pgm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// `(0, max)`.
    Auto,
    Range(f64, f64),
}

/// Encode a real image as binary PGM, linearly mapping the window to 0..=255.
///
/// Images are `(rows, cols, slices)`; slices are tiled left to right.
/// An all-zero image under `Auto` maps to black.
pub fn encode_pgm(img: &RealImage, window: Window) -> Result<Vec<u8>> {
    let (rows, cols, slices) = match img.dims.as_slice() {
        [r] => (*r, 1, 1),
        [r, c] => (*r, *c, 1),
        [r, c, s] => (*r, *c, *s),
        d => return Err(Error::shape(format!("cannot display a {}-d image", d.len()))),
    };
    let (lo, hi) = match window {
        Window::Auto => (0.0, img.data.iter().cloned().fold(0.0, f64::max)),
        Window::Range(lo, hi) => {
            if !(hi > lo) {
                return Err(Error::invalid(format!("empty display window ({lo}, {hi})")));
            }
            (lo, hi)
        }
    };
    let width = cols * slices;
    let mut out = format!("P5\n{width} {rows}\n255\n").into_bytes();
    for i in 0..rows {
        for s in 0..slices {
            for j in 0..cols {
                let x = img.data[(i * cols + j) * slices + s];
                let v = if hi > lo { ((x - lo) / (hi - lo) * 255.0).round() } else { 0.0 };
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

pub fn export_pgm(img: &RealImage, path: &Path, window: Window) -> Result<()> {
    let bytes = encode_pgm(img, window)?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
