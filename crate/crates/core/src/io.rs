//! Image CSV files, the binary `SOIR` container, chain traces and datasets.
//!
//! Container layout (little-endian): magic `SOIR`, `u32 nx`, `u32 ny`,
//! `u32` record count, then `count · nx · ny` `f64` values, each record in
//! row-major pixel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SoirError};
use crate::estimators::McmcChain;
use crate::image::{Image2D, RegressionDataset};

pub const MAGIC: &[u8; 4] = b"SOIR";
pub const HEADER_BYTES: usize = 16;

/// Records of equal size `nx·ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub nx: usize,
    pub ny: usize,
    pub records: Vec<Vec<f64>>,
}

impl Container {
    pub fn new(nx: usize, ny: usize, records: Vec<Vec<f64>>) -> Result<Self> {
        if records.iter().any(|r| r.len() != nx * ny) {
            return Err(SoirError::DimensionMismatch(format!(
                "records must hold {nx}x{ny} values"
            )));
        }
        Ok(Self { nx, ny, records })
    }

    pub fn from_images(images: &[Image2D]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| SoirError::InvalidInput("no images".into()))?;
        Self::new(
            first.nx(),
            first.ny(),
            images.iter().map(|i| i.values().to_vec()).collect(),
        )
    }

    pub fn images(&self) -> Result<Vec<Image2D>> {
        self.records
            .iter()
            .map(|r| Image2D::new(self.nx, self.ny, r.clone()))
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| SoirError::InvalidInput(format!("{what} {v} exceeds u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&u32_of(self.nx, "nx")?.to_le_bytes())?;
        w.write_all(&u32_of(self.ny, "ny")?.to_le_bytes())?;
        w.write_all(&u32_of(self.records.len(), "record count")?.to_le_bytes())?;
        for r in &self.records {
            for v in r {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)
            .map_err(|_| SoirError::Parse("container shorter than its header".into()))?;
        if &header[..4] != MAGIC {
            return Err(SoirError::Parse("not a SOIR container".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (nx, ny, count) = (word(1), word(2), word(3));
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = count
            .checked_mul(nx * ny)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| SoirError::Parse("container dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(SoirError::Parse(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let records = if nx * ny == 0 {
            vec![Vec::new(); count]
        } else {
            values.chunks(nx * ny).map(<[f64]>::to_vec).collect()
        };
        Ok(Self { nx, ny, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn csv_error(e: csv::Error) -> SoirError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => SoirError::Io(io),
            other => SoirError::Parse(format!("{other:?}")),
        }
    } else {
        SoirError::Parse(e.to_string())
    }
}

fn parse_finite(s: &str, row: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| SoirError::Parse(format!("row {row}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(SoirError::Parse(format!(
            "row {row}: non-finite value '{s}'"
        )));
    }
    Ok(v)
}

/// `ny` rows of `nx` values under a header `x0,…,x{nx−1}`.
pub fn write_image_csv<W: Write>(img: &Image2D, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..img.nx()).map(|x| format!("x{x}")))
        .map_err(csv_error)?;
    for y in 0..img.ny() {
        w.write_record((0..img.nx()).map(|x| format!("{}", img.get(x, y))))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an image CSV; a first row without any number is taken as a header.
pub fn read_image_csv<R: Read>(input: R) -> Result<Image2D> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if i == 0 && rec.iter().all(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        rows.push(
            rec.iter()
                .map(|f| parse_finite(f, i + 1))
                .collect::<Result<_>>()?,
        );
    }
    let ny = rows.len();
    let nx = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nx) {
        return Err(SoirError::Parse("rows differ in length".into()));
    }
    Image2D::new(nx, ny, rows.concat())
}

pub fn save_image_csv(img: &Image2D, path: &Path) -> Result<()> {
    write_image_csv(img, BufWriter::new(File::create(path)?))
}

pub fn load_image_csv(path: &Path) -> Result<Image2D> {
    read_image_csv(BufReader::new(File::open(path)?))
}

/// Loads an image from a CSV file or the first record of a container.
pub fn load_image(path: &Path) -> Result<Image2D> {
    let mut head = [0u8; 4];
    let is_container = File::open(path)?.read(&mut head)? == 4 && &head == MAGIC;
    if is_container {
        let c = Container::load(path)?;
        let first = c
            .records
            .into_iter()
            .next()
            .ok_or_else(|| SoirError::Parse("empty container".into()))?;
        Image2D::new(c.nx, c.ny, first)
    } else {
        load_image_csv(path)
    }
}

/// Writes a chain as two containers: `β` draws (`nx`×`ny` per saved step)
/// and per-step scalars `(α…, σ²_ε, σ²_β)` as `(p+2)`×1 records.
pub fn save_chain(
    chain: &McmcChain,
    nx: usize,
    ny: usize,
    beta_path: &Path,
    scalar_path: &Path,
) -> Result<()> {
    if nx * ny != chain.n_pixels {
        return Err(SoirError::DimensionMismatch(
            "grid does not match the chain".into(),
        ));
    }
    let beta = (0..chain.saved_steps)
        .map(|s| chain.beta_draw(s).to_vec())
        .collect();
    Container::new(nx, ny, beta)?.save(beta_path)?;
    let scalars = (0..chain.saved_steps)
        .map(|s| {
            let mut v = chain.alpha_draw(s).to_vec();
            v.push(chain.sigma2_eps[s]);
            v.push(chain.sigma2_beta[s]);
            v
        })
        .collect();
    Container::new(chain.p + 2, 1, scalars)?.save(scalar_path)
}

/// Reads a response table: a header naming `y` and any further scalar
/// covariate columns, one row per image.
pub fn read_response_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let yi = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| SoirError::Parse("response table needs a 'y' column".into()))?;
    let mut y = Vec::new();
    let mut extra = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| parse_finite(f, i + 2))
            .collect::<Result<_>>()?;
        y.push(vals[yi]);
        extra.push(
            vals.iter()
                .enumerate()
                .filter(|(j, _)| *j != yi)
                .map(|(_, v)| *v)
                .collect(),
        );
    }
    Ok((y, extra))
}

/// Builds a dataset from an image container and a response table. An
/// intercept column is added in front of any scalar covariates.
pub fn load_dataset(images: &Path, response: &Path) -> Result<RegressionDataset> {
    let c = Container::load(images)?;
    let (y, extra) = read_response_csv(BufReader::new(File::open(response)?))?;
    if c.records.len() != y.len() {
        return Err(SoirError::DimensionMismatch(format!(
            "{} images but {} responses",
            c.records.len(),
            y.len()
        )));
    }
    let n = y.len();
    let q = extra.first().map_or(0, Vec::len);
    let w = DMatrix::from_fn(n, 1 + q, |i, j| if j == 0 { 1.0 } else { extra[i][j - 1] });
    let x = DMatrix::from_fn(n, c.nx * c.ny, |i, j| c.records[i][j]);
    RegressionDataset::new(DVector::from_vec(y), w, x, c.nx, c.ny)
}
