//! Ensemble serialisation.
//!
//! * CSV: header `w_0..w_{d_w-1},theta_0..theta_{d_θ-1}`, one particle per row.
//! * Binary: 16-byte little-endian header followed by `m·(d_w+d_θ)` `f64`s.
//!
//! ```text
//! offset  size  field
//!      0     4  magic  b"MFEN"
//!      4     2  version (u16, currently 1)
//!      6     2  d_w (u16)
//!      8     4  m (u32)
//!     12     4  d_θ (u32)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::Ensemble;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MFEN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub fn csv_header(d_w: usize, d_theta: usize) -> Vec<String> {
    (0..d_w).map(|i| format!("w_{i}")).chain((0..d_theta).map(|i| format!("theta_{i}"))).collect()
}

pub fn write_csv<W: Write>(ens: &Ensemble, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(csv_header(ens.d_w(), ens.d_theta()))?;
    for row in ens.rows() {
        // `{:?}` prints the shortest representation that round-trips exactly
        wtr.write_record(row.iter().map(|x| format!("{x:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Ensemble> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let d_w = headers.iter().filter(|h| h.starts_with("w_")).count();
    let d_theta = headers.iter().filter(|h| h.starts_with("theta_")).count();
    if d_w + d_theta != headers.len() || headers.iter().ne(csv_header(d_w, d_theta).iter().map(String::as_str)) {
        return Err(Error::Format("ensemble CSV header must be w_0.., theta_0..".into()));
    }
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter() {
            let x: f64 = field.trim().parse().map_err(|_| Error::Format(format!("not a number: {field:?}")))?;
            data.push(x);
        }
    }
    Ensemble::from_flat(d_w, d_theta, data)
}

pub fn write_binary<W: Write>(ens: &Ensemble, mut out: W) -> Result<()> {
    let d_w = u16::try_from(ens.d_w()).map_err(|_| Error::Format("d_w exceeds u16".into()))?;
    let m = u32::try_from(ens.m()).map_err(|_| Error::Format("m exceeds u32".into()))?;
    let d_theta = u32::try_from(ens.d_theta()).map_err(|_| Error::Format("d_theta exceeds u32".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&d_w.to_le_bytes());
    header[8..12].copy_from_slice(&m.to_le_bytes());
    header[12..16].copy_from_slice(&d_theta.to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(ens.as_flat().len() * 8);
    for x in ens.as_flat() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Ensemble> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    if header[0..4] != MAGIC {
        return Err(Error::Format("bad ensemble magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported ensemble version {version}")));
    }
    let d_w = u16::from_le_bytes([header[6], header[7]]) as usize;
    let m = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let d_theta = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let n = m * (d_w + d_theta);
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ensemble::from_flat(d_w, d_theta, data)
}

pub fn save_binary(ens: &Ensemble, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_binary(ens, std::io::BufWriter::new(f))
}

pub fn load_binary(path: &Path) -> Result<Ensemble> {
    let f = std::fs::File::open(path)?;
    read_binary(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample_ensemble, InitSpec};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let e = Ensemble::from_rows(2, 1, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let mut buf = Vec::new();
        write_binary(&e, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 6 * 8);
        assert_eq!(&buf[0..4], b"MFEN");
        assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
    }

    #[test]
    fn csv_header_names() {
        let e = Ensemble::from_rows(1, 2, &[vec![0.5, -1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("w_0,theta_0,theta_1\n"));
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = vec![0u8; 32];
        assert!(matches!(read_binary(&buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trips(seed in 0u64..1000, m in 1usize..20, d_w in 1usize..4, d_t in 0usize..4) {
            let e = sample_ensemble(&InitSpec::gaussian(d_w, d_t, 1.7, seed), m).unwrap();
            let mut bin = Vec::new();
            write_binary(&e, &mut bin).unwrap();
            prop_assert_eq!(&read_binary(&bin[..]).unwrap(), &e);
            let mut text = Vec::new();
            write_csv(&e, &mut text).unwrap();
            prop_assert_eq!(&read_csv(&text[..]).unwrap(), &e);
        }
    }
}
