//! Binary artifact formats.
//!
//! * `CMX1` — paired channel datasets: ASCII magic and a `n_samples n_rx
//!   n_tx` header line, then per sample `h_ul` followed by `h_dl`, row-major,
//!   each complex entry as two little-endian f64 (re, im).
//! * `CBK1` — codebooks: header `K n_tx m_bits rho`, then the entries as
//!   row-major complex matrices in the same encoding.
//! * `ENC1` — encoder models: a structured text header, the named parameter
//!   and state blocks, then all values as little-endian f64. Save/load
//!   round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::capacity::TransmitCovariance;
use crate::channel::{ChannelSample, Dataset};
use crate::codebook::Codebook;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};
use crate::nn::{Activation, EncoderArchitecture, EncoderModel};

fn write_cmat(w: &mut impl Write, m: &CMat) -> Result<()> {
    for r in 0..m.nrows() {
        for t in 0..m.ncols() {
            w.write_all(&m[(r, t)].re.to_le_bytes())?;
            w.write_all(&m[(r, t)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_cmat(r: &mut impl Read, rows: usize, cols: usize) -> Result<CMat> {
    let mut buf = vec![0u8; rows * cols * 16];
    r.read_exact(&mut buf)?;
    let mut m = CMat::zeros(rows, cols);
    let mut off = 0;
    for row in 0..rows {
        for col in 0..cols {
            let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
            m[(row, col)] = c(re, im);
            off += 16;
        }
    }
    Ok(m)
}

fn read_line(r: &mut impl Read) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Format("header line too long".into()));
        }
    }
    String::from_utf8(line).map_err(|_| Error::Format("header is not UTF-8".into()))
}

/// Writes a dataset as CMX1. Geometry identifiers are not persisted.
pub fn write_cmx(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"CMX1\n")?;
    writeln!(w, "{} {} {}", ds.len(), ds.config.n_rx, ds.config.n_tx)?;
    for s in &ds.samples {
        write_cmat(&mut w, &s.h_ul)?;
        write_cmat(&mut w, &s.h_dl)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CMX1 dataset; `config` supplies everything the file does not
/// carry and must match the stored dimensions. Loaded samples are numbered
/// sequentially.
pub fn read_cmx(path: &Path, config: &SystemConfig) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    if read_line(&mut r)? != "CMX1" {
        return Err(Error::Format(format!("{}: not a CMX1 file", path.display())));
    }
    let header = read_line(&mut r)?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse().map_err(|_| Error::Format("bad CMX1 header".into())))
        .collect::<Result<_>>()?;
    let [n, n_rx, n_tx] = fields[..] else {
        return Err(Error::Format("CMX1 header needs 3 fields".into()));
    };
    if n_rx != config.n_rx || n_tx != config.n_tx {
        return Err(Error::Config(format!(
            "{}: stored dims {n_rx}x{n_tx} differ from config {}x{}",
            path.display(),
            config.n_rx,
            config.n_tx
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let h_ul = read_cmat(&mut r, n_rx, n_tx)?;
        let h_dl = read_cmat(&mut r, n_rx, n_tx)?;
        samples.push(ChannelSample {
            h_ul,
            h_dl,
            geometry_id: i as u64,
        });
    }
    Ok(Dataset {
        samples,
        config: config.clone(),
    })
}

/// Writes a codebook as CBK1. Only bit-width codebooks are persisted;
/// unstructured baselines are rebuilt from their source data instead.
pub fn write_cbk(path: &Path, cb: &Codebook) -> Result<()> {
    let Some(m_bits) = cb.m_bits else {
        return Err(Error::Format(
            "codebook without a bit width cannot be serialized".into(),
        ));
    };
    let n_tx = cb.entries[0].dim();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"CBK1\n")?;
    writeln!(w, "{} {} {} {}", cb.k(), n_tx, m_bits, cb.rho)?;
    for e in &cb.entries {
        write_cmat(&mut w, e.matrix())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CBK1 codebook; `rank_cap` is not stored and must be supplied.
pub fn read_cbk(path: &Path, rank_cap: usize) -> Result<Codebook> {
    let mut r = BufReader::new(File::open(path)?);
    if read_line(&mut r)? != "CBK1" {
        return Err(Error::Format(format!("{}: not a CBK1 file", path.display())));
    }
    let header = read_line(&mut r)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [k, n_tx, m_bits, rho] = fields[..] else {
        return Err(Error::Format("CBK1 header needs 4 fields".into()));
    };
    let k: usize = k.parse().map_err(|_| Error::Format("bad K".into()))?;
    let n_tx: usize = n_tx.parse().map_err(|_| Error::Format("bad n_tx".into()))?;
    let m_bits: u32 = m_bits.parse().map_err(|_| Error::Format("bad m_bits".into()))?;
    let rho: f64 = rho.parse().map_err(|_| Error::Format("bad rho".into()))?;

    let mut entries = Vec::with_capacity(k);
    for _ in 0..k {
        let m = read_cmat(&mut r, n_tx, n_tx)?;
        entries.push(TransmitCovariance::new(m, rho)?);
    }
    let cb = Codebook {
        entries,
        m_bits: Some(m_bits),
        rho,
        rank_cap,
    };
    cb.validate()?;
    Ok(cb)
}

/// Writes an encoder model as ENC1.
pub fn write_enc(path: &Path, model: &EncoderModel) -> Result<()> {
    let a = &model.architecture;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"ENC1\n")?;
    writeln!(w, "conv_depth {}", a.conv_depth)?;
    writeln!(w, "kernels_per_layer {}", a.kernels_per_layer)?;
    writeln!(w, "kernel_h {}", a.kernel_h)?;
    writeln!(w, "kernel_w {}", a.kernel_w)?;
    writeln!(w, "use_max_pool {}", a.use_max_pool as u8)?;
    writeln!(w, "activation {}", a.activation.as_str())?;
    writeln!(w, "batch_norm_conv {}", a.batch_norm_conv as u8)?;
    writeln!(w, "batch_norm_dense {}", a.batch_norm_dense as u8)?;
    writeln!(w, "k {}", a.k)?;
    writeln!(w, "input_rx {}", model.input_rx)?;
    writeln!(w, "input_p {}", model.input_p)?;
    writeln!(w, "params {}", model.net.params.names.len())?;
    for (name, range) in &model.net.params.names {
        writeln!(w, "{} {}", name, range.len())?;
    }
    writeln!(w, "state {}", model.net.state.names.len())?;
    for (name, range) in &model.net.state.names {
        writeln!(w, "{} {}", name, range.len())?;
    }
    writeln!(w, "end")?;
    for v in model.net.params.data.iter().chain(model.net.state.data.iter()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_kv<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected '{key} <value>', got '{line}'")))
}

/// Reads an ENC1 encoder model.
pub fn read_enc(path: &Path) -> Result<EncoderModel> {
    let mut r = BufReader::new(File::open(path)?);
    if read_line(&mut r)? != "ENC1" {
        return Err(Error::Format(format!("{}: not an ENC1 file", path.display())));
    }
    fn next_kv(r: &mut impl Read, key: &str) -> Result<String> {
        let line = read_line(r)?;
        Ok(parse_kv(&line, key)?.to_string())
    }
    let parse_usize = |s: String| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("bad integer '{s}'")))
    };
    let parse_flag = |s: String| -> Result<bool> {
        match s.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Format(format!("bad flag '{other}'"))),
        }
    };

    let conv_depth = parse_usize(next_kv(&mut r, "conv_depth")?)?;
    let kernels_per_layer = parse_usize(next_kv(&mut r, "kernels_per_layer")?)?;
    let kernel_h = parse_usize(next_kv(&mut r, "kernel_h")?)?;
    let kernel_w = parse_usize(next_kv(&mut r, "kernel_w")?)?;
    let use_max_pool = parse_flag(next_kv(&mut r, "use_max_pool")?)?;
    let activation = Activation::parse(&next_kv(&mut r, "activation")?)?;
    let batch_norm_conv = parse_flag(next_kv(&mut r, "batch_norm_conv")?)?;
    let batch_norm_dense = parse_flag(next_kv(&mut r, "batch_norm_dense")?)?;
    let k = parse_usize(next_kv(&mut r, "k")?)?;
    let input_rx = parse_usize(next_kv(&mut r, "input_rx")?)?;
    let input_p = parse_usize(next_kv(&mut r, "input_p")?)?;

    let architecture = EncoderArchitecture {
        conv_depth,
        kernels_per_layer,
        kernel_h,
        kernel_w,
        use_max_pool,
        activation,
        batch_norm_conv,
        batch_norm_dense,
        k,
    };
    let mut model = EncoderModel::init(architecture, input_rx, input_p, 0)?;

    // Validate the declared blocks against the rebuilt structure.
    let n_params = parse_usize(next_kv(&mut r, "params")?)?;
    if n_params != model.net.params.names.len() {
        return Err(Error::Format("parameter block count mismatch".into()));
    }
    for (name, range) in model.net.params.names.clone() {
        let line = read_line(&mut r)?;
        let len = parse_usize(parse_kv(&line, &name)?.to_string())?;
        if len != range.len() {
            return Err(Error::Format(format!("block '{name}' length mismatch")));
        }
    }
    let n_state = parse_usize(next_kv(&mut r, "state")?)?;
    if n_state != model.net.state.names.len() {
        return Err(Error::Format("state block count mismatch".into()));
    }
    for (name, range) in model.net.state.names.clone() {
        let line = read_line(&mut r)?;
        let len = parse_usize(parse_kv(&line, &name)?.to_string())?;
        if len != range.len() {
            return Err(Error::Format(format!("block '{name}' length mismatch")));
        }
    }
    if read_line(&mut r)? != "end" {
        return Err(Error::Format("missing 'end' marker".into()));
    }

    let total = model.net.params.data.len() + model.net.state.data.len();
    let mut buf = vec![0u8; total * 8];
    r.read_exact(&mut buf)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after parameter data".into()));
    }
    let n_p = model.net.params.data.len();
    for (i, chunk) in buf.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if i < n_p {
            model.net.params.data[i] = v;
        } else {
            model.net.state.data[i - n_p] = v;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_paired_dataset;
    use crate::codebook::{learn_codebook, LloydOptions, PgdOptions};
    use crate::config::Side;
    use crate::nn::Mode;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn cmx_roundtrip_is_exact() {
        let cfg = SystemConfig::with_defaults(4, 2, 4).unwrap();
        let ds = generate_paired_dataset(&cfg, 7, 3).unwrap();
        let dir = tmp();
        let path = dir.path().join("d.cmx");
        write_cmx(&path, &ds).unwrap();
        let back = read_cmx(&path, &cfg).unwrap();
        assert_eq!(back.len(), 7);
        for (a, b) in ds.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.h_ul, b.h_ul);
            assert_eq!(a.h_dl, b.h_dl);
        }
    }

    #[test]
    fn cmx_rejects_mismatched_config() {
        let cfg = SystemConfig::with_defaults(4, 2, 4).unwrap();
        let ds = generate_paired_dataset(&cfg, 2, 3).unwrap();
        let dir = tmp();
        let path = dir.path().join("d.cmx");
        write_cmx(&path, &ds).unwrap();
        let other = SystemConfig::with_defaults(8, 2, 8).unwrap();
        assert!(read_cmx(&path, &other).is_err());
    }

    #[test]
    fn cbk_roundtrip_is_exact() {
        let cfg = SystemConfig::with_defaults(4, 2, 4).unwrap();
        let ds = generate_paired_dataset(&cfg, 32, 5).unwrap();
        let cb = learn_codebook(
            &ds,
            Side::Ul,
            1,
            &LloydOptions {
                max_lloyd_iters: 3,
                ..LloydOptions::new(1)
            },
            &PgdOptions {
                max_pgd_iters: 40,
                ..PgdOptions::default()
            },
            cfg.sigma_n2,
        )
        .unwrap();
        let dir = tmp();
        let path = dir.path().join("c.cbk");
        write_cbk(&path, &cb).unwrap();
        let back = read_cbk(&path, 2).unwrap();
        assert_eq!(back.k(), cb.k());
        assert_eq!(back.m_bits, cb.m_bits);
        assert_eq!(back.rho, cb.rho);
        for (a, b) in cb.entries.iter().zip(back.entries.iter()) {
            assert_eq!(a.matrix(), b.matrix());
        }
    }

    #[test]
    fn enc_roundtrip_is_bit_exact() {
        use crate::nn::{normalize_observation, EncoderArchitecture};
        let arch = EncoderArchitecture::new(2, 3, crate::nn::Activation::Swish, 4);
        let model = EncoderModel::init(arch, 2, 4, 17).unwrap();
        let dir = tmp();
        let path = dir.path().join("m.enc");
        write_enc(&path, &model).unwrap();
        let back = read_enc(&path).unwrap();
        assert_eq!(model.net.params.data, back.net.params.data);
        assert_eq!(model.net.state.data, back.net.state.data);
        assert_eq!(model.architecture, back.architecture);

        // behavioral identity
        let mut rng = crate::rng::rng_from_seed(3);
        let y = crate::linalg::sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let t = normalize_observation(&y);
        assert_eq!(
            model.forward(&t, Mode::Infer).unwrap(),
            back.forward(&t, Mode::Infer).unwrap()
        );

        // file determinism: writing again produces identical bytes
        let path2 = dir.path().join("m2.enc");
        write_enc(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
