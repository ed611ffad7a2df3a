//! `NFWT` weight container shared by the decoder, the latent codes and the
//! flow.
//!
//! Layout (little-endian): `"NFWT" | u32 version | u32 sections`, then per
//! section a four-byte tag, `u32` header length, the header as `u64` words,
//! `u64` parameter count and the parameters as `f64`. A SHA-256 digest of all
//! preceding bytes closes the file.
//!
//! Section headers:
//! - `DECO`: `[hidden, softplus_beta bits, layers, input_dim]`
//! - `CODE`: `[count, latent_dim]`
//! - `FLOW`: `[components, blocks, latent_dim]`

use std::path::Path;

use nfsdf_core::decoder::{DecoderConfig, DecoderWeights, INPUT_DIM, NUM_LAYERS};
use nfsdf_core::flow::{FlowWeights, NUM_BLOCKS};
use nfsdf_core::{Code, LATENT_DIM};
use sha2::{Digest, Sha256};

use crate::binio::{header, ReadResult, Reader, Writer};
use crate::{io, Error, Result};

pub const MAGIC: &[u8; 4] = b"NFWT";
pub const VERSION: u32 = 1;
pub const TAG_DECODER: [u8; 4] = *b"DECO";
pub const TAG_CODES: [u8; 4] = *b"CODE";
pub const TAG_FLOW: [u8; 4] = *b"FLOW";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    pub header: Vec<u64>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub sections: Vec<Section>,
}

impl Section {
    pub fn decoder(w: &DecoderWeights) -> Self {
        Self {
            tag: TAG_DECODER,
            header: vec![
                w.config.hidden as u64,
                w.config.softplus_beta.to_bits(),
                NUM_LAYERS as u64,
                INPUT_DIM as u64,
            ],
            params: w.params.clone(),
        }
    }

    pub fn codes(codes: &[Code]) -> Self {
        Self {
            tag: TAG_CODES,
            header: vec![codes.len() as u64, LATENT_DIM as u64],
            params: codes.iter().flat_map(|c| c.iter().copied()).collect(),
        }
    }

    pub fn flow(f: &FlowWeights) -> Self {
        Self {
            tag: TAG_FLOW,
            header: vec![f.components as u64, NUM_BLOCKS as u64, LATENT_DIM as u64],
            params: f.params.clone(),
        }
    }
}

impl WeightFile {
    pub fn new(sections: Vec<Section>) -> Self {
        Self { sections }
    }

    pub fn section(&self, tag: [u8; 4]) -> Option<&Section> {
        self.sections.iter().find(|s| s.tag == tag)
    }

    fn require(&self, tag: [u8; 4]) -> std::result::Result<&Section, String> {
        self.section(tag)
            .ok_or_else(|| format!("no {} section", String::from_utf8_lossy(&tag)))
    }

    pub fn decoder(&self) -> std::result::Result<DecoderWeights, String> {
        let s = self.require(TAG_DECODER)?;
        let [hidden, beta, layers, input] = s.header[..] else {
            return Err("DECO header must have 4 words".into());
        };
        if layers != NUM_LAYERS as u64 || input != INPUT_DIM as u64 {
            return Err(format!(
                "DECO architecture {layers} layers x {input} inputs is not supported"
            ));
        }
        let config = DecoderConfig {
            hidden: hidden as usize,
            softplus_beta: f64::from_bits(beta),
        };
        DecoderWeights::from_params(config, s.params.clone()).map_err(|e| e.to_string())
    }

    pub fn codes(&self) -> std::result::Result<Vec<Code>, String> {
        let s = self.require(TAG_CODES)?;
        let [count, dim] = s.header[..] else {
            return Err("CODE header must have 2 words".into());
        };
        if dim != LATENT_DIM as u64 || s.params.len() as u64 != count * dim {
            return Err("CODE section size does not match its header".into());
        }
        Ok(s.params.chunks(LATENT_DIM).map(Code::from_column_slice).collect())
    }

    pub fn flow(&self) -> std::result::Result<FlowWeights, String> {
        let s = self.require(TAG_FLOW)?;
        let [components, blocks, dim] = s.header[..] else {
            return Err("FLOW header must have 3 words".into());
        };
        if blocks != NUM_BLOCKS as u64 || dim != LATENT_DIM as u64 {
            return Err("FLOW architecture is not supported".into());
        }
        FlowWeights::from_params(components as usize, s.params.clone()).map_err(|e| e.to_string())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.sections.len() as u32);
        for s in &self.sections {
            w.bytes(&s.tag);
            w.u32(s.header.len() as u32);
            for &h in &s.header {
                w.u64(h);
            }
            w.len(s.params.len());
            w.f64s(&s.params);
        }
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.buf
    }

    pub fn decode(data: &[u8]) -> ReadResult<Self> {
        if data.len() < DIGEST_LEN {
            return Err("truncated: no checksum".into());
        }
        let (body, digest) = data.split_at(data.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch".into());
        }
        let mut r = Reader::new(body);
        header(&mut r, MAGIC, VERSION)?;
        let n = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..n {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let nh = r.u32()? as usize;
            if nh * 8 > r.remaining() {
                return Err("header length exceeds the remaining input".into());
            }
            let header = (0..nh).map(|_| r.u64()).collect::<ReadResult<Vec<u64>>>()?;
            let np = r.len(8)?;
            let params = r.f64s(np)?;
            sections.push(Section {
                tag,
                header,
                params,
            });
        }
        r.finish()?;
        Ok(Self { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&io::read(path)?).map_err(|m| Error::format(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfsdf_core::decoder::decoder_forward;
    use nfsdf_core::flow::flow_forward;
    use nfsdf_core::Vec3;

    fn file() -> (DecoderWeights, FlowWeights, Vec<Code>, WeightFile) {
        let dec = DecoderWeights::random(
            DecoderConfig {
                hidden: 16,
                softplus_beta: 10.0,
            },
            3,
        );
        let flow = FlowWeights::identity(4, 5).unwrap();
        let codes = vec![Code::from_fn(|i, _| i as f64 * 0.1), Code::repeat(-0.25)];
        let f = WeightFile::new(vec![
            Section::decoder(&dec),
            Section::codes(&codes),
            Section::flow(&flow),
        ]);
        (dec, flow, codes, f)
    }

    #[test]
    fn reload_is_bitwise() {
        let (dec, flow, codes, f) = file();
        let bytes = f.encode();
        let back = WeightFile::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        let dec2 = back.decoder().unwrap();
        assert_eq!(dec2, dec);
        assert_eq!(back.codes().unwrap(), codes);
        let z = Code::repeat(0.1);
        let p = Vec3::new(0.2, -0.3, 0.1);
        assert_eq!(
            decoder_forward(&dec, &z, &p).unwrap().to_bits(),
            decoder_forward(&dec2, &z, &p).unwrap().to_bits()
        );
        let flow2 = back.flow().unwrap();
        assert_eq!(
            flow_forward(&flow, &z).unwrap(),
            flow_forward(&flow2, &z).unwrap()
        );
    }

    #[test]
    fn checksum_catches_a_flipped_bit() {
        let (_, _, _, f) = file();
        let mut bytes = f.encode();
        bytes[40] ^= 1;
        assert_eq!(WeightFile::decode(&bytes).unwrap_err(), "checksum mismatch");
        let n = bytes.len();
        assert!(WeightFile::decode(&bytes[n - 10..]).is_err());
    }

    #[test]
    fn missing_section_is_named() {
        let (dec, ..) = file();
        let f = WeightFile::new(vec![Section::decoder(&dec)]);
        assert!(f.codes().unwrap_err().contains("CODE"));
        assert!(f.flow().unwrap_err().contains("FLOW"));
    }
}
