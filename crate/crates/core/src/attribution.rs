//! Class activation maps of the discriminator score.
//!
//! With a body ending in global sum pooling, the score decomposes over
//! spatial positions: `score = Σ_ij ⟨Ỹ_ij, w⟩ + b` where `Ỹ` is the map
//! entering the pool. The plain map shows each position's share; the
//! masked variants split it into the part UFS keeps (`Ỹ ⊗ S`) and the part
//! it suppresses (`Ỹ ⊗ (1 − S)`). The bias is left out of every variant.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::DiscriminatorNet;
use crate::numerics::Tensor;
use crate::ufs::SuppressionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamVariant {
    Cam,
    CamUfs,
    CamSup,
}

impl CamVariant {
    pub const ALL: [CamVariant; 3] = [CamVariant::Cam, CamVariant::CamUfs, CamVariant::CamSup];

    pub fn name(self) -> &'static str {
        match self {
            CamVariant::Cam => "cam",
            CamVariant::CamUfs => "cam_ufs",
            CamVariant::CamSup => "cam_sup",
        }
    }
}

/// One sample's activation map, `h'×w'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub variant: CamVariant,
    pub values: Tensor,
}

/// Activation maps of the given variant for every sample in `x`.
///
/// `s` supplies one mask row per sample and is broadcast over positions;
/// it is required for the masked variants.
pub fn compute_cam(
    d: &DiscriminatorNet,
    x: &Tensor,
    s: Option<&SuppressionMatrix>,
    variant: CamVariant,
) -> Result<Vec<AttributionMap>> {
    if !d.is_convolutional() {
        return Err(Error::Unsupported(
            "class activation maps need a convolutional discriminator body".into(),
        ));
    }
    let map = d.feature_map(x)?;
    let [n, c, h, w] = [
        map.shape()[0],
        map.shape()[1],
        map.shape()[2],
        map.shape()[3],
    ];
    let mask: Option<&Tensor> = match variant {
        CamVariant::Cam => None,
        CamVariant::CamUfs | CamVariant::CamSup => {
            let s = s.ok_or_else(|| {
                Error::contract(format!("{} needs a suppression matrix", variant.name()))
            })?;
            if s.values().shape() != [n, c] {
                return Err(Error::dim(format!(
                    "suppression matrix {:?} does not match {n} samples × {c} channels",
                    s.values().shape()
                )));
            }
            Some(s.values())
        }
    };
    let weight = d.head.weight.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let coef: Vec<f64> = (0..c)
            .map(|ch| {
                let m = match (variant, mask) {
                    (CamVariant::CamUfs, Some(s)) => s.row(b)[ch],
                    (CamVariant::CamSup, Some(s)) => 1.0 - s.row(b)[ch],
                    _ => 1.0,
                };
                weight[ch] * m
            })
            .collect();
        let mut values = vec![0.0; plane];
        for (ch, &k) in coef.iter().enumerate() {
            let src = &map.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            for (v, &y) in values.iter_mut().zip(src) {
                *v += y * k;
            }
        }
        out.push(AttributionMap {
            variant,
            values: Tensor::new(vec![h, w], values)?,
        });
    }
    Ok(out)
}

/// Nearest-neighbour upsampling of an `h'×w'` map to `h×w`.
pub fn upsample_nearest(map: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if map.rank() != 2 {
        return Err(Error::dim(format!(
            "heatmap must be 2-D, got {:?}",
            map.shape()
        )));
    }
    let (mh, mw) = (map.shape()[0], map.shape()[1]);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let si = (i * mh / h).min(mh - 1);
        for j in 0..w {
            let sj = (j * mw / w).min(mw - 1);
            out.push(map.data()[si * mw + sj]);
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Min-max normalises to 0..=255; a constant map becomes all 128.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect()
}

/// Writes an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(
        pixels.len(),
        width * height,
        "pixel count must match dimensions"
    );
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit binary PGM, returning `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                offset: pos,
                msg: "truncated PGM header".into(),
            });
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    if fields[0].1 != "P5" {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("expected P5 magic, found {:?}", fields[0].1),
        });
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| Error::Parse {
            offset: fields[i].0,
            msg: format!("bad PGM header field {:?}", fields[i].1),
        })
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::Parse {
            offset: fields[3].0,
            msg: format!("only 8-bit PGM is supported, maxval {maxval}"),
        });
    }
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Parse {
        offset: pos,
        msg: format!("expected {} pixel bytes", w * h),
    })?;
    Ok((w, h, data.to_vec()))
}

/// Renders a map as a normalised PGM.
pub fn heatmap_to_pgm(map: &AttributionMap, path: &Path) -> Result<()> {
    map.values.ensure_finite("heatmap")?;
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    write_pgm(path, w, h, &normalize_to_u8(map.values.data()))
}

/// File name for one rendered map: `<runid>_<sample>_<variant>.pgm`.
pub fn cam_file_name(run_id: &str, sample: usize, variant: CamVariant) -> String {
    format!("{run_id}_{sample}_{}.pgm", variant.name())
}
