use ndarray::Array2;

use crate::autodiff::Matrix;
use crate::error::{GpnetError, Result};

/// `T` frame feature maps of shape `h×w×c`, stored frame-major, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSequence {
    frames: usize,
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    pub identity: u64,
    pub camera: Option<u64>,
}

impl FeatureMapSequence {
    pub fn new(
        frames: usize,
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        identity: u64,
    ) -> Result<Self> {
        let expected = frames * width * height * channels;
        if data.len() != expected {
            return Err(GpnetError::Contract(format!(
                "feature map data has {} values, expected {expected} for T={frames} w={width} h={height} c={channels}",
                data.len()
            )));
        }
        if frames == 0 || width == 0 || height == 0 || channels == 0 {
            return Err(GpnetError::Contract(
                "feature map dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            frames,
            width,
            height,
            channels,
            data,
            identity,
            camera: None,
        })
    }

    pub fn with_camera(mut self, camera: Option<u64>) -> Self {
        self.camera = camera;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn offset(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels
    }

    pub fn at(&self, t: usize, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.offset(t, y, x) + ch]
    }

    /// Reorders frames so that new frame `i` is old frame `order[i]`.
    pub fn permute_frames(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.frames];
        if order.len() != self.frames {
            return Err(GpnetError::Contract(
                "frame permutation has wrong length".into(),
            ));
        }
        for &o in order {
            if o >= self.frames || std::mem::replace(&mut seen[o], true) {
                return Err(GpnetError::Contract("invalid frame permutation".into()));
            }
        }
        let per = self.width * self.height * self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for &o in order {
            data.extend_from_slice(&self.data[o * per..(o + 1) * per]);
        }
        Ok(Self {
            data,
            ..self.clone()
        })
    }
}

/// Band-averaged node features for granularity `p`: `(T·p)×c`, node `t·p + q` is
/// frame `t`, band `q`.
pub fn extract_granular_features(seq: &FeatureMapSequence, p: usize) -> Result<Matrix> {
    if p == 0 || !seq.height.is_multiple_of(p) {
        return Err(GpnetError::Partition {
            height: seq.height,
            parts: p,
        });
    }
    let band = seq.height / p;
    let c = seq.channels;
    let mut out = Array2::<f64>::zeros((seq.frames * p, c));
    let norm = (band * seq.width) as f64;
    for t in 0..seq.frames {
        for q in 0..p {
            let mut row = out.row_mut(t * p + q);
            for y in q * band..(q + 1) * band {
                for x in 0..seq.width {
                    let base = seq.offset(t, y, x);
                    for (ch, acc) in row.iter_mut().enumerate() {
                        *acc += f64::from(seq.data[base + ch]);
                    }
                }
            }
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(out)
}

pub fn frame_and_part_index(frames: usize, p: usize) -> (Vec<usize>, Vec<usize>) {
    let n = frames * p;
    (
        (0..n).map(|i| i / p).collect(),
        (0..n).map(|i| i % p).collect(),
    )
}
