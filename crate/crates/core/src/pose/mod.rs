//! Keypoint preprocessing: gap filling, torso-relative normalization and
//! flattening into per-frame feature rows.

mod dataset;

pub use dataset::{
    load_dataset, read_features, read_manifest, read_vocab, write_features, write_manifest, write_vocab, Sample, Split,
    MANIFEST_HEADER,
};

use cslr_tensor::Tensor;

use crate::error::{Error, Result};

/// Landmarks per frame in the standard layout (pose, both hands, face subset).
pub const NUM_LANDMARKS: usize = 86;

/// Feature width of a flattened frame.
pub const FEATURE_DIM: usize = NUM_LANDMARKS * 2;

/// Shoulder and hip slots of the 86-point layout (the first 33 slots follow
/// the usual full-body pose numbering).
pub const DEFAULT_TORSO: [usize; 4] = [11, 12, 23, 24];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// `None` marks a landmark the extractor failed to locate in that frame.
pub type Landmark = Option<Point>;

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    pub id: String,
    pub signer_id: String,
    frames: Vec<Vec<Landmark>>,
    landmarks: usize,
}

impl KeypointSequence {
    pub fn new(id: impl Into<String>, signer_id: impl Into<String>, frames: Vec<Vec<Landmark>>) -> Result<Self> {
        let landmarks = frames
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("a keypoint sequence needs at least one frame".into()))?;
        if landmarks == 0 {
            return Err(Error::Config("frames must hold at least one landmark".into()));
        }
        if let Some(t) = frames.iter().position(|f| f.len() != landmarks) {
            return Err(Error::Config(format!(
                "frame {t} holds {} landmarks, expected {landmarks}",
                frames[t].len()
            )));
        }
        Ok(Self {
            id: id.into(),
            signer_id: signer_id.into(),
            frames,
            landmarks,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks
    }

    pub fn frames(&self) -> &[Vec<Landmark>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[Landmark] {
        &self.frames[t]
    }

    pub fn is_complete(&self) -> bool {
        self.frames.iter().all(|f| f.iter().all(Option::is_some))
    }

    /// Applies `f` to every valid landmark.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|fr| fr.iter().map(|l| l.map(&f)).collect())
            .collect();
        Self {
            frames,
            ..self.clone()
        }
    }
}

/// Flattened `T × 2K` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub data: Tensor,
}

impl FeatureSequence {
    pub fn source_len(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Fills gaps per landmark: linear interpolation between the nearest valid
/// frames, holding the nearest value before the first and after the last.
#[allow(clippy::needless_range_loop)]
pub fn interpolate_missing(seq: &KeypointSequence) -> Result<KeypointSequence> {
    let mut frames = seq.frames.clone();
    let t_len = frames.len();
    for k in 0..seq.landmarks {
        let valid: Vec<usize> = (0..t_len).filter(|&t| frames[t][k].is_some()).collect();
        let (&first, &last) = match (valid.first(), valid.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Imputation { landmark: k }),
        };
        for t in 0..first {
            frames[t][k] = frames[first][k];
        }
        for t in last + 1..t_len {
            frames[t][k] = frames[last][k];
        }
        for pair in valid.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (pa, pb) = (frames[a][k].unwrap(), frames[b][k].unwrap());
            for t in a + 1..b {
                let w = (t - a) as f64 / (b - a) as f64;
                frames[t][k] = Some(Point {
                    x: pa.x + w * (pb.x - pa.x),
                    y: pa.y + w * (pb.y - pa.y),
                });
            }
        }
    }
    Ok(KeypointSequence {
        frames,
        ..seq.clone()
    })
}

/// Per frame: centers the torso bounding box at the origin and scales both
/// axes by `1 / max(width, height)`.
pub fn normalize_torso(seq: &KeypointSequence, torso: &[usize]) -> Result<KeypointSequence> {
    if torso.is_empty() {
        return Err(Error::Config("torso landmark set is empty".into()));
    }
    if let Some(&bad) = torso.iter().find(|&&i| i >= seq.landmarks) {
        return Err(Error::Config(format!(
            "torso landmark {bad} out of range for {} landmarks",
            seq.landmarks
        )));
    }
    let mut frames = Vec::with_capacity(seq.len());
    for (t, frame) in seq.frames.iter().enumerate() {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &i in torso {
            let p = frame[i].ok_or(Error::InvalidLandmark { frame: t, landmark: i })?;
            min = (min.0.min(p.x), min.1.min(p.y));
            max = (max.0.max(p.x), max.1.max(p.y));
        }
        let extent = (max.0 - min.0).max(max.1 - min.1);
        if extent <= 0.0 {
            return Err(Error::DegeneratePose { frame: t });
        }
        let center = ((min.0 + max.0) / 2.0, (min.1 + max.1) / 2.0);
        frames.push(
            frame
                .iter()
                .map(|l| {
                    l.map(|p| Point {
                        x: (p.x - center.0) / extent,
                        y: (p.y - center.1) / extent,
                    })
                })
                .collect(),
        );
    }
    Ok(KeypointSequence {
        frames,
        ..seq.clone()
    })
}

/// Row `t` is `(x_1, y_1, …, x_K, y_K)`.
pub fn flatten(seq: &KeypointSequence) -> Result<FeatureSequence> {
    let mut data = Vec::with_capacity(seq.len() * seq.landmarks * 2);
    for (t, frame) in seq.frames.iter().enumerate() {
        for (k, l) in frame.iter().enumerate() {
            let p = l.ok_or(Error::InvalidLandmark { frame: t, landmark: k })?;
            data.push(p.x);
            data.push(p.y);
        }
    }
    Ok(FeatureSequence {
        id: seq.id.clone(),
        data: Tensor::new(&[seq.len(), seq.landmarks * 2], data)?,
    })
}

/// Inverse of [`flatten`].
pub fn unflatten(features: &FeatureSequence, signer_id: &str) -> Result<KeypointSequence> {
    if !features.dim().is_multiple_of(2) {
        return Err(Error::Config(format!("odd feature width {}", features.dim())));
    }
    let frames = (0..features.source_len())
        .map(|t| {
            features
                .data
                .row(t)
                .chunks(2)
                .map(|c| Some(Point { x: c[0], y: c[1] }))
                .collect()
        })
        .collect();
    KeypointSequence::new(features.id.clone(), signer_id, frames)
}

/// interpolate → normalize → flatten.
pub fn preprocess(seq: &KeypointSequence, torso: &[usize]) -> Result<FeatureSequence> {
    let filled = interpolate_missing(seq)?;
    let normalized = normalize_torso(&filled, torso)?;
    flatten(&normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Landmark {
        Some(Point { x, y })
    }

    fn single_track(values: &[Option<f64>]) -> KeypointSequence {
        let frames = values.iter().map(|v| vec![v.map(|x| Point { x, y: -x })]).collect();
        KeypointSequence::new("s", "a", frames).unwrap()
    }

    fn xs(seq: &KeypointSequence) -> Vec<f64> {
        seq.frames().iter().map(|f| f[0].unwrap().x).collect()
    }

    #[test]
    fn midpoint_interpolation() {
        let s = interpolate_missing(&single_track(&[Some(1.0), None, Some(3.0)])).unwrap();
        assert_eq!(xs(&s), vec![1.0, 2.0, 3.0]);
        assert_eq!(s.frame(1)[0].unwrap().y, -2.0);
    }

    #[test]
    fn leading_gap_holds_next_value() {
        let s = interpolate_missing(&single_track(&[None, Some(5.0)])).unwrap();
        assert_eq!(xs(&s), vec![5.0, 5.0]);
    }

    #[test]
    fn trailing_gap_holds_previous_value() {
        let s = interpolate_missing(&single_track(&[Some(2.0), None, None])).unwrap();
        assert_eq!(xs(&s), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn long_gap_is_a_linear_ramp() {
        let s = interpolate_missing(&single_track(&[Some(0.0), None, None, None, Some(4.0)])).unwrap();
        assert_eq!(xs(&s), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn never_valid_landmark_is_named() {
        let frames = vec![vec![p(0.0, 0.0), None], vec![p(1.0, 1.0), None]];
        let seq = KeypointSequence::new("s", "a", frames).unwrap();
        assert!(matches!(interpolate_missing(&seq), Err(Error::Imputation { landmark: 1 })));
    }

    #[test]
    fn interpolation_is_idempotent() {
        let once = interpolate_missing(&single_track(&[None, Some(1.0), None, Some(7.0), None])).unwrap();
        assert_eq!(interpolate_missing(&once).unwrap(), once);
    }

    #[test]
    fn centered_unit_torso_is_unchanged() {
        let frame = vec![p(-0.5, -0.5), p(0.5, -0.5), p(-0.5, 0.5), p(0.5, 0.5), p(0.2, 0.1)];
        let seq = KeypointSequence::new("s", "a", vec![frame]).unwrap();
        assert_eq!(normalize_torso(&seq, &[0, 1, 2, 3]).unwrap(), seq);
    }

    #[test]
    fn degenerate_torso_is_rejected() {
        let frame = vec![p(3.0, 3.0), p(3.0, 3.0)];
        let seq = KeypointSequence::new("s", "a", vec![frame]).unwrap();
        assert!(matches!(normalize_torso(&seq, &[0, 1]), Err(Error::DegeneratePose { frame: 0 })));
    }

    #[test]
    fn scaling_uses_the_dominant_axis() {
        // Box 4 wide, 2 tall: both axes divide by 4.
        let frame = vec![p(0.0, 0.0), p(4.0, 2.0), p(4.0, 0.0)];
        let seq = KeypointSequence::new("s", "a", vec![frame]).unwrap();
        let n = normalize_torso(&seq, &[0, 1]).unwrap();
        assert_eq!(n.frame(0)[1], p(0.5, 0.25));
        assert_eq!(n.frame(0)[2], p(0.5, -0.25));
    }

    #[test]
    fn flatten_layout() {
        let mut frame = vec![p(0.0, 0.0); NUM_LANDMARKS];
        frame[0] = p(0.1, -0.2);
        let seq = KeypointSequence::new("s", "a", vec![frame]).unwrap();
        let f = flatten(&seq).unwrap();
        assert_eq!(f.data.shape(), &[1, FEATURE_DIM]);
        assert_eq!(f.data.row(0)[0], 0.1);
        assert_eq!(f.data.row(0)[1], -0.2);
        assert!(f.data.row(0)[2..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flatten_rejects_invalid_landmark() {
        let seq = KeypointSequence::new("s", "a", vec![vec![p(0.0, 0.0), None]]).unwrap();
        assert!(matches!(
            flatten(&seq),
            Err(Error::InvalidLandmark { frame: 0, landmark: 1 })
        ));
    }

    #[test]
    fn ragged_frames_are_rejected() {
        let frames = vec![vec![p(0.0, 0.0)], vec![p(0.0, 0.0), p(1.0, 1.0)]];
        assert!(KeypointSequence::new("s", "a", frames).is_err());
        assert!(KeypointSequence::new("s", "a", vec![]).is_err());
    }
}
