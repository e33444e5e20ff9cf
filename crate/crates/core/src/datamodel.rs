//! Word-token data model: transcripts segmented into word tokens, per-token
//! forgery labels, padded feature sequences, and the on-disk manifest and
//! feature-store formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const FEATURE_MAGIC: &[u8; 8] = b"WAFLFT01";
pub const FEATURE_VERSION: u32 = 1;

/// Per-token, per-modality forgery label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Real,
    Fake,
}

impl Label {
    #[inline]
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

/// Modality a forgery segment tampers with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
    Both,
}

impl Modality {
    pub fn touches_visual(self) -> bool {
        matches!(self, Modality::Visual | Modality::Both)
    }

    pub fn touches_audio(self) -> bool {
        matches!(self, Modality::Audio | Modality::Both)
    }
}

/// One spoken word with its time interval and per-modality labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub word: String,
    pub t_s: f64,
    pub t_e: f64,
    #[serde(default)]
    pub label_v: Label,
    #[serde(default)]
    pub label_a: Label,
}

impl WordToken {
    /// Fused label: fake if either modality is fake.
    #[inline]
    pub fn fused_fake(&self) -> bool {
        self.label_v.is_fake() || self.label_a.is_fake()
    }
}

/// Ground-truth forged interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgerySegment {
    pub t_s: f64,
    pub t_e: f64,
    pub modality: Modality,
}

/// One video: id, duration, word tokens, and ground-truth segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub duration: f64,
    #[serde(default)]
    pub tokens: Vec<WordToken>,
    #[serde(default)]
    pub gt_segments: Vec<ForgerySegment>,
}

impl VideoRecord {
    /// Checks interval sanity: tokens sorted, non-overlapping, inside
    /// [0, duration]; segments inside [0, duration].
    pub fn validate(&self) -> Result<()> {
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "video {}: duration must be a positive real, got {}",
                self.id, self.duration
            )));
        }
        let mut prev_end = f64::NEG_INFINITY;
        let mut prev = (0.0, 0.0);
        for t in &self.tokens {
            check_interval(t.t_s, t.t_e)?;
            if t.t_s < 0.0 || t.t_e > self.duration {
                return Err(Error::InvalidInterval { t_s: t.t_s, t_e: t.t_e });
            }
            if t.t_s < prev_end {
                return Err(Error::OverlappingTokens { first: prev, second: (t.t_s, t.t_e) });
            }
            prev_end = t.t_e;
            prev = (t.t_s, t.t_e);
        }
        for s in &self.gt_segments {
            check_interval(s.t_s, s.t_e)?;
            if s.t_s < 0.0 || s.t_e > self.duration {
                return Err(Error::InvalidInterval { t_s: s.t_s, t_e: s.t_e });
            }
        }
        Ok(())
    }
}

fn check_interval(t_s: f64, t_e: f64) -> Result<()> {
    if !t_s.is_finite() || !t_e.is_finite() || t_s >= t_e {
        return Err(Error::InvalidInterval { t_s, t_e });
    }
    Ok(())
}

/// Turns a raw transcript of (word, t_s, t_e) triples into validated tokens:
/// sorted by start time, clipped to [0, duration], labels initialized to
/// real. Words whose interval falls entirely outside the video are dropped.
pub fn segment_words(transcript: &[(String, f64, f64)], duration: f64) -> Result<Vec<WordToken>> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "duration must be a positive real, got {duration}"
        )));
    }
    let mut tokens = Vec::with_capacity(transcript.len());
    for (word, t_s, t_e) in transcript {
        check_interval(*t_s, *t_e)?;
        let s = t_s.max(0.0);
        let e = t_e.min(duration);
        if s >= e {
            continue;
        }
        tokens.push(WordToken {
            word: word.clone(),
            t_s: s,
            t_e: e,
            label_v: Label::Real,
            label_a: Label::Real,
        });
    }
    tokens.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    for w in tokens.windows(2) {
        if w[1].t_s < w[0].t_e {
            return Err(Error::OverlappingTokens {
                first: (w[0].t_s, w[0].t_e),
                second: (w[1].t_s, w[1].t_e),
            });
        }
    }
    Ok(tokens)
}

/// Marks a token fake for modality m iff it overlaps a segment of modality m
/// (or `both`) with positive measure; a zero-measure touch stays real.
/// Idempotent and independent of segment order.
pub fn label_tokens(tokens: &[WordToken], segments: &[ForgerySegment]) -> Vec<WordToken> {
    let mut out = tokens.to_vec();
    for t in &mut out {
        for s in segments {
            let overlap = t.t_e.min(s.t_e) - t.t_s.max(s.t_s);
            if overlap > 0.0 {
                if s.modality.touches_visual() {
                    t.label_v = Label::Fake;
                }
                if s.modality.touches_audio() {
                    t.label_a = Label::Fake;
                }
            }
        }
    }
    out
}

/// Row-major matrix of f32, the storage type of per-token features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        FeatureMatrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|&v| v as f64).collect())
    }
}

/// Raw (unpadded) per-token features for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub visual: FeatureMatrix,
    pub audio: FeatureMatrix,
}

/// How a too-short sequence is extended to the target length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadStrategy {
    Reflection,
    Trailing,
}

/// Per-modality pad targets and strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PadConfig {
    pub target_t_v: usize,
    pub target_t_a: usize,
    pub visual: PadStrategy,
    pub audio: PadStrategy,
}

impl Default for PadConfig {
    fn default() -> Self {
        PadConfig {
            target_t_v: 16,
            target_t_a: 10_240,
            visual: PadStrategy::Reflection,
            audio: PadStrategy::Trailing,
        }
    }
}

/// Brings a T×k sequence to exactly `target` rows. Over-length sequences keep
/// their first `target` rows. Reflection folds row indices as a triangular
/// wave over the original rows (a single row repeats); trailing appends zero
/// rows.
pub fn pad_sequence(seq: &FeatureMatrix, target: usize, strategy: PadStrategy) -> Result<FeatureMatrix> {
    let t = seq.rows;
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let k = seq.cols;
    let mut out = FeatureMatrix::zeros(target, k);
    for i in 0..target.min(t) {
        out.data[i * k..(i + 1) * k].copy_from_slice(seq.row(i));
    }
    if target <= t {
        return Ok(out);
    }
    match strategy {
        PadStrategy::Trailing => {}
        PadStrategy::Reflection => {
            for i in t..target {
                let src = if t == 1 {
                    0
                } else {
                    let p = i % (2 * (t - 1));
                    if p < t {
                        p
                    } else {
                        2 * (t - 1) - p
                    }
                };
                let (head, tail) = out.data.split_at_mut(i * k);
                tail[..k].copy_from_slice(&head[src * k..(src + 1) * k]);
            }
        }
    }
    Ok(out)
}

/// Features for every token of every video, keyed by video id in manifest
/// order.
pub type FeatureStore = IndexMap<String, Vec<TokenFeatures>>;

/// Paired manifest records and feature store, validated so that every token
/// has exactly one feature entry and feature widths are constant.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
    pub features: FeatureStore,
}

impl Dataset {
    pub fn new(videos: Vec<VideoRecord>, features: FeatureStore) -> Result<Self> {
        for v in &videos {
            v.validate()?;
        }
        let mut dims: Option<(usize, usize)> = None;
        for v in &videos {
            let feats = features.get(&v.id).ok_or_else(|| {
                Error::MissingFeatures(format!("video {} has no feature entry", v.id))
            })?;
            if feats.len() != v.tokens.len() {
                return Err(Error::MissingFeatures(format!(
                    "video {}: manifest has {} tokens, feature store has {}",
                    v.id,
                    v.tokens.len(),
                    feats.len()
                )));
            }
            for f in feats {
                let d = (f.visual.cols, f.audio.cols);
                match dims {
                    None => dims = Some(d),
                    Some(expect) if expect != d => {
                        return Err(Error::DimensionMismatch(format!(
                            "video {}: feature widths {:?} differ from {:?}",
                            v.id, d, expect
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Dataset { videos, features })
    }

    pub fn feature(&self, video: usize, token: usize) -> &TokenFeatures {
        &self.features[&self.videos[video].id][token]
    }

    pub fn token_count(&self) -> usize {
        self.videos.iter().map(|v| v.tokens.len()).sum()
    }

    /// Feature widths (k_v, k_a); None when the dataset has no tokens.
    pub fn feature_dims(&self) -> Option<(usize, usize)> {
        self.videos
            .iter()
            .find(|v| !v.tokens.is_empty())
            .map(|v| {
                let f = &self.features[&v.id][0];
                (f.visual.cols, f.audio.cols)
            })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    videos: Vec<VideoRecord>,
}

pub fn save_manifest<P: AsRef<Path>>(path: P, videos: &[VideoRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let doc = ManifestDoc { videos: videos.to_vec() };
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Loads and validates a manifest. Unknown JSON fields are ignored; missing
/// labels default to real.
pub fn load_manifest<P: AsRef<Path>>(path: P) -> Result<Vec<VideoRecord>> {
    let file = File::open(path)?;
    let doc: ManifestDoc = serde_json::from_reader(BufReader::new(file))?;
    for v in &doc.videos {
        v.validate()?;
    }
    Ok(doc.videos)
}

fn check_store_dims(store: &FeatureStore) -> Result<()> {
    let mut dims: Option<(usize, usize)> = None;
    for (id, feats) in store {
        for f in feats {
            let d = (f.visual.cols, f.audio.cols);
            match dims {
                None => dims = Some(d),
                Some(expect) if expect != d => {
                    return Err(Error::DimensionMismatch(format!(
                        "video {id}: feature widths {d:?} differ from {expect:?}"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn save_features<P: AsRef<Path>>(path: P, store: &FeatureStore) -> Result<()> {
    check_store_dims(store)?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (id, feats) in store {
        w.write_u32::<LittleEndian>(id.len() as u32)?;
        w.write_all(id.as_bytes())?;
        w.write_u32::<LittleEndian>(feats.len() as u32)?;
        for f in feats {
            write_matrix(&mut w, &f.visual)?;
            write_matrix(&mut w, &f.audio)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &FeatureMatrix) -> Result<()> {
    w.write_u32::<LittleEndian>(m.rows as u32)?;
    w.write_u32::<LittleEndian>(m.cols as u32)?;
    for &v in &m.data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn load_features<P: AsRef<Path>>(path: P) -> Result<FeatureStore> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("feature file too short".into()))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!("bad feature magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature version {version}")));
    }
    let n_videos = read_u32(&mut r)? as usize;
    let mut store = FeatureStore::new();
    for _ in 0..n_videos {
        let id_len = read_u32(&mut r)? as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes).map_err(|_| truncated())?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Format("video id is not UTF-8".into()))?;
        let n_tokens = read_u32(&mut r)? as usize;
        let mut feats = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let visual = read_matrix(&mut r)?;
            let audio = read_matrix(&mut r)?;
            feats.push(TokenFeatures { visual, audio });
        }
        if store.insert(id.clone(), feats).is_some() {
            return Err(Error::Format(format!("duplicate video id {id}")));
        }
    }
    check_store_dims(&store)?;
    Ok(store)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|_| truncated())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<FeatureMatrix> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = vec![0.0f32; rows * cols];
    for v in &mut data {
        *v = r.read_f32::<LittleEndian>().map_err(|_| truncated())?;
    }
    Ok(FeatureMatrix { rows, cols, data })
}

fn truncated() -> Error {
    Error::Format("feature file truncated".into())
}
