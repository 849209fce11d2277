//! Domain types and text file formats: video/frame features, relevance
//! ground truth, split labels, and trained model parameters.
//!
//! All formats are UTF-8 text, one record per line:
//!
//! * video features — header `#dim <d>`, then `<id>\t<f1> <f2> … <fd>`
//! * frame features — header `#dim <d>`, then `<id>\t<frame_index>\t<f1> … <fd>`
//!   (frame indices 1-based, contiguous per video, any file order)
//! * relevance — `<id>\t<rel_1>,<rel_2>,…` (ranked, comma-separated)
//! * splits — `<id>\t<train|val|test>`
//! * model — `#relearn-model v1`, `d=<d> p=<p>`, p rows of W, one row of b,
//!   floats with 17 significant digits so round-trips are lossless
//!
//! Loaders reject every malformed line with its 1-based line number and
//! return immutable stores that are safe to share across threads.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::ProjectionModel;

/// Opaque video identifier: any non-empty token without whitespace.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VideoId(String);

impl VideoId {
    pub fn new(id: impl Into<String>) -> Result<VideoId> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::data("video id must be non-empty"));
        }
        if id.chars().any(char::is_whitespace) {
            return Err(Error::data(format!("video id {id:?} contains whitespace")));
        }
        Ok(VideoId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Allows `BTreeMap<VideoId, _>` lookups by plain `&str`.
impl Borrow<str> for VideoId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Dense d-dimensional feature vector (unitless activations).
pub type FeatureVector = Array1<f64>;

/// Temporally ordered per-frame features of one video; all frames share d.
pub type FrameFeatureSequence = Vec<FeatureVector>;

/// Video-level feature store: one vector per id, common dimension `dim`.
#[derive(Clone, Debug)]
pub struct VideoFeatures {
    pub dim: usize,
    pub by_id: BTreeMap<VideoId, FeatureVector>,
}

impl VideoFeatures {
    pub fn get(&self, id: &VideoId) -> Option<&FeatureVector> {
        self.by_id.get(id)
    }

    /// Lookup that turns a missing id into a data-contract error.
    pub fn require(&self, id: &VideoId) -> Result<&FeatureVector> {
        self.by_id
            .get(id)
            .ok_or_else(|| Error::data(format!("video {id} has no feature vector")))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Frame-level feature store.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub dim: usize,
    pub by_id: BTreeMap<VideoId, FrameFeatureSequence>,
}

/// Dataset partition label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(token: &str) -> Option<Split> {
        match token {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground-truth relevance lists R_v (ranked, most relevant first) plus
/// train/val/test split labels.
///
/// Videos present in a feature store but absent from `lists` are legal;
/// they act as candidates and negatives only.
#[derive(Clone, Debug, Default)]
pub struct RelevanceTable {
    pub lists: BTreeMap<VideoId, Vec<VideoId>>,
    pub split: BTreeMap<VideoId, Split>,
}

impl RelevanceTable {
    /// The ranked relevant list for `v`; empty when `v` has no list.
    pub fn relevant(&self, v: &VideoId) -> &[VideoId] {
        self.lists.get(v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn split_of(&self, v: &VideoId) -> Option<Split> {
        self.split.get(v).copied()
    }

    /// All ids labeled with `split`, in id order.
    pub fn ids_in(&self, split: Split) -> Vec<VideoId> {
        self.split
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Cross-checks the table against a feature store: every referenced id
    /// must have features, no video may list itself, lists are
    /// duplicate-free.
    pub fn validate_against(&self, features: &VideoFeatures) -> Result<()> {
        for (v, list) in &self.lists {
            features.require(v)?;
            let mut seen = std::collections::BTreeSet::new();
            for r in list {
                if r == v {
                    return Err(Error::data(format!(
                        "video {v} appears in its own relevance list"
                    )));
                }
                if !seen.insert(r) {
                    return Err(Error::data(format!(
                        "video {v}: duplicate entry {r} in relevance list"
                    )));
                }
                if features.get(r).is_none() {
                    return Err(Error::data(format!(
                        "relevance list of {v} references {r}, which has no features"
                    )));
                }
            }
        }
        for v in self.split.keys() {
            features.require(v)?;
        }
        Ok(())
    }
}

/// A fully cross-validated dataset: video features, optional frame
/// features (needed only for frame-level augmentation), and ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub videos: VideoFeatures,
    pub frames: Option<FrameFeatures>,
    pub table: RelevanceTable,
}

impl Dataset {
    /// Assembles and cross-checks the parts: relevance lists and splits may
    /// only reference videos with features, and frame features must agree
    /// with the video dimension and cover only known videos.
    pub fn new(
        videos: VideoFeatures,
        frames: Option<FrameFeatures>,
        table: RelevanceTable,
    ) -> Result<Dataset> {
        table.validate_against(&videos)?;
        if let Some(ff) = &frames {
            if ff.dim != videos.dim {
                return Err(Error::data(format!(
                    "frame dimension {} != video dimension {}",
                    ff.dim, videos.dim
                )));
            }
            for id in ff.by_id.keys() {
                if videos.get(id).is_none() {
                    return Err(Error::data(format!(
                        "frame features for {id}, which has no video-level features"
                    )));
                }
            }
        }
        Ok(Dataset { videos, frames, table })
    }
}

/// Component-wise arithmetic mean over a non-empty frame sequence.
pub fn mean_pool(frames: &[FeatureVector]) -> Result<FeatureVector> {
    let first = frames
        .first()
        .ok_or_else(|| Error::data("mean_pool: empty frame sequence"))?;
    let mut acc = Array1::<f64>::zeros(first.len());
    for f in frames {
        if f.len() != first.len() {
            return Err(Error::data(format!(
                "mean_pool: frame dimension {} != {}",
                f.len(),
                first.len()
            )));
        }
        acc += f;
    }
    Ok(acc / frames.len() as f64)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

/// Reads the `#dim <d>` header common to both feature formats.
fn parse_dim_header(line: Option<std::io::Result<String>>, path: &Path) -> Result<usize> {
    let line = match line {
        Some(l) => l.map_err(|e| Error::file(path, e))?,
        None => return Err(Error::parse(path, 1, "missing `#dim <d>` header")),
    };
    let dim = line
        .strip_prefix("#dim ")
        .and_then(|rest| rest.trim().parse::<usize>().ok())
        .filter(|d| *d >= 1)
        .ok_or_else(|| {
            Error::parse(path, 1, format!("expected `#dim <d>` header, got {line:?}"))
        })?;
    Ok(dim)
}

fn parse_floats(text: &str, dim: usize, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(dim);
    for token in text.split_whitespace() {
        let x: f64 = token
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad float {token:?}")))?;
        if !x.is_finite() {
            return Err(Error::parse(path, lineno, format!("non-finite value {token}")));
        }
        values.push(x);
    }
    if values.len() != dim {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected {dim} values, got {}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_id(token: &str, path: &Path, lineno: usize) -> Result<VideoId> {
    VideoId::new(token).map_err(|e| Error::parse(path, lineno, e.to_string()))
}

/// Parses the video-level feature format from any reader; `origin` names
/// the source in error messages.
pub fn parse_video_features(reader: impl BufRead, origin: &Path) -> Result<VideoFeatures> {
    let mut lines = reader.lines();
    let dim = parse_dim_header(lines.next(), origin)?;
    let mut by_id = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::file(origin, e))?;
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, lineno, "expected `<id>\\t<values>`"))?;
        let id = parse_id(id, origin, lineno)?;
        let values = parse_floats(rest, dim, origin, lineno)?;
        if by_id.insert(id.clone(), Array1::from_vec(values)).is_some() {
            return Err(Error::parse(origin, lineno, format!("duplicate video id {id}")));
        }
    }
    Ok(VideoFeatures { dim, by_id })
}

pub fn load_video_features(path: &Path) -> Result<VideoFeatures> {
    parse_video_features(open(path)?, path)
}

/// Parses the frame-level format; frames may appear in any file order but
/// indices must form 1..n per video.
pub fn parse_frame_features(reader: impl BufRead, origin: &Path) -> Result<FrameFeatures> {
    let mut lines = reader.lines();
    let dim = parse_dim_header(lines.next(), origin)?;
    let mut indexed: BTreeMap<VideoId, BTreeMap<usize, FeatureVector>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::file(origin, e))?;
        let mut parts = line.splitn(3, '\t');
        let (id, idx, rest) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(idx), Some(rest)) => (id, idx, rest),
            _ => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "expected `<id>\\t<frame_index>\\t<values>`",
                ))
            }
        };
        let id = parse_id(id, origin, lineno)?;
        let idx: usize = idx
            .parse()
            .ok()
            .filter(|i| *i >= 1)
            .ok_or_else(|| {
                Error::parse(origin, lineno, format!("bad frame index {idx:?} (1-based)"))
            })?;
        let values = parse_floats(rest, dim, origin, lineno)?;
        let prev = indexed
            .entry(id.clone())
            .or_default()
            .insert(idx, Array1::from_vec(values));
        if prev.is_some() {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate frame {idx} for video {id}"),
            ));
        }
    }
    let mut by_id = BTreeMap::new();
    for (id, frames) in indexed {
        for (pos, idx) in frames.keys().enumerate() {
            if *idx != pos + 1 {
                return Err(Error::data(format!(
                    "{}: video {id} missing frame {} (indices must be 1..n contiguous)",
                    origin.display(),
                    pos + 1
                )));
            }
        }
        by_id.insert(id, frames.into_values().collect());
    }
    Ok(FrameFeatures { dim, by_id })
}

pub fn load_frame_features(path: &Path) -> Result<FrameFeatures> {
    parse_frame_features(open(path)?, path)
}

/// Parses ranked relevance lists. Lists must be non-empty, duplicate-free,
/// and never contain the key video itself.
pub fn parse_relevance(reader: impl BufRead, origin: &Path) -> Result<BTreeMap<VideoId, Vec<VideoId>>> {
    let mut lists = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::file(origin, e))?;
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, lineno, "expected `<id>\\t<rel_1>,<rel_2>,…`"))?;
        let id = parse_id(id, origin, lineno)?;
        let mut list = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for token in rest.split(',') {
            let r = parse_id(token, origin, lineno)?;
            if r == id {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("video {id} lists itself as relevant"),
                ));
            }
            if !seen.insert(r.clone()) {
                return Err(Error::parse(origin, lineno, format!("duplicate entry {r}")));
            }
            list.push(r);
        }
        if lists.insert(id.clone(), list).is_some() {
            return Err(Error::parse(origin, lineno, format!("duplicate video id {id}")));
        }
    }
    Ok(lists)
}

pub fn load_relevance(path: &Path) -> Result<BTreeMap<VideoId, Vec<VideoId>>> {
    parse_relevance(open(path)?, path)
}

/// Parses `<id>\t<train|val|test>` split labels.
pub fn parse_splits(reader: impl BufRead, origin: &Path) -> Result<BTreeMap<VideoId, Split>> {
    let mut split = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::file(origin, e))?;
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, lineno, "expected `<id>\\t<train|val|test>`"))?;
        let id = parse_id(id, origin, lineno)?;
        let s = Split::parse(label).ok_or_else(|| {
            Error::parse(origin, lineno, format!("unknown split label {label:?}"))
        })?;
        if split.insert(id.clone(), s).is_some() {
            return Err(Error::parse(origin, lineno, format!("duplicate video id {id}")));
        }
    }
    Ok(split)
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<VideoId, Split>> {
    parse_splits(open(path)?, path)
}

const MODEL_HEADER: &str = "#relearn-model v1";

/// 17 significant digits: enough for an exact f64 round-trip.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_float_row(w: &mut impl Write, row: impl Iterator<Item = f64>, path: &Path) -> Result<()> {
    let line = row.map(fmt_float).collect::<Vec<_>>().join(" ");
    writeln!(w, "{line}").map_err(|e| Error::file(path, e))
}

/// Writes a model in the versioned text format described in the module docs.
pub fn save_model(model: &ProjectionModel, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::file(path, e);
    writeln!(w, "{MODEL_HEADER}").map_err(io)?;
    writeln!(w, "d={} p={}", model.d(), model.p()).map_err(io)?;
    for row in model.w.rows() {
        write_float_row(&mut w, row.iter().copied(), path)?;
    }
    write_float_row(&mut w, model.b.iter().copied(), path)?;
    w.flush().map_err(io)
}

pub fn load_model(path: &Path) -> Result<ProjectionModel> {
    parse_model(open(path)?, path)
}

pub fn parse_model(reader: impl BufRead, origin: &Path) -> Result<ProjectionModel> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(line))) => Ok((i + 1, line)),
            Some((_, Err(e))) => Err(Error::file(origin, e)),
            None => Err(Error::data(format!(
                "{}: unexpected end of file, expected {expect}",
                origin.display()
            ))),
        }
    };

    let (lineno, header) = next_line("header")?;
    if header != MODEL_HEADER {
        return Err(Error::parse(
            origin,
            lineno,
            format!("expected {MODEL_HEADER:?}, got {header:?}"),
        ));
    }
    let (lineno, shape) = next_line("`d=<d> p=<p>`")?;
    let parse_shape = |s: &str| -> Option<(usize, usize)> {
        let (d, p) = s.split_once(' ')?;
        let d = d.strip_prefix("d=")?.parse().ok()?;
        let p = p.strip_prefix("p=")?.parse().ok()?;
        (d >= 1 && p >= 1).then_some((d, p))
    };
    let (d, p) = parse_shape(&shape)
        .ok_or_else(|| Error::parse(origin, lineno, format!("expected `d=<d> p=<p>`, got {shape:?}")))?;

    let mut w = Array2::<f64>::zeros((p, d));
    for i in 0..p {
        let (lineno, line) = next_line(&format!("row {} of W", i + 1))?;
        let row = parse_floats(&line, d, origin, lineno)?;
        w.row_mut(i).assign(&Array1::from_vec(row));
    }
    let (lineno, line) = next_line("bias row")?;
    let b = Array1::from_vec(parse_floats(&line, p, origin, lineno)?);
    if let Some((i, line)) = lines.next() {
        let line = line.map_err(|e| Error::file(origin, e))?;
        return Err(Error::parse(
            origin,
            i + 1,
            format!("trailing content after model body: {line:?}"),
        ));
    }
    Ok(ProjectionModel { w, b })
}

/// Writes the video-level feature format. Floats use `Display`, which is
/// the shortest representation that round-trips exactly.
pub fn write_video_features<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (&'a VideoId, &'a FeatureVector)>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::file(path, e);
    writeln!(w, "#dim {dim}").map_err(io)?;
    for (id, v) in rows {
        debug_assert_eq!(v.len(), dim);
        let values = v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        writeln!(w, "{id}\t{values}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_frame_features<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (&'a VideoId, &'a FrameFeatureSequence)>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::file(path, e);
    writeln!(w, "#dim {dim}").map_err(io)?;
    for (id, frames) in rows {
        for (i, f) in frames.iter().enumerate() {
            let values = f.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
            writeln!(w, "{id}\t{}\t{values}", i + 1).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_relevance<'a>(
    path: &Path,
    rows: impl Iterator<Item = (&'a VideoId, &'a Vec<VideoId>)>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::file(path, e);
    for (id, list) in rows {
        let list = list.iter().map(VideoId::as_str).collect::<Vec<_>>().join(",");
        writeln!(w, "{id}\t{list}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_splits<'a>(
    path: &Path,
    rows: impl Iterator<Item = (&'a VideoId, Split)>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::file(path, e);
    for (id, split) in rows {
        writeln!(w, "{id}\t{split}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn origin() -> &'static Path {
        Path::new("<memory>")
    }

    fn id(s: &str) -> VideoId {
        VideoId::new(s).unwrap()
    }

    #[test]
    fn video_features_basic_row() {
        let vf = parse_video_features(Cursor::new("#dim 2\na\t1.0 2.0\n"), origin()).unwrap();
        assert_eq!(vf.dim, 2);
        assert_eq!(vf.by_id[&id("a")], arr1(&[1.0, 2.0]));
    }

    #[test]
    fn video_features_empty_body() {
        let vf = parse_video_features(Cursor::new("#dim 3\n"), origin()).unwrap();
        assert_eq!(vf.dim, 3);
        assert!(vf.is_empty());
    }

    #[test]
    fn video_features_wrong_count_names_line() {
        let err = parse_video_features(Cursor::new("#dim 2\na\t1 2\nb\t1 2 3\n"), origin())
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn video_features_rejects_duplicates_and_non_finite() {
        assert!(parse_video_features(Cursor::new("#dim 1\na\t1\na\t2\n"), origin()).is_err());
        assert!(parse_video_features(Cursor::new("#dim 1\na\tnan\n"), origin()).is_err());
        assert!(parse_video_features(Cursor::new("#dim 1\na\tinf\n"), origin()).is_err());
    }

    #[test]
    fn video_features_requires_header() {
        let err = parse_video_features(Cursor::new("a\t1.0\n"), origin()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn frame_features_reorders_by_index() {
        let text = "#dim 2\na\t2\t0 1\na\t1\t1 0\n";
        let ff = parse_frame_features(Cursor::new(text), origin()).unwrap();
        let frames = &ff.by_id[&id("a")];
        assert_eq!(frames[0], arr1(&[1.0, 0.0]));
        assert_eq!(frames[1], arr1(&[0.0, 1.0]));
    }

    #[test]
    fn frame_features_missing_index_is_an_error() {
        let err =
            parse_frame_features(Cursor::new("#dim 1\na\t1\t1\na\t3\t3\n"), origin()).unwrap_err();
        assert!(err.to_string().contains("missing frame 2"), "{err}");
    }

    #[test]
    fn frame_features_duplicate_index_is_an_error() {
        let err =
            parse_frame_features(Cursor::new("#dim 1\na\t1\t1\na\t1\t2\n"), origin()).unwrap_err();
        assert!(err.to_string().contains("duplicate frame 1"), "{err}");
    }

    #[test]
    fn frame_features_single_frame() {
        let ff = parse_frame_features(Cursor::new("#dim 1\na\t1\t5\n"), origin()).unwrap();
        assert_eq!(ff.by_id[&id("a")].len(), 1);
    }

    #[test]
    fn mean_pool_hand_cases() {
        let frames = vec![arr1(&[1.0]), arr1(&[3.0]), arr1(&[5.0]), arr1(&[7.0])];
        assert_eq!(mean_pool(&frames).unwrap(), arr1(&[4.0]));

        let single = vec![arr1(&[2.5, -1.0])];
        assert_eq!(mean_pool(&single).unwrap(), arr1(&[2.5, -1.0]));

        let frames = vec![arr1(&[1.0, 0.0]), arr1(&[0.0, 1.0])];
        assert_eq!(mean_pool(&frames).unwrap(), arr1(&[0.5, 0.5]));
    }

    #[test]
    fn mean_pool_rejects_empty_and_mismatched() {
        assert!(mean_pool(&[]).is_err());
        assert!(mean_pool(&[arr1(&[1.0]), arr1(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn relevance_parses_ranked_lists() {
        let lists = parse_relevance(Cursor::new("a\tb,c\nd\te\n"), origin()).unwrap();
        assert_eq!(lists[&id("a")], vec![id("b"), id("c")]);
        assert_eq!(lists[&id("d")], vec![id("e")]);
    }

    #[test]
    fn relevance_rejects_self_reference_and_duplicates() {
        assert!(parse_relevance(Cursor::new("a\ta,b\n"), origin()).is_err());
        assert!(parse_relevance(Cursor::new("a\tb,b\n"), origin()).is_err());
        assert!(parse_relevance(Cursor::new("a\tb\na\tc\n"), origin()).is_err());
    }

    #[test]
    fn splits_parse_and_reject_unknown_labels() {
        let s = parse_splits(Cursor::new("a\ttrain\nb\tval\nc\ttest\n"), origin()).unwrap();
        assert_eq!(s[&id("a")], Split::Train);
        assert_eq!(s[&id("b")], Split::Val);
        assert_eq!(s[&id("c")], Split::Test);
        assert!(parse_splits(Cursor::new("a\tdev\n"), origin()).is_err());
    }

    #[test]
    fn relevance_table_validation() {
        let vf = parse_video_features(Cursor::new("#dim 1\na\t1\nb\t2\n"), origin()).unwrap();
        let mut table = RelevanceTable::default();
        table.lists.insert(id("a"), vec![id("b")]);
        table.split.insert(id("a"), Split::Train);
        table.split.insert(id("b"), Split::Train);
        assert!(table.validate_against(&vf).is_ok());

        table.lists.insert(id("b"), vec![id("zzz")]);
        assert!(table.validate_against(&vf).is_err());
    }

    #[test]
    fn model_round_trip_2x3() {
        let model = ProjectionModel {
            w: ndarray::arr2(&[[0.1, -0.2, 0.3], [1.0 / 3.0, -7.5e-11, 2.0]]),
            b: arr1(&[-0.5, 1e-16]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.w, model.w);
        assert_eq!(loaded.b, model.b);
    }

    #[test]
    fn model_truncated_file_is_an_error() {
        let model = ProjectionModel {
            w: ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]),
            b: arr1(&[0.0, 0.0]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(parse_model(Cursor::new(truncated), origin()).is_err());
    }

    #[test]
    fn model_rejects_bad_header_and_trailing_content() {
        assert!(parse_model(Cursor::new("#other v9\nd=1 p=1\n1\n1\n"), origin()).is_err());
        let with_trailing = format!("{MODEL_HEADER}\nd=1 p=1\n1\n1\nextra\n");
        assert!(parse_model(Cursor::new(with_trailing), origin()).is_err());
    }

    #[test]
    fn feature_writers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vf_path = dir.path().join("v.tsv");
        let mut by_id = BTreeMap::new();
        by_id.insert(id("a"), arr1(&[0.25, -3.0]));
        by_id.insert(id("b#1"), arr1(&[1e-7, 2.0]));
        write_video_features(&vf_path, 2, by_id.iter()).unwrap();
        let loaded = load_video_features(&vf_path).unwrap();
        assert_eq!(loaded.by_id, by_id);

        let ff_path = dir.path().join("f.tsv");
        let mut frames = BTreeMap::new();
        frames.insert(id("a"), vec![arr1(&[1.0]), arr1(&[0.5])]);
        write_frame_features(&ff_path, 1, frames.iter()).unwrap();
        let loaded = load_frame_features(&ff_path).unwrap();
        assert_eq!(loaded.by_id, frames);
    }

    proptest! {
        /// Serialization is lossless for random models up to p=d=64.
        #[test]
        fn model_round_trip_is_lossless(
            p in 1usize..=64,
            d in 1usize..=64,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let w = Array2::from_shape_fn((p, d), |_| rng.gen_range(-10.0..10.0));
            let b = Array1::from_shape_fn(p, |_| rng.gen_range(-10.0..10.0));
            let model = ProjectionModel { w, b };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.model");
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            prop_assert_eq!(loaded.w, model.w);
            prop_assert_eq!(loaded.b, model.b);
        }

        /// Any record line with its tab replaced by a space is rejected,
        /// and the error names that exact line.
        #[test]
        fn corrupted_lines_are_rejected_with_line_numbers(
            n_rows in 1usize..8,
            corrupt in 0usize..8,
            extra_field in proptest::bool::ANY,
        ) {
            let corrupt = corrupt % n_rows;
            let mut lines = vec!["#dim 2".to_string()];
            for i in 0..n_rows {
                if i == corrupt {
                    if extra_field {
                        lines.push(format!("v{i}\t0.5 {i} 9.9"));
                    } else {
                        lines.push(format!("v{i} 0.5 {i}"));
                    }
                } else {
                    lines.push(format!("v{i}\t0.5 {i}"));
                }
            }
            let text = lines.join("\n");
            let err = parse_video_features(Cursor::new(text), origin()).unwrap_err();
            match err {
                Error::Parse { line, .. } => prop_assert_eq!(line, corrupt + 2),
                other => prop_assert!(false, "expected parse error, got {}", other),
            }
        }

        /// mean_pool is permutation-invariant and commutes with scaling.
        #[test]
        fn mean_pool_permutation_and_linearity(
            frames in proptest::collection::vec(
                proptest::collection::vec(-100.0f64..100.0, 3),
                1..10,
            ),
            alpha in -5.0f64..5.0,
        ) {
            let frames: Vec<FeatureVector> =
                frames.into_iter().map(Array1::from_vec).collect();
            let base = mean_pool(&frames).unwrap();

            let mut reversed = frames.clone();
            reversed.reverse();
            let permuted = mean_pool(&reversed).unwrap();
            for (a, b) in base.iter().zip(permuted.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }

            let scaled: Vec<FeatureVector> = frames.iter().map(|f| f * alpha).collect();
            let scaled_mean = mean_pool(&scaled).unwrap();
            for (a, b) in scaled_mean.iter().zip(base.iter()) {
                prop_assert!((a - alpha * b).abs() <= 1e-9);
            }
        }
    }
}
