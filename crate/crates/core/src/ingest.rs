//! Gaze stream data model and the JSONL wire format.
//!
//! A stream file is one header object followed by one object per frame:
//!
//! ```text
//! {"fps":28.8948,"subject":"s01","label":"genuine","screen":{...}}
//! {"t":0,"pog":[960.0,540.0],"lm":[[x,y],...6],"ctx":0}
//! {"t":35,"ray":{"o":[x,y,z],"d":[x,y,z]},"lm":[...],"ctx":1}
//! ```
//!
//! Streams are homogeneous: every frame carries either `pog` or `ray`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ray, ScreenModel};

pub const N_LANDMARKS: usize = 6;
pub const DEFAULT_FPS: f64 = 28.8948;

pub type Point2 = [f64; 2];
pub type Landmarks = [Point2; N_LANDMARKS];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("missing or malformed header: {0}")]
    MissingHeader(String),
    #[error("line {line}: stream mixes pog and ray records")]
    MixedStream { line: usize },
    #[error("malformed record budget exceeded: {rejected} of {seen} records rejected (last: {last})")]
    BudgetExceeded { rejected: usize, seen: usize, last: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("context segments overlap or are unsorted at index {index}")]
    OverlappingSegments { index: usize },
    #[error("context segment {index} is empty or reversed")]
    InvalidSegment { index: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Who is speaking, from the tracked (possibly fake) party's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SpeakingContext {
    #[default]
    Neither = 0,
    TrackedSpeaking = 1,
    PartnerSpeaking = 2,
    Both = 3,
}

impl SpeakingContext {
    pub const ALL: [SpeakingContext; 4] =
        [SpeakingContext::Neither, SpeakingContext::TrackedSpeaking, SpeakingContext::PartnerSpeaking, SpeakingContext::Both];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeakingContext::Neither => "neither",
            SpeakingContext::TrackedSpeaking => "tracked",
            SpeakingContext::PartnerSpeaking => "partner",
            SpeakingContext::Both => "both",
        }
    }
}

impl From<SpeakingContext> for u8 {
    fn from(c: SpeakingContext) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for SpeakingContext {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Self::from_code(v).ok_or_else(|| format!("context code {v} out of range"))
    }
}

impl fmt::Display for SpeakingContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gaze {
    Pog(Point2),
    Ray(Ray),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeKind {
    Pog,
    Ray,
}

impl Gaze {
    pub fn kind(&self) -> GazeKind {
        match self {
            Gaze::Pog(_) => GazeKind::Pog,
            Gaze::Ray(_) => GazeKind::Ray,
        }
    }
}

/// One video frame's gaze observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub t_ms: u64,
    pub gaze: Gaze,
    pub landmarks: Landmarks,
    pub ctx: SpeakingContext,
}

impl FrameRecord {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |p: &[f64]| p.iter().all(|v| v.is_finite());
        match &self.gaze {
            Gaze::Pog(p) if !finite(p) => return Err("non-finite pog".into()),
            Gaze::Ray(r) if !finite(&r.origin) || !finite(&r.direction) => return Err("non-finite ray".into()),
            _ => {}
        }
        if !self.landmarks.iter().all(|p| finite(p)) {
            return Err("non-finite landmark".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Genuine,
    Fake,
}

impl ClassLabel {
    /// Binary target: genuine = 0, fake = 1.
    pub fn target(self) -> u8 {
        match self {
            ClassLabel::Genuine => 0,
            ClassLabel::Fake => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    #[serde(rename = "fps")]
    pub fps_nominal: f64,
    #[serde(rename = "subject")]
    pub subject_id: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<ScreenModel>,
    #[serde(rename = "config", default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl StreamHeader {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            fps_nominal: DEFAULT_FPS,
            subject_id: subject_id.into(),
            class_label: None,
            generator: None,
            screen: None,
            config_hash: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(20.0..=60.0).contains(&self.fps_nominal) {
            return Err(IngestError::InvalidHeader(format!("fps {} outside [20, 60]", self.fps_nominal)));
        }
        if let Some(screen) = &self.screen {
            screen.validate().map_err(|e| IngestError::InvalidHeader(e.to_string()))?;
        }
        Ok(())
    }

    /// Generator tag, falling back to the class label name.
    pub fn class_name(&self) -> &str {
        match (&self.generator, self.class_label) {
            (Some(g), _) => g,
            (None, Some(ClassLabel::Genuine)) => "genuine",
            (None, Some(ClassLabel::Fake)) => "fake",
            (None, None) => "unlabeled",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameWire {
    t: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pog: Option<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ray: Option<Ray>,
    lm: Vec<Point2>,
    ctx: u8,
}

impl From<&FrameRecord> for FrameWire {
    fn from(f: &FrameRecord) -> Self {
        let (pog, ray) = match f.gaze {
            Gaze::Pog(p) => (Some(p), None),
            Gaze::Ray(r) => (None, Some(r)),
        };
        FrameWire { t: f.t_ms, pog, ray, lm: f.landmarks.to_vec(), ctx: f.ctx.code() }
    }
}

impl TryFrom<FrameWire> for FrameRecord {
    type Error = String;
    fn try_from(w: FrameWire) -> Result<Self, String> {
        let gaze = match (w.pog, w.ray) {
            (Some(p), None) => Gaze::Pog(p),
            (None, Some(r)) => Gaze::Ray(r),
            (Some(_), Some(_)) => return Err("record has both pog and ray".into()),
            (None, None) => return Err("record has neither pog nor ray".into()),
        };
        let landmarks: Landmarks =
            w.lm.as_slice().try_into().map_err(|_| format!("expected {N_LANDMARKS} landmarks, got {}", w.lm.len()))?;
        let ctx = SpeakingContext::try_from(w.ctx)?;
        let rec = FrameRecord { t_ms: w.t, gaze, landmarks, ctx };
        rec.validate()?;
        Ok(rec)
    }
}

/// Parses one frame line without stream-level checks.
pub fn parse_frame(line: &str) -> Result<FrameRecord, String> {
    let wire: FrameWire = serde_json::from_str(line).map_err(|e| e.to_string())?;
    FrameRecord::try_from(wire)
}

/// Serializes one frame as a single JSON line (no trailing newline).
pub fn frame_to_json(frame: &FrameRecord) -> String {
    serde_json::to_string(&FrameWire::from(frame)).expect("frame serialization is infallible")
}

/// Malformed-record tolerance: abort once rejections exceed
/// `max(min_allowance, fraction * records_seen)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    pub fraction: f64,
    pub min_allowance: usize,
}

impl Default for ErrorBudget {
    fn default() -> Self {
        Self { fraction: 0.01, min_allowance: 10 }
    }
}

impl ErrorBudget {
    pub fn allowance(&self, seen: usize) -> usize {
        self.min_allowance.max((self.fraction * seen as f64).floor() as usize)
    }
}

/// Streaming reader: yields frames as lines are read, holding only the
/// current line in memory. Rejected records are counted and skipped; a fatal
/// error is yielded once and ends iteration.
pub struct StreamReader<R> {
    lines: io::Lines<R>,
    header: StreamHeader,
    budget: ErrorBudget,
    kind: Option<GazeKind>,
    last_t: Option<u64>,
    line_no: usize,
    seen: usize,
    rejected: usize,
    last_rejection: Option<String>,
    done: bool,
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, budget: ErrorBudget) -> Result<Self, IngestError> {
        Self::new(BufReader::new(File::open(path)?), budget)
    }
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R, budget: ErrorBudget) -> Result<Self, IngestError> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let header_line = loop {
            line_no += 1;
            match lines.next() {
                None => return Err(IngestError::MissingHeader("empty stream".into())),
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
            }
        };
        let header: StreamHeader = serde_json::from_str(&header_line).map_err(|e| IngestError::MissingHeader(e.to_string()))?;
        header.validate()?;
        Ok(Self { lines, header, budget, kind: None, last_t: None, line_no, seen: 0, rejected: 0, last_rejection: None, done: false })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Records read so far, accepted or not.
    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn kind(&self) -> Option<GazeKind> {
        self.kind
    }

    fn reject(&mut self, reason: String) -> Option<IngestError> {
        self.rejected += 1;
        let msg = format!("line {}: {reason}", self.line_no);
        self.last_rejection = Some(msg.clone());
        if self.rejected > self.budget.allowance(self.seen) {
            return Some(IngestError::BudgetExceeded { rejected: self.rejected, seen: self.seen, last: msg });
        }
        None
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.seen += 1;
            let frame = match parse_frame(&line) {
                Ok(f) => f,
                Err(reason) => {
                    if let Some(err) = self.reject(reason) {
                        self.done = true;
                        return Some(Err(err));
                    }
                    continue;
                }
            };
            if self.last_t.is_some_and(|t| frame.t_ms < t) {
                if let Some(err) = self.reject(format!("timestamp {} goes backwards", frame.t_ms)) {
                    self.done = true;
                    return Some(Err(err));
                }
                continue;
            }
            match self.kind {
                None => self.kind = Some(frame.gaze.kind()),
                Some(k) if k != frame.gaze.kind() => {
                    self.done = true;
                    return Some(Err(IngestError::MixedStream { line: self.line_no }));
                }
                _ => {}
            }
            self.last_t = Some(frame.t_ms);
            return Some(Ok(frame));
        }
    }
}

/// A fully loaded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeStream {
    pub header: StreamHeader,
    pub frames: Vec<FrameRecord>,
    pub rejected: usize,
}

/// Reads a whole stream file into memory (batch mode).
pub fn read_stream(path: impl AsRef<Path>, budget: ErrorBudget) -> Result<GazeStream, IngestError> {
    read_stream_from(BufReader::new(File::open(path)?), budget)
}

pub fn read_stream_from<R: BufRead>(reader: R, budget: ErrorBudget) -> Result<GazeStream, IngestError> {
    let mut rd = StreamReader::new(reader, budget)?;
    let frames = rd.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(GazeStream { header: rd.header().clone(), frames, rejected: rd.rejected() })
}

/// Writes header and frames as JSONL.
pub fn write_stream(header: &StreamHeader, frames: &[FrameRecord], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stream_to(header, frames, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_stream_to<W: Write>(header: &StreamHeader, frames: &[FrameRecord], w: &mut W) -> Result<(), IngestError> {
    header.validate()?;
    let kind = frames.first().map(|f| f.gaze.kind());
    for (i, f) in frames.iter().enumerate() {
        f.validate().map_err(|e| IngestError::InvalidRecord(format!("frame {i}: {e}")))?;
        if Some(f.gaze.kind()) != kind {
            return Err(IngestError::MixedStream { line: i + 2 });
        }
    }
    serde_json::to_writer(&mut *w, header).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    for f in frames {
        serde_json::to_writer(&mut *w, &FrameWire::from(f)).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Column order of [`write_csv`].
pub fn csv_columns() -> Vec<String> {
    let mut cols: Vec<String> =
        ["t_ms", "pog_x", "pog_y", "ray_ox", "ray_oy", "ray_oz", "ray_dx", "ray_dy", "ray_dz"].iter().map(|s| s.to_string()).collect();
    for j in 0..N_LANDMARKS {
        cols.push(format!("lm{j}_x"));
        cols.push(format!("lm{j}_y"));
    }
    cols.push("ctx".into());
    cols
}

/// Flat CSV export, one row per frame. Absent gaze fields are left empty.
pub fn write_csv<W: Write>(frames: &[FrameRecord], w: W) -> Result<(), IngestError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_columns())?;
    for f in frames {
        let mut row = vec![f.t_ms.to_string()];
        let empty = || String::new();
        match f.gaze {
            Gaze::Pog(p) => {
                row.extend(p.iter().map(|v| v.to_string()));
                row.extend(std::iter::repeat_with(empty).take(6));
            }
            Gaze::Ray(r) => {
                row.extend(std::iter::repeat_with(empty).take(2));
                row.extend(r.origin.iter().chain(&r.direction).map(|v| v.to_string()));
            }
        }
        row.extend(f.landmarks.iter().flatten().map(|v| v.to_string()));
        row.push(f.ctx.code().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Externally annotated speaking interval, `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub ctx: SpeakingContext,
}

/// Assigns each frame the context of the segment covering its timestamp;
/// frames outside every segment become `Neither`.
pub fn resample_context(frames: &mut [FrameRecord], segments: &[ContextSegment]) -> Result<(), IngestError> {
    for (i, s) in segments.iter().enumerate() {
        if s.end_ms <= s.start_ms {
            return Err(IngestError::InvalidSegment { index: i });
        }
        if i > 0 && s.start_ms < segments[i - 1].end_ms {
            return Err(IngestError::OverlappingSegments { index: i });
        }
    }
    for f in frames.iter_mut() {
        let idx = segments.partition_point(|s| s.end_ms <= f.t_ms);
        f.ctx = match segments.get(idx) {
            Some(s) if s.start_ms <= f.t_ms => s.ctx,
            _ => SpeakingContext::Neither,
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn frame(t: u64, x: f64) -> FrameRecord {
        FrameRecord {
            t_ms: t,
            gaze: Gaze::Pog([x, 540.0]),
            landmarks: [[900.0, 400.0], [1020.0, 400.0], [960.0, 480.0], [960.0, 560.0], [860.0, 480.0], [960.0, 640.0]],
            ctx: SpeakingContext::PartnerSpeaking,
        }
    }

    fn header() -> StreamHeader {
        let mut h = StreamHeader::new("s01");
        h.class_label = Some(ClassLabel::Genuine);
        h
    }

    fn to_text(h: &StreamHeader, frames: &[FrameRecord]) -> String {
        let mut buf = Vec::new();
        write_stream_to(h, frames, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_and_three_records() {
        let frames = [frame(0, 1.0), frame(35, 2.0), frame(69, 3.0)];
        let text = to_text(&header(), &frames);
        let s = read_stream_from(Cursor::new(text), ErrorBudget::default()).unwrap();
        assert_eq!(s.header, header());
        assert_eq!(s.frames, frames);
        assert_eq!(s.rejected, 0);
    }

    #[test]
    fn wire_layout_is_stable() {
        let text = to_text(&header(), &[frame(1234, 960.5)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"fps":28.8948,"subject":"s01","label":"genuine"}"#);
        assert!(lines[1].starts_with(r#"{"t":1234,"pog":[960.5,540.0],"lm":[[900.0,400.0],"#));
        assert!(lines[1].ends_with(r#""ctx":2}"#));
    }

    #[test]
    fn empty_stream_is_header_only() {
        let text = to_text(&header(), &[]);
        assert_eq!(text.lines().count(), 1);
        let s = read_stream_from(Cursor::new(text), ErrorBudget::default()).unwrap();
        assert!(s.frames.is_empty());
    }

    #[test]
    fn five_landmarks_rejected_and_stream_continues() {
        let mut text = to_text(&header(), &[frame(0, 1.0), frame(40, 2.0)]);
        let bad = r#"{"t":20,"pog":[1.0,2.0],"lm":[[0,0],[0,0],[0,0],[0,0],[0,0]],"ctx":0}"#;
        let mut lines: Vec<&str> = text.lines().collect();
        lines.insert(2, bad);
        text = lines.join("\n");
        let s = read_stream_from(Cursor::new(text), ErrorBudget::default()).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert_eq!(s.rejected, 1);
    }

    #[test]
    fn budget_exhaustion_aborts() {
        let mut text = to_text(&header(), &[frame(0, 1.0)]);
        for _ in 0..3 {
            text.push_str("{not json}\n");
        }
        let budget = ErrorBudget { fraction: 0.01, min_allowance: 2 };
        let err = read_stream_from(Cursor::new(text), budget).unwrap_err();
        assert!(matches!(err, IngestError::BudgetExceeded { rejected: 3, .. }), "{err}");
    }

    #[test]
    fn missing_header_aborts() {
        let line = frame_to_json(&frame(0, 1.0));
        assert!(matches!(read_stream_from(Cursor::new(line), ErrorBudget::default()), Err(IngestError::MissingHeader(_))));
        assert!(matches!(read_stream_from(Cursor::new(""), ErrorBudget::default()), Err(IngestError::MissingHeader(_))));
    }

    #[test]
    fn mixed_stream_aborts() {
        let mut text = to_text(&header(), &[frame(0, 1.0)]);
        let mut f = frame(50, 0.0);
        f.gaze = Gaze::Ray(Ray::new([0.0, 0.0, 600.0], [0.0, 0.0, -1.0]));
        text.push_str(&frame_to_json(&f));
        assert!(matches!(read_stream_from(Cursor::new(text), ErrorBudget::default()), Err(IngestError::MixedStream { line: 3 })));
    }

    #[test]
    fn out_of_range_context_rejected() {
        let line = frame_to_json(&frame(0, 1.0)).replace(r#""ctx":2"#, r#""ctx":4"#);
        assert!(parse_frame(&line).is_err());
    }

    #[test]
    fn backwards_timestamp_rejected() {
        let text = to_text(&header(), &[frame(100, 1.0)]) + &frame_to_json(&frame(50, 1.0));
        let s = read_stream_from(Cursor::new(text), ErrorBudget::default()).unwrap();
        assert_eq!((s.frames.len(), s.rejected), (1, 1));
    }

    #[test]
    fn write_rejects_non_finite() {
        let mut buf = Vec::new();
        let err = write_stream_to(&header(), &[frame(0, f64::NAN)], &mut buf).unwrap_err();
        assert!(matches!(err, IngestError::InvalidRecord(_)));
    }

    #[test]
    fn header_fps_range() {
        let mut h = header();
        h.fps_nominal = 10.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn segment_labels() {
        let mut frames = vec![frame(0, 0.0), frame(500, 0.0), frame(1500, 0.0)];
        let segs = [ContextSegment { start_ms: 0, end_ms: 1000, ctx: SpeakingContext::TrackedSpeaking }];
        resample_context(&mut frames, &segs).unwrap();
        let codes: Vec<u8> = frames.iter().map(|f| f.ctx.code()).collect();
        assert_eq!(codes, [1, 1, 0]);
        resample_context(&mut frames, &[]).unwrap();
        assert!(frames.iter().all(|f| f.ctx == SpeakingContext::Neither));
    }

    #[test]
    fn overlapping_segments_rejected() {
        let segs = [
            ContextSegment { start_ms: 0, end_ms: 1000, ctx: SpeakingContext::Both },
            ContextSegment { start_ms: 999, end_ms: 2000, ctx: SpeakingContext::Both },
        ];
        let mut frames = vec![frame(0, 0.0)];
        assert!(matches!(resample_context(&mut frames, &segs), Err(IngestError::OverlappingSegments { index: 1 })));
    }

    #[test]
    fn csv_export_shape() {
        let mut buf = Vec::new();
        write_csv(&[frame(0, 1.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].split(',').count(), 22);
        assert!(rows[1].starts_with("0,1.5,540,,,,,,,900,400,"));
    }
}
