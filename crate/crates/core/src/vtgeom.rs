//! Vocal-tract boundary geometry: the neutral emotion deviation measure
//! (NEDM) per sub-region and boundary, and its aggregation into report
//! tables by word, gender and emotion.
//!
//! A boundary frame holds, for each of 86 analysis gridlines, the point
//! where the gridline meets the lower and the upper airway-tissue boundary.
//! Cross-distances are measured from the frame centroid (mean of all 172
//! points) to each landmark of a sub-region. For a neutral production `n`
//! and an emotional production `e` of the same word,
//!
//! ```text
//! NEDM[r][b] = sum over landmarks l of |d_n(l) - d_e(l)| / d_n(l)
//! ```
//!
//! Frame sequences of different lengths are resampled to the shorter length
//! by linear interpolation of the frame index and paired index-wise; the
//! per-frame values are averaged.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GRIDLINES: usize = 86;

/// Landmarks whose neutral distance is below this are left out of the sum.
pub const MIN_NEUTRAL_DISTANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, o: &Self) -> S {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }

    fn lerp(&self, o: &Self, t: S) -> Self {
        Point {
            x: self.x + (o.x - self.x) * t,
            y: self.y + (o.y - self.y) * t,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFrame<S> {
    lower: Vec<Point<S>>,
    upper: Vec<Point<S>>,
}

impl<S: Scalar> BoundaryFrame<S> {
    pub fn new(lower: Vec<Point<S>>, upper: Vec<Point<S>>) -> Result<Self> {
        if lower.len() != GRIDLINES || upper.len() != GRIDLINES {
            return Err(Error::Data(format!(
                "boundary frame needs {GRIDLINES} lower and upper points, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Data("boundary coordinates must be finite".into()));
        }
        Ok(BoundaryFrame { lower, upper })
    }

    pub fn points(&self, boundary: Boundary) -> &[Point<S>] {
        match boundary {
            Boundary::Lower => &self.lower,
            Boundary::Upper => &self.upper,
        }
    }

    /// Applies `f` to every point.
    pub fn map(&self, f: impl Fn(Point<S>) -> Point<S>) -> Self {
        BoundaryFrame {
            lower: self.lower.iter().map(|&p| f(p)).collect(),
            upper: self.upper.iter().map(|&p| f(p)).collect(),
        }
    }

    fn lerp(&self, o: &Self, t: S) -> Self {
        BoundaryFrame {
            lower: self.lower.iter().zip(&o.lower).map(|(a, b)| a.lerp(b, t)).collect(),
            upper: self.upper.iter().zip(&o.upper).map(|(a, b)| a.lerp(b, t)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Lower,
    Upper,
}

impl Boundary {
    pub const ALL: [Boundary; 2] = [Boundary::Lower, Boundary::Upper];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Pharyngeal,
    VelarDorsal,
    HardPalate,
    Labial,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Pharyngeal, Region::VelarDorsal, Region::HardPalate, Region::Labial];

    pub fn title(&self) -> &'static str {
        match self {
            Region::Pharyngeal => "Pharyngeal",
            Region::VelarDorsal => "Velar and dorsal constriction",
            Region::HardPalate => "Hard palate",
            Region::Labial => "Labial constriction",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Region::Pharyngeal => "pharyngeal",
            Region::VelarDorsal => "velar_dorsal",
            Region::HardPalate => "hard_palate",
            Region::Labial => "labial",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Angry,
    Sad,
}

impl Emotion {
    pub const NON_NEUTRAL: [Emotion; 3] = [Emotion::Happy, Emotion::Angry, Emotion::Sad];

    pub fn title(&self) -> &'static str {
        match self {
            Emotion::Neutral => "Neutral",
            Emotion::Happy => "Happy",
            Emotion::Angry => "Angry",
            Emotion::Sad => "Sad",
        }
    }
}

impl std::str::FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "neutral" => Ok(Emotion::Neutral),
            "happy" => Ok(Emotion::Happy),
            "angry" => Ok(Emotion::Angry),
            "sad" => Ok(Emotion::Sad),
            other => Err(Error::Data(format!("unknown emotion '{other}'"))),
        }
    }
}

/// 1-based inclusive gridline ranges of the four sub-regions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubRegionSpec {
    pub ranges: [(usize, usize); 4],
}

impl Default for SubRegionSpec {
    fn default() -> Self {
        SubRegionSpec {
            ranges: [(1, 17), (18, 68), (69, 79), (80, 86)],
        }
    }
}

impl SubRegionSpec {
    /// Checks that the ranges tile `1..=86` in order.
    pub fn validate(&self) -> Result<()> {
        let mut next = 1;
        for &(a, b) in &self.ranges {
            if a != next || b < a {
                return Err(Error::InvalidArgument(format!(
                    "sub-region ranges {:?} do not partition 1..={GRIDLINES}",
                    self.ranges
                )));
            }
            next = b + 1;
        }
        if next != GRIDLINES + 1 {
            return Err(Error::InvalidArgument(format!(
                "sub-region ranges {:?} do not partition 1..={GRIDLINES}",
                self.ranges
            )));
        }
        Ok(())
    }

    pub fn gridlines(&self, region: Region) -> RangeInclusive<usize> {
        let (a, b) = self.ranges[region as usize];
        a..=b
    }

    pub fn landmark_count(&self, region: Region) -> usize {
        self.gridlines(region).count()
    }
}

/// Mean of all lower and upper boundary points of one frame.
pub fn centroid<S: Scalar>(frame: &BoundaryFrame<S>) -> Point<S> {
    let n = S::from_usize(2 * GRIDLINES).unwrap();
    let (sx, sy) = frame
        .lower
        .iter()
        .chain(&frame.upper)
        .fold((S::zero(), S::zero()), |(x, y), p| (x + p.x, y + p.y));
    Point::new(sx / n, sy / n)
}

/// Distance from the frame centroid to each landmark of `region` on one
/// boundary, in gridline order.
pub fn cross_distances<S: Scalar>(frame: &BoundaryFrame<S>, spec: &SubRegionSpec, region: Region, boundary: Boundary) -> Vec<S> {
    let c = centroid(frame);
    let pts = frame.points(boundary);
    spec.gridlines(region).map(|g| pts[g - 1].distance(&c)).collect()
}

/// Resamples a frame sequence to `len` frames by linear interpolation of
/// the frame index. A single output frame is the first input frame.
pub fn resample<S: Scalar>(frames: &[BoundaryFrame<S>], len: usize) -> Vec<BoundaryFrame<S>> {
    let n = frames.len();
    if len == n {
        return frames.to_vec();
    }
    (0..len)
        .map(|i| {
            if len == 1 || n == 1 {
                return frames[0].clone();
            }
            let pos = i as f64 * (n - 1) as f64 / (len - 1) as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let frac = pos - lo as f64;
            if lo + 1 >= n || frac == 0.0 {
                frames[lo].clone()
            } else {
                frames[lo].lerp(&frames[lo + 1], S::from_f64_lossy(frac))
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Production<S> {
    pub id: String,
    pub word: String,
    pub emotion: Emotion,
    pub speaker: String,
    pub gender: String,
    #[serde(skip)]
    pub frames: Vec<BoundaryFrame<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NedmResult<S> {
    /// Indexed `[region][boundary]` in [`Region::ALL`] / [`Boundary::ALL`]
    /// order.
    pub values: [[S; 2]; 4],
    pub paired_frames: usize,
    /// Landmarks skipped because their neutral distance was ~0.
    pub excluded_landmarks: usize,
}

impl<S: Scalar> NedmResult<S> {
    pub fn get(&self, region: Region, boundary: Boundary) -> S {
        self.values[region as usize][boundary as usize]
    }
}

pub fn nedm<S: Scalar>(neutral: &Production<S>, emotion: &Production<S>, spec: &SubRegionSpec) -> Result<NedmResult<S>> {
    spec.validate()?;
    if neutral.word != emotion.word {
        return Err(Error::InvalidArgument(format!(
            "productions describe different words ('{}' vs '{}')",
            neutral.word, emotion.word
        )));
    }
    let m = neutral.frames.len().min(emotion.frames.len());
    if m == 0 {
        return Err(Error::Data(format!(
            "no pairable frames between productions '{}' and '{}'",
            neutral.id, emotion.id
        )));
    }
    let nf = resample(&neutral.frames, m);
    let ef = resample(&emotion.frames, m);
    let eps = S::from_f64_lossy(MIN_NEUTRAL_DISTANCE);
    let mut values = [[S::zero(); 2]; 4];
    let mut excluded = 0;
    for (a, b) in nf.iter().zip(&ef) {
        for region in Region::ALL {
            for boundary in Boundary::ALL {
                let dn = cross_distances(a, spec, region, boundary);
                let de = cross_distances(b, spec, region, boundary);
                let mut sum = S::zero();
                for (&n, &e) in dn.iter().zip(&de) {
                    if n < eps {
                        excluded += 1;
                        continue;
                    }
                    sum += (n - e).abs() / n;
                }
                values[region as usize][boundary as usize] += sum;
            }
        }
    }
    let mf = S::from_usize(m).unwrap();
    for row in &mut values {
        for v in row.iter_mut() {
            *v /= mf;
        }
    }
    Ok(NedmResult {
        values,
        paired_frames: m,
        excluded_landmarks: excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub emotion: Emotion,
    /// Mean NEDM per region, `None` when the group has no productions.
    pub values: Option<[f64; 4]>,
    pub productions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportBlock {
    pub boundary: Boundary,
    pub word: String,
    pub gender: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NedmReport {
    pub blocks: Vec<ReportBlock>,
    /// Emotional productions without a neutral baseline for their word and
    /// speaker.
    pub skipped_productions: Vec<String>,
    pub excluded_landmarks: usize,
}

/// Averages NEDM over productions grouped by (word, gender, emotion).
///
/// Each emotional production is compared with every neutral production of
/// the same word and speaker and those values are averaged first.
pub fn nedm_report<S: Scalar>(productions: &[Production<S>], spec: &SubRegionSpec) -> Result<NedmReport> {
    spec.validate()?;
    let mut neutral: BTreeMap<(&str, &str), Vec<&Production<S>>> = BTreeMap::new();
    for p in productions.iter().filter(|p| p.emotion == Emotion::Neutral) {
        neutral.entry((&p.word, &p.speaker)).or_default().push(p);
    }
    // (word, gender) -> emotion -> per-production [region][boundary] values
    let mut groups: BTreeMap<(String, String), BTreeMap<Emotion, Vec<[[f64; 2]; 4]>>> = BTreeMap::new();
    let mut report = NedmReport::default();
    for p in productions.iter().filter(|p| p.emotion != Emotion::Neutral) {
        let Some(bases) = neutral.get(&(p.word.as_str(), p.speaker.as_str())) else {
            log::warn!(
                "production '{}' ({} / {}) has no neutral baseline; skipped",
                p.id,
                p.word,
                p.speaker
            );
            report.skipped_productions.push(p.id.clone());
            continue;
        };
        let mut acc = [[0.0f64; 2]; 4];
        for base in bases {
            let r = nedm(base, p, spec)?;
            report.excluded_landmarks += r.excluded_landmarks;
            for (a, row) in acc.iter_mut().zip(&r.values) {
                for (x, v) in a.iter_mut().zip(row) {
                    *x += v.to_f64().unwrap() / bases.len() as f64;
                }
            }
        }
        groups
            .entry((p.word.clone(), p.gender.clone()))
            .or_default()
            .entry(p.emotion)
            .or_default()
            .push(acc);
    }
    for boundary in Boundary::ALL {
        for ((word, gender), by_emotion) in &groups {
            let rows = Emotion::NON_NEUTRAL
                .iter()
                .map(|&emotion| {
                    let list = by_emotion.get(&emotion);
                    let values = list.map(|l| {
                        let mut v = [0.0; 4];
                        for (i, slot) in v.iter_mut().enumerate() {
                            *slot = l.iter().map(|x| x[i][boundary as usize]).sum::<f64>() / l.len() as f64;
                        }
                        v
                    });
                    ReportRow {
                        emotion,
                        values,
                        productions: list.map_or(0, Vec::len),
                    }
                })
                .collect();
            report.blocks.push(ReportBlock {
                boundary,
                word: word.clone(),
                gender: gender.clone(),
                rows,
            });
        }
    }
    Ok(report)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl fmt::Display for NedmReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths = [18, 12, 31, 13, 21];
        let mut current = None;
        for block in &self.blocks {
            if current != Some(block.boundary) {
                let title = match block.boundary {
                    Boundary::Lower => "Lower",
                    Boundary::Upper => "Upper",
                };
                writeln!(f, "{title} boundary geometrical comparison of each sub-region")?;
                current = Some(block.boundary);
            }
            writeln!(f, "{} ({})", capitalize(&block.word), capitalize(&block.gender))?;
            write!(f, "{:<w$}", "Regions/Emotions", w = widths[0])?;
            for (r, w) in Region::ALL.iter().zip(&widths[1..]) {
                write!(f, " | {:>w$}", r.title(), w = w)?;
            }
            writeln!(f)?;
            for row in &block.rows {
                write!(f, "{:<w$}", row.emotion.title(), w = widths[0])?;
                for (i, w) in widths[1..].iter().enumerate() {
                    match row.values {
                        Some(v) => write!(f, " | {:>w$.2}", v[i], w = w)?,
                        None => write!(f, " | {:>w$}", "-", w = w)?,
                    }
                }
                writeln!(f)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl NedmReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("boundary,word,gender,emotion,pharyngeal,velar_dorsal,hard_palate,labial,productions\n");
        for b in &self.blocks {
            for r in &b.rows {
                let vals = match r.values {
                    Some(v) => v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(","),
                    None => ",,,".to_string(),
                };
                let boundary = match b.boundary {
                    Boundary::Lower => "lower",
                    Boundary::Upper => "upper",
                };
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    boundary,
                    b.word,
                    b.gender,
                    r.emotion.title().to_lowercase(),
                    vals,
                    r.productions
                ));
            }
        }
        s
    }
}

/// One row of the trace CSV: a single gridline of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub production_id: String,
    pub word: String,
    pub emotion: String,
    pub speaker: String,
    pub gender: String,
    pub frame: usize,
    /// 1-based.
    pub gridline: usize,
    pub xl: f64,
    pub yl: f64,
    pub xu: f64,
    pub yu: f64,
}

/// Groups trace rows into productions. Every frame must list each of the
/// 86 gridlines exactly once; frames are ordered by their index.
pub fn productions_from_rows<S: Scalar>(rows: &[TraceRow]) -> Result<Vec<Production<S>>> {
    type FrameMap = BTreeMap<usize, Vec<Option<(Point<f64>, Point<f64>)>>>;
    let mut order = Vec::new();
    let mut meta: BTreeMap<&str, (&TraceRow, FrameMap)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let line = i + 2;
        if !(1..=GRIDLINES).contains(&r.gridline) {
            return Err(Error::Data(format!("line {line}: gridline {} outside 1..={GRIDLINES}", r.gridline)));
        }
        let entry = meta.entry(&r.production_id).or_insert_with(|| {
            order.push(r.production_id.as_str());
            (r, BTreeMap::new())
        });
        let first = entry.0;
        if first.word != r.word || first.emotion != r.emotion || first.speaker != r.speaker || first.gender != r.gender {
            return Err(Error::Data(format!(
                "line {line}: production '{}' has inconsistent metadata",
                r.production_id
            )));
        }
        let slots = entry.1.entry(r.frame).or_insert_with(|| vec![None; GRIDLINES]);
        if slots[r.gridline - 1].is_some() {
            return Err(Error::Data(format!(
                "line {line}: duplicate gridline {} in frame {} of '{}'",
                r.gridline, r.frame, r.production_id
            )));
        }
        slots[r.gridline - 1] = Some((Point::new(r.xl, r.yl), Point::new(r.xu, r.yu)));
    }
    let conv = |p: Point<f64>| Point::new(S::from_f64_lossy(p.x), S::from_f64_lossy(p.y));
    order
        .into_iter()
        .map(|id| {
            let (first, frames) = &meta[id];
            let frames = frames
                .iter()
                .map(|(fi, slots)| {
                    let mut lower = Vec::with_capacity(GRIDLINES);
                    let mut upper = Vec::with_capacity(GRIDLINES);
                    for (g, s) in slots.iter().enumerate() {
                        let (l, u) = s.ok_or_else(|| {
                            Error::Data(format!("frame {fi} of '{id}' is missing gridline {}", g + 1))
                        })?;
                        lower.push(conv(l));
                        upper.push(conv(u));
                    }
                    BoundaryFrame::new(lower, upper)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Production {
                id: id.to_string(),
                word: first.word.clone(),
                emotion: first.emotion.parse()?,
                speaker: first.speaker.clone(),
                gender: first.gender.clone(),
                frames,
            })
        })
        .collect()
}

pub fn read_trace_csv<S: Scalar>(path: &Path) -> Result<Vec<Production<S>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
    productions_from_rows(&rows)
}

/// Flattens productions back to trace rows (frames numbered from 0).
pub fn rows_from_productions<S: Scalar>(productions: &[Production<S>]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for p in productions {
        for (fi, frame) in p.frames.iter().enumerate() {
            for g in 0..GRIDLINES {
                let (l, u) = (frame.lower[g], frame.upper[g]);
                rows.push(TraceRow {
                    production_id: p.id.clone(),
                    word: p.word.clone(),
                    emotion: p.emotion.title().to_lowercase(),
                    speaker: p.speaker.clone(),
                    gender: p.gender.clone(),
                    frame: fi,
                    gridline: g + 1,
                    xl: l.x.to_f64().unwrap(),
                    yl: l.y.to_f64().unwrap(),
                    xu: u.x.to_f64().unwrap(),
                    yu: u.y.to_f64().unwrap(),
                });
            }
        }
    }
    rows
}

pub fn trace_csv_string<S: Scalar>(productions: &[Production<S>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows_from_productions(productions) {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
