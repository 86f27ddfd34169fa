//! Row representation: mode-specific normalization of continuous columns,
//! one-hot categorical segments, rule-flag segments, conditional vectors
//! and training-by-sampling.

use kgsynth_tensor::Tensor;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{decode_mask, KnowledgeBase};
use crate::rng::{self, Rng};
use crate::schema::{Cell, DataTable, Row};

pub use crate::gmm::{fit_continuous_gmm, ContinuousEncoding, GmmOptions, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Alpha,
    Beta,
    DiscreteOnehot,
    MaskOnehot,
    RuleFlagOnehot,
}

impl SegmentKind {
    /// Segments a conditional vector may select.
    pub fn is_selectable(self) -> bool {
        matches!(self, Self::DiscreteOnehot | Self::MaskOnehot | Self::RuleFlagOnehot)
    }

    pub fn is_categorical(self) -> bool {
        self != Self::Alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    /// Column index in the masked schema.
    Column(usize),
    /// Rule index in the rule set.
    Rule(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: SegmentSource,
    pub kind: SegmentKind,
    pub offset: usize,
    pub width: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

/// Segment order: every (α, β) pair of continuous columns, then discrete
/// one-hots, then mask one-hots, then rule flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowEncodingLayout {
    segments: Vec<Segment>,
    total_width: usize,
    /// Selectable segment indices in layout order.
    cond_segments: Vec<usize>,
    /// Start of each segment's block in the cond vector (selectable only).
    cond_offsets: Vec<Option<usize>>,
    cond_width: usize,
}

impl RowEncodingLayout {
    fn from_segments(mut segments: Vec<Segment>) -> Self {
        let mut offset = 0;
        let mut cond_offsets = Vec::with_capacity(segments.len());
        let mut cond_segments = Vec::new();
        let mut cond_width = 0;
        for (i, s) in segments.iter_mut().enumerate() {
            s.offset = offset;
            offset += s.width;
            if s.kind.is_selectable() {
                cond_segments.push(i);
                cond_offsets.push(Some(cond_width));
                cond_width += s.width;
            } else {
                cond_offsets.push(None);
            }
        }
        Self {
            segments,
            total_width: offset,
            cond_segments,
            cond_offsets,
            cond_width,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_width(&self) -> usize {
        self.total_width
    }

    pub fn cond_width(&self) -> usize {
        self.cond_width
    }

    pub fn cond_segments(&self) -> &[usize] {
        &self.cond_segments
    }

    /// Position of `(segment, category)` in the dense cond vector.
    pub fn cond_index(&self, segment: usize, category: usize) -> Option<usize> {
        let base = self.cond_offsets.get(segment).copied().flatten()?;
        (category < self.segments[segment].width).then_some(base + category)
    }

    /// Categorical (discrete or mask) segment of a masked-schema column.
    pub fn segment_of_column(&self, col: usize) -> Option<usize> {
        self.segments.iter().position(|s| {
            s.source == SegmentSource::Column(col)
                && matches!(s.kind, SegmentKind::DiscreteOnehot | SegmentKind::MaskOnehot)
        })
    }

    pub fn segment_of_rule(&self, k: usize) -> Option<usize> {
        self.segments.iter().position(|s| s.source == SegmentSource::Rule(k))
    }

    /// Category of each selectable segment present in an encoded row.
    pub fn hard_categories(&self, encoded: &[f64]) -> Vec<usize> {
        self.cond_segments
            .iter()
            .map(|&s| argmax(&encoded[self.segments[s].range()]))
            .collect()
    }
}

/// One selected `(segment, category)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CondVector {
    pub segment: usize,
    pub category: usize,
}

impl CondVector {
    /// Dense one-hot over all selectable `(segment, category)` pairs.
    pub fn to_dense(&self, layout: &RowEncodingLayout) -> Result<Vec<f64>> {
        let idx = layout.cond_index(self.segment, self.category).ok_or_else(|| {
            Error::MalformedCondition(format!("({}, {}) is not selectable", self.segment, self.category))
        })?;
        let mut v = vec![0.0; layout.cond_width()];
        v[idx] = 1.0;
        Ok(v)
    }

    /// Inverse of [`CondVector::to_dense`]; exactly one coordinate must be 1.
    pub fn from_dense(dense: &[f64], layout: &RowEncodingLayout) -> Result<Self> {
        if dense.len() != layout.cond_width() {
            return Err(Error::MalformedCondition(format!(
                "width {} != {}",
                dense.len(),
                layout.cond_width()
            )));
        }
        let ones: Vec<usize> = (0..dense.len()).filter(|&i| dense[i] == 1.0).collect();
        if ones.len() != 1 || dense.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::MalformedCondition(format!("{} selections", ones.len())));
        }
        let idx = ones[0];
        for &s in &layout.cond_segments {
            let base = layout.cond_offsets[s].expect("selectable");
            if idx < base + layout.segments[s].width {
                return Ok(Self {
                    segment: s,
                    category: idx - base,
                });
            }
        }
        unreachable!("index inside cond width")
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fitted encoder: the layout plus one GMM per continuous column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    layout: RowEncodingLayout,
    /// Indexed by masked-schema column; `None` for discrete columns.
    continuous: Vec<Option<ContinuousEncoding>>,
}

impl Encoder {
    /// Fits GMMs on the continuous columns of a masked table and lays out
    /// segments for its columns and the knowledge base's rules.
    pub fn fit(masked: &DataTable, kb: &KnowledgeBase, gmm: &GmmOptions, seed: u64) -> Result<Self> {
        let schema = masked.schema();
        if schema.names() != kb.masked_schema().names() {
            return Err(Error::InvalidArgument("table does not match the masked schema".into()));
        }
        if masked.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut continuous = vec![None; schema.len()];
        let mut cont_segments = Vec::new();
        let mut discrete = Vec::new();
        let mut masks = Vec::new();
        for (c, col) in schema.columns.iter().enumerate() {
            if col.is_discrete() {
                let seg = Segment {
                    source: SegmentSource::Column(c),
                    kind: SegmentKind::DiscreteOnehot,
                    offset: 0,
                    width: col.categories().len(),
                };
                if kb.map_for_masked_column(c).is_some() {
                    masks.push(Segment {
                        kind: SegmentKind::MaskOnehot,
                        ..seg
                    });
                } else {
                    discrete.push(seg);
                }
            } else {
                let values: Vec<f64> = masked.rows().iter().map(|r| r[c].num().expect("continuous")).collect();
                let enc = fit_continuous_gmm(&col.name, &values, gmm, rng::substream(seed, &col.name))?;
                cont_segments.push(Segment {
                    source: SegmentSource::Column(c),
                    kind: SegmentKind::Alpha,
                    offset: 0,
                    width: 1,
                });
                cont_segments.push(Segment {
                    source: SegmentSource::Column(c),
                    kind: SegmentKind::Beta,
                    offset: 0,
                    width: enc.modes.len(),
                });
                continuous[c] = Some(enc);
            }
        }
        let rules = (0..kb.rule_count()).map(|k| Segment {
            source: SegmentSource::Rule(k),
            kind: SegmentKind::RuleFlagOnehot,
            offset: 0,
            width: 2,
        });
        let segments = cont_segments.into_iter().chain(discrete).chain(masks).chain(rules).collect();
        Ok(Self {
            layout: RowEncodingLayout::from_segments(segments),
            continuous,
        })
    }

    pub fn layout(&self) -> &RowEncodingLayout {
        &self.layout
    }

    pub fn continuous(&self, col: usize) -> Option<&ContinuousEncoding> {
        self.continuous.get(col).and_then(Option::as_ref)
    }

    /// Encodes one masked row; modes are drawn from `rng`.
    pub fn encode_row(&self, row: &Row, kb: &KnowledgeBase, rng: &mut Rng) -> Result<Vec<f64>> {
        let flags = kb.evaluate_rules(row);
        let mut out = vec![0.0; self.layout.total_width];
        let segs = &self.layout.segments;
        let mut i = 0;
        while i < segs.len() {
            let s = &segs[i];
            match (s.kind, s.source) {
                (SegmentKind::Alpha, SegmentSource::Column(c)) => {
                    let enc = self.continuous[c].as_ref().expect("continuous column");
                    let v = row[c]
                        .num()
                        .ok_or_else(|| Error::InvalidArgument(format!("column {c} is not continuous")))?;
                    let (alpha, mode) = enc.encode(v, rng);
                    out[s.offset] = alpha;
                    out[segs[i + 1].offset + mode] = 1.0;
                    i += 2;
                    continue;
                }
                (_, SegmentSource::Column(c)) => {
                    let k = row[c]
                        .cat()
                        .filter(|&k| k < s.width)
                        .ok_or_else(|| Error::InvalidArgument(format!("bad category in column {c}")))?;
                    out[s.offset + k] = 1.0;
                }
                (_, SegmentSource::Rule(k)) => {
                    out[s.offset + usize::from(flags[k])] = 1.0;
                }
            }
            i += 1;
        }
        Ok(out)
    }

    /// Encodes every row; row `i` uses a stream derived from `(seed, i)`.
    pub fn encode_table(&self, masked: &DataTable, kb: &KnowledgeBase, seed: u64) -> Result<Tensor> {
        let mut data = Vec::with_capacity(masked.row_count() * self.layout.total_width);
        for (i, row) in masked.rows().iter().enumerate() {
            let mut r = rng::rng(rng::indexed(seed, i as u64));
            data.extend(self.encode_row(row, kb, &mut r)?);
        }
        Ok(Tensor::new(masked.row_count(), self.layout.total_width, data)?)
    }

    /// Masked row from an encoded (possibly soft) vector: argmax per
    /// segment, `c = α·4φ + η`. Rule flags are dropped.
    pub fn decode_masked_row(&self, encoded: &[f64]) -> Row {
        let ncols = self.continuous.len();
        let mut row = vec![Cell::Cat(0); ncols];
        let segs = &self.layout.segments;
        let mut i = 0;
        while i < segs.len() {
            let s = &segs[i];
            match (s.kind, s.source) {
                (SegmentKind::Alpha, SegmentSource::Column(c)) => {
                    let enc = self.continuous[c].as_ref().expect("continuous column");
                    let alpha = encoded[s.offset].clamp(-1.0, 1.0);
                    let mode = argmax(&encoded[segs[i + 1].range()]);
                    row[c] = Cell::Num(enc.decode(alpha, mode));
                    i += 2;
                    continue;
                }
                (_, SegmentSource::Column(c)) => row[c] = Cell::Cat(argmax(&encoded[s.range()]) as u32),
                (_, SegmentSource::Rule(_)) => {}
            }
            i += 1;
        }
        row
    }

    /// Masked table from encoded rows.
    pub fn decode_masked(&self, encoded: &Tensor, kb: &KnowledgeBase) -> Result<DataTable> {
        let rows = (0..encoded.rows()).map(|r| self.decode_masked_row(encoded.row(r))).collect();
        DataTable::new(kb.masked_schema().clone(), rows)
    }

    /// Raw-vocabulary table: mask columns are materialized with
    /// [`decode_mask`] under the source column's name. Decoded values missing
    /// from a source column's category list are appended to it.
    pub fn decode_table(&self, encoded: &Tensor, kb: &KnowledgeBase, seed: u64) -> Result<DataTable> {
        let masked = self.decode_masked(encoded, kb)?;
        materialize_masks(&masked, kb, seed)
    }
}

/// Replaces every mask column of a masked table with concrete source values.
pub fn materialize_masks(masked: &DataTable, kb: &KnowledgeBase, seed: u64) -> Result<DataTable> {
    let schema = masked.schema();
    let mut out = DataTable::empty(kb.raw_schema().clone());
    let maps: Vec<_> = (0..schema.len()).map(|c| kb.map_for_masked_column(c)).collect();
    let mut labels = Vec::with_capacity(schema.len());
    for (i, row) in masked.rows().iter().enumerate() {
        labels.clear();
        for (c, &cell) in row.iter().enumerate() {
            let label = masked.label(c, cell);
            labels.push(match maps[c] {
                Some(map) => decode_mask(&label, map, rng::indexed(rng::indexed(seed, i as u64), c as u64))?,
                None => label,
            });
        }
        out.push_labels(&labels, true)?;
    }
    Ok(out)
}

/// Categories of every selectable segment for each row of a masked table,
/// indexed `[cond position][row]`.
pub fn selectable_categories(masked: &DataTable, kb: &KnowledgeBase, layout: &RowEncodingLayout) -> Vec<Vec<u32>> {
    let flags: Vec<Vec<bool>> = masked.rows().iter().map(|r| kb.evaluate_rules(r)).collect();
    layout
        .cond_segments()
        .iter()
        .map(|&s| match layout.segments()[s].source {
            SegmentSource::Column(c) => masked.rows().iter().map(|r| r[c].cat().expect("discrete") as u32).collect(),
            SegmentSource::Rule(k) => flags.iter().map(|f| u32::from(f[k])).collect(),
        })
        .collect()
}

/// Training-by-sampling over a set of rows: a selectable segment uniformly,
/// a category with probability ∝ ln(1 + count), then a matching row.
#[derive(Debug, Clone)]
pub struct CondSampler {
    /// Per cond position: layout segment, category weights, matching rows.
    entries: Vec<CondEntry>,
}

#[derive(Debug, Clone)]
struct CondEntry {
    segment: usize,
    dist: WeightedIndex<f64>,
    probabilities: Vec<f64>,
    rows: Vec<Vec<usize>>,
}

impl CondSampler {
    /// `categories` as from [`selectable_categories`]; only the rows in
    /// `subset` (indices into the table) are eligible.
    pub fn new(layout: &RowEncodingLayout, categories: &[Vec<u32>], subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut entries = Vec::with_capacity(layout.cond_segments().len());
        for (pos, &s) in layout.cond_segments().iter().enumerate() {
            let width = layout.segments()[s].width;
            let mut rows = vec![Vec::new(); width];
            for &r in subset {
                rows[categories[pos][r] as usize].push(r);
            }
            let weights: Vec<f64> = rows.iter().map(|m| (m.len() as f64).ln_1p()).collect();
            let total: f64 = weights.iter().sum();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            entries.push(CondEntry {
                segment: s,
                dist,
                probabilities: weights.iter().map(|w| w / total).collect(),
                rows,
            });
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Category law of the selectable segment at cond position `pos`.
    pub fn probabilities(&self, pos: usize) -> &[f64] {
        &self.entries[pos].probabilities
    }

    /// The category law without row lists, for sampling after training.
    pub fn law(&self) -> CondLaw {
        CondLaw {
            segments: self.entries.iter().map(|e| e.segment).collect(),
            probabilities: self.entries.iter().map(|e| e.probabilities.clone()).collect(),
        }
    }

    /// Draws a condition and a row satisfying it. `None` when the layout has
    /// no selectable segment.
    pub fn sample(&self, rng: &mut Rng) -> Option<(CondVector, usize)> {
        if self.entries.is_empty() {
            return None;
        }
        let e = &self.entries[rng.random_range(0..self.entries.len())];
        let category = e.dist.sample(rng);
        let matching = &e.rows[category];
        assert!(!matching.is_empty(), "sampled a category with no rows");
        let row = matching[rng.random_range(0..matching.len())];
        Some((
            CondVector {
                segment: e.segment,
                category,
            },
            row,
        ))
    }
}

/// Seeded single draw over every row of a masked table.
pub fn sample_condition(
    masked: &DataTable,
    kb: &KnowledgeBase,
    layout: &RowEncodingLayout,
    seed: u64,
) -> Result<Option<(CondVector, usize)>> {
    let cats = selectable_categories(masked, kb, layout);
    let all: Vec<usize> = (0..masked.row_count()).collect();
    let sampler = CondSampler::new(layout, &cats, &all)?;
    Ok(sampler.sample(&mut rng::rng(seed)))
}

/// Training-time condition law: uniform over selectable segments, then the
/// stored per-segment category probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondLaw {
    pub segments: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl CondLaw {
    pub fn sample(&self, rng: &mut Rng) -> Option<CondVector> {
        if self.segments.is_empty() {
            return None;
        }
        let pos = rng.random_range(0..self.segments.len());
        let probs = &self.probabilities[pos];
        let mut u: f64 = rng.random();
        let mut category = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        for (c, &p) in probs.iter().enumerate() {
            if p > 0.0 && u < p {
                category = c;
                break;
            }
            u -= p;
        }
        Some(CondVector {
            segment: self.segments[pos],
            category,
        })
    }
}
