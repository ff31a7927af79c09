//! Shared domain types: points on the unit square, binary labels, datasets
//! and the bin grid every entropy is measured on.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};

/// A point of the unit square `[0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct Point2 {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    x: f64,
    y: f64,
}

impl TryFrom<RawPoint> for Point2 {
    type Error = Error;
    fn try_from(r: RawPoint) -> Result<Self> {
        Point2::new(r.x, r.y)
    }
}

impl From<Point2> for RawPoint {
    fn from(p: Point2) -> Self {
        RawPoint { x: p.x, y: p.y }
    }
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            Ok(Self { x, y })
        } else {
            Err(Error::OutOfDomain { x, y })
        }
    }

    /// Clamp arbitrary finite coordinates into the square.
    pub fn clamped(x: f64, y: f64) -> Self {
        Self {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }

    pub const CENTER: Point2 = Point2 { x: 0.5, y: 0.5 };

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn dist_sq(&self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            _ => Err(Error::invalid("label", format!("{v} is not in {{0, 1}}"))),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Self {
        if b {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// 1 on mismatch, 0 otherwise.
#[inline]
pub fn zero_one_loss(pred: Label, truth: Label) -> f64 {
    if pred == truth {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub point: Point2,
    pub label: Label,
}

/// Ordered, seeded collection of labeled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    seed: u64,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        Ok(Self { samples, seed })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<Point2> {
        self.samples.iter().map(|s| s.point).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Subset by index, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.samples[i]).collect(), self.seed)
    }

    /// `x,y,label` rows with a header. Formatting is fixed (shortest
    /// round-trip float repr), so equal datasets produce equal bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "label"])?;
        for s in &self.samples {
            w.write_record([
                s.point.x().to_string(),
                s.point.y().to_string(),
                s.label.index().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV with `x`, `y` and `label` columns (any order, extra
    /// columns ignored).
    pub fn read_csv<R: std::io::Read>(input: R, seed: u64) -> Result<Self> {
        let (samples, _) = read_sample_rows(input, &[])?;
        Dataset::new(samples, seed)
    }
}

/// Parse labeled rows plus the named extra numeric columns.
pub(crate) fn read_sample_rows<R: std::io::Read>(
    input: R,
    extra: &[&'static str],
) -> Result<(Vec<LabeledSample>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Csv(format!("missing column `{name}`")))
    };
    let (cx, cy, cl) = (col("x")?, col("y")?, col("label")?);
    let extra_cols = extra.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut extras = vec![Vec::new(); extra.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Csv(format!("row {}: {e}", line + 1)))
        };
        let label = rec
            .get(cl)
            .unwrap_or("")
            .trim()
            .parse::<u8>()
            .map_err(|e| Error::Csv(format!("row {}: {e}", line + 1)))
            .and_then(Label::try_from)?;
        samples.push(LabeledSample {
            point: Point2::new(num(cx)?, num(cy)?)?,
            label,
        });
        for (k, &c) in extra_cols.iter().enumerate() {
            extras[k].push(num(c)?);
        }
    }
    Ok((samples, extras))
}

/// Uniform `k × k` partition of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinGrid {
    cells_per_axis: usize,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self { cells_per_axis: 100 }
    }
}

impl BinGrid {
    pub fn new(cells_per_axis: usize) -> Result<Self> {
        if cells_per_axis == 0 {
            return Err(Error::invalid("cells_per_axis", "must be at least 1"));
        }
        Ok(Self { cells_per_axis })
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn total_bins(&self) -> usize {
        self.cells_per_axis * self.cells_per_axis
    }

    pub fn cell_area(&self) -> f64 {
        1.0 / self.total_bins() as f64
    }

    /// Entropy of the uniform distribution over the bins, `log(k²)`.
    pub fn max_entropy(&self) -> f64 {
        (self.total_bins() as f64).ln()
    }

    #[inline]
    fn axis_cell(&self, v: f64) -> usize {
        let k = self.cells_per_axis;
        ((v * k as f64) as usize).min(k - 1)
    }

    /// `floor(x·k) + k·floor(y·k)`; a coordinate of exactly 1.0 falls in the
    /// last cell of its axis.
    #[inline]
    pub fn bin_index(&self, p: Point2) -> usize {
        self.axis_cell(p.x()) + self.cells_per_axis * self.axis_cell(p.y())
    }

    /// Center of bin `b`.
    pub fn bin_center(&self, b: usize) -> Point2 {
        let k = self.cells_per_axis;
        let h = 1.0 / k as f64;
        Point2::clamped(((b % k) as f64 + 0.5) * h, ((b / k) as f64 + 0.5) * h)
    }
}

/// Anything that assigns a label to a point: trained models, ground-truth
/// labeling functions, hand-built test classifiers.
pub trait Classifier {
    fn classify(&self, p: Point2) -> Label;
}

impl<F: Fn(Point2) -> Label> Classifier for F {
    fn classify(&self, p: Point2) -> Label {
        self(p)
    }
}

/// Free-function form of [`BinGrid::bin_index`].
pub fn bin_index(p: Point2, grid: BinGrid) -> usize {
    grid.bin_index(p)
}

/// One γ entry of a [`RiskReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRisk {
    pub gamma: f64,
    pub dd_risk: f64,
    pub bound: f64,
}

impl GammaRisk {
    /// A bound above 1 says nothing about a zero-one risk.
    pub fn vacuous(&self) -> bool {
        self.bound > 1.0
    }
}

/// Uniform risk, approximate DD risk per γ and the matching bound for one
/// trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub uniform_risk: f64,
    pub by_gamma: Vec<GammaRisk>,
    pub seed: u64,
    pub n: usize,
    pub sigma: Option<f64>,
}

impl RiskReport {
    pub fn new(uniform_risk: f64, seed: u64, n: usize, sigma: Option<f64>) -> Result<Self> {
        check_risk("uniform_risk", uniform_risk)?;
        Ok(Self {
            uniform_risk,
            by_gamma: Vec::new(),
            seed,
            n,
            sigma,
        })
    }

    pub fn push(&mut self, entry: GammaRisk) -> Result<()> {
        check_risk("dd_risk", entry.dd_risk)?;
        if !(entry.bound >= 0.0) {
            return Err(Error::invalid("bound", format!("{} is negative or NaN", entry.bound)));
        }
        self.by_gamma.push(entry);
        Ok(())
    }
}

fn check_risk(name: &'static str, r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{r} is outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y).unwrap()
    }

    #[test]
    fn bin_index_examples() {
        let g = BinGrid::new(100).unwrap();
        assert_eq!(bin_index(p(0.0, 0.0), g), 0);
        assert_eq!(bin_index(p(1.0, 1.0), g), 9999);
        assert_eq!(bin_index(p(0.505, 0.005), g), 50);
        assert_eq!(bin_index(p(1.0, 0.0), g), 99);
        assert_eq!(bin_index(p(0.0, 1.0), g), 9900);
    }

    #[test]
    fn bin_index_is_surjective_on_a_dense_lattice() {
        let g = BinGrid::new(7).unwrap();
        let mut seen = vec![false; g.total_bins()];
        for i in 0..=140 {
            for j in 0..=140 {
                seen[g.bin_index(p(i as f64 / 140.0, j as f64 / 140.0))] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn bin_center_round_trips() {
        let g = BinGrid::new(13).unwrap();
        for b in 0..g.total_bins() {
            assert_eq!(g.bin_index(g.bin_center(b)), b);
        }
    }

    #[test]
    fn zero_one_loss_table() {
        use Label::*;
        assert_eq!(zero_one_loss(Negative, Negative), 0.0);
        assert_eq!(zero_one_loss(Positive, Negative), 1.0);
        assert_eq!(zero_one_loss(Negative, Positive), 1.0);
        assert_eq!(zero_one_loss(Positive, Positive), 0.0);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(Point2::new(1.0000001, 0.5).is_err());
        assert!(Point2::new(0.5, -0.0).is_ok());
        assert!(Point2::new(f64::NAN, 0.5).is_err());
        assert!(serde_json::from_str::<Point2>(r#"{"x":2.0,"y":0.1}"#).is_err());
        assert!(serde_json::from_str::<Label>("2").is_err());
        assert_eq!(serde_json::from_str::<Label>("1").unwrap(), Label::Positive);
        assert!(BinGrid::new(0).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(Dataset::new(vec![], 0), Err(Error::Empty("dataset")));
    }

    #[test]
    fn risk_report_guards_ranges() {
        assert!(RiskReport::new(1.2, 0, 1, None).is_err());
        let mut r = RiskReport::new(0.1, 0, 1, None).unwrap();
        assert!(r.push(GammaRisk { gamma: 0.5, dd_risk: 0.3, bound: 1.7 }).is_ok());
        assert!(r.by_gamma[0].vacuous());
        assert!(r.push(GammaRisk { gamma: 0.5, dd_risk: 0.3, bound: -0.1 }).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = Dataset::new(
            vec![
                LabeledSample { point: p(0.1, 0.2), label: Label::Positive },
                LabeledSample { point: p(1.0 / 3.0, 0.0), label: Label::Negative },
            ],
            4,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::read_csv(&buf[..], 4).unwrap(), d);
        let reordered = b"label,weight,y,x\n1,2.0,0.2,0.1\n";
        assert_eq!(Dataset::read_csv(&reordered[..], 0).unwrap().samples()[0].point, p(0.1, 0.2));
        assert!(Dataset::read_csv(&b"x,y,label\n0.1,0.2,2\n"[..], 0).is_err());
        assert!(Dataset::read_csv(&b"x,y,label\n1.5,0.2,1\n"[..], 0).is_err());
        assert!(Dataset::read_csv(&b"x,label\n0.5,1\n"[..], 0).is_err());
    }
}
