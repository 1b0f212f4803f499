use std::path::Path;

use crate::error::{Error, Result};

/// Scores for one image. Full-reference and color-checker fields are absent
/// when they were not computed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub uiqm: f64,
    pub ciede2000: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_opt(rows: &[MetricRow], f: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
    if rows.iter().all(|r| f(r).is_some()) {
        Some(mean_of(rows.iter().filter_map(&f)))
    } else {
        None
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

impl MetricReport {
    /// Per-image arithmetic means, labelled `MEAN`. PSNR is averaged per
    /// image, so a single identical pair makes the mean infinite.
    pub fn mean(&self) -> Option<MetricRow> {
        if self.rows.is_empty() {
            return None;
        }
        let r = &self.rows;
        Some(MetricRow {
            id: "MEAN".into(),
            mse: mean_opt(r, |x| x.mse),
            psnr: mean_opt(r, |x| x.psnr),
            ssim: mean_opt(r, |x| x.ssim),
            uicm: mean_of(r.iter().map(|x| x.uicm)),
            uism: mean_of(r.iter().map(|x| x.uism)),
            uiconm: mean_of(r.iter().map(|x| x.uiconm)),
            uiqm: mean_of(r.iter().map(|x| x.uiqm)),
            ciede2000: mean_opt(r, |x| x.ciede2000),
        })
    }

    fn has_full_reference(&self) -> bool {
        self.rows.iter().any(|r| r.mse.is_some())
    }

    fn has_colorchecker(&self) -> bool {
        self.rows.iter().any(|r| r.ciede2000.is_some())
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["image"];
        if self.has_full_reference() {
            h.extend(["mse", "psnr", "ssim"]);
        }
        h.extend(["uicm", "uism", "uiconm", "uiqm"]);
        if self.has_colorchecker() {
            h.push("ciede2000");
        }
        h
    }

    pub fn record(&self, row: &MetricRow) -> Vec<String> {
        let mut out = vec![row.id.clone()];
        if self.has_full_reference() {
            out.extend([cell(row.mse), cell(row.psnr), cell(row.ssim)]);
        }
        out.extend([row.uicm, row.uism, row.uiconm, row.uiqm].map(|v| cell(Some(v))));
        if self.has_colorchecker() {
            out.push(cell(row.ciede2000));
        }
        out
    }

    /// CSV with a header row, one row per image and a final `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in self.rows.iter().chain(self.mean().as_ref()) {
            w.write_record(self.record(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
