//! JSON metrics report.

use serde::Serialize;

use irflow_core::metrics::MetricsReport;

#[derive(Serialize)]
struct ImageEntry {
    index: usize,
    psnr_db: f64,
    ssim: f64,
    mse: f64,
}

#[derive(Serialize)]
struct Report {
    psnr_db: f64,
    ssim: f64,
    mse: f64,
    nfe: usize,
    per_image: Vec<ImageEntry>,
}

pub fn to_json(r: &MetricsReport) -> String {
    let report = Report {
        psnr_db: r.psnr,
        ssim: r.ssim,
        mse: r.mse,
        nfe: r.nfe,
        per_image: r
            .per_image
            .iter()
            .enumerate()
            .map(|(index, m)| ImageEntry {
                index,
                psnr_db: m.psnr,
                ssim: m.ssim,
                mse: m.mse,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}
