use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{io_err, MetricsError};
use crate::manifest::write_atomic;
use crate::train::history::{records_from_csv, records_to_csv};
use crate::train::{EpochRecord, TrainHistory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub accuracy_plot: PathBuf,
    pub loss_plot: PathBuf,
}

/// Writes `curves.csv`, `accuracy.svg` and `loss.svg` into `out_dir`.
pub fn export_curves(history: &TrainHistory, out_dir: &Path) -> Result<CurveFiles, MetricsError> {
    if history.epochs.is_empty() {
        return Err(MetricsError::EmptyHistory);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let files = CurveFiles {
        csv: out_dir.join("curves.csv"),
        accuracy_plot: out_dir.join("accuracy.svg"),
        loss_plot: out_dir.join("loss.svg"),
    };
    let csv = records_to_csv(&history.epochs).map_err(|e| io_err(&files.csv, e))?;
    write_atomic(&files.csv, &csv).map_err(|e| io_err(&files.csv, e))?;

    let acc: [(&str, fn(&EpochRecord) -> f64); 2] =
        [("train accuracy", |r| r.train_accuracy), ("val accuracy", |r| r.val_accuracy)];
    let loss: [(&str, fn(&EpochRecord) -> f64); 2] = [("train loss", |r| r.train_loss), ("val loss", |r| r.val_loss)];
    plot(&files.accuracy_plot, "Accuracy", &history.epochs, &acc)?;
    plot(&files.loss_plot, "Loss", &history.epochs, &loss)?;
    Ok(files)
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<EpochRecord>, MetricsError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    records_from_csv(&bytes).map_err(|e| io_err(path, e))
}

fn plot(path: &Path, title: &str, records: &[EpochRecord], series: &[(&str, fn(&EpochRecord) -> f64)]) -> Result<(), MetricsError> {
    let err = |e: &dyn std::fmt::Display| io_err(path, e);
    let values = series.iter().flat_map(|(_, f)| records.iter().map(f)).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let last = records.last().map_or(1, |r| r.epoch).max(2);

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 24))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(1..last, (lo - pad)..(hi + pad))
            .map_err(|e| err(&e))?;
        chart.configure_mesh().x_desc("epoch").y_desc(title).draw().map_err(|e| err(&e))?;
        let colors = [BLUE, RED];
        for (i, (name, f)) in series.iter().enumerate() {
            let color = colors[i % colors.len()];
            chart
                .draw_series(LineSeries::new(records.iter().map(|r| (r.epoch, f(r))), color.stroke_width(2)))
                .map_err(|e| err(&e))?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(&e))?;
        root.present().map_err(|e| err(&e))?;
    }
    write_atomic(path, svg.as_bytes()).map_err(|e| io_err(path, e))
}
