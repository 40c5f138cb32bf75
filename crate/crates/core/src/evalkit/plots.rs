//! SVG plots with their point data alongside as TSV.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;

use super::experiment::UserSeedOutcome;
use super::stats::roc_curve;
use super::{ResultsTable, StrategyKind};
use crate::error::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("plot rendering: {e}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One bar per `(label, value)` on `[0, 1]`.
pub fn bar_chart(path: &Path, title: &str, bars: &[(String, f64)]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = bars.len().max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(90)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..n, 0.0..1.0)
        .map_err(plot_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bars.len().max(1))
        .x_label_formatter(&|x| labels.get(x.floor() as usize).cloned().unwrap_or_default())
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, v.clamp(0.0, 1.0))], BLUE.mix(0.7).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

pub fn roc_plot(path: &Path, title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("false rejection of valid user").y_desc("attacker rejection").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3))).map_err(plot_err)?;
    for (i, (name, pts)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bar charts of mean accuracy and scenario TPRs per strategy, and pooled
/// ROC curves on adversarial inputs per strategy.
pub fn write_all(outcomes: &[UserSeedOutcome], tables: &[ResultsTable], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let series: [(&str, &str, fn(&ResultsTable) -> Option<f64>); 3] = [
        ("accuracy", "Mean accuracy on the test set", |t| Some(t.mean.accuracy)),
        ("tpr_s1", "Mean TPR, classifier accessible", |t| Some(t.mean.tpr_s1)),
        ("tpr_s2", "Mean TPR, classifier and selector accessible", |t| t.mean.tpr_s2),
    ];
    for (stem, title, get) in series {
        let bars: Vec<(String, f64)> = tables.iter().filter_map(|t| Some((t.strategy.name(), get(t)?))).collect();
        let mut tsv = String::from("strategy\tvalue\n");
        for (k, v) in &bars {
            let _ = writeln!(tsv, "{k}\t{v:.6}");
        }
        write_text(&dir.join(format!("{stem}.tsv")), &tsv)?;
        bar_chart(&dir.join(format!("{stem}.svg")), title, &bars)?;
    }
    let mut curves = Vec::new();
    let mut tsv = String::from("strategy\tauc\tfpr\ttpr\n");
    for t in tables {
        let (mut valid, mut atk) = (Vec::new(), Vec::new());
        for s in outcomes.iter().flat_map(|o| &o.strategies).filter(|s| s.strategy == t.strategy) {
            valid.extend_from_slice(&s.roc.valid);
            atk.extend_from_slice(&s.roc.attacker_adversarial);
        }
        let Ok(roc) = roc_curve(&valid, &atk) else { continue };
        for (x, y) in &roc.points {
            let _ = writeln!(tsv, "{}\t{:.6}\t{x:.6}\t{y:.6}", t.strategy.name(), roc.auc);
        }
        let keep = t.strategy.n_e.is_none_or(|n| Some(n) == tables.iter().find_map(|t| t.strategy.n_e));
        if keep || t.strategy.tag == StrategyKind::Plain {
            curves.push((format!("{} (AUC {:.3})", t.strategy.name(), roc.auc), roc.points));
        }
    }
    write_text(&dir.join("roc_adversarial.tsv"), &tsv)?;
    roc_plot(&dir.join("roc_adversarial.svg"), "ROC on adversarial attacker samples", &curves)
}
