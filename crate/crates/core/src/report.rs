//! Report emitters: per-step summaries as CSV or as a self-contained SVG
//! chart (mean length on the left axis, accuracy on the right).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trace::StepSummary;

pub const CSV_HEADER: &str = "step,accuracy,mean_length,min_length,max_length,gated_fraction";

/// Extra columns appended after the fixed summary columns. Each entry is a
/// header plus one preformatted cell per summary row.
pub type ExtraColumns = Vec<(String, Vec<String>)>;

/// Render summaries as CSV. Floats use shortest round-trip formatting, so
/// parsing the output reproduces the input exactly.
pub fn emit_csv(summaries: &[StepSummary], extra: &ExtraColumns) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::EmptyReport);
    }
    for (name, cells) in extra {
        if cells.len() != summaries.len() {
            return Err(Error::InvalidConfig(format!(
                "extra column {name}: {} cells for {} rows",
                cells.len(),
                summaries.len()
            )));
        }
    }
    let mut out = String::from(CSV_HEADER);
    for (name, _) in extra {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (i, s) in summaries.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            s.step, s.accuracy, s.mean_length, s.min_length, s.max_length, s.gated_fraction
        );
        for (_, cells) in extra {
            let _ = write!(out, ",{}", cells[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parse the fixed summary columns back out of CSV produced by [`emit_csv`].
/// Extra columns, if present, are ignored.
pub fn parse_csv(text: &str) -> Result<Vec<StepSummary>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyReport)?;
    if !(header == CSV_HEADER || header.starts_with(&format!("{CSV_HEADER},"))) {
        return Err(Error::Trace { line: 1, detail: format!("unexpected CSV header: {header}") });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 6 {
            return Err(Error::Trace {
                line: line_no,
                detail: format!("expected at least 6 columns, got {}", cells.len()),
            });
        }
        fn cell<T: std::str::FromStr>(raw: &str, line: usize, name: &str) -> Result<T> {
            raw.parse().map_err(|_| Error::Trace {
                line,
                detail: format!("column {name}: cannot parse {raw:?}"),
            })
        }
        out.push(StepSummary {
            step: cell(cells[0], line_no, "step")?,
            accuracy: cell(cells[1], line_no, "accuracy")?,
            mean_length: cell(cells[2], line_no, "mean_length")?,
            min_length: cell(cells[3], line_no, "min_length")?,
            max_length: cell(cells[4], line_no, "max_length")?,
            gated_fraction: cell(cells[5], line_no, "gated_fraction")?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(out)
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 70.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a dual-axis line chart. The left axis carries mean length as a
/// percentage of the first summary's mean length (so every run starts at
/// 100); the right axis carries accuracy in percent. Output embeds all
/// styling inline and references nothing external.
pub fn emit_svg(summaries: &[StepSummary]) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::EmptyReport);
    }
    let base = summaries[0].mean_length;
    if base == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let length_pct: Vec<f64> = summaries.iter().map(|s| s.mean_length / base * 100.0).collect();
    let accuracy_pct: Vec<f64> = summaries.iter().map(|s| s.accuracy * 100.0).collect();

    let max_len_pct = length_pct.iter().cloned().fold(100.0_f64, f64::max);
    // Left axis: 0 .. next multiple of 20 at or above the peak.
    let left_top = (max_len_pct / 20.0).ceil() * 20.0;
    let x_min = summaries.first().map(|s| s.step).unwrap_or(0) as f64;
    let x_max = summaries.last().map(|s| s.step).unwrap_or(0) as f64;
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |step: f64| MARGIN_LEFT + (step - x_min) / x_span * plot_w;
    let y_left = |pct: f64| MARGIN_TOP + (1.0 - pct / left_top) * plot_h;
    let y_right = |pct: f64| MARGIN_TOP + (1.0 - pct / 100.0) * plot_h;

    let polyline = |ys: &[f64], to_y: &dyn Fn(f64) -> f64| -> String {
        summaries
            .iter()
            .zip(ys)
            .map(|(s, v)| format!("{},{}", fmt2(x(s.step as f64)), fmt2(to_y(*v))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"22\" font-size=\"15\">mean length (% of first step, left) vs accuracy (%, right)</text>",
        MARGIN_LEFT
    );

    // Horizontal gridlines with left/right tick labels every 20% of each axis.
    let ticks = (left_top / 20.0).round() as i64;
    for t in 0..=ticks {
        let pct = t as f64 * 20.0;
        let yy = y_left(pct);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            fmt2(MARGIN_LEFT),
            fmt2(yy),
            fmt2(WIDTH - MARGIN_RIGHT),
            fmt2(yy)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#1f6f43\">{}</text>",
            fmt2(MARGIN_LEFT - 8.0),
            fmt2(yy + 4.0),
            pct
        );
    }
    for t in 0..=5 {
        let pct = t as f64 * 20.0;
        let yy = y_right(pct);
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"#8a2be2\">{}</text>",
            fmt2(WIDTH - MARGIN_RIGHT + 8.0),
            fmt2(yy + 4.0),
            pct
        );
    }
    // X-axis tick labels at up to six evenly spaced summary points.
    let label_every = (summaries.len() / 6).max(1);
    for (i, s) in summaries.iter().enumerate() {
        if i % label_every == 0 || i == summaries.len() - 1 {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                fmt2(x(s.step as f64)),
                fmt2(HEIGHT - MARGIN_BOTTOM + 20.0),
                s.step
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>",
        fmt2(MARGIN_LEFT + plot_w / 2.0),
        fmt2(HEIGHT - 12.0)
    );

    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6f43\" stroke-width=\"2\"/>",
        polyline(&length_pct, &y_left)
    );
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#8a2be2\" stroke-width=\"2\" \
         stroke-dasharray=\"6 3\"/>",
        polyline(&accuracy_pct, &y_right)
    );

    // Legend.
    let lx = MARGIN_LEFT + 10.0;
    let _ = writeln!(
        svg,
        "<line x1=\"{lx}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#1f6f43\" stroke-width=\"2\"/>\
         <text x=\"{}\" y=\"{}\">mean length %</text>",
        lx + 26.0,
        lx + 32.0,
        MARGIN_TOP + 16.0,
        y = fmt2(MARGIN_TOP + 12.0),
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{lx}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#8a2be2\" stroke-width=\"2\" \
         stroke-dasharray=\"6 3\"/><text x=\"{}\" y=\"{}\">accuracy %</text>",
        lx + 26.0,
        lx + 32.0,
        MARGIN_TOP + 34.0,
        y = fmt2(MARGIN_TOP + 30.0),
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sums() -> Vec<StepSummary> {
        vec![
            StepSummary {
                step: 0,
                accuracy: 0.5,
                mean_length: 4000.0,
                min_length: 900,
                max_length: 16000,
                gated_fraction: 0.25,
            },
            StepSummary {
                step: 10,
                accuracy: 0.8125,
                mean_length: 3514.625,
                min_length: 640,
                max_length: 15872,
                gated_fraction: 0.5,
            },
            StepSummary {
                step: 20,
                accuracy: 0.81,
                mean_length: 2231.0,
                min_length: 512,
                max_length: 15360,
                gated_fraction: 0.625,
            },
        ]
    }

    #[test]
    fn csv_round_trips_exactly() {
        let original = sums();
        let text = emit_csv(&original, &Vec::new()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, original);
        // Idempotence: emitting the parse reproduces the same bytes.
        assert_eq!(emit_csv(&parsed, &Vec::new()).unwrap(), text);
    }

    #[test]
    fn extra_columns_append_and_are_ignored_on_parse() {
        let extra = vec![
            ("count_but".to_owned(), vec!["3".into(), "1".into(), "0".into()]),
            ("ratio_but".to_owned(), vec!["0.1".into(), "0.05".into(), "0".into()]),
        ];
        let text = emit_csv(&sums(), &extra).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.ends_with("count_but,ratio_but"));
        assert_eq!(parse_csv(&text).unwrap(), sums());
        let short = vec![("c".to_owned(), vec!["1".into()])];
        assert!(emit_csv(&sums(), &short).is_err());
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(emit_csv(&[], &Vec::new()), Err(Error::EmptyReport)));
        assert!(matches!(emit_svg(&[]), Err(Error::EmptyReport)));
        assert!(matches!(parse_csv(""), Err(Error::EmptyReport)));
        assert!(matches!(parse_csv(CSV_HEADER), Err(Error::EmptyReport)));
    }

    #[test]
    fn parse_rejects_malformed_cells_with_line_numbers() {
        let text = format!("{CSV_HEADER}\n0,0.5,oops,900,16000,0.25\n");
        let err = parse_csv(&text).unwrap_err().to_string();
        assert!(err.starts_with("line 2:"), "{err}");
        assert!(err.contains("mean_length"), "{err}");
        let err = parse_csv("bogus,header\n").unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }

    #[test]
    fn svg_is_self_contained_and_deterministic() {
        let a = emit_svg(&sums()).unwrap();
        let b = emit_svg(&sums()).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        for needle in ["polyline", "accuracy %", "mean length %"] {
            assert!(a.contains(needle), "missing {needle}");
        }
        // Self-contained: no external references or stylesheets.
        for banned in ["http://", "https://", "url(", "<link", "@import"] {
            let allowed = banned == "http://" && a.matches("http://").count() == 1;
            assert!(
                allowed || !a.contains(banned),
                "found {banned} beyond the xmlns declaration"
            );
        }
        // First point of the length series sits at 100% of the left axis.
        assert!(a.contains("100%") || a.contains("% of first step"));
    }

    #[test]
    fn svg_handles_single_point_runs() {
        let one = vec![sums()[0]];
        let svg = emit_svg(&one).unwrap();
        assert!(svg.contains("polyline"));
    }
}
