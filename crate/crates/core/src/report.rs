//! CSV reports and SVG charts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{Aggregate, FrameMetrics, MetricsError, MetricsReport, Provenance};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, line: usize, column: &str) -> Result<Option<f64>, MetricsError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| MetricsError::Csv(format!("line {line}: column {column}: cannot parse {s:?}")))
}

pub const METRICS_HEADER: &str = "frame_id,p_d,p_fa,bcd_m,predicted_points,gt_points,empty";

/// Per-frame metrics as CSV: a provenance comment line, a header, one row
/// per frame and a final `mean` row. Undefined values are empty fields.
pub fn metrics_to_csv(report: &MetricsReport) -> String {
    let mut s = format!(
        "# radarpc metrics v1; detector={}; config={}\n{METRICS_HEADER}\n",
        report.provenance.detector, report.provenance.config_hash
    );
    for f in &report.per_frame {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            f.frame_id,
            opt(f.p_d),
            opt(f.p_fa),
            opt(f.bcd),
            f.predicted_points,
            f.gt_points,
            f.is_empty_prediction()
        );
    }
    let a = report.aggregate;
    let _ = writeln!(s, "mean,{},{},{},,,{}", opt(a.p_d), opt(a.p_fa), opt(a.bcd), report.empty_frame_fraction);
    s
}

pub fn metrics_from_csv(text: &str) -> Result<MetricsReport, MetricsError> {
    let mut lines = text.lines().enumerate();
    let mut provenance = Provenance::default();
    let (_, first) = lines.next().ok_or_else(|| MetricsError::Csv("empty file".into()))?;
    let header = if let Some(meta) = first.strip_prefix('#') {
        for part in meta.split(';') {
            if let Some(v) = part.trim().strip_prefix("detector=") {
                provenance.detector = v.to_string();
            } else if let Some(v) = part.trim().strip_prefix("config=") {
                provenance.config_hash = v.to_string();
            }
        }
        lines.next().map(|(_, l)| l).unwrap_or_default()
    } else {
        first
    };
    if header != METRICS_HEADER {
        return Err(MetricsError::Csv(format!("unexpected header {header:?}")));
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(MetricsError::Csv(format!("line {n}: expected 7 columns, found {}", cols.len())));
        }
        if cols[0] == "mean" {
            continue;
        }
        let int = |s: &str, c: &str| {
            s.parse::<u64>().map_err(|_| MetricsError::Csv(format!("line {n}: column {c}: cannot parse {s:?}")))
        };
        frames.push(FrameMetrics {
            frame_id: int(cols[0], "frame_id")?,
            p_d: parse_opt(cols[1], n, "p_d")?,
            p_fa: parse_opt(cols[2], n, "p_fa")?,
            bcd: parse_opt(cols[3], n, "bcd_m")?,
            predicted_points: int(cols[4], "predicted_points")? as usize,
            gt_points: int(cols[5], "gt_points")? as usize,
        });
    }
    Ok(MetricsReport::from_frames(frames, provenance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Every predicted frame was empty; no BCD can be reported.
    Inconclusive,
    Failed(String),
}

impl CellStatus {
    fn label(&self) -> String {
        match self {
            CellStatus::Ok => "ok".into(),
            CellStatus::Inconclusive => "inconclusive".into(),
            CellStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
        }
    }
}

/// One (temporal layers, backbone blocks) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temporal_layers: usize,
    pub backbone_blocks: usize,
    pub parameters: Option<usize>,
    pub metrics: Aggregate,
    pub empty_frame_fraction: Option<f64>,
    pub status: CellStatus,
}

impl SweepRow {
    pub fn from_report(temporal_layers: usize, backbone_blocks: usize, parameters: usize, r: &MetricsReport) -> Self {
        let status = if r.is_inconclusive() { CellStatus::Inconclusive } else { CellStatus::Ok };
        Self {
            temporal_layers,
            backbone_blocks,
            parameters: Some(parameters),
            metrics: r.aggregate,
            empty_frame_fraction: Some(r.empty_frame_fraction),
            status,
        }
    }

    pub fn failed(temporal_layers: usize, backbone_blocks: usize, message: String) -> Self {
        Self {
            temporal_layers,
            backbone_blocks,
            parameters: None,
            metrics: Aggregate::default(),
            empty_frame_fraction: None,
            status: CellStatus::Failed(message),
        }
    }
}

pub const SWEEP_HEADER: &str = "temporal_layers,backbone_blocks,parameters,p_d,p_fa,bcd_m,empty_frame_fraction,status";

/// Sweep table grouped by temporal-layer count, then backbone size.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.temporal_layers, r.backbone_blocks));
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in sorted {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.temporal_layers,
            r.backbone_blocks,
            r.parameters.map(|p| p.to_string()).unwrap_or_default(),
            opt(r.metrics.p_d),
            opt(r.metrics.p_fa),
            opt(r.metrics.bcd),
            opt(r.empty_frame_fraction),
            r.status.label()
        );
    }
    s
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SWEEP_HEADER => {}
        other => return Err(MetricsError::Csv(format!("unexpected header {:?}", other.map(|o| o.1)))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let c: Vec<&str> = line.splitn(8, ',').collect();
        if c.len() != 8 {
            return Err(MetricsError::Csv(format!("line {n}: expected 8 columns")));
        }
        let int = |s: &str, col: &str| {
            s.parse::<usize>().map_err(|_| MetricsError::Csv(format!("line {n}: column {col}: cannot parse {s:?}")))
        };
        let status = match c[7] {
            "ok" => CellStatus::Ok,
            "inconclusive" => CellStatus::Inconclusive,
            s => CellStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
        };
        rows.push(SweepRow {
            temporal_layers: int(c[0], "temporal_layers")?,
            backbone_blocks: int(c[1], "backbone_blocks")?,
            parameters: if c[2].is_empty() { None } else { Some(int(c[2], "parameters")?) },
            metrics: Aggregate {
                p_d: parse_opt(c[3], n, "p_d")?,
                p_fa: parse_opt(c[4], n, "p_fa")?,
                bcd: parse_opt(c[5], n, "bcd_m")?,
            },
            empty_frame_fraction: parse_opt(c[6], n, "empty_frame_fraction")?,
            status,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rounds an axis maximum up to 1, 2 or 5 times a power of ten.
fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * p).find(|c| *c >= v).unwrap_or(10.0 * p)
}

struct Frame {
    width: f64,
    height: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn plot_w(&self) -> f64 {
        self.width - self.left - self.right
    }

    fn plot_h(&self) -> f64 {
        self.height - self.top - self.bottom
    }

    fn y(&self, v: f64, max: f64) -> f64 {
        self.top + self.plot_h() * (1.0 - v / max)
    }

    fn open(&self, s: &mut String, title: &str, y_label: &str, max: f64) {
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(s, r#"<rect width="{}" height="{}" fill="white"/>"#, self.width, self.height);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            self.width / 2.0,
            escape(title)
        );
        for i in 0..=5 {
            let v = max * i as f64 / 5.0;
            let y = self.y(v, max);
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
                self.left,
                self.width - self.right
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, self.left - 6.0, y + 4.0, trim(v));
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            self.top + self.plot_h() / 2.0,
            escape(y_label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{l:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="black"/>"#,
            l = self.left,
            r = self.width - self.right,
            b = self.height - self.bottom
        );
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Grouped bar chart of mean BCD: one group per temporal-layer count, one
/// bar per backbone size. Cells without a BCD are marked "n/a".
pub fn sweep_bar_chart(rows: &[SweepRow], title: &str) -> String {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.temporal_layers).collect();
    let mut bs: Vec<usize> = rows.iter().map(|r| r.backbone_blocks).collect();
    ks.sort_unstable();
    ks.dedup();
    bs.sort_unstable();
    bs.dedup();
    let max = nice_max(rows.iter().filter_map(|r| r.metrics.bcd).fold(0.0, f64::max));
    let frame = Frame { width: 640.0, height: 400.0, left: 60.0, right: 130.0, top: 36.0, bottom: 48.0 };
    let mut s = String::new();
    frame.open(&mut s, title, "mean BCD (m)", max);
    let group_w = frame.plot_w() / ks.len().max(1) as f64;
    let bar_w = group_w * 0.8 / bs.len().max(1) as f64;
    for (gi, k) in ks.iter().enumerate() {
        let gx = frame.left + gi as f64 * group_w;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} temporal layers</text>"#,
            gx + group_w / 2.0,
            frame.height - frame.bottom + 18.0,
            k
        );
        for (bi, b) in bs.iter().enumerate() {
            let x = gx + group_w * 0.1 + bi as f64 * bar_w;
            let row = rows.iter().find(|r| r.temporal_layers == *k && r.backbone_blocks == *b);
            match row.and_then(|r| r.metrics.bcd) {
                Some(v) => {
                    let y = frame.y(v, max);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>B={b} K={k}: {v}</title></rect>"#,
                        bar_w * 0.9,
                        frame.height - frame.bottom - y,
                        PALETTE[bi % PALETTE.len()]
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">n/a</text>"#,
                        x + bar_w * 0.45,
                        frame.height - frame.bottom - 4.0
                    );
                }
            }
        }
    }
    for (bi, b) in bs.iter().enumerate() {
        let y = frame.top + 10.0 + 20.0 * bi as f64;
        let x = frame.width - frame.right + 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{b} blocks</text>"#,
            y - 10.0,
            PALETTE[bi % PALETTE.len()],
            x + 18.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of per-frame BCD; frames without a BCD break the line.
pub fn bcd_line_plot(report: &MetricsReport, title: &str) -> String {
    let frames = &report.per_frame;
    let max = nice_max(frames.iter().filter_map(|f| f.bcd).fold(0.0, f64::max));
    let frame = Frame { width: 640.0, height: 360.0, left: 60.0, right: 20.0, top: 36.0, bottom: 48.0 };
    let mut s = String::new();
    frame.open(&mut s, title, "BCD (m)", max);
    let n = frames.len().max(2) - 1;
    let x_of = |i: usize| frame.left + frame.plot_w() * i as f64 / n as f64;
    let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for (i, f) in frames.iter().enumerate() {
        match f.bcd {
            Some(v) => runs.last_mut().expect("non-empty").push((x_of(i), frame.y(v, max))),
            None => runs.push(Vec::new()),
        }
    }
    for run in runs.iter().filter(|r| !r.is_empty()) {
        let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#4e79a7" stroke-width="1.5"/>"##, pts.join(" "));
        if run.len() == 1 {
            let (x, y) = run[0];
            let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="2" fill="#4e79a7"/>"##);
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">frame ({} total, {} empty)</text>"#,
        frame.left + frame.plot_w() / 2.0,
        frame.height - 12.0,
        frames.len(),
        frames.iter().filter(|f| f.is_empty_prediction()).count()
    );
    s.push_str("</svg>\n");
    s
}
