//! Overlay of many reports on the hand map.
//!
//! Counts are per cell (how many masks cover it). Strongest points are kept
//! individually (drawn as black dots) and averaged (one white dot).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tactwrist_core::handmap::{Cell, HandMap, HandMapError, Region};
use tactwrist_core::sim::SensationReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: u16,
    pub height: u16,
    /// Row-major cover counts.
    pub counts: Vec<u32>,
    pub strongest: Vec<Cell>,
    /// Mean strongest point in cell coordinates (x, y); `None` with no reports.
    pub mean_strongest: Option<[f64; 2]>,
}

impl Heatmap {
    pub fn empty(width: u16, height: u16) -> Self {
        Heatmap {
            width,
            height,
            counts: vec![0; width as usize * height as usize],
            strongest: Vec::new(),
            mean_strongest: None,
        }
    }

    pub fn count(&self, c: Cell) -> u32 {
        self.counts[c.y as usize * self.width as usize + c.x as usize]
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn reports(&self) -> usize {
        self.strongest.len()
    }

    /// One line per raster row, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.width as usize) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Hand outline in greys, counts on a linear blue scale, strongest
    /// points as black dots and their mean as a white dot.
    pub fn to_svg(&self, map: &HandMap, title: &str) -> String {
        const PX: u32 = 6;
        let (w, h) = (self.width as u32 * PX, self.height as u32 * PX);
        let max = self.max_count().max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {}">"#,
            h + 20,
            h + 20
        );
        let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(title));
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for (c, region) in map.cells() {
            if region == Region::Background {
                continue;
            }
            let shade = match region {
                Region::Wrist => "#d9d9d9",
                Region::Palm => "#e6e6e6",
                _ => "#ededed",
            };
            let n = self.count(c);
            let fill = if n == 0 {
                shade.to_string()
            } else {
                // linear count scale, light to dark blue
                let t = n as f64 / max;
                let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
                format!("#{:02x}{:02x}{:02x}", lerp(198.0, 8.0), lerp(219.0, 48.0), lerp(239.0, 107.0))
            };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{PX}" height="{PX}" fill="{fill}"/>"#,
                c.x as u32 * PX,
                c.y as u32 * PX
            );
        }
        for p in &self.strongest {
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="2.5" fill="black"/>"#,
                p.x as f64 * PX as f64 + PX as f64 / 2.0,
                p.y as f64 * PX as f64 + PX as f64 / 2.0
            );
        }
        if let Some([x, y]) = self.mean_strongest {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="white" stroke="black" stroke-width="1"/>"#,
                x * PX as f64 + PX as f64 / 2.0,
                y * PX as f64 + PX as f64 / 2.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{} reports, max {}</text>"#,
            h + 14,
            self.reports(),
            self.max_count()
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn aggregate_heatmap<'a>(
    reports: impl IntoIterator<Item = &'a SensationReport>,
    map: &HandMap,
) -> Result<Heatmap, HandMapError> {
    let mut h = Heatmap::empty(map.width(), map.height());
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in reports {
        map.check_dims(&r.area_mask)?;
        for c in r.area_mask.iter_set() {
            h.counts[c.y as usize * h.width as usize + c.x as usize] += 1;
        }
        sx += r.strongest_point.x as f64;
        sy += r.strongest_point.y as f64;
        h.strongest.push(r.strongest_point);
    }
    if !h.strongest.is_empty() {
        let n = h.strongest.len() as f64;
        h.mean_strongest = Some([sx / n, sy / n]);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tactwrist_core::sim::PerceiverModel;

    fn report(seed: u64, ch: u8) -> SensationReport {
        PerceiverModel::default().perceive(ch, 3.0, None, seed).unwrap().unwrap()
    }

    #[test]
    fn single_report_is_its_mask() {
        let map = HandMap::bundled();
        let r = report(1, 5);
        let h = aggregate_heatmap([&r], map).unwrap();
        for (c, _) in map.cells() {
            assert_eq!(h.count(c), r.area_mask.get(c) as u32);
        }
        assert_eq!(h.mean_strongest, Some([r.strongest_point.x as f64, r.strongest_point.y as f64]));
    }

    #[test]
    fn duplicate_doubles_counts_keeps_mean() {
        let map = HandMap::bundled();
        let rs = [report(1, 5), report(2, 8), report(3, 11)];
        let once = aggregate_heatmap(&rs, map).unwrap();
        let twice = aggregate_heatmap(rs.iter().chain(rs.iter()), map).unwrap();
        assert!(once.counts.iter().zip(&twice.counts).all(|(a, b)| 2 * a == *b));
        let (a, b) = (once.mean_strongest.unwrap(), twice.mean_strongest.unwrap());
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        assert!(twice.max_count() <= 6);
    }

    #[test]
    fn csv_and_svg_shape() {
        let map = HandMap::bundled();
        let h = aggregate_heatmap(&[report(4, 6)], map).unwrap();
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), map.height() as usize);
        assert!(csv.lines().all(|l| l.split(',').count() == map.width() as usize));
        let svg = h.to_svg(map, "ch6 <test>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"fill="black""#).count(), 1);
        assert_eq!(svg.matches(r#"fill="white" stroke"#).count(), 1);
        assert!(svg.contains("ch6 &lt;test&gt;"));
    }

    #[test]
    fn empty_input() {
        let h = aggregate_heatmap(std::iter::empty(), HandMap::bundled()).unwrap();
        assert_eq!(h.max_count(), 0);
        assert_eq!(h.mean_strongest, None);
    }
}
