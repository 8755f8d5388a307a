//! Static SVG profile charts.
//!
//! Three views: one panel per vehicle with its charger limit and SOE, one
//! panel per station with stacked vehicle contributions and the station
//! limit, and the fleet aggregate stacked once by vehicle and once by
//! station. Both aggregate panels draw the same outline, computed from
//! integer micro-kWh so that the two groupings agree exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::experiments::ScheduleRow;
use crate::scenario::Scenario;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const GAP: f64 = 36.0;

const PALETTE: [&str; 8] = [
    "#1b9e9e", "#e6862c", "#7b4fa8", "#3a7d2c", "#2c5aa0", "#c0392b", "#8c6d31", "#636363",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartView {
    Ev,
    Cs,
    Aggregate,
}

impl ChartView {
    pub fn name(&self) -> &'static str {
        match self {
            ChartView::Ev => "ev",
            ChartView::Cs => "cs",
            ChartView::Aggregate => "aggregate",
        }
    }

    pub fn file_name(&self) -> String {
        format!("chart_{}.svg", self.name())
    }
}

impl FromStr for ChartView {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ev" => Ok(ChartView::Ev),
            "cs" => Ok(ChartView::Cs),
            "aggregate" => Ok(ChartView::Aggregate),
            other => Err(format!("unknown view {other:?}")),
        }
    }
}

/// Energy in integer micro-kWh.
fn micro(kwh: f64) -> i64 {
    (kwh * 1e6).round() as i64
}

/// Per-step charge and discharge of one stacked series, micro-kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub charge: Vec<i64>,
    pub discharge: Vec<i64>,
}

impl Series {
    fn new(id: &str, horizon: usize) -> Self {
        Self {
            id: id.to_string(),
            charge: vec![0; horizon],
            discharge: vec![0; horizon],
        }
    }
}

fn by_ev(scenario: &Scenario, rows: &[ScheduleRow]) -> Vec<Series> {
    let horizon = scenario.horizon();
    scenario
        .evs
        .iter()
        .map(|ev| {
            let mut s = Series::new(&ev.id, horizon);
            for r in rows
                .iter()
                .filter(|r| r.entity_id == ev.id && r.t < horizon)
            {
                s.charge[r.t] += micro(r.e_sch_kwh + r.e_fch_kwh);
                s.discharge[r.t] += micro(r.e_dch_kwh);
            }
            s
        })
        .collect()
}

/// Station a row's energy is booked to: the one the vehicle occupies, or
/// for energy scheduled while it was really driving (a shifted forecast),
/// the nearest station of its day, earlier one first.
fn row_station<'a>(scenario: &'a Scenario, r: &ScheduleRow) -> Option<&'a str> {
    let it = scenario.itinerary(&r.entity_id)?;
    let at = |t: usize| it.states.get(t).and_then(|s| s.station());
    if let Some(cs) = at(r.t) {
        return Some(cs);
    }
    (1..it.states.len()).find_map(|d| r.t.checked_sub(d).and_then(at).or_else(|| at(r.t + d)))
}

/// Rows grouped by station, in scenario order.
fn by_station(scenario: &Scenario, rows: &[ScheduleRow]) -> Vec<Series> {
    let horizon = scenario.horizon();
    let mut map: BTreeMap<&str, Series> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.t < horizon) {
        let Some(cs) = row_station(scenario, r) else {
            continue;
        };
        let s = map.entry(cs).or_insert_with(|| Series::new(cs, horizon));
        s.charge[r.t] += micro(r.e_sch_kwh + r.e_fch_kwh);
        s.discharge[r.t] += micro(r.e_dch_kwh);
    }
    scenario
        .stations
        .iter()
        .map(|cs| {
            map.remove(cs.id.as_str())
                .unwrap_or_else(|| Series::new(&cs.id, horizon))
        })
        .collect()
}

/// Net fleet exchange per step, micro-kWh.
pub fn outline(series: &[Series]) -> Vec<i64> {
    let horizon = series.first().map_or(0, |s| s.charge.len());
    (0..horizon)
        .map(|t| series.iter().map(|s| s.charge[t] - s.discharge[t]).sum())
        .collect()
}

/// Aggregate outlines grouped by vehicle and by station.
pub fn aggregate_outlines(scenario: &Scenario, rows: &[ScheduleRow]) -> (Vec<i64>, Vec<i64>) {
    (
        outline(&by_ev(scenario, rows)),
        outline(&by_station(scenario, rows)),
    )
}

struct Panel {
    top: f64,
    horizon: usize,
    /// Power range shown, kW.
    lo: f64,
    hi: f64,
}

impl Panel {
    fn x(&self, t: f64) -> f64 {
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * t / self.horizon.max(1) as f64
    }

    fn y(&self, kw: f64) -> f64 {
        self.top + PANEL_H * (self.hi - kw) / (self.hi - self.lo)
    }

    fn bar_w(&self) -> f64 {
        self.x(1.0) - self.x(0.0)
    }
}

fn power_range(series: &[Series], limits: &[f64], dt: f64) -> (f64, f64) {
    let horizon = series.first().map_or(0, |s| s.charge.len());
    let mut up: f64 = limits.iter().copied().fold(0.0, f64::max);
    let mut down: f64 = 0.0;
    for t in 0..horizon {
        let c: i64 = series.iter().map(|s| s.charge[t]).sum();
        let d: i64 = series.iter().map(|s| s.discharge[t]).sum();
        up = up.max(c as f64 / 1e6 / dt);
        down = down.max(d as f64 / 1e6 / dt);
    }
    if up == 0.0 && down == 0.0 {
        up = 1.0;
    }
    (-down * 1.05, up * 1.05)
}

fn open_panel(svg: &mut String, p: &Panel, title: &str) {
    let _ = writeln!(svg, r#"<g class="panel" data-title="{title}">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="13">{title}</text>"#,
        MARGIN_L,
        p.top - 8.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#999"/>"##,
        p.x(0.0),
        p.top,
        p.x(p.horizon as f64) - p.x(0.0),
        PANEL_H
    );
    let _ = writeln!(
        svg,
        r##"<line class="zero" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#444"/>"##,
        p.x(0.0),
        p.y(0.0),
        p.x(p.horizon as f64),
        p.y(0.0)
    );
    for (kw, label) in [(p.hi / 1.05, "max"), (p.lo / 1.05, "min")] {
        if kw != 0.0 {
            let _ = writeln!(
                svg,
                r#"<text x="4" y="{:.3}" font-size="10">{kw:.1} kW {label}</text>"#,
                p.y(kw) + 3.0
            );
        }
    }
    for h in (0..=p.horizon).step_by(6) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="10" text-anchor="middle">{h}</text>"#,
            p.x(h as f64),
            p.top + PANEL_H + 12.0
        );
    }
}

fn stacked_bars(svg: &mut String, p: &Panel, series: &[Series], dt: f64) {
    for t in 0..p.horizon {
        let mut up = 0i64;
        let mut down = 0i64;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            for (amount, base, sign) in [
                (s.charge[t], &mut up, 1.0),
                (s.discharge[t], &mut down, -1.0),
            ] {
                if amount == 0 {
                    continue;
                }
                let a = sign * *base as f64 / 1e6 / dt;
                *base += amount;
                let b = sign * *base as f64 / 1e6 / dt;
                let _ = writeln!(
                    svg,
                    r#"<rect class="bar" data-id="{}" data-t="{t}" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{color}"/>"#,
                    s.id,
                    p.x(t as f64),
                    p.y(a.max(b)),
                    p.bar_w(),
                    (p.y(a.min(b)) - p.y(a.max(b))).abs()
                );
            }
        }
    }
}

fn limit_line(svg: &mut String, p: &Panel, kw: f64) {
    let _ = writeln!(
        svg,
        r##"<line class="limit" data-limit-kw="{kw}" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#000" stroke-dasharray="6 3"/>"##,
        p.x(0.0),
        p.y(kw),
        p.x(p.horizon as f64),
        p.y(kw)
    );
}

fn outline_polyline(svg: &mut String, p: &Panel, net: &[i64], dt: f64) {
    let mut pts = Vec::with_capacity(2 * net.len());
    for (t, &v) in net.iter().enumerate() {
        let y = p.y(v as f64 / 1e6 / dt);
        pts.push(format!("{:.3},{:.3}", p.x(t as f64), y));
        pts.push(format!("{:.3},{:.3}", p.x(t as f64 + 1.0), y));
    }
    let _ = writeln!(
        svg,
        r##"<polyline class="outline" points="{}" fill="none" stroke="#000" stroke-width="1.5"/>"##,
        pts.join(" ")
    );
}

fn soe_overlay(svg: &mut String, p: &Panel, soe: &[f64], capacity: f64) {
    // SOE is drawn on its own scale: 0 at the panel bottom, capacity at the top
    let pts: Vec<String> = soe
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let y = p.top + PANEL_H * (1.0 - s / capacity.max(f64::MIN_POSITIVE));
            format!("{:.3},{:.3}", p.x(t as f64 + 1.0), y)
        })
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline class="soe" points="{}" fill="none" stroke="#d62728" stroke-width="1.2"/>"##,
        pts.join(" ")
    );
}

fn document(panels: usize, body: &str) -> String {
    let height = MARGIN_T + panels as f64 * (PANEL_H + GAP);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn panel_at(i: usize, horizon: usize, range: (f64, f64)) -> Panel {
    Panel {
        top: MARGIN_T + i as f64 * (PANEL_H + GAP),
        horizon,
        lo: range.0,
        hi: range.1,
    }
}

/// Renders `view` of the schedule `rows` of `scenario`.
pub fn render(view: ChartView, scenario: &Scenario, rows: &[ScheduleRow]) -> String {
    let horizon = scenario.horizon();
    let dt = scenario.dt();
    let mut body = String::new();
    let panels = match view {
        ChartView::Ev => {
            let evs = by_ev(scenario, rows);
            for (i, (ev, s)) in scenario.evs.iter().zip(&evs).enumerate() {
                let single = std::slice::from_ref(s);
                let p = panel_at(i, horizon, power_range(single, &[ev.obc_limit], dt));
                open_panel(&mut body, &p, &ev.id);
                stacked_bars(&mut body, &p, single, dt);
                limit_line(&mut body, &p, ev.obc_limit);
                let mut soe = vec![0.0; horizon];
                for r in rows
                    .iter()
                    .filter(|r| r.entity_id == ev.id && r.t < horizon)
                {
                    soe[r.t] = r.soe_kwh;
                }
                soe_overlay(&mut body, &p, &soe, ev.capacity);
                body.push_str("</g>\n");
            }
            scenario.evs.len()
        }
        ChartView::Cs => {
            for (i, cs) in scenario.stations.iter().enumerate() {
                let contributions: Vec<Series> = by_ev(
                    scenario,
                    &rows
                        .iter()
                        .filter(|r| {
                            r.t < horizon && row_station(scenario, r) == Some(cs.id.as_str())
                        })
                        .cloned()
                        .collect::<Vec<_>>(),
                );
                let p = panel_at(
                    i,
                    horizon,
                    power_range(&contributions, &[cs.capacity()], dt),
                );
                open_panel(&mut body, &p, &cs.id);
                stacked_bars(&mut body, &p, &contributions, dt);
                limit_line(&mut body, &p, cs.capacity());
                body.push_str("</g>\n");
            }
            scenario.stations.len()
        }
        ChartView::Aggregate => {
            let groups = [
                ("by ev", by_ev(scenario, rows)),
                ("by station", by_station(scenario, rows)),
            ];
            // a shared scale keeps the two outlines on identical coordinates
            let (lo, hi) = groups
                .iter()
                .map(|(_, s)| power_range(s, &[], dt))
                .fold((0.0f64, 0.0f64), |(a, b), (c, d)| (a.min(c), b.max(d)));
            for (i, (title, series)) in groups.iter().enumerate() {
                let p = panel_at(i, horizon, (lo, hi));
                open_panel(&mut body, &p, title);
                stacked_bars(&mut body, &p, series, dt);
                let net = outline(series);
                let p0 = Panel { top: MARGIN_T, ..p };
                // outline coordinates are relative to the panel, so both
                // groupings print the same points
                let _ = writeln!(
                    body,
                    r#"<g transform="translate(0 {:.3})">"#,
                    p.top - MARGIN_T
                );
                outline_polyline(&mut body, &p0, &net, dt);
                body.push_str("</g>\n</g>\n");
            }
            2
        }
    };
    document(panels, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_illustrative;

    fn zero_rows(s: &Scenario) -> Vec<ScheduleRow> {
        s.evs
            .iter()
            .flat_map(|ev| {
                (0..s.horizon()).map(move |t| ScheduleRow {
                    entity_id: ev.id.clone(),
                    t,
                    e_sch_kwh: 0.0,
                    e_dch_kwh: 0.0,
                    e_fch_kwh: 0.0,
                    soe_kwh: ev.soe_init,
                    delivered_kwh: 0.0,
                    imbalance_kwh: 0.0,
                })
            })
            .collect()
    }

    #[test]
    fn empty_schedule_renders_flat() {
        let s = builtin_illustrative();
        let rows = zero_rows(&s);
        for view in [ChartView::Ev, ChartView::Cs, ChartView::Aggregate] {
            let svg = render(view, &s, &rows);
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(!svg.contains("class=\"bar\""));
        }
        let (a, b) = aggregate_outlines(&s, &rows);
        assert!(a.iter().chain(&b).all(|&v| v == 0));
    }

    #[test]
    fn micro_rounding() {
        assert_eq!(micro(1.0000004), 1_000_000);
        assert_eq!(micro(-0.0000006), -1);
    }
}
