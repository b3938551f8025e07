//! Scene overlay export: past in gray, ground truth in blue, samples in red.

use lbebm::dataio::TrajectoryScene;
use lbebm::Matrix;

const W: f64 = 800.0;
const H: f64 = 800.0;
const PAD: f64 = 40.0;

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Frame {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in points {
            min_x = min_x.min(p[0]);
            max_x = max_x.max(p[0]);
            min_y = min_y.min(p[1]);
            max_y = max_y.max(p[1]);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        Frame {
            min_x,
            min_y,
            scale: (W - 2.0 * PAD) / span,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            PAD + (p[0] - self.min_x) * self.scale,
            // flip y so "up" in the data is up on screen
            H - PAD - (p[1] - self.min_y) * self.scale,
        )
    }
}

fn polyline(frame: &Frame, pts: &[[f64; 2]], color: &str, width: f64) -> String {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-linecap=\"round\"/>\n",
        coords.join(" ")
    )
}

fn row_points(row: &[f64]) -> Vec<[f64; 2]> {
    (0..row.len() / 2).map(|t| [row[2 * t], row[2 * t + 1]]).collect()
}

/// Render one scene (dataset units) with its predicted samples.
pub fn render_scene(scene: &TrajectoryScene, samples: &[Matrix]) -> String {
    let n = scene.n_agents();
    let all_points = (0..n)
        .flat_map(|a| (0..scene.t_past).map(move |t| scene.past_pos(a, t)))
        .chain((0..n).flat_map(|a| (0..scene.t_pred).map(move |t| scene.future_pos(a, t))))
        .chain(samples.iter().flat_map(|s| {
            (0..s.rows).flat_map(move |a| row_points(s.row(a)).into_iter())
        }));
    let frame = Frame::fit(all_points);

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    for s in samples {
        for a in 0..s.rows {
            // prediction polylines start from the agent's last observed point
            let mut pts = vec![scene.past_pos(a, scene.t_past - 1)];
            pts.extend(row_points(s.row(a)));
            svg.push_str(&polyline(&frame, &pts, "#d62728", 1.2));
        }
    }
    for a in 0..n {
        let past: Vec<[f64; 2]> = (0..scene.t_past).map(|t| scene.past_pos(a, t)).collect();
        svg.push_str(&polyline(&frame, &past, "#c8c8c8", 2.5));
        let mut truth = vec![scene.past_pos(a, scene.t_past - 1)];
        truth.extend((0..scene.t_pred).map(|t| scene.future_pos(a, t)));
        svg.push_str(&polyline(&frame, &truth, "#1f77b4", 2.0));
    }
    svg.push_str("</svg>\n");
    svg
}
