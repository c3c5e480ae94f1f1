//! Procedural furniture built from boxes and cylinders.
//!
//! Every shape carries raw part labels and a fine-grained style set, so the
//! generated corpus can drive both training and the labeled benchmarks.
//! Three style families (`modern`, `classic`, `rustic`) change proportions,
//! leg profiles and back construction.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{RawComponent, RawShape};
use crate::mesh::TriangleMesh;
use crate::seed::rng_for;

pub const CATEGORIES: [&str; 2] = ["chair", "table"];
pub const STYLES: [&str; 3] = ["modern", "classic", "rustic"];

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub shapes_per_category: usize,
    pub categories: Vec<String>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            shapes_per_category: 200,
            categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Modern,
    Classic,
    Rustic,
}

impl Style {
    fn name(self) -> &'static str {
        STYLES[self as usize]
    }
}

struct Builder {
    parts: Vec<RawComponent>,
}

impl Builder {
    fn add(&mut self, id: impl Into<String>, label: &str, mesh: TriangleMesh) {
        self.parts.push(RawComponent {
            id: id.into(),
            mesh,
            label: Some(label.to_string()),
        });
    }
}

fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn pick_style(rng: &mut ChaCha8Rng) -> Style {
    match rng.random_range(0..3) {
        0 => Style::Modern,
        1 => Style::Classic,
        _ => Style::Rustic,
    }
}

/// Vertical post with its foot at `(x, y0, z)`, centered in x/z.
fn post(style: Style, x: f64, z: f64, y0: f64, height: f64, width: f64) -> TriangleMesh {
    match style {
        Style::Modern => TriangleMesh::cylinder([x, y0, z], 1, height, width / 2.0, 12),
        _ => TriangleMesh::cuboid(
            [x - width / 2.0, y0, z - width / 2.0],
            [x + width / 2.0, y0 + height, z + width / 2.0],
        ),
    }
}

fn leg_width(style: Style, rng: &mut ChaCha8Rng) -> f64 {
    match style {
        Style::Modern => range(rng, 0.05, 0.07),
        Style::Classic => range(rng, 0.07, 0.09),
        Style::Rustic => range(rng, 0.11, 0.14),
    }
}

fn chair(rng: &mut ChaCha8Rng, style: Style) -> (Vec<RawComponent>, BTreeSet<String>) {
    let mut b = Builder { parts: Vec::new() };
    let mut styles = BTreeSet::from([style.name().to_string()]);
    let w = range(rng, 0.8, 1.1);
    let d = range(rng, 0.75, 1.0);
    let t = match style {
        Style::Modern => range(rng, 0.09, 0.11),
        Style::Classic => range(rng, 0.12, 0.15),
        Style::Rustic => range(rng, 0.16, 0.2),
    };
    let h = range(rng, 0.8, 1.0);
    let seat_bottom = h - t;
    b.add("seat", "seat", TriangleMesh::cuboid([0.0, seat_bottom, 0.0], [w, h, d]));
    let lw = leg_width(style, rng);
    let inset = lw / 2.0 + range(rng, 0.0, 0.04);
    let corners = [
        (inset, inset),
        (w - inset, inset),
        (inset, d - inset),
        (w - inset, d - inset),
    ];
    for (k, &(x, z)) in corners.iter().enumerate() {
        b.add(format!("leg{k}"), "leg", post(style, x, z, 0.0, seat_bottom, lw));
    }
    if rng.random_bool(0.05) {
        // Modeling artifact: a second copy of one leg, slightly offset.
        let (x, z) = corners[0];
        b.add("leg0_copy", "leg", post(style, x + 0.005, z, 0.0, seat_bottom, lw));
    }
    if style != Style::Modern && rng.random_bool(0.5) {
        // Side stretchers joining front and back legs.
        let y = range(rng, 0.15, 0.3) * seat_bottom;
        let s = lw * 0.6;
        for (k, x) in [inset, w - inset].into_iter().enumerate() {
            b.add(
                format!("stretcher{k}"),
                "stretcher",
                TriangleMesh::cuboid([x - s / 2.0, y, inset], [x + s / 2.0, y + s, d - inset]),
            );
        }
    }

    let back_h = range(rng, 0.8, 1.1);
    let bt = match style {
        Style::Modern => range(rng, 0.035, 0.05),
        Style::Classic => range(rng, 0.05, 0.07),
        Style::Rustic => range(rng, 0.08, 0.1),
    };
    let back_top = h + back_h;
    if style == Style::Classic || (style == Style::Rustic && rng.random_bool(0.3)) {
        let n_slats = rng.random_range(3..6);
        let rail_h = range(rng, 0.12, 0.18);
        let slat_w = range(rng, 0.06, 0.1);
        let margin = range(rng, 0.05, 0.12);
        for k in 0..n_slats {
            let x = margin + (w - 2.0 * margin - slat_w) * k as f64 / (n_slats - 1) as f64;
            b.add(
                format!("slat{k}"),
                "back",
                TriangleMesh::cuboid([x, h, d - bt], [x + slat_w, back_top - rail_h, d]),
            );
        }
        b.add(
            "rail",
            "back",
            TriangleMesh::cuboid([0.0, back_top - rail_h, d - bt], [w, back_top, d]),
        );
        styles.insert("slatted".into());
    } else {
        b.add("back", "back", TriangleMesh::cuboid([0.0, h, d - bt], [w, back_top, d]));
    }
    if rng.random_bool(0.1) {
        let k = 0.06;
        let x = w / 2.0 - k / 2.0;
        b.add(
            "knob",
            "knob",
            TriangleMesh::cuboid(
                [x, back_top, d - bt / 2.0 - k / 2.0],
                [x + k, back_top + k, d - bt / 2.0 + k / 2.0],
            ),
        );
    }

    let arm_p = if style == Style::Rustic { 0.3 } else { 0.5 };
    if rng.random_bool(arm_p) {
        let arm_h = range(rng, 0.22, 0.3);
        let aw = range(rng, 0.05, 0.08);
        let front = range(rng, 0.05, 0.15);
        for (k, x) in [aw / 2.0, w - aw / 2.0].into_iter().enumerate() {
            let mut arm = post(style, x, front + aw / 2.0, h, arm_h, aw);
            arm.append(&TriangleMesh::cuboid(
                [x - aw / 2.0, h + arm_h, front],
                [x + aw / 2.0, h + arm_h + aw, d - bt],
            ));
            b.add(format!("arm{k}"), "arm", arm);
        }
        styles.insert("armchair".into());
    }
    (b.parts, styles)
}

fn table(rng: &mut ChaCha8Rng, style: Style) -> (Vec<RawComponent>, BTreeSet<String>) {
    let mut b = Builder { parts: Vec::new() };
    let mut styles = BTreeSet::from([style.name().to_string()]);
    let w = range(rng, 1.2, 2.0);
    let d = range(rng, 0.7, 1.1);
    let t = match style {
        Style::Modern => range(rng, 0.04, 0.06),
        Style::Classic => range(rng, 0.07, 0.09),
        Style::Rustic => range(rng, 0.1, 0.14),
    };
    let h = range(rng, 0.7, 0.95);
    let under = h - t;

    if rng.random_bool(0.03) {
        // Monolithic block: a single raw component.
        b.add("block", "top", TriangleMesh::cuboid([0.0, 0.0, 0.0], [w, h, d]));
        return (b.parts, styles);
    }

    let round = style == Style::Modern && rng.random_bool(0.4);
    if round {
        let r = d / 2.0;
        b.add("top", "top", TriangleMesh::cylinder([r, under, r], 1, t, r, 32));
        let col = range(rng, 0.08, 0.12);
        let base_t = range(rng, 0.04, 0.06);
        b.add(
            "column",
            "leg",
            TriangleMesh::cylinder([r, base_t, r], 1, under - base_t, col / 2.0, 16),
        );
        b.add(
            "foot",
            "base",
            TriangleMesh::cylinder([r, 0.0, r], 1, base_t, r * range(rng, 0.5, 0.7), 24),
        );
        styles.insert("pedestal".into());
        return (b.parts, styles);
    }

    b.add("top", "top", TriangleMesh::cuboid([0.0, under, 0.0], [w, h, d]));
    let lw = leg_width(style, rng) * 1.2;
    let inset = lw / 2.0 + range(rng, 0.02, 0.08);
    let corners = [
        (inset, inset),
        (w - inset, inset),
        (inset, d - inset),
        (w - inset, d - inset),
    ];
    for (k, &(x, z)) in corners.iter().enumerate() {
        b.add(format!("leg{k}"), "leg", post(style, x, z, 0.0, under, lw));
    }
    if style != Style::Modern && rng.random_bool(0.6) {
        let ah = range(rng, 0.1, 0.16);
        let at = 0.03;
        let (x0, x1, z0, z1) = (
            inset + lw / 2.0,
            w - inset - lw / 2.0,
            inset + lw / 2.0,
            d - inset - lw / 2.0,
        );
        let mut apron = TriangleMesh::cuboid([x0, under - ah, z0], [x1, under, z0 + at]);
        apron.append(&TriangleMesh::cuboid([x0, under - ah, z1 - at], [x1, under, z1]));
        apron.append(&TriangleMesh::cuboid(
            [x0, under - ah, z0 + at],
            [x0 + at, under, z1 - at],
        ));
        apron.append(&TriangleMesh::cuboid(
            [x1 - at, under - ah, z0 + at],
            [x1, under, z1 - at],
        ));
        b.add("apron", "apron", apron);
    }
    if rng.random_bool(0.4) {
        let y = range(rng, 0.15, 0.3) * under;
        let st = t * 0.6;
        b.add(
            "shelf",
            "shelf",
            TriangleMesh::cuboid([inset, y, inset], [w - inset, y + st, d - inset]),
        );
        styles.insert("shelved".into());
    }
    (b.parts, styles)
}

/// One shape of the given category; deterministic in `(seed, category, index)`.
pub fn generate_shape(category: &str, index: usize, seed: u64) -> RawShape {
    let shape_id = format!("{category}_{index:04}");
    let mut rng = rng_for(seed, &["corpus", &shape_id]);
    let style = pick_style(&mut rng);
    let (components, styles) = match category {
        "table" => table(&mut rng, style),
        _ => chair(&mut rng, style),
    };
    RawShape {
        shape_id,
        category: category.to_string(),
        components,
        fine_grained_labels: Some(styles),
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<RawShape> {
    cfg.categories
        .iter()
        .flat_map(|c| (0..cfg.shapes_per_category).map(move |i| generate_shape(c, i, cfg.seed)))
        .collect()
}
