use super::{Raster, RenderConfig, Stimulus, StimulusError, TaskKind};
use rand::Rng;

const MARKER_HALF_HEIGHT: i64 = 12;
const LINE_MARGIN: u32 = 32;

/// Column of the marker for a position in `[0, 1]` on a line of `cells` cells.
fn marker_index(value: f64, cells: usize) -> usize {
    (value * (cells as f64 - 1.0)).round() as usize
}

pub fn gen_marker(value: f64, cfg: &RenderConfig) -> Result<Stimulus, StimulusError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(StimulusError::Domain(format!("marker position {value} not in [0, 1]")));
    }
    cfg.validate()?;
    let col = marker_index(value, cfg.ascii_width);
    let mut ascii = String::with_capacity(cfg.ascii_width + 2);
    ascii.push('|');
    for i in 0..cfg.ascii_width {
        ascii.push(if i == col { cfg.marker_glyph } else { cfg.fill_glyph });
    }
    ascii.push('|');

    let (w, h) = (cfg.image_width, cfg.image_height);
    let mut img = Raster::new_rgb(w, h, cfg.background);
    let mid = (h / 2) as i64;
    let half = (cfg.line_thickness / 2) as i64;
    img.fill_rect(0, mid - half, w as i64 - 1, mid + half, cfg.line_color);
    let x = marker_index(value, w as usize) as i64;
    img.fill_rect(x, mid - MARKER_HALF_HEIGHT, x, mid + MARKER_HALF_HEIGHT, cfg.marker_color);

    Ok(Stimulus {
        task: TaskKind::MarkerLocation,
        true_value: value,
        ascii: Some(ascii),
        image: Some(img),
        maze_path: None,
        transcript: None,
    })
}

pub fn decode_marker_ascii(ascii: &str, marker: char) -> Option<f64> {
    let interior: Vec<char> = ascii.trim().trim_matches('|').chars().collect();
    let col = interior.iter().position(|&c| c == marker)?;
    Some(col as f64 / (interior.len() as f64 - 1.0))
}

pub fn decode_marker_image(img: &Raster, marker_color: [u8; 3]) -> Option<f64> {
    let y = img.height / 2 - MARKER_HALF_HEIGHT as u32;
    (0..img.width).find(|&x| img.is_color(x, y, marker_color)).map(|x| x as f64 / (img.width as f64 - 1.0))
}

/// Two stacked lines whose length ratio (shorter / longer) is `ratio`.
/// Which line is the longer one is drawn from `rng`.
pub fn gen_line_ratio<R: Rng + ?Sized>(ratio: f64, cfg: &RenderConfig, rng: &mut R) -> Result<Stimulus, StimulusError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(StimulusError::Domain(format!("line ratio {ratio} not in (0, 1]")));
    }
    cfg.validate()?;
    let top_is_longer = rng.random_bool(0.5);

    let long_cols = cfg.ascii_width - 1;
    let short_cols = (ratio * long_cols as f64).round() as usize;
    let (top, bottom) = if top_is_longer { (long_cols, short_cols) } else { (short_cols, long_cols) };
    let row = |len: usize, rng: &mut R| {
        let mut s = String::with_capacity(cfg.ascii_width + 2);
        s.push('|');
        for i in 0..cfg.ascii_width {
            let c = if i < len {
                if cfg.artifact_glyphs && rng.random_bool(0.15) {
                    '='
                } else {
                    cfg.fill_glyph
                }
            } else {
                ' '
            };
            s.push(c);
        }
        s.push('|');
        s
    };
    let ascii = format!("{}\n{}", row(top, rng), row(bottom, rng));

    let (w, h) = (cfg.image_width, cfg.image_height);
    let long_px = w - 2 * LINE_MARGIN;
    let short_px = (ratio * long_px as f64).round() as u32;
    let (top_px, bottom_px) = if top_is_longer { (long_px, short_px) } else { (short_px, long_px) };
    let mut img = Raster::new_rgb(w, h, cfg.background);
    let half = (cfg.line_thickness / 2) as i64;
    for (len, y) in [(top_px, h / 3), (bottom_px, 2 * h / 3)] {
        if len > 0 {
            let x0 = LINE_MARGIN as i64;
            img.fill_rect(x0, y as i64 - half, x0 + len as i64 - 1, y as i64 + half, cfg.line_color);
        }
    }

    Ok(Stimulus {
        task: TaskKind::LineRatio,
        true_value: ratio,
        ascii: Some(ascii),
        image: Some(img),
        maze_path: None,
        transcript: None,
    })
}

pub fn decode_line_ratio_ascii(ascii: &str) -> Option<f64> {
    let lens: Vec<usize> =
        ascii.lines().map(|l| l.trim_matches('|').chars().filter(|c| !c.is_whitespace()).count()).collect();
    if lens.len() != 2 {
        return None;
    }
    let (a, b) = (lens[0].min(lens[1]), lens[0].max(lens[1]));
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn decode_line_ratio_image(img: &Raster, line_color: [u8; 3]) -> Option<f64> {
    let run = |y: u32| (0..img.width).filter(|&x| img.is_color(x, y, line_color)).count();
    let a = run(img.height / 3);
    let b = run(2 * img.height / 3);
    let (s, l) = (a.min(b), a.max(b));
    (l > 0).then(|| s as f64 / l as f64)
}
