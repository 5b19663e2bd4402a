use super::StimulusError;

/// 8-bit raster, row-major, `channels` bytes per pixel (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new_rgb(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(&fill);
        }
        Raster { width, height, channels: 3, data }
    }

    pub fn new_gray(width: u32, height: u32, fill: u8) -> Self {
        Raster { width, height, channels: 1, data: vec![fill; width as usize * height as usize] }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    /// Writes an RGB color; gray rasters store the channel mean.
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        if x >= self.width || y >= self.height {
            return;
        }
        let o = self.offset(x, y);
        if self.channels == 1 {
            self.data[o] = ((rgb[0] as u16 + rgb[1] as u16 + rgb[2] as u16) / 3) as u8;
        } else {
            self.data[o..o + 3].copy_from_slice(&rgb);
        }
    }

    pub fn is_color(&self, x: u32, y: u32, rgb: [u8; 3]) -> bool {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            p[0] == ((rgb[0] as u16 + rgb[1] as u16 + rgb[2] as u16) / 3) as u8
        } else {
            p == rgb
        }
    }

    /// Fills the inclusive rectangle, clipped to the raster.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let xa = x0.min(x1).max(0);
        let xb = x0.max(x1).min(self.width as i64 - 1);
        let ya = y0.min(y1).max(0);
        let yb = y0.max(y1).min(self.height as i64 - 1);
        for y in ya..=yb {
            for x in xa..=xb {
                self.put(x as u32, y as u32, rgb);
            }
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, StimulusError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(if self.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| StimulusError::Png(e.to_string()))?;
            w.write_image_data(&self.data).map_err(|e| StimulusError::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, StimulusError> {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| StimulusError::Png(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| StimulusError::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| StimulusError::Png(e.to_string()))?;
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(StimulusError::Png(format!("unsupported color type {other:?}"))),
        };
        buf.truncate(info.buffer_size());
        Ok(Raster { width: info.width, height: info.height, channels, data: buf })
    }
}
