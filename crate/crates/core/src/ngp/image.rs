use std::io::{BufRead, Write};

use super::{OracleError, QuantState, ToyNgpModel};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const RENDER_CHUNK: usize = 4096;

/// Row-major image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl RenderTarget {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, OracleError> {
        if pixels.len() != width * height * channels {
            return Err(OracleError::Dimension(format!(
                "{} values for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OracleError::Dimension(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Black and white squares of `cell` pixels, starting black at the origin.
    pub fn checkerboard(width: usize, height: usize, channels: usize, cell: usize) -> Self {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let v = ((x / cell + y / cell) % 2) as f64;
                pixels.extend(std::iter::repeat_n(v, channels));
            }
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Unit-square coordinate of the center of pixel `(x, y)`.
    pub fn pixel_center(&self, x: usize, y: usize) -> [f64; 2] {
        [
            (x as f64 + 0.5) / self.width as f64,
            (y as f64 + 0.5) / self.height as f64,
        ]
    }
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RenderTarget, b: &RenderTarget) -> Result<f64, OracleError> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(OracleError::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.pixels.len().max(1) as f64;
    Ok(mse_to_psnr(mse))
}

pub(crate) fn mse_to_psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

impl ToyNgpModel {
    /// Evaluates the model at every pixel center of a `width x height` grid.
    pub fn render(
        &self,
        quant: Option<&QuantState>,
        width: usize,
        height: usize,
    ) -> Result<RenderTarget, OracleError> {
        let channels = self.config().output_channels;
        let coords: Vec<[f64; 2]> = (0..height)
            .flat_map(|y| {
                (0..width).map(move |x| {
                    [
                        (x as f64 + 0.5) / width as f64,
                        (y as f64 + 0.5) / height as f64,
                    ]
                })
            })
            .collect();
        let mut pixels = Vec::with_capacity(coords.len() * channels);
        for chunk in coords.chunks(RENDER_CHUNK) {
            let out = self.forward_batch(chunk, quant)?;
            pixels.extend(out.iter().copied());
        }
        Ok(RenderTarget {
            width,
            height,
            channels,
            pixels,
        })
    }
}

fn format_err(detail: impl Into<String>) -> OracleError {
    OracleError::Format {
        what: "PPM image",
        detail: detail.into(),
    }
}

/// Writes a binary (P6) 8-bit PPM. Images with other than 3 channels are
/// rejected.
pub fn write_ppm<W: Write>(image: &RenderTarget, mut w: W) -> Result<(), OracleError> {
    if image.channels != 3 {
        return Err(format_err(format!(
            "PPM needs 3 channels, image has {}",
            image.channels
        )));
    }
    write!(w, "P6\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String, OracleError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(format_err("truncated header"));
    }
    Ok(tok)
}

pub fn read_ppm<R: BufRead>(mut r: R) -> Result<RenderTarget, OracleError> {
    if header_token(&mut r)? != "P6" {
        return Err(format_err("expected P6 magic"));
    }
    let mut num = || -> Result<usize, OracleError> {
        let t = header_token(&mut r)?;
        t.parse()
            .map_err(|_| format_err(format!("bad header field {t:?}")))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(format_err(format!(
            "only 8-bit PPM is supported, maxval {maxval}"
        )));
    }
    let mut bytes = vec![0u8; width * height * 3];
    r.read_exact(&mut bytes)
        .map_err(|e| format_err(format!("pixel data: {e}")))?;
    let pixels = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(RenderTarget {
        width,
        height,
        channels: 3,
        pixels,
    })
}
