//! Multi-view grid and view-image data types, tiling layout, value
//! conventions, and lossless 8-bit PNG I/O.
//!
//! A [`MvGrid`] is a 3-row x 2-column mosaic of six equally sized RGB tiles,
//! stored as one row-major, channel-interleaved `f64` buffer. Tile `k` sits at
//! grid block `(row, col) = (k / 2, k % 2)`, i.e. `k = 2*row + col`.
//!
//! Clean images live in `[-1, +1]`; buffers that pass through the noising
//! process (noised grids, noised condition views, velocities) may leave that
//! range and are only required to stay finite. File I/O quantizes to 8-bit
//! with `byte = round((v + 1) * 127.5)` clamped to `[0, 255]` and reads back
//! with `v = byte / 127.5 - 1`.

use crate::error::{Error, Result};
use std::path::Path;

/// Grid layout: three rows of tiles.
pub const GRID_ROWS: usize = 3;
/// Grid layout: two columns of tiles.
pub const GRID_COLS: usize = 2;
/// Number of tiles in a grid.
pub const TILE_COUNT: usize = GRID_ROWS * GRID_COLS;
/// RGB.
pub const CHANNELS: usize = 3;
/// Smallest supported tile edge, in pixels.
pub const MIN_TILE: usize = 8;

fn check_finite(values: &[f64], context: &'static str) -> Result<()> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::OutOfRange {
            context,
            detail: format!("non-finite value {bad}"),
        });
    }
    Ok(())
}

fn check_len(len: usize, w: usize, h: usize, context: &'static str) -> Result<()> {
    let expected = w * h * CHANNELS;
    if len != expected {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{expected} values for {w}x{h}x{CHANNELS}"),
            actual: format!("{len} values"),
        });
    }
    Ok(())
}

fn check_min_size(w: usize, h: usize, context: &'static str) -> Result<()> {
    if w < MIN_TILE || h < MIN_TILE {
        return Err(Error::OutOfRange {
            context,
            detail: format!("dimensions {w}x{h} below the {MIN_TILE}-pixel minimum"),
        });
    }
    Ok(())
}

/// Common access to the pixel buffers of [`ViewImage`], [`MvGrid`] and
/// [`GridNoise`], so elementwise operations (noising, arithmetic) can be
/// written once.
pub trait Raster: Sized {
    fn pixel_width(&self) -> usize;
    fn pixel_height(&self) -> usize;
    /// Row-major, channel-interleaved values.
    fn values(&self) -> &[f64];
    /// A raster of the same shape holding `values`. The caller is responsible
    /// for the values being finite; range restrictions do not apply because
    /// derived buffers (noised images, velocities) legitimately leave
    /// `[-1, 1]`.
    fn with_values(&self, values: Vec<f64>) -> Self;

    fn element_count(&self) -> usize {
        self.pixel_width() * self.pixel_height() * CHANNELS
    }
    fn same_shape<R: Raster>(&self, other: &R) -> bool {
        self.pixel_width() == other.pixel_width() && self.pixel_height() == other.pixel_height()
    }
    fn shape_string(&self) -> String {
        format!("{}x{}", self.pixel_width(), self.pixel_height())
    }
}

/// A single view: one conditioning image or one grid tile.
///
/// Construct clean views (renders, file reads, user inputs) with
/// [`ViewImage::new`], which enforces the `[-1, +1]` display range; noise-space
/// intermediates use [`ViewImage::from_values`], which only requires finite
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ViewImage {
    /// A clean view with all values validated to be finite and in `[-1, +1]`.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_min_size(width, height, "ViewImage::new")?;
        check_len(values.len(), width, height, "ViewImage::new")?;
        check_finite(&values, "ViewImage::new")?;
        if let Some(bad) = values.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::OutOfRange {
                context: "ViewImage::new",
                detail: format!("value {bad} outside [-1, 1]"),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// A view that may hold values outside the display range (noised
    /// conditions, velocity tiles). Values must still be finite.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_min_size(width, height, "ViewImage::from_values")?;
        check_len(values.len(), width, height, "ViewImage::from_values")?;
        check_finite(&values, "ViewImage::from_values")?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// The all-zero view of the given size (the null condition for guidance).
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height * CHANNELS])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    /// Channel `c` of pixel `(x, y)`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * CHANNELS + c]
    }
}

impl Raster for ViewImage {
    fn pixel_width(&self) -> usize {
        self.width
    }
    fn pixel_height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

/// The six-view mosaic: 3 rows x 2 columns of equally sized tiles, one flat
/// row-major RGB buffer. Values are finite but otherwise unconstrained, since
/// grids hold clean images, noised states, and velocities alike.
#[derive(Debug, Clone, PartialEq)]
pub struct MvGrid {
    tile_width: usize,
    tile_height: usize,
    values: Vec<f64>,
}

impl MvGrid {
    pub fn from_values(tile_width: usize, tile_height: usize, values: Vec<f64>) -> Result<Self> {
        check_min_size(tile_width, tile_height, "MvGrid::from_values")?;
        check_len(
            values.len(),
            tile_width * GRID_COLS,
            tile_height * GRID_ROWS,
            "MvGrid::from_values",
        )?;
        check_finite(&values, "MvGrid::from_values")?;
        Ok(Self {
            tile_width,
            tile_height,
            values,
        })
    }

    pub fn zeros(tile_width: usize, tile_height: usize) -> Result<Self> {
        let len = tile_width * GRID_COLS * tile_height * GRID_ROWS * CHANNELS;
        Self::from_values(tile_width, tile_height, vec![0.0; len])
    }

    pub fn tile_width(&self) -> usize {
        self.tile_width
    }
    pub fn tile_height(&self) -> usize {
        self.tile_height
    }
    /// Full-grid width in pixels (2 tiles across).
    pub fn width(&self) -> usize {
        self.tile_width * GRID_COLS
    }
    /// Full-grid height in pixels (3 tiles down).
    pub fn height(&self) -> usize {
        self.tile_height * GRID_ROWS
    }

    /// Channel `c` of global pixel `(x, y)`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width() + x) * CHANNELS + c]
    }

    /// Which tile index covers global pixel `(x, y)`, plus the local pixel
    /// coordinates within that tile.
    pub fn locate(&self, x: usize, y: usize) -> (usize, usize, usize) {
        let row = y / self.tile_height;
        let col = x / self.tile_width;
        (GRID_COLS * row + col, x % self.tile_width, y % self.tile_height)
    }
}

impl Raster for MvGrid {
    fn pixel_width(&self) -> usize {
        self.width()
    }
    fn pixel_height(&self) -> usize {
        self.height()
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            tile_width: self.tile_width,
            tile_height: self.tile_height,
            values,
        }
    }
}

/// An i.i.d. standard-normal draw shaped like the raster it will be combined
/// with (a full grid or a single view).
#[derive(Debug, Clone, PartialEq)]
pub struct GridNoise {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GridNoise {
    /// Draw fresh standard-normal noise of the given pixel shape.
    pub fn sample<R: rand::Rng>(rng: &mut R, width: usize, height: usize) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let values = (0..width * height * CHANNELS)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    /// Noise shaped like `raster`.
    pub fn sample_like<R: rand::Rng, T: Raster>(rng: &mut R, raster: &T) -> Self {
        Self::sample(rng, raster.pixel_width(), raster.pixel_height())
    }

    /// Wrap explicit values (deterministic tests).
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_len(values.len(), width, height, "GridNoise::from_values")?;
        check_finite(&values, "GridNoise::from_values")?;
        Ok(Self {
            width,
            height,
            values,
        })
    }
}

impl Raster for GridNoise {
    fn pixel_width(&self) -> usize {
        self.width
    }
    fn pixel_height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

/// Mosaic six equally sized tiles into a grid: tile `k` lands at block
/// `(k / 2, k % 2)`.
pub fn assemble(tiles: &[ViewImage]) -> Result<MvGrid> {
    if tiles.len() != TILE_COUNT {
        return Err(Error::ShapeMismatch {
            context: "assemble",
            expected: format!("{TILE_COUNT} tiles"),
            actual: format!("{} tiles", tiles.len()),
        });
    }
    let (tw, th) = (tiles[0].width(), tiles[0].height());
    for (k, tile) in tiles.iter().enumerate() {
        if tile.width() != tw || tile.height() != th {
            return Err(Error::ShapeMismatch {
                context: "assemble",
                expected: format!("{tw}x{th} (tile 0)"),
                actual: format!("{}x{} (tile {k})", tile.width(), tile.height()),
            });
        }
    }
    let grid_w = tw * GRID_COLS;
    let mut values = vec![0.0; grid_w * th * GRID_ROWS * CHANNELS];
    for (k, tile) in tiles.iter().enumerate() {
        let (row, col) = (k / GRID_COLS, k % GRID_COLS);
        for ly in 0..th {
            let src_start = ly * tw * CHANNELS;
            let dst_start = ((row * th + ly) * grid_w + col * tw) * CHANNELS;
            values[dst_start..dst_start + tw * CHANNELS]
                .copy_from_slice(&tile.values()[src_start..src_start + tw * CHANNELS]);
        }
    }
    MvGrid::from_values(tw, th, values)
}

/// Cut a grid back into its six tiles; exact inverse of [`assemble`].
pub fn split(grid: &MvGrid) -> Vec<ViewImage> {
    let (tw, th) = (grid.tile_width(), grid.tile_height());
    let grid_w = grid.width();
    (0..TILE_COUNT)
        .map(|k| {
            let (row, col) = (k / GRID_COLS, k % GRID_COLS);
            let mut values = Vec::with_capacity(tw * th * CHANNELS);
            for ly in 0..th {
                let start = ((row * th + ly) * grid_w + col * tw) * CHANNELS;
                values.extend_from_slice(&grid.values()[start..start + tw * CHANNELS]);
            }
            ViewImage::from_values(tw, th, values)
                .expect("tile carved from a valid grid is valid")
        })
        .collect()
}

/// `[-1, 1]` value to its 8-bit code: `round((v + 1) * 127.5)` clamped.
pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// 8-bit code back to `[-1, 1]`: `p / 127.5 - 1`.
pub fn dequantize(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&p| dequantize(p)).collect()
}

fn write_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    image::save_buffer_with_format(
        path,
        &to_bytes(values),
        width as u32,
        height as u32,
        image::ColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, from_bytes(img.as_raw())))
}

/// Write a view as an 8-bit RGB PNG (values clamped to `[-1, 1]` on the way
/// out by the quantizer).
pub fn write_view_png(img: &ViewImage, path: impl AsRef<Path>) -> Result<()> {
    write_png(path.as_ref(), img.width(), img.height(), img.values())
}

/// Read a view back; values land exactly on quantization lattice points in
/// `[-1, 1]`.
pub fn read_view_png(path: impl AsRef<Path>) -> Result<ViewImage> {
    let (w, h, values) = read_png(path.as_ref())?;
    ViewImage::new(w, h, values)
}

/// Write a full grid as one 8-bit RGB PNG.
pub fn write_grid_png(grid: &MvGrid, path: impl AsRef<Path>) -> Result<()> {
    write_png(path.as_ref(), grid.width(), grid.height(), grid.values())
}

/// Read a grid back, inferring the tile size from the 3x2 layout.
pub fn read_grid_png(path: impl AsRef<Path>) -> Result<MvGrid> {
    let path = path.as_ref();
    let (w, h, values) = read_png(path)?;
    if w % GRID_COLS != 0 || h % GRID_ROWS != 0 {
        return Err(Error::ShapeMismatch {
            context: "read_grid_png",
            expected: format!("width divisible by {GRID_COLS} and height by {GRID_ROWS}"),
            actual: format!("{w}x{h} ({path:?})"),
        });
    }
    MvGrid::from_values(w / GRID_COLS, h / GRID_ROWS, values)
}
