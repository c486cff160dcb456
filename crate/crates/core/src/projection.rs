//! Spherical projection between point clouds and range images.
//!
//! Rows index elevation bins from the top of the field of view downwards,
//! columns index azimuth bins over `[-pi, pi)`. Ranges are stored as `f32`;
//! projection math runs in `f64`, which makes `project(back_project(r)) == r`
//! hold exactly because a bin-center point re-projects to within a few `f64`
//! ulps of the stored `f32` range.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::pointcloud::{Point, PointCloud};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub rows: usize,
    pub cols: usize,
    /// Radians.
    pub elevation_min: f64,
    /// Radians.
    pub elevation_max: f64,
    /// Peak range `d_m` in meters; farther returns are dropped.
    pub range_max: f64,
    /// Optional per-row center elevations (radians, strictly descending).
    /// Row boundaries sit halfway between neighbouring centers; the outer
    /// boundaries are `elevation_max` and `elevation_min`.
    pub row_elevations: Option<Vec<f64>>,
}

impl Default for ProjectionParams {
    /// 64 x 2048 grid over [-24.8 deg, +2.0 deg], 120 m peak range.
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 2048,
            elevation_min: (-24.8f64).to_radians(),
            elevation_max: 2.0f64.to_radians(),
            range_max: 120.0,
            row_elevations: None,
        }
    }
}

impl ProjectionParams {
    pub fn new(rows: usize, cols: usize, elev_min_deg: f64, elev_max_deg: f64, range_max: f64) -> Result<Self> {
        let p = Self {
            rows,
            cols,
            elevation_min: elev_min_deg.to_radians(),
            elevation_max: elev_max_deg.to_radians(),
            range_max,
            row_elevations: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParams("rows and cols must be >= 1".into()));
        }
        if !(self.elevation_min < self.elevation_max) {
            return Err(Error::InvalidParams("elevation_min must be below elevation_max".into()));
        }
        if !(self.range_max > 0.0 && self.range_max.is_finite()) {
            return Err(Error::InvalidParams("range_max must be positive and finite".into()));
        }
        if let Some(table) = &self.row_elevations {
            if table.len() != self.rows {
                return Err(Error::InvalidParams(format!(
                    "row table has {} entries for {} rows",
                    table.len(),
                    self.rows
                )));
            }
            if table.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(Error::InvalidParams("row elevations must be strictly descending".into()));
            }
            if table[0] > self.elevation_max || table[self.rows - 1] < self.elevation_min {
                return Err(Error::InvalidParams("row elevations outside the field of view".into()));
            }
        }
        Ok(())
    }

    /// Parses the `key = value` projection config. Recognised keys: `rows`,
    /// `cols`, `elev_min_deg`, `elev_max_deg`, `range_max_m` and the optional
    /// comma-separated `row_elevations_deg` (top row first).
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad number `{v}`", lineno + 1)))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("line {}: bad integer `{v}`", lineno + 1)))
            };
            match key {
                "rows" => p.rows = int(value)?,
                "cols" => p.cols = int(value)?,
                "elev_min_deg" => p.elevation_min = num(value)?.to_radians(),
                "elev_max_deg" => p.elevation_max = num(value)?.to_radians(),
                "range_max_m" => p.range_max = num(value)?,
                "row_elevations_deg" => {
                    let table = value
                        .split(',')
                        .map(|t| num(t.trim()).map(f64::to_radians))
                        .collect::<Result<Vec<_>>>()?;
                    p.row_elevations = Some(table);
                }
                // Codec keys share the file; they are read elsewhere.
                _ => {}
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    fn row_height(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.rows as f64
    }

    fn azimuth_width(&self) -> f64 {
        2.0 * PI / self.cols as f64
    }

    /// Row index of an elevation, or `None` outside the field of view.
    pub fn row_of(&self, elevation: f64) -> Option<usize> {
        if !(elevation >= self.elevation_min && elevation <= self.elevation_max) {
            return None;
        }
        match &self.row_elevations {
            None => {
                let t = (self.elevation_max - elevation) / self.row_height();
                Some((t.floor() as usize).min(self.rows - 1))
            }
            Some(table) => {
                // Walk down until the row's lower boundary is at or below `elevation`.
                let mut r = 0;
                while r + 1 < table.len() && 0.5 * (table[r] + table[r + 1]) > elevation {
                    r += 1;
                }
                Some(r)
            }
        }
    }

    pub fn row_center(&self, row: usize) -> f64 {
        match &self.row_elevations {
            None => self.elevation_max - (row as f64 + 0.5) * self.row_height(),
            Some(table) => table[row],
        }
    }

    pub fn col_of(&self, azimuth: f64) -> usize {
        let t = ((azimuth + PI) / self.azimuth_width()).floor() as i64;
        t.rem_euclid(self.cols as i64) as usize
    }

    pub fn col_center(&self, col: usize) -> f64 {
        -PI + (col as f64 + 0.5) * self.azimuth_width()
    }

    /// Half the angular diagonal of one bin, radians: the largest angle
    /// between a direction inside a bin and its center direction.
    pub fn bin_half_angle(&self) -> f64 {
        let dh = match &self.row_elevations {
            None => self.row_height(),
            Some(t) => {
                let mut m = (self.elevation_max - t[0]).max(t[t.len() - 1] - self.elevation_min) * 2.0;
                for w in t.windows(2) {
                    m = m.max(w[0] - w[1]);
                }
                m
            }
        };
        0.5 * (dh * dh + self.azimuth_width().powi(2)).sqrt()
    }
}

/// Occupancy grid of a range image, row-major.
pub type Mask = Vec<bool>;

#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    /// Row-major ranges in meters; 0 where the mask is false.
    pub values: Vec<f32>,
    pub mask: Mask,
    pub params: ProjectionParams,
}

impl RangeImage {
    pub fn empty(params: ProjectionParams) -> Self {
        let n = params.pixel_count();
        Self {
            values: vec![0.0; n],
            mask: vec![false; n],
            params,
        }
    }

    pub fn rows(&self) -> usize {
        self.params.rows
    }

    pub fn cols(&self) -> usize {
        self.params.cols
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.params.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let i = self.index(row, col);
        self.mask[i].then(|| self.values[i])
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        let i = self.index(row, col);
        self.values[i] = value;
        self.mask[i] = true;
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Checks the mask/value invariants.
    pub fn is_valid(&self) -> bool {
        let dm = self.params.range_max;
        self.values.len() == self.params.pixel_count()
            && self.mask.len() == self.values.len()
            && self.values.iter().zip(&self.mask).all(|(&v, &m)| {
                if m {
                    v > 0.0 && (v as f64) <= dm
                } else {
                    v == 0.0
                }
            })
    }
}

/// Projection output with the number of points that were dropped (outside
/// the field of view, beyond `range_max`, zero range, or losing a pixel
/// collision).
#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    pub image: RangeImage,
    pub out_of_bounds: usize,
    pub collisions: usize,
}

fn direction(elevation: f64, azimuth: f64) -> Point {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [ce * ca, ce * sa, se]
}

/// Bins a single point; `None` when it falls outside the image.
pub fn pixel_of(p: &Point, params: &ProjectionParams) -> Option<(usize, usize, f32)> {
    let [x, y, z] = *p;
    let range = (x * x + y * y + z * z).sqrt();
    let value = range as f32;
    if !(value > 0.0) || value as f64 > params.range_max {
        return None;
    }
    let elevation = z.atan2((x * x + y * y).sqrt());
    let row = params.row_of(elevation)?;
    let col = params.col_of(y.atan2(x));
    Some((row, col, value))
}

pub fn project(cloud: &PointCloud, params: &ProjectionParams) -> Projected {
    let mut image = RangeImage::empty(params.clone());
    let mut out_of_bounds = 0;
    let mut collisions = 0;
    for p in &cloud.points {
        let Some((row, col, value)) = pixel_of(p, params) else {
            out_of_bounds += 1;
            continue;
        };
        let i = image.index(row, col);
        if image.mask[i] {
            collisions += 1;
            if value < image.values[i] {
                image.values[i] = value;
            }
        } else {
            image.values[i] = value;
            image.mask[i] = true;
        }
    }
    Projected {
        image,
        out_of_bounds,
        collisions,
    }
}

/// One point per occupied pixel, placed on the bin-center ray.
pub fn back_project(image: &RangeImage) -> PointCloud {
    let params = &image.params;
    let azimuths: Vec<Point> = (0..params.cols).map(|c| direction(0.0, params.col_center(c))).collect();
    let mut points = Vec::with_capacity(image.occupied());
    for row in 0..params.rows {
        let (se, ce) = params.row_center(row).sin_cos();
        for (col, az) in azimuths.iter().enumerate() {
            let i = image.index(row, col);
            if image.mask[i] {
                let d = image.values[i] as f64;
                points.push([d * ce * az[0], d * ce * az[1], d * se]);
            }
        }
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> ProjectionParams {
        ProjectionParams::new(16, 64, -20.0, 4.0, 100.0).unwrap()
    }

    #[test]
    fn axis_aligned_point() {
        let params = ProjectionParams::default();
        let img = project(&PointCloud::new(vec![[12.5, 0.0, 0.0]]), &params).image;
        assert_eq!(img.occupied(), 1);
        let row = params.row_of(0.0).unwrap();
        let col = params.col_of(0.0);
        assert_eq!(col, params.cols / 2);
        assert_eq!(img.get(row, col), Some(12.5));
    }

    #[test]
    fn nearest_wins() {
        let params = small();
        let cloud = PointCloud::new(vec![[7.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let out = project(&cloud, &params);
        assert_eq!(out.image.occupied(), 1);
        assert_eq!(out.collisions, 1);
        assert!(out.image.values.contains(&5.0));
    }

    #[test]
    fn empty_cloud() {
        let img = project(&PointCloud::default(), &small()).image;
        assert!(img.mask.iter().all(|m| !m));
        assert!(img.values.iter().all(|&v| v == 0.0));
        assert!(back_project(&img).is_empty());
    }

    #[test]
    fn drops_out_of_bounds() {
        let params = small();
        let cloud = PointCloud::new(vec![[150.0, 0.0, 0.0], [1.0, 0.0, 5.0], [0.0, 0.0, 0.0]]);
        let out = project(&cloud, &params);
        assert_eq!(out.image.occupied(), 0);
        assert_eq!(out.out_of_bounds, 3);
    }

    #[test]
    fn single_pixel_back_projection() {
        let params = small();
        let mut img = RangeImage::empty(params.clone());
        img.set(3, 10, 20.0);
        let cloud = back_project(&img);
        let u = direction(params.row_center(3), params.col_center(10));
        assert_eq!(cloud.len(), 1);
        for k in 0..3 {
            assert!((cloud.points[0][k] - 20.0 * u[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn azimuth_wraps() {
        let params = small();
        assert_eq!(params.col_of(PI), 0);
        assert_eq!(params.col_of(-PI), 0);
        assert_eq!(params.col_of(PI - 1e-9), params.cols - 1);
    }

    #[test]
    fn row_table_lookup() {
        let mut params = small();
        params.rows = 3;
        params.row_elevations = Some(vec![0.05, 0.0, -0.2]);
        params.validate().unwrap();
        assert_eq!(params.row_of(0.06), Some(0));
        assert_eq!(params.row_of(0.01), Some(1));
        assert_eq!(params.row_of(-0.09), Some(1));
        assert_eq!(params.row_of(-0.11), Some(2));
        assert_eq!(params.row_of(-0.5), None);
    }

    #[test]
    fn config_parsing() {
        let p = ProjectionParams::from_config_str(
            "# sensor\nrows = 32\ncols=1024\nelev_min_deg = -30\nelev_max_deg = 10\nrange_max_m = 80\nq = 0.1\n",
        )
        .unwrap();
        assert_eq!((p.rows, p.cols), (32, 1024));
        assert!((p.range_max - 80.0).abs() < 1e-12);
        assert!(ProjectionParams::from_config_str("rows = 0").is_err());
        assert!(ProjectionParams::from_config_str("rows").is_err());
    }

    #[test]
    fn round_trip_within_bin_quantization() {
        let params = ProjectionParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        while pts.len() < 1000 {
            let d: f64 = rng.gen_range(1.0..100.0);
            let el: f64 = rng.gen_range(params.elevation_min..params.elevation_max);
            let az: f64 = rng.gen_range(-PI..PI);
            let u = direction(el, az);
            pts.push([(d * u[0]) as f32 as f64, (d * u[1]) as f32 as f64, (d * u[2]) as f32 as f64]);
        }
        let cloud = PointCloud::new(pts);
        let img = project(&cloud, &params).image;
        let half = params.bin_half_angle();
        // Brute force: every surviving pixel must sit within d * half-angle
        // of the original point that produced it.
        let back = back_project(&img);
        for q in &back.points {
            let (r, c, v) = pixel_of(q, &params).unwrap();
            let best = cloud
                .points
                .iter()
                .filter(|p| pixel_of(p, &params).map(|(pr, pc, _)| (pr, pc)) == Some((r, c)))
                .map(|p| {
                    let e = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best <= (v as f64) * half + 1e-5, "err {best}");
        }
    }

    #[test]
    fn idempotent_on_random_images() {
        let params = small();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut img = RangeImage::empty(params.clone());
            for i in 0..params.pixel_count() {
                if rng.gen_bool(0.7) {
                    img.values[i] = rng.gen_range(0.01f32..100.0);
                    img.mask[i] = true;
                }
            }
            let again = project(&back_project(&img), &params).image;
            assert_eq!(again, img);
        }
    }

    #[test]
    fn occupancy_bounded_and_points_in_range() {
        let params = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..500)
            .map(|_| [rng.gen_range(-120.0..120.0), rng.gen_range(-120.0..120.0), rng.gen_range(-20.0..5.0)])
            .collect();
        let cloud = PointCloud::new(pts);
        let img = project(&cloud, &params).image;
        assert!(img.is_valid());
        assert!(img.occupied() <= cloud.len());
        for p in back_project(&img).points {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(n > 0.0 && n <= params.range_max + 1e-9);
        }
    }
}
