//! Ray-cast street scenes: ground plane, two facade walls, parked and
//! moving boxes, street trees, Gaussian range noise. Sequences come with the exact
//! relative pose of every frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::pointcloud::{Point, PointCloud};
use crate::prediction::Pose;
use crate::projection::ProjectionParams;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub params: ProjectionParams,
    pub seed: u64,
    /// Range noise standard deviation, meters.
    pub noise_sigma: f64,
    /// Forward ego motion per frame, meters.
    pub speed: f64,
    /// Ego yaw change per frame, radians.
    pub yaw_rate: f64,
    pub parked_boxes: usize,
    pub moving_boxes: usize,
    /// Trees on the sidewalks: a trunk and a spherical crown.
    pub trees: usize,
    /// Probability that a return is lost.
    pub dropout: f64,
    /// Sensor height above the ground, meters.
    pub sensor_height: f64,
    /// Half width of the street between the facades, meters.
    pub street_half_width: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            params: ProjectionParams::default(),
            seed: 0,
            noise_sigma: 0.01,
            speed: 0.8,
            yaw_rate: 0.2f64.to_radians(),
            parked_boxes: 24,
            moving_boxes: 4,
            trees: 16,
            dropout: 0.01,
            sensor_height: 1.73,
            street_half_width: 9.0,
        }
    }
}

/// Axis-aligned box in world coordinates moving along `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Cuboid {
    min: [f64; 3],
    max: [f64; 3],
    velocity: f64,
}

impl Cuboid {
    fn at(&self, frame: usize) -> Self {
        let dx = self.velocity * frame as f64;
        Self {
            min: [self.min[0] + dx, self.min[1], self.min[2]],
            max: [self.max[0] + dx, self.max[1], self.max[2]],
            velocity: self.velocity,
        }
    }

    /// Slab test; entry distance along the ray if it is in front.
    fn hit(&self, o: &Point, d: &Point) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Sphere {
    center: [f64; 3],
    radius: f64,
}

impl Sphere {
    fn hit(&self, o: &Point, d: &Point) -> Option<f64> {
        let oc = [o[0] - self.center[0], o[1] - self.center[1], o[2] - self.center[2]];
        let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
        let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t > 0.0).then_some(t)
    }
}

/// A generated scene; frames are produced on demand.
#[derive(Clone, Debug)]
pub struct Scene {
    cfg: SceneConfig,
    boxes: Vec<Cuboid>,
    crowns: Vec<Sphere>,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w = cfg.street_half_width;
        let ground = -cfg.sensor_height;
        let mut boxes = Vec::new();
        for _ in 0..cfg.parked_boxes {
            let x = rng.gen_range(-60.0..140.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (len, wid, h) = (rng.gen_range(3.5..5.0), rng.gen_range(1.6..2.0), rng.gen_range(1.3..2.2));
            let y = side * (w - rng.gen_range(1.2..3.0));
            boxes.push(Cuboid {
                min: [x, y - wid / 2.0, ground],
                max: [x + len, y + wid / 2.0, ground + h],
                velocity: 0.0,
            });
        }
        for k in 0..cfg.moving_boxes {
            let x = rng.gen_range(-20.0..40.0);
            let lane = if k % 2 == 0 { 2.0 } else { -2.0 };
            let (len, wid, h) = (rng.gen_range(3.8..4.8), rng.gen_range(1.7..1.9), rng.gen_range(1.4..1.8));
            boxes.push(Cuboid {
                min: [x, lane - wid / 2.0, ground],
                max: [x + len, lane + wid / 2.0, ground + h],
                velocity: rng.gen_range(-0.6..1.4),
            });
        }
        let mut crowns = Vec::new();
        for _ in 0..cfg.trees {
            let x = rng.gen_range(-60.0..140.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let y = side * (w - rng.gen_range(0.5..1.2));
            let radius = rng.gen_range(1.2..2.5);
            let top = ground + rng.gen_range(3.0..4.5);
            boxes.push(Cuboid {
                min: [x - 0.15, y - 0.15, ground],
                max: [x + 0.15, y + 0.15, top],
                velocity: 0.0,
            });
            crowns.push(Sphere {
                center: [x, y, top + radius * 0.7],
                radius,
            });
        }
        Self { cfg, boxes, crowns }
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    /// World-from-sensor pose of frame `i`.
    pub fn sensor_pose(&self, i: usize) -> Pose {
        let yaw = self.cfg.yaw_rate * i as f64;
        // Arc of constant curvature.
        let (x, y) = if self.cfg.yaw_rate.abs() < 1e-12 {
            (self.cfg.speed * i as f64, 0.0)
        } else {
            let r = self.cfg.speed / self.cfg.yaw_rate;
            (r * yaw.sin(), r * (1.0 - yaw.cos()))
        };
        Pose::from_axis_angle([0.0, 0.0, 1.0], yaw, [x, y, 0.0])
    }

    /// Maps frame `i - 1` sensor coordinates into frame `i`; identity for
    /// the first frame.
    pub fn relative_pose(&self, i: usize) -> Pose {
        if i == 0 {
            return Pose::identity();
        }
        self.sensor_pose(i - 1).then(&self.sensor_pose(i).inverse())
    }

    fn distance(&self, o: &Point, d: &Point, boxes: &[Cuboid]) -> Option<f64> {
        let mut best = f64::INFINITY;
        let ground = -self.cfg.sensor_height;
        if d[2] < -1e-9 {
            best = best.min((ground - o[2]) / d[2]);
        }
        let w = self.cfg.street_half_width;
        if d[1].abs() > 1e-9 {
            let wall = if d[1] > 0.0 { w } else { -w };
            let t = (wall - o[1]) / d[1];
            // Facades are 12 m tall.
            if o[2] + t * d[2] <= ground + 12.0 {
                best = best.min(t);
            }
        }
        for b in boxes {
            if let Some(t) = b.hit(o, d) {
                best = best.min(t);
            }
        }
        for s in &self.crowns {
            if let Some(t) = s.hit(o, d) {
                best = best.min(t);
            }
        }
        (best.is_finite() && best > 0.0).then_some(best)
    }

    /// Sensor-frame cloud of frame `i`.
    pub fn frame(&self, i: usize) -> PointCloud {
        let cfg = &self.cfg;
        let p = &cfg.params;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
        let world = self.sensor_pose(i);
        let origin = [world.translation[0], world.translation[1], world.translation[2]];
        let boxes: Vec<Cuboid> = self.boxes.iter().map(|b| b.at(i)).collect();
        let to_sensor = world.inverse();
        let half = std::f64::consts::PI / p.cols as f64;
        let mut points = Vec::with_capacity(p.rows * p.cols);
        for row in 0..p.rows {
            let (se, ce) = p.row_center(row).sin_cos();
            for col in 0..p.cols {
                let az = p.col_center(col) + rng.gen_range(-0.3..0.3) * half;
                let (sa, ca) = az.sin_cos();
                let local = [ce * ca, ce * sa, se];
                let r = &world.rotation;
                let dir = [
                    r[(0, 0)] * local[0] + r[(0, 1)] * local[1] + r[(0, 2)] * local[2],
                    r[(1, 0)] * local[0] + r[(1, 1)] * local[1] + r[(1, 2)] * local[2],
                    r[(2, 0)] * local[0] + r[(2, 1)] * local[1] + r[(2, 2)] * local[2],
                ];
                let Some(t) = self.distance(&origin, &dir, &boxes) else { continue };
                if cfg.dropout > 0.0 && rng.gen_bool(cfg.dropout.min(1.0)) {
                    continue;
                }
                let d = t + if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                if d <= 0.0 || d > p.range_max {
                    continue;
                }
                let hit = [origin[0] + d * dir[0], origin[1] + d * dir[1], origin[2] + d * dir[2]];
                points.push(to_sensor.apply(&hit));
            }
        }
        PointCloud::new(points)
    }

    /// `n` frames and their relative poses.
    pub fn sequence(&self, n: usize) -> (Vec<PointCloud>, Vec<Pose>) {
        ((0..n).map(|i| self.frame(i)).collect(), (0..n).map(|i| self.relative_pose(i)).collect())
    }
}
