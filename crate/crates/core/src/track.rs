//! Arc-length parametrized track centerline.
//!
//! A piecewise cubic is fitted through the waypoints (chord-length knots), its
//! arc length is tabulated with Gauss–Legendre quadrature, and the curve is
//! resampled at uniform arc-length spacing and refitted with a cubic spline. The result is a
//! piecewise cubic `(X_c(Θ), Y_c(Θ))` with `‖c'(Θ)‖ ≈ 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{atan2, cos, floor, sin, sqrt, PI};
use crate::{Error, Result};

/// Target spacing of the arc-length knots [m].
const KNOT_SPACING: f64 = 0.02;
const PROJECT_MAX_ITER: usize = 50;
const PROJECT_TOL: f64 = 1e-8;
const PROJECT_MIN_STEP: f64 = 1e-12;

/// 8-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Scalar cubic spline with explicit knots.
#[derive(Clone, Debug, PartialEq)]
struct Spline1 {
    knots: Vec<f64>,
    /// per segment `[a, b, c, d]` for `a + bτ + cτ² + dτ³`
    coef: Vec<[f64; 4]>,
}

/// Solve the tridiagonal system `sub[i] m[i-1] + diag[i] m[i] + sup[i] m[i+1] = rhs[i]`.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve by Sherman–Morrison.
fn thomas_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    // corner entries: row 0 couples to n-1 through sub[0], row n-1 to 0 through sup[n-1]
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut d2 = diag.to_vec();
    d2[0] -= gamma;
    d2[n - 1] -= alpha * beta / gamma;
    let x = thomas(sub, &d2, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(sub, &d2, sup, &u);
    let factor = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

impl Spline1 {
    /// Interpolating cubic spline. For periodic splines `values` holds one
    /// value per knot except the closing one (`knots.len() == values.len() + 1`);
    /// otherwise a natural spline with `knots.len() == values.len()`.
    fn fit(knots: &[f64], values: &[f64], periodic: bool) -> Self {
        let n = values.len();
        let segs = knots.len() - 1;
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let val = |i: usize| if periodic { values[i % n] } else { values[i] };
        let second = if periodic {
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                let hp = h[(i + n - 1) % n];
                let hn = h[i];
                sub[i] = hp;
                diag[i] = 2.0 * (hp + hn);
                sup[i] = hn;
                rhs[i] = 6.0 * ((val(i + 1) - val(i)) / hn - (val(i) - val(i + n - 1)) / hp);
            }
            let mut m = thomas_cyclic(&sub, &diag, &sup, &rhs);
            m.push(m[0]);
            m
        } else {
            let mut m = vec![0.0; n];
            if n > 2 {
                let k = n - 2;
                let mut sub = vec![0.0; k];
                let mut diag = vec![0.0; k];
                let mut sup = vec![0.0; k];
                let mut rhs = vec![0.0; k];
                for r in 0..k {
                    let i = r + 1;
                    sub[r] = h[i - 1];
                    diag[r] = 2.0 * (h[i - 1] + h[i]);
                    sup[r] = h[i];
                    rhs[r] = 6.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
                }
                let inner = thomas(&sub, &diag, &sup, &rhs);
                m[1..n - 1].copy_from_slice(&inner);
            }
            m
        };
        let coef = (0..segs)
            .map(|i| {
                let (y0, y1) = (val(i), val(i + 1));
                let (m0, m1) = (second[i], second[i + 1]);
                let hi = h[i];
                [
                    y0,
                    (y1 - y0) / hi - hi * (2.0 * m0 + m1) / 6.0,
                    0.5 * m0,
                    (m1 - m0) / (6.0 * hi),
                ]
            })
            .collect();
        Self {
            knots: knots.to_vec(),
            coef,
        }
    }

    fn from_parts(knots: Vec<f64>, coef: Vec<[f64; 4]>) -> Self {
        Self { knots, coef }
    }

    fn segment(&self, t: f64) -> usize {
        let segs = self.coef.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i.min(segs - 1),
            Err(i) => i.saturating_sub(1).min(segs - 1),
        }
    }

    /// value, first and second derivative
    fn eval(&self, t: f64) -> [f64; 3] {
        let i = self.segment(t);
        eval_cubic(&self.coef[i], t - self.knots[i])
    }
}

/// Unit tangents of the circles through each waypoint and its neighbours.
fn circle_tangents(pts: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    let n = pts.len();
    let unit = |v: [f64; 2]| {
        let l = sqrt(v[0] * v[0] + v[1] * v[1]);
        [v[0] / l, v[1] / l]
    };
    (0..n)
        .map(|i| {
            if !closed && (i == 0 || i == n - 1) {
                let (a, b) = if i == 0 { (pts[0], pts[1]) } else { (pts[n - 2], pts[n - 1]) };
                return unit([b[0] - a[0], b[1] - a[1]]);
            }
            let a = pts[(i + n - 1) % n];
            let b = pts[i];
            let c = pts[(i + 1) % n];
            let u = [b[0] - a[0], b[1] - a[1]];
            let w = [c[0] - b[0], c[1] - b[1]];
            let (uu, ww) = (u[0] * u[0] + u[1] * u[1], w[0] * w[0] + w[1] * w[1]);
            unit([uu * w[0] + ww * u[0], uu * w[1] + ww * u[1]])
        })
        .collect()
}

/// Piecewise cubic Hermite interpolant with circle-consistent tangents.
/// Reproduces circular arcs closely even through very few waypoints.
fn hermite_through(pts: &[[f64; 2]], knots: &[f64], closed: bool) -> (Spline1, Spline1) {
    let n = pts.len();
    let tangents = circle_tangents(pts, closed);
    let segs = knots.len() - 1;
    let mut cx = Vec::with_capacity(segs);
    let mut cy = Vec::with_capacity(segs);
    for i in 0..segs {
        let (p0, p1) = (pts[i], pts[(i + 1) % n]);
        let (t0, t1) = (tangents[i], tangents[(i + 1) % n]);
        let h = knots[i + 1] - knots[i];
        let chord = [(p1[0] - p0[0]) / h, (p1[1] - p0[1]) / h];
        let turn = |a: [f64; 2], b: [f64; 2]| atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1]).abs();
        let theta = (turn(t0, chord) + turn(chord, t1)).min(PI);
        // handle length of the best cubic approximation of a circular arc
        let speed = 1.0 / cos(0.25 * theta).powi(2);
        let m0 = [speed * t0[0], speed * t0[1]];
        let m1 = [speed * t1[0], speed * t1[1]];
        let coef = |k: usize| {
            let dp = p1[k] - p0[k];
            [
                p0[k],
                m0[k],
                (3.0 * dp / h - 2.0 * m0[k] - m1[k]) / h,
                (-2.0 * dp / h + m0[k] + m1[k]) / (h * h),
            ]
        };
        cx.push(coef(0));
        cy.push(coef(1));
    }
    (
        Spline1::from_parts(knots.to_vec(), cx),
        Spline1::from_parts(knots.to_vec(), cy),
    )
}

#[inline]
fn eval_cubic(c: &[f64; 4], tau: f64) -> [f64; 3] {
    [
        c[0] + tau * (c[1] + tau * (c[2] + tau * c[3])),
        c[1] + tau * (2.0 * c[2] + 3.0 * tau * c[3]),
        2.0 * c[2] + 6.0 * tau * c[3],
    ]
}

/// Centerline position, heading and curvature at a progress value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterlinePose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub curvature: f64,
}

/// Full local geometry: position, first and second derivative in Θ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterlinePoint {
    pub pos: [f64; 2],
    pub d1: [f64; 2],
    pub d2: [f64; 2],
}

impl CenterlinePoint {
    pub fn heading(&self) -> f64 {
        atan2(self.d1[1], self.d1[0])
    }

    /// `dΦ/dΘ`
    pub fn heading_rate(&self) -> f64 {
        let n2 = self.d1[0] * self.d1[0] + self.d1[1] * self.d1[1];
        (self.d1[0] * self.d2[1] - self.d1[1] * self.d2[0]) / n2
    }

    pub fn speed(&self) -> f64 {
        sqrt(self.d1[0] * self.d1[0] + self.d1[1] * self.d1[1])
    }

    pub fn pose(&self) -> CenterlinePose {
        let s = self.speed();
        CenterlinePose {
            x: self.pos[0],
            y: self.pos[1],
            phi: self.heading(),
            curvature: (self.d1[0] * self.d2[1] - self.d1[1] * self.d2[0]) / (s * s * s),
        }
    }
}

/// Arc-length parametrized centerline with constant half width.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    spacing: f64,
    /// per segment `[ax, bx, cx, dx, ay, by, cy, dy]`
    segments: Vec<[f64; 8]>,
    length: f64,
    half_width: f64,
    closed: bool,
}

impl Track {
    /// Fit a track through `waypoints`.
    pub fn build(waypoints: &[[f64; 2]], half_width: f64, closed: bool) -> Result<Self> {
        if waypoints.len() < 4 {
            return Err(Error::Track("at least four waypoints are required"));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Track("half width must be positive"));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Track("waypoints must be finite"));
        }
        let n = waypoints.len();
        let pairs = if closed { n } else { n - 1 };
        let mut knots = Vec::with_capacity(n + 1);
        knots.push(0.0);
        for i in 0..pairs {
            let a = waypoints[i];
            let b = waypoints[(i + 1) % n];
            let chord = sqrt((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2));
            if chord < 1e-9 {
                return Err(Error::Track("duplicate consecutive waypoints"));
            }
            knots.push(knots[i] + chord);
        }
        let (sx, sy) = hermite_through(waypoints, &knots, closed);

        // cumulative arc length on a fine grid of the chord parameter
        const SUB: usize = 16;
        let speed_at = |t: f64| {
            let (dx, dy) = (sx.eval(t)[1], sy.eval(t)[1]);
            sqrt(dx * dx + dy * dy)
        };
        let mut grid_t = vec![0.0];
        let mut grid_s = vec![0.0];
        for i in 0..pairs {
            let (t0, t1) = (knots[i], knots[i + 1]);
            for k in 0..SUB {
                let a = t0 + (t1 - t0) * k as f64 / SUB as f64;
                let b = t0 + (t1 - t0) * (k + 1) as f64 / SUB as f64;
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                let ds: f64 = GL_NODES
                    .iter()
                    .zip(GL_WEIGHTS)
                    .map(|(x, w)| w * speed_at(mid + half * x))
                    .sum::<f64>()
                    * half;
                grid_t.push(b);
                grid_s.push(grid_s.last().unwrap() + ds);
            }
        }
        let length = *grid_s.last().unwrap();
        let n_knots = ((length / KNOT_SPACING).ceil() as usize).max(4 * n);
        let spacing = length / n_knots as f64;

        // invert s(t) on the grid, then polish with Newton on the local cubic
        let t_at = |s: f64| {
            let j = match grid_s.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
                Ok(j) => j.min(grid_s.len() - 2),
                Err(j) => j.saturating_sub(1).min(grid_s.len() - 2),
            };
            let (s0, s1) = (grid_s[j], grid_s[j + 1]);
            let (t0, t1) = (grid_t[j], grid_t[j + 1]);
            let mut t = t0 + (t1 - t0) * (s - s0) / (s1 - s0);
            for _ in 0..4 {
                // arc length from t0 to t by Gauss–Legendre
                let half = 0.5 * (t - t0);
                let mid = 0.5 * (t + t0);
                let st: f64 = s0
                    + GL_NODES
                        .iter()
                        .zip(GL_WEIGHTS)
                        .map(|(x, w)| w * speed_at(mid + half * x))
                        .sum::<f64>()
                        * half;
                t -= (st - s) / speed_at(t);
            }
            t
        };
        let count = if closed { n_knots } else { n_knots + 1 };
        let mut rx = Vec::with_capacity(count);
        let mut ry = Vec::with_capacity(count);
        for k in 0..count {
            let t = if !closed && k == n_knots {
                *knots.last().unwrap()
            } else {
                t_at(k as f64 * spacing)
            };
            rx.push(sx.eval(t)[0]);
            ry.push(sy.eval(t)[0]);
        }
        let theta_knots: Vec<f64> = (0..=n_knots).map(|k| k as f64 * spacing).collect();
        let fx = Spline1::fit(&theta_knots, &rx, closed);
        let fy = Spline1::fit(&theta_knots, &ry, closed);
        let segments = fx
            .coef
            .iter()
            .zip(&fy.coef)
            .map(|(a, b)| [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]])
            .collect();
        let track = Self {
            spacing,
            segments,
            length,
            half_width,
            closed,
        };
        track.check_self_intersection()?;
        Ok(track)
    }

    /// Distinct parts of the centerline closer than the half width.
    fn check_self_intersection(&self) -> Result<()> {
        let r = self.half_width;
        let step = (0.5 * r).min(0.05).max(self.spacing);
        let count = (self.length / step).ceil() as usize;
        let pts: Vec<[f64; 2]> = (0..count)
            .map(|k| self.point(k as f64 * self.length / count as f64).pos)
            .collect();
        let ds = self.length / count as f64;
        for i in 0..count {
            for j in (i + 1)..count {
                let mut sep = (j - i) as f64 * ds;
                if self.closed {
                    sep = sep.min(self.length - sep);
                }
                if sep <= PI * r {
                    continue;
                }
                let d = sqrt((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2));
                if d < r {
                    return Err(Error::Track("centerline comes within the half width of itself"));
                }
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn segment_length(&self) -> f64 {
        self.spacing
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Segment coefficients `[ax, bx, cx, dx, ay, by, cy, dy]` in local arc length.
    pub fn segment_coefficients(&self) -> &[[f64; 8]] {
        &self.segments
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let t = if self.closed {
            let w = theta - self.length * floor(theta / self.length);
            if w >= self.length { 0.0 } else { w }
        } else {
            theta
        };
        let last = self.segments.len() - 1;
        let i = if t <= 0.0 {
            0
        } else {
            (floor(t / self.spacing) as usize).min(last)
        };
        (i, t - i as f64 * self.spacing)
    }

    /// Position and derivatives at `theta` (wrapped for closed tracks).
    pub fn point(&self, theta: f64) -> CenterlinePoint {
        let (i, tau) = self.locate(theta);
        let c = &self.segments[i];
        let x = eval_cubic(&[c[0], c[1], c[2], c[3]], tau);
        let y = eval_cubic(&[c[4], c[5], c[6], c[7]], tau);
        CenterlinePoint {
            pos: [x[0], y[0]],
            d1: [x[1], y[1]],
            d2: [x[2], y[2]],
        }
    }

    pub fn eval_centerline(&self, theta: f64) -> CenterlinePose {
        self.point(theta).pose()
    }

    /// Newton projection of `pos` onto the centerline seeded at `hint`.
    /// The result stays on the same branch as `hint` (not wrapped).
    pub fn project(&self, pos: [f64; 2], hint: f64) -> Result<f64> {
        let clamp = |t: f64| if self.closed { t } else { t.clamp(0.0, self.length) };
        let dist2 = |t: f64| {
            let c = self.point(t);
            (pos[0] - c.pos[0]).powi(2) + (pos[1] - c.pos[1]).powi(2)
        };
        let mut theta = clamp(hint);
        for _ in 0..PROJECT_MAX_ITER {
            let c = self.point(theta);
            let e = [pos[0] - c.pos[0], pos[1] - c.pos[1]];
            let grad = -(e[0] * c.d1[0] + e[1] * c.d1[1]);
            if grad.abs() <= PROJECT_TOL {
                return Ok(theta);
            }
            let s2 = c.d1[0] * c.d1[0] + c.d1[1] * c.d1[1];
            let mut hess = s2 - (e[0] * c.d2[0] + e[1] * c.d2[1]);
            // near the center of curvature the distance is flat; keep the
            // step bounded and let the backtracking below catch overshoot
            if hess < 1e-3 * s2 {
                hess = 1e-3 * s2;
            }
            // backtrack until the distance decreases so Newton cannot cycle
            let f0 = e[0] * e[0] + e[1] * e[1];
            let mut step = (-grad / hess).clamp(-self.spacing, self.spacing);
            let mut next = clamp(theta + step);
            while dist2(next) > f0 && step.abs() > PROJECT_MIN_STEP {
                step *= 0.5;
                next = clamp(theta + step);
            }
            if (next - theta).abs() <= PROJECT_MIN_STEP {
                // stationary up to rounding
                return Ok(theta);
            }
            theta = next;
        }
        let c = self.point(theta);
        let grad = -((pos[0] - c.pos[0]) * c.d1[0] + (pos[1] - c.pos[1]) * c.d1[1]);
        if grad.abs() <= PROJECT_TOL || (!self.closed && (theta == 0.0 || theta == self.length)) {
            Ok(theta)
        } else {
            Err(Error::Projection {
                hint,
                iterations: PROJECT_MAX_ITER,
            })
        }
    }

    /// Projection without a warm start: coarse scan, then Newton.
    /// Returns a value in `[0, L)`.
    pub fn project_global(&self, pos: [f64; 2]) -> Result<f64> {
        let count = self.segments.len();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..count {
            let th = k as f64 * self.spacing;
            let c = self.point(th);
            let d = (pos[0] - c.pos[0]).powi(2) + (pos[1] - c.pos[1]).powi(2);
            if d < best.0 {
                best = (d, th);
            }
        }
        let theta = self.project(pos, best.1)?;
        Ok(if self.closed {
            theta - self.length * floor(theta / self.length)
        } else {
            theta
        })
    }

    /// Signed distance beyond the (tightened) boundary: `‖p − c(Θ̃)‖ − (r − margin)`.
    /// Non-positive values mean the position is inside.
    pub fn lateral_violation(&self, pos: [f64; 2], margin: f64, hint: f64) -> Result<f64> {
        let theta = self.project(pos, hint)?;
        let c = self.point(theta);
        let d = sqrt((pos[0] - c.pos[0]).powi(2) + (pos[1] - c.pos[1]).powi(2));
        Ok(d - (self.half_width - margin))
    }
}

/// Contouring and lag error with gradients w.r.t. `(X, Y, Θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContouringErrors {
    pub contouring: f64,
    pub lag: f64,
    pub grad_contouring: [f64; 3],
    pub grad_lag: [f64; 3],
}

/// `ê_c = sinΦ(X−X_c) − cosΦ(Y−Y_c)`, `ê_l = −cosΦ(X−X_c) − sinΦ(Y−Y_c)`
/// with the centerline quantities taken at `theta`.
pub fn contouring_errors(track: &Track, pos: [f64; 2], theta: f64) -> ContouringErrors {
    let c = track.point(theta);
    let phi = c.heading();
    let (s, co) = (sin(phi), cos(phi));
    let dx = pos[0] - c.pos[0];
    let dy = pos[1] - c.pos[1];
    let ec = s * dx - co * dy;
    let el = -co * dx - s * dy;
    let rate = c.heading_rate();
    // chain rule through Φ(Θ) and c(Θ)
    let dec = rate * (co * dx + s * dy) - s * c.d1[0] + co * c.d1[1];
    let del = rate * (s * dx - co * dy) + co * c.d1[0] + s * c.d1[1];
    ContouringErrors {
        contouring: ec,
        lag: el,
        grad_contouring: [s, -co, dec],
        grad_lag: [-co, -s, del],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::TAU;

    fn circle(radius: f64, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let a = TAU * k as f64 / n as f64;
                [radius * cos(a), radius * sin(a)]
            })
            .collect()
    }

    fn oval() -> Track {
        let pts = [
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [2.6, 0.4],
            [2.6, 1.2],
            [2.0, 1.6],
            [1.0, 1.6],
            [0.0, 1.6],
            [-0.6, 1.2],
            [-0.6, 0.4],
        ];
        Track::build(&pts, 0.2, true).unwrap()
    }

    #[test]
    fn four_point_circle_length() {
        let t = Track::build(&circle(1.0, 4), 0.1, true).unwrap();
        assert!((t.length() - TAU).abs() / TAU < 0.01, "length {}", t.length());
    }

    #[test]
    fn straight_polyline_has_no_curvature() {
        let pts = [[0.0, 0.0], [1.0, 0.5], [2.0, 1.0], [3.0, 1.5], [4.0, 2.0]];
        let t = Track::build(&pts, 0.2, false).unwrap();
        for k in 0..=100 {
            let p = t.eval_centerline(t.length() * k as f64 / 100.0);
            assert!(p.curvature.abs() < 1e-9);
        }
    }

    #[test]
    fn closed_track_is_periodic() {
        let t = oval();
        let a = t.eval_centerline(0.0);
        let b = t.eval_centerline(t.length());
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        for th in [0.3, 1.7, 5.2] {
            let (a, b) = (t.eval_centerline(th), t.eval_centerline(th + t.length()));
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
            assert!((a.phi - b.phi).abs() < 1e-9 && (a.curvature - b.curvature).abs() < 1e-6);
        }
    }

    #[test]
    fn circle_pose_at_start() {
        let t = Track::build(&circle(1.0, 12), 0.1, true).unwrap();
        let p = t.eval_centerline(0.0);
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
        // tangent perpendicular to the radius
        assert!(cos(p.phi).abs() < 1e-3, "phi {}", p.phi);
        assert!((p.curvature - 1.0).abs() < 0.01);
    }

    #[test]
    fn knots_are_c1_continuous() {
        let t = oval();
        let h = t.segment_length();
        for (i, c) in t.segment_coefficients().iter().enumerate() {
            let next = &t.segment_coefficients()[(i + 1) % t.segment_count()];
            let end_x = eval_cubic(&[c[0], c[1], c[2], c[3]], h);
            let end_y = eval_cubic(&[c[4], c[5], c[6], c[7]], h);
            assert!((end_x[0] - next[0]).abs() < 1e-9 && (end_y[0] - next[4]).abs() < 1e-9);
            assert!((end_x[1] - next[1]).abs() < 1e-9 && (end_y[1] - next[5]).abs() < 1e-9);
        }
    }

    #[test]
    fn arc_length_property() {
        let t = oval();
        let eps = 1e-4;
        for k in 0..500 {
            let th = t.length() * k as f64 / 500.0;
            let a = t.point(th).pos;
            let b = t.point(th + eps).pos;
            let ratio = sqrt((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)) / eps;
            assert!((0.99..=1.01).contains(&ratio), "ratio {ratio} at {th}");
        }
    }

    #[test]
    fn heading_matches_finite_differences() {
        let t = oval();
        for k in 0..200 {
            let th = t.length() * k as f64 / 200.0;
            let a = t.point(th).pos;
            let b = t.point(th + 1e-5).pos;
            let fd = atan2(b[1] - a[1], b[0] - a[0]);
            let phi = t.eval_centerline(th).phi;
            assert!(crate::math::wrap_angle(fd - phi).abs() <= 1e-4);
        }
    }

    #[test]
    fn projection_basics() {
        let t = oval();
        for th in [0.1, 2.0, 4.5, 7.0] {
            let c = t.point(th);
            let p = t.project(c.pos, th + 0.05).unwrap();
            assert!((p - th).abs() < 1e-7);
            let phi = c.heading();
            let off = [c.pos[0] - 0.1 * sin(phi), c.pos[1] + 0.1 * cos(phi)];
            let p = t.project(off, th - 0.03).unwrap();
            assert!((p - th).abs() < 1e-7);
            // idempotence
            let q = t.point(p).pos;
            assert!((t.project(q, p).unwrap() - p).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_matches_grid_search_on_circle() {
        let t = Track::build(&circle(1.0, 16), 0.2, true).unwrap();
        let grid = 100_000;
        let mut s = 7u64;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let a = TAU * rnd();
            let rr = 0.85 + 0.3 * rnd();
            let pos = [rr * cos(a), rr * sin(a)];
            let proj = t.project_global(pos).unwrap();
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            for k in 0..grid {
                let th = t.length() * k as f64 / grid as f64;
                let c = t.point(th).pos;
                let d = (pos[0] - c[0]).powi(2) + (pos[1] - c[1]).powi(2);
                if d < best {
                    best = d;
                    arg = th;
                }
            }
            let mut diff = (proj - arg).abs();
            diff = diff.min(t.length() - diff);
            assert!(diff <= t.length() / grid as f64, "proj {proj} grid {arg}");
        }
    }

    #[test]
    fn projection_converges_near_center_of_curvature() {
        // the distance to the centerline is almost flat here
        let t = Track::build(&circle(1.0, 32), 0.2, true).unwrap();
        let grid = 20_000;
        for (k, rr) in [0.01, 0.03, 0.1, 0.2].into_iter().enumerate() {
            let a = 0.7 + k as f64;
            let pos = [rr * cos(a), rr * sin(a)];
            let d = |th: f64| {
                let c = t.point(th).pos;
                sqrt((pos[0] - c[0]).powi(2) + (pos[1] - c[1]).powi(2))
            };
            let (best, arg) = (0..grid)
                .map(|i| t.length() * i as f64 / grid as f64)
                .fold((f64::INFINITY, 0.0), |b, th| if d(th) < b.0 { (d(th), th) } else { b });
            for off in [-0.5, -0.2, 0.0, 0.3] {
                let hint = arg + off;
                let p = t.project(pos, hint).unwrap_or_else(|e| panic!("rr {rr} hint {hint}: {e:?}"));
                assert!(d(p) <= best + 1e-9, "rr {rr} hint {hint}: {} vs {best}", d(p));
            }
        }
    }

    #[test]
    fn contouring_error_definitions() {
        let t = oval();
        let th = 3.3;
        let c = t.point(th);
        let e = contouring_errors(&t, c.pos, th);
        assert!(e.contouring.abs() < 1e-15 && e.lag.abs() < 1e-15);
        let phi = c.heading();
        let d = 0.07;
        let left = [c.pos[0] - d * sin(phi), c.pos[1] + d * cos(phi)];
        let e = contouring_errors(&t, left, th);
        assert!((e.contouring.abs() - d).abs() < 1e-12);
        assert!(e.lag.abs() < 1e-12);
    }

    #[test]
    fn contouring_gradients_match_finite_differences() {
        let t = oval();
        for k in 0..40 {
            let th = 0.21 + 0.2 * k as f64;
            let c = t.point(th).pos;
            let pos = [c[0] + 0.05 * cos(k as f64), c[1] - 0.04 * sin(0.7 * k as f64)];
            let e = contouring_errors(&t, pos, th);
            let h = 1e-6;
            let f = |p: [f64; 2], th: f64| {
                let e = contouring_errors(&t, p, th);
                [e.contouring, e.lag]
            };
            let fd = [
                (f([pos[0] + h, pos[1]], th), f([pos[0] - h, pos[1]], th)),
                (f([pos[0], pos[1] + h], th), f([pos[0], pos[1] - h], th)),
                (f(pos, th + h), f(pos, th - h)),
            ];
            for j in 0..3 {
                let dc = (fd[j].0[0] - fd[j].1[0]) / (2.0 * h);
                let dl = (fd[j].0[1] - fd[j].1[1]) / (2.0 * h);
                let sc = e.grad_contouring[j].abs().max(1e-1);
                let sl = e.grad_lag[j].abs().max(1e-1);
                assert!((dc - e.grad_contouring[j]).abs() / sc < 1e-5, "ec/{j}: {dc} vs {}", e.grad_contouring[j]);
                assert!((dl - e.grad_lag[j]).abs() / sl < 1e-5, "el/{j}: {dl} vs {}", e.grad_lag[j]);
            }
        }
    }

    #[test]
    fn lag_error_approximates_projection_offset() {
        let t = oval();
        for k in 0..30 {
            let th = 0.3 * k as f64;
            let c = t.point(th);
            let phi = c.heading();
            let (dl, dc) = (0.01 * sin(k as f64), 0.01 * cos(k as f64));
            let pos = [
                c.pos[0] + dl * cos(phi) - dc * sin(phi),
                c.pos[1] + dl * sin(phi) + dc * cos(phi),
            ];
            let e = contouring_errors(&t, pos, th);
            let proj = t.project(pos, th).unwrap();
            let bound = 10.0 * (e.contouring.abs() + e.lag.abs()).powi(2) + e.lag.abs();
            assert!((proj - th).abs() <= bound + 1e-9);
        }
    }

    #[test]
    fn lateral_violation_values() {
        let t = oval();
        let th = 1.0;
        let c = t.point(th);
        let r = t.half_width();
        assert!((t.lateral_violation(c.pos, 0.0, th).unwrap() + r).abs() < 1e-12);
        let phi = c.heading();
        let edge = [c.pos[0] - r * sin(phi), c.pos[1] + r * cos(phi)];
        assert!(t.lateral_violation(edge, 0.0, th).unwrap().abs() < 1e-9);
        assert!((t.lateral_violation(c.pos, 0.05, th).unwrap() + r - 0.05).abs() < 1e-12);
    }

    #[test]
    fn lateral_violation_agrees_with_polyline_distance() {
        let t = oval();
        // dense polyline of the centerline as an independent boundary oracle
        let m = 20_000;
        let poly: Vec<[f64; 2]> = (0..m).map(|k| t.point(t.length() * k as f64 / m as f64).pos).collect();
        let seg_dist = |p: [f64; 2], a: [f64; 2], b: [f64; 2]| {
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ap = [p[0] - a[0], p[1] - a[1]];
            let s = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
            sqrt((ap[0] - s * ab[0]).powi(2) + (ap[1] - s * ab[1]).powi(2))
        };
        let mut s = 11u64;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let r = t.half_width();
        for _ in 0..400 {
            let th = t.length() * rnd();
            let c = t.point(th);
            let phi = c.heading();
            let off = (2.0 * rnd() - 1.0) * 1.5 * r;
            let pos = [c.pos[0] - off * sin(phi), c.pos[1] + off * cos(phi)];
            let v = t.lateral_violation(pos, 0.0, th).unwrap();
            let d = (0..m).map(|k| seg_dist(pos, poly[k], poly[(k + 1) % m])).fold(f64::INFINITY, f64::min);
            let oracle = d - r;
            // polyline chord error on this curvature is well below 1e-6
            if oracle.abs() > 1e-6 {
                assert_eq!(v <= 0.0, oracle <= 0.0, "v {v} oracle {oracle}");
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Track::build(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 0.1, false).is_err());
        assert!(Track::build(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 1.0]], 0.1, false).is_err());
        // a figure-eight-like pinch: two straights 0.1 apart with half width 0.2
        let pinch = [[0.0, 0.0], [3.0, 0.0], [3.5, 0.05], [3.0, 0.1], [0.0, 0.1], [-0.5, 0.05]];
        assert!(matches!(Track::build(&pinch, 0.2, true), Err(Error::Track(_))));
    }
}
