//! Bicycle model with simplified Pacejka tires and a DC-motor drivetrain.
//!
//! State `[X, Y, Φ, vx, vy, ω]`, input `[p, δ]` (duty cycle, steering angle).
//! The controller model is one explicit Euler step per sampling period; the
//! simulated plant may sub-step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math::{atan, cos, sin, sqrt};
use crate::{Error, Result};

pub const NX: usize = 6;
pub const NU: usize = 2;
/// GP input dimension `z = [x; u]`.
pub const NZ: usize = NX + NU;
/// Number of velocity states affected by model error and noise (`B_d = [0; I₃]`).
pub const ND: usize = 3;
/// Index of the first velocity state.
pub const VEL: usize = 3;

/// Slip angles use `max(vx, VX_MIN)` in their denominators. Below about
/// 0.6 m/s the Euler-discretized lateral and yaw modes of the nominal car have
/// spectral radius above one at `Ts = 30 ms`, so the guard sits well above it.
pub const VX_MIN: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl VehicleState {
    pub fn from_array(a: [f64; NX]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            phi: a[2],
            vx: a[3],
            vy: a[4],
            omega: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; NX] {
        [self.x, self.y, self.phi, self.vx, self.vy, self.omega]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlInput {
    /// Motor duty cycle in `[0, 1]`.
    pub duty: f64,
    /// Steering angle [rad].
    pub steer: f64,
}

impl ControlInput {
    pub fn new(duty: f64, steer: f64) -> Self {
        Self { duty, steer }
    }

    pub fn to_array(&self) -> [f64; NU] {
        [self.duty, self.steer]
    }

    pub fn from_array(a: [f64; NU]) -> Self {
        Self::new(a[0], a[1])
    }

    /// Project onto the admissible input box.
    pub fn clamped(&self, steer_max: f64) -> Self {
        Self::new(self.duty.clamp(0.0, 1.0), self.steer.clamp(-steer_max, steer_max))
    }

    pub fn is_admissible(&self, steer_max: f64) -> bool {
        (0.0..=1.0).contains(&self.duty) && self.steer.abs() <= steer_max
    }
}

/// Concatenated GP input `z = [x; u]`.
pub fn gp_input(x: &VehicleState, u: &ControlInput) -> [f64; NZ] {
    let s = x.to_array();
    [s[0], s[1], s[2], s[3], s[4], s[5], u.duty, u.steer]
}

/// Physical parameters of the car model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleParams {
    /// Mass [kg].
    pub mass: f64,
    /// Yaw inertia [kg m²].
    pub inertia_z: f64,
    /// CoG to front axle [m].
    pub lf: f64,
    /// CoG to rear axle [m].
    pub lr: f64,
    pub bf: f64,
    pub cf: f64,
    /// Front peak lateral force [N].
    pub df: f64,
    pub br: f64,
    pub cr: f64,
    /// Rear peak lateral force [N].
    pub dr: f64,
    /// Motor gain [N].
    pub cm1: f64,
    /// Motor back-EMF term [N s/m].
    pub cm2: f64,
    /// Rolling resistance [N].
    pub cr0: f64,
    /// Aerodynamic drag [N s²/m²].
    pub cr2: f64,
    /// Steering limit [rad].
    pub steer_max: f64,
    /// Sampling time [s].
    pub ts: f64,
}

impl Default for VehicleParams {
    /// Nominal 1:43 scale car. Tire and motor coefficients follow the
    /// published ORCA car identification, with drag raised so that coasting
    /// sheds speed at a useful rate.
    fn default() -> Self {
        Self {
            mass: 0.041,
            inertia_z: 27.8e-6,
            lf: 0.029,
            lr: 0.033,
            bf: 2.579,
            cf: 1.2,
            df: 0.192,
            br: 3.3852,
            cr: 1.2691,
            dr: 0.1737,
            cm1: 0.287,
            cm2: 0.0545,
            cr0: 0.0518,
            cr2: 0.011,
            steer_max: 0.35,
            ts: 0.03,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia_z", self.inertia_z),
            ("lf", self.lf),
            ("lr", self.lr),
            ("ts", self.ts),
            ("df", self.df),
            ("dr", self.dr),
            ("steer_max", self.steer_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        let finite = [
            ("bf", self.bf),
            ("cf", self.cf),
            ("br", self.br),
            ("cr", self.cr),
            ("cm1", self.cm1),
            ("cm2", self.cm2),
            ("cr0", self.cr0),
            ("cr2", self.cr2),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be finite",
                });
            }
        }
        Ok(())
    }

    /// Parameters that a plant perturbation scales, in a fixed order.
    fn physical_mut(&mut self) -> [&mut f64; 14] {
        [
            &mut self.mass,
            &mut self.inertia_z,
            &mut self.lf,
            &mut self.lr,
            &mut self.bf,
            &mut self.cf,
            &mut self.df,
            &mut self.br,
            &mut self.cr,
            &mut self.dr,
            &mut self.cm1,
            &mut self.cm2,
            &mut self.cr0,
            &mut self.cr2,
        ]
    }

    /// The scaled parameters as `(name, value)` pairs.
    pub fn physical(&self) -> [(&'static str, f64); 14] {
        [
            ("mass", self.mass),
            ("inertia_z", self.inertia_z),
            ("lf", self.lf),
            ("lr", self.lr),
            ("bf", self.bf),
            ("cf", self.cf),
            ("df", self.df),
            ("br", self.br),
            ("cr", self.cr),
            ("dr", self.dr),
            ("cm1", self.cm1),
            ("cm2", self.cm2),
            ("cr0", self.cr0),
            ("cr2", self.cr2),
        ]
    }
}

/// Lateral tire forces and longitudinal drive force [N].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireForces {
    pub front_lateral: f64,
    pub rear_lateral: f64,
    pub rear_longitudinal: f64,
}

/// Forces together with their partial derivatives with respect to
/// `(vx, vy, ω, p, δ)`.
#[derive(Clone, Copy, Debug)]
struct ForceDerivs {
    forces: TireForces,
    /// d(front_lateral)/d(vx, vy, ω, δ)
    ffy: [f64; 4],
    /// d(rear_lateral)/d(vx, vy, ω)
    fry: [f64; 3],
    /// d(rear_longitudinal)/d(vx, p)
    frx: [f64; 2],
}

/// Simplified magic formula `D sin(C atan(B α))` and its slope.
#[inline]
fn magic(b: f64, c: f64, d: f64, alpha: f64) -> (f64, f64) {
    let ba = b * alpha;
    let inner = c * atan(ba);
    (d * sin(inner), d * cos(inner) * c * b / (1.0 + ba * ba))
}

/// Slip angle `-atan(n / vx_eff) + offset` and its partials w.r.t. `(vx, n)`.
#[inline]
fn slip(numer: f64, vx: f64, offset: f64) -> (f64, f64, f64) {
    let (vxe, clamped) = if vx > VX_MIN { (vx, false) } else { (VX_MIN, true) };
    let a = numer / vxe;
    let den = 1.0 + a * a;
    let d_numer = -1.0 / (vxe * den);
    let d_vx = if clamped { 0.0 } else { a / (vxe * den) };
    (-atan(a) + offset, d_vx, d_numer)
}

fn forces_with_derivs(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> ForceDerivs {
    let (af, daf_dvx, daf_dn) = slip(x.vy + p.lf * x.omega, x.vx, u.steer);
    let (ar, dar_dvx, dar_dn) = slip(x.vy - p.lr * x.omega, x.vx, 0.0);
    let (ffy, sf) = magic(p.bf, p.cf, p.df, af);
    let (fry, sr) = magic(p.br, p.cr, p.dr, ar);
    let frx = (p.cm1 - p.cm2 * x.vx) * u.duty - p.cr0 - p.cr2 * x.vx * x.vx;
    ForceDerivs {
        forces: TireForces {
            front_lateral: ffy,
            rear_lateral: fry,
            rear_longitudinal: frx,
        },
        ffy: [sf * daf_dvx, sf * daf_dn, sf * daf_dn * p.lf, sf],
        fry: [sr * dar_dvx, sr * dar_dn, -sr * dar_dn * p.lr],
        frx: [-p.cm2 * u.duty - 2.0 * p.cr2 * x.vx, p.cm1 - p.cm2 * x.vx],
    }
}

fn check_forces(f: &TireForces) -> Result<()> {
    if !f.front_lateral.is_finite() {
        return Err(Error::NonFinite { field: "front_lateral" });
    }
    if !f.rear_lateral.is_finite() {
        return Err(Error::NonFinite { field: "rear_lateral" });
    }
    if !f.rear_longitudinal.is_finite() {
        return Err(Error::NonFinite { field: "rear_longitudinal" });
    }
    Ok(())
}

pub fn tire_and_drive_forces(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<TireForces> {
    let f = forces_with_derivs(x, u, p).forces;
    check_forces(&f)?;
    Ok(f)
}

fn derivative_from_forces(x: &VehicleState, u: &ControlInput, p: &VehicleParams, f: &TireForces) -> [f64; NX] {
    let (sphi, cphi) = (sin(x.phi), cos(x.phi));
    let (sd, cd) = (sin(u.steer), cos(u.steer));
    [
        x.vx * cphi - x.vy * sphi,
        x.vx * sphi + x.vy * cphi,
        x.omega,
        (f.rear_longitudinal - f.front_lateral * sd + p.mass * x.vy * x.omega) / p.mass,
        (f.rear_lateral + f.front_lateral * cd - p.mass * x.vx * x.omega) / p.mass,
        (f.front_lateral * p.lf * cd - f.rear_lateral * p.lr) / p.inertia_z,
    ]
}

/// Continuous-time nominal dynamics `f_c(x, u)`.
pub fn continuous_dynamics(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<[f64; NX]> {
    let f = tire_and_drive_forces(x, u, p)?;
    Ok(derivative_from_forces(x, u, p, &f))
}

/// Analytic Jacobians of `f_c`: `(∂f_c/∂x, ∂f_c/∂u)`.
pub fn continuous_jacobians(
    x: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> ([[f64; NX]; NX], [[f64; NU]; NX]) {
    let d = forces_with_derivs(x, u, p);
    let f = d.forces;
    let (sphi, cphi) = (sin(x.phi), cos(x.phi));
    let (sd, cd) = (sin(u.steer), cos(u.steer));
    let mut a = [[0.0; NX]; NX];
    let mut b = [[0.0; NU]; NX];

    a[0][2] = -x.vx * sphi - x.vy * cphi;
    a[0][3] = cphi;
    a[0][4] = -sphi;
    a[1][2] = x.vx * cphi - x.vy * sphi;
    a[1][3] = sphi;
    a[1][4] = cphi;
    a[2][5] = 1.0;

    // d(ffy)/d(vx, vy, ω) and d(fry)/d(vx, vy, ω)
    let dffy = [d.ffy[0], d.ffy[1], d.ffy[2]];
    let dfry = d.fry;
    let inv_m = 1.0 / p.mass;
    let inv_i = 1.0 / p.inertia_z;

    a[3][3] = (d.frx[0] - dffy[0] * sd) * inv_m;
    a[3][4] = -dffy[1] * sd * inv_m + x.omega;
    a[3][5] = -dffy[2] * sd * inv_m + x.vy;
    b[3][0] = d.frx[1] * inv_m;
    b[3][1] = (-d.ffy[3] * sd - f.front_lateral * cd) * inv_m;

    a[4][3] = (dfry[0] + dffy[0] * cd) * inv_m - x.omega;
    a[4][4] = (dfry[1] + dffy[1] * cd) * inv_m;
    a[4][5] = (dfry[2] + dffy[2] * cd) * inv_m - x.vx;
    b[4][1] = (d.ffy[3] * cd - f.front_lateral * sd) * inv_m;

    for k in 0..3 {
        a[5][3 + k] = (dffy[k] * p.lf * cd - dfry[k] * p.lr) * inv_i;
    }
    b[5][1] = (d.ffy[3] * p.lf * cd - f.front_lateral * p.lf * sd) * inv_i;

    (a, b)
}

fn euler(x: &VehicleState, dx: &[f64; NX], h: f64) -> VehicleState {
    let s = x.to_array();
    VehicleState::from_array(core::array::from_fn(|i| s[i] + h * dx[i]))
}

/// Nominal discrete-time model: one explicit Euler step of length `ts`.
pub fn discrete_step(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<VehicleState> {
    let dx = continuous_dynamics(x, u, p)?;
    Ok(euler(x, &dx, p.ts))
}

/// Jacobians of [`discrete_step`]: `(I + ts ∂f_c/∂x, ts ∂f_c/∂u)`.
pub fn discrete_jacobians(
    x: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> ([[f64; NX]; NX], [[f64; NU]; NX]) {
    let (mut a, mut b) = continuous_jacobians(x, u, p);
    for i in 0..NX {
        for j in 0..NX {
            a[i][j] *= p.ts;
        }
        a[i][i] += 1.0;
        for j in 0..NU {
            b[i][j] *= p.ts;
        }
    }
    (a, b)
}

/// Scale every physical parameter by an independent factor drawn uniformly
/// from `[1 - magnitude, 1 + magnitude]`. `ts` and `steer_max` are kept.
pub fn perturbed_plant(params: &VehicleParams, magnitude: f64, seed: u64) -> Result<VehicleParams> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(Error::InvalidParameter {
            name: "magnitude",
            reason: "must lie in [0, 1)",
        });
    }
    let mut out = *params;
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.physical_mut() {
        let factor = 1.0 + magnitude * (2.0 * rng.gen::<f64>() - 1.0);
        *v *= factor;
    }
    Ok(out)
}

/// Additive per-step process noise on `(vx, vy, ω)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseSpec {
    /// Per-step variances `Σ_w = diag(variance)`.
    pub variance: [f64; ND],
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    /// Per-step variance from a power spectral density: `Σ_w = Q_w · ts`.
    pub fn from_psd(psd: [f64; ND], ts: f64) -> Self {
        Self {
            variance: psd.map(|q| q * ts),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variance.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "noise",
                reason: "variances must be finite and non-negative",
            })
        }
    }

    pub fn is_zero(&self) -> bool {
        self.variance.iter().all(|v| *v == 0.0)
    }
}

/// The simulated "true" car: perturbed parameters, process noise and an
/// optional finer integration of the continuous dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plant {
    pub params: VehicleParams,
    pub noise: NoiseSpec,
    pub substeps: usize,
}

impl Plant {
    pub fn new(params: VehicleParams, noise: NoiseSpec) -> Self {
        Self {
            params,
            noise,
            substeps: 1,
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &VehicleState, u: &ControlInput, rng: &mut R) -> Result<VehicleState> {
        let n = self.substeps.max(1);
        let h = self.params.ts / n as f64;
        let mut next = *x;
        for _ in 0..n {
            let dx = continuous_dynamics(&next, u, &self.params)?;
            next = euler(&next, &dx, h);
        }
        if !self.noise.is_zero() {
            let mut s = next.to_array();
            for k in 0..ND {
                let w: f64 = rng.sample(StandardNormal);
                s[VEL + k] += sqrt(self.noise.variance[k]) * w;
            }
            next = VehicleState::from_array(s);
        }
        Ok(next)
    }
}

/// One step of the true plant with a single Euler step per period.
pub fn plant_step<R: Rng + ?Sized>(
    x: &VehicleState,
    u: &ControlInput,
    params_true: &VehicleParams,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<VehicleState> {
    Plant::new(*params_true, *noise).step(x, u, rng)
}
