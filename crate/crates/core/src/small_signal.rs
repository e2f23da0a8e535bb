//! Small-signal model of the battery-backed dc-link around a steady
//! operating point.
//!
//! Linearising the two-state dc-link/battery dynamics gives the
//! characteristic polynomial `s² + (α - β)s - γ - αβ` with
//!
//! ```text
//! α = (R_s + R_p) / (R_s R_p C_p)
//! β = (E - 2V_dc - V_cp) / (R_s C V_dc)
//! γ = 1 / (R_s² C C_p)
//! ```
//!
//! Everything else here (Routh-Hurwitz test, damping ratio, poles, the
//! closed-form damping approximation and its sensitivities) derives from
//! those three coefficients.

use crate::battery::{params_at_current, ParamTable, RCParams};
use crate::error::{Error, Result};
use crate::steady_state::SteadyOperatingPoint;

/// Golden-section stopping width for the worst-case current search, A.
pub const GOLDEN_TOL_AMPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c_dc: f64,
    pub v_dc_ss: f64,
    pub v_cp_ss: f64,
    pub e: f64,
}

impl LinearModel {
    /// Builds a model directly from coefficients, e.g. for boundary tests.
    pub fn from_coefficients(alpha: f64, beta: f64, gamma: f64, c_dc: f64) -> Result<Self> {
        if !(alpha > 0.0 && gamma > 0.0 && c_dc > 0.0) {
            return Err(Error::Domain(format!(
                "linear model needs alpha, gamma, c_dc > 0 (got {alpha}, {gamma}, {c_dc})"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            c_dc,
            v_dc_ss: f64::NAN,
            v_cp_ss: f64::NAN,
            e: f64::NAN,
        })
    }

    /// `α - β`, the first Routh-Hurwitz margin.
    pub fn damping_margin(&self) -> f64 {
        self.alpha - self.beta
    }

    /// `-αβ - γ`, the second margin (constant term of the polynomial).
    pub fn stiffness_margin(&self) -> f64 {
        -self.alpha * self.beta - self.gamma
    }

    /// State matrix of `(δv_dc, δv_cp)` for the given circuit.
    pub fn state_matrix(&self, rc: &RCParams) -> [[f64; 2]; 2] {
        [
            [self.beta, -1.0 / (rc.r_s * self.c_dc)],
            [-1.0 / (rc.r_s * rc.c_p), -self.alpha],
        ]
    }
}

pub fn linearize(
    op: &SteadyOperatingPoint,
    e: f64,
    rc: &RCParams,
    c_dc: f64,
) -> Result<LinearModel> {
    if !(c_dc > 0.0) {
        return Err(Error::Domain(format!(
            "dc-link capacitance must be positive, got {c_dc}"
        )));
    }
    if op.v_dc_ss == 0.0 || !op.v_dc_ss.is_finite() {
        return Err(Error::SingularLinearization(format!(
            "operating point v_dc = {}",
            op.v_dc_ss
        )));
    }
    let RCParams { r_s, r_p, c_p } = *rc;
    Ok(LinearModel {
        alpha: (r_s + r_p) / (r_s * r_p * c_p),
        beta: (e - 2.0 * op.v_dc_ss - op.v_cp_ss) / (r_s * c_dc * op.v_dc_ss),
        gamma: 1.0 / (r_s * r_s * c_dc * c_p),
        c_dc,
        v_dc_ss: op.v_dc_ss,
        v_cp_ss: op.v_cp_ss,
        e,
    })
}

/// Routh-Hurwitz test on the second-order characteristic polynomial.
pub fn is_stable(m: &LinearModel) -> bool {
    m.damping_margin() > 0.0 && m.stiffness_margin() > 0.0
}

/// Sufficient condition on the operating point: `V_dc > E/2`.
pub fn above_half_emf(op: &SteadyOperatingPoint, e: f64) -> bool {
    op.v_dc_ss > 0.5 * e
}

fn require_stable(m: &LinearModel) -> Result<()> {
    if is_stable(m) {
        Ok(())
    } else {
        Err(Error::Unstable {
            margin_1: m.damping_margin(),
            margin_2: m.stiffness_margin(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingReport {
    /// From the full (α, β, γ) polynomial.
    pub zeta_exact: f64,
    /// Closed form in `R_s`, `R_p`, `C_p`, `C`, valid when `E ≈ V_dc`.
    pub zeta_approx: f64,
}

/// `ζ ≈ (R_s C + R_p C + R_p C_p) / (2 √(R_s R_p C C_p))`.
pub fn zeta_approx(rc: &RCParams, c_dc: f64) -> f64 {
    let RCParams { r_s, r_p, c_p } = *rc;
    0.5 * (r_s * c_dc + r_p * c_dc + r_p * c_p) / (r_s * r_p * c_dc * c_p).sqrt()
}

pub fn damping(m: &LinearModel, rc: &RCParams) -> Result<DampingReport> {
    require_stable(m)?;
    Ok(DampingReport {
        zeta_exact: 0.5 * m.damping_margin() / m.stiffness_margin().sqrt(),
        zeta_approx: zeta_approx(rc, m.c_dc),
    })
}

/// Real poles on the stable branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolePair {
    /// Smaller-magnitude (dominant) pole.
    pub s_slow: f64,
    pub s_fast: f64,
}

impl PolePair {
    pub fn ratio(&self) -> f64 {
        self.s_fast / self.s_slow
    }
}

pub fn poles(m: &LinearModel) -> Result<PolePair> {
    require_stable(m)?;
    let b = m.damping_margin();
    let c = m.stiffness_margin();
    // (α - β)² - 4(-αβ - γ) = (α + β)² + 4γ
    let disc = (m.alpha + m.beta).powi(2) + 4.0 * m.gamma;
    let s_fast = -0.5 * (b + disc.sqrt());
    // Vieta keeps the small root accurate when |s_slow| ≪ |s_fast|.
    let s_slow = c / s_fast;
    Ok(PolePair { s_slow, s_fast })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityReport {
    pub dzeta_drs: f64,
    pub dzeta_drp: f64,
    pub dzeta_dcp: f64,
    /// `∂ζ/∂R_s` with the `R_s C` and `R_p C` terms dropped against
    /// `R_p C_p`; diagnostic only.
    pub dzeta_drs_simplified: f64,
}

/// Analytic partial derivatives of [`zeta_approx`].
pub fn sensitivities(rc: &RCParams, c_dc: f64) -> SensitivityReport {
    let RCParams { r_s, r_p, c_p } = *rc;
    let c = c_dc;
    let root = (r_s * r_p * c * c_p).sqrt();
    SensitivityReport {
        dzeta_drs: (r_s * c - r_p * c - r_p * c_p) / (4.0 * r_s * root),
        dzeta_drp: (r_p * c + r_p * c_p - r_s * c) / (4.0 * r_p * root),
        dzeta_dcp: (r_p * c_p - r_s * c - r_p * c) / (4.0 * c_p * root),
        dzeta_drs_simplified: -r_p * c_p / (4.0 * r_s * root),
    }
}

/// Maximiser of a function on `[lo, hi]`, golden-section search plus an
/// endpoint check so boundary maxima are returned exactly.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    [(mid, f(mid)), (lo, f(lo)), (hi, f(hi))]
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cand| {
            if cand.1 > best.1 {
                cand
            } else {
                best
            }
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub i_star: f64,
    pub zeta_star: f64,
}

/// Discharge current giving the largest damping ratio (slowest response)
/// over `scan`, which defaults to the table's current span.
pub fn worst_case_current(
    table: &ParamTable,
    c_dc: f64,
    scan: Option<(f64, f64)>,
) -> WorstCase {
    let zeta = |i: f64| zeta_approx(&params_at_current(table, i), c_dc);
    if let [(i, _)] = table.entries() {
        return WorstCase {
            i_star: *i,
            zeta_star: zeta(*i),
        };
    }
    let (lo, hi) = scan.unwrap_or_else(|| table.current_span());
    let (i_star, zeta_star) = golden_section_max(zeta, lo, hi, GOLDEN_TOL_AMPS);
    WorstCase { i_star, zeta_star }
}

/// Damping and dominant pole at one discharge current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub current: f64,
    pub zeta_approx: f64,
    /// `None` when the mismatch is infeasible for these parameters.
    pub s_slow: Option<f64>,
}

pub fn damping_sweep(
    table: &ParamTable,
    c_dc: f64,
    e: f64,
    delta_p: f64,
    currents: &[f64],
) -> Vec<SweepRow> {
    currents
        .iter()
        .map(|&i| {
            let rc = params_at_current(table, i);
            let s_slow = SteadyOperatingPoint::solve(e, &rc, delta_p)
                .and_then(|op| linearize(&op, e, &rc, c_dc))
                .and_then(|m| poles(&m))
                .ok()
                .map(|p| p.s_slow);
            SweepRow {
                current: i,
                zeta_approx: zeta_approx(&rc, c_dc),
                s_slow,
            }
        })
        .collect()
}
