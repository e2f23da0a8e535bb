//! Phasor arithmetic and the impedance relations of the buffer-load
//! combination as seen from the point of common coupling (PCC).
//!
//! During a sag the buffer holds its input impedance at the pre-sag value.
//! That impedance is kept in parallel form (`R_in ‖ jX_in`) and converted
//! to a series form so the buffer terminal voltage behind the RL filter can
//! be written down directly.

use std::f64::consts::{FRAC_PI_3, SQRT_2};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Complex phasor (RMS convention).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Phasor {
    pub re: f64,
    pub im: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn from_polar(mag: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(mag * c, mag * s)
    }

    pub fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn angle(self) -> f64 {
        self.im.atan2(self.re)
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Phasor {
    type Output = Phasor;
    fn add(self, rhs: Phasor) -> Phasor {
        Phasor::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    fn sub(self, rhs: Phasor) -> Phasor {
        Phasor::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor::new(-self.re, -self.im)
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    fn mul(self, rhs: Phasor) -> Phasor {
        Phasor::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl Div for Phasor {
    type Output = Phasor;
    fn div(self, rhs: Phasor) -> Phasor {
        let d = rhs.norm_sqr();
        let n = self * rhs.conj();
        Phasor::new(n.re / d, n.im / d)
    }
}

/// Positive and negative sequence content of a three-wire voltage set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceVoltage {
    /// Per-unit of `base_voltage`.
    pub pos_mag: f64,
    pub pos_angle: f64,
    pub neg_mag: f64,
    pub neg_angle: f64,
    /// RMS volts corresponding to 1 p.u.
    pub base_voltage: f64,
}

impl SequenceVoltage {
    pub fn new(
        pos_mag: f64,
        pos_angle: f64,
        neg_mag: f64,
        neg_angle: f64,
        base_voltage: f64,
    ) -> Result<Self> {
        if !(pos_mag >= 0.0 && neg_mag >= 0.0) {
            return Err(Error::Domain(format!(
                "sequence magnitudes must be non-negative (pos {pos_mag}, neg {neg_mag})"
            )));
        }
        if !(base_voltage > 0.0) || !base_voltage.is_finite() {
            return Err(Error::Domain(format!(
                "base voltage must be positive, got {base_voltage}"
            )));
        }
        Ok(Self {
            pos_mag,
            pos_angle,
            neg_mag,
            neg_angle,
            base_voltage,
        })
    }

    /// Balanced positive-sequence set of magnitude `pos_mag`.
    pub fn balanced(pos_mag: f64, base_voltage: f64) -> Result<Self> {
        Self::new(pos_mag, 0.0, 0.0, 0.0, base_voltage)
    }

    pub fn positive(&self) -> Phasor {
        Phasor::from_polar(self.pos_mag * self.base_voltage, self.pos_angle)
    }

    pub fn negative(&self) -> Phasor {
        Phasor::from_polar(self.neg_mag * self.base_voltage, self.neg_angle)
    }
}

/// Pre-sag impedance of the buffer-load combination in parallel form.
///
/// The reactive branch is stored as a susceptance so that the unity power
/// factor case (`X_in` infinite) is represented exactly by `b_in = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputImpedance {
    pub r_in: f64,
    pub b_in: f64,
}

impl InputImpedance {
    pub fn new(r_in: f64, b_in: f64) -> Result<Self> {
        if !(r_in > 0.0) || !r_in.is_finite() {
            return Err(Error::Domain(format!("r_in must be positive, got {r_in}")));
        }
        if !(b_in >= 0.0) || !b_in.is_finite() {
            return Err(Error::Domain(format!(
                "b_in must be non-negative, got {b_in}"
            )));
        }
        Ok(Self { r_in, b_in })
    }

    /// `X_in`, or `None` when the reactive branch is open.
    pub fn x_in(&self) -> Option<f64> {
        (self.b_in > 0.0).then(|| 1.0 / self.b_in)
    }

    /// Complex admittance `1/R_in - j·b_in` of the parallel combination.
    pub fn admittance(&self) -> Phasor {
        Phasor::new(1.0 / self.r_in, -self.b_in)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesImpedance {
    pub r1: f64,
    pub x1: f64,
}

impl SeriesImpedance {
    pub fn as_phasor(&self) -> Phasor {
        Phasor::new(self.r1, self.x1)
    }
}

/// Series RL filter between the PCC and the converter terminals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Carried for reporting; neglected in the impedance relations.
    pub resistance: f64,
    pub inductance: f64,
    /// Mains angular frequency, rad/s.
    pub mains_freq: f64,
}

impl FilterParams {
    pub fn new(resistance: f64, inductance: f64, mains_freq: f64) -> Result<Self> {
        if !(inductance > 0.0) {
            return Err(Error::Domain(format!(
                "filter inductance must be positive, got {inductance}"
            )));
        }
        if !(mains_freq > 0.0) {
            return Err(Error::Domain(format!(
                "mains frequency must be positive, got {mains_freq}"
            )));
        }
        if !(resistance >= 0.0) {
            return Err(Error::Domain(format!(
                "filter resistance must be non-negative, got {resistance}"
            )));
        }
        Ok(Self {
            resistance,
            inductance,
            mains_freq,
        })
    }

    pub fn reactance(&self) -> f64 {
        self.mains_freq * self.inductance
    }
}

/// `R_in = V²/P`, `b_in = Q/V²`.
pub fn compute_input_impedance(v_g0: f64, p_l: f64, q_l: f64) -> Result<InputImpedance> {
    if !(v_g0 > 0.0) {
        return Err(Error::Domain(format!(
            "pre-sag voltage must be positive, got {v_g0}"
        )));
    }
    if !(p_l > 0.0) {
        return Err(Error::Domain(format!("load power must be positive, got {p_l}")));
    }
    if !(q_l >= 0.0) {
        return Err(Error::Domain(format!(
            "reactive load must be non-negative, got {q_l}"
        )));
    }
    let v2 = v_g0 * v_g0;
    InputImpedance::new(v2 / p_l, q_l / v2)
}

/// Series equivalent `R1 + jX1` of `R_in ‖ jX_in` with the filter reactance
/// taken out, so that `R1 + j(X1 + X)` is the full input impedance.
pub fn parallel_to_series(z: InputImpedance, filter: FilterParams) -> SeriesImpedance {
    // R1 = R X² / (R² + X²) = R / (1 + R² b²)
    // X1 = R² X / (R² + X²) - X_f = R² b / (1 + R² b²) - X_f
    let rb = z.r_in * z.b_in;
    let den = 1.0 + rb * rb;
    SeriesImpedance {
        r1: z.r_in / den,
        x1: z.r_in * rb / den - filter.reactance(),
    }
}

/// d/q components of the buffer terminal voltage with `V_g` as reference.
pub fn buffer_voltage_dq(v_g: f64, s: SeriesImpedance, x_filter: f64) -> Result<(f64, f64)> {
    let xt = x_filter + s.x1;
    let den = s.r1 * s.r1 + xt * xt;
    if !(den > 0.0) {
        return Err(Error::DegenerateCircuit(
            "R1² + (X + X1)² vanishes".to_string(),
        ));
    }
    let v_wd = v_g * (s.r1 * s.r1 + s.x1 * xt) / den;
    let v_wq = -v_g * s.r1 * x_filter / den;
    Ok((v_wd, v_wq))
}

/// Real power drawn at unity power factor by the constant-impedance buffer.
pub fn max_power(v_g: f64, r_in: f64) -> f64 {
    v_g * v_g / r_in
}

fn rotator() -> Phasor {
    // a = 1∠120°
    Phasor::from_polar(1.0, 2.0 * FRAC_PI_3)
}

/// Fortescue decomposition. Zero sequence is discarded.
pub fn sequence_decompose(
    phase_a: Phasor,
    phase_b: Phasor,
    phase_c: Phasor,
    base_voltage: f64,
) -> Result<SequenceVoltage> {
    if ![phase_a, phase_b, phase_c].iter().all(|p| p.is_finite()) {
        return Err(Error::Domain("phase phasors must be finite".into()));
    }
    let a = rotator();
    let a2 = a * a;
    let pos = (phase_a + a * phase_b + a2 * phase_c).scale(1.0 / 3.0);
    let neg = (phase_a + a2 * phase_b + a * phase_c).scale(1.0 / 3.0);
    SequenceVoltage::new(
        pos.magnitude() / base_voltage,
        pos.angle(),
        neg.magnitude() / base_voltage,
        neg.angle(),
        base_voltage,
    )
}

/// Phase phasors (a, b, c) of a sequence set.
pub fn sequence_to_phases(seq: &SequenceVoltage) -> [Phasor; 3] {
    let a = rotator();
    let a2 = a * a;
    let p = seq.positive();
    let n = seq.negative();
    [p + n, a2 * p + a * n, a * p + a2 * n]
}

/// Instantaneous phase voltages at time `t` for mains frequency `omega`.
pub fn synth_waveforms(seq: &SequenceVoltage, omega: f64, t: f64) -> [f64; 3] {
    let rot = Phasor::from_polar(1.0, omega * t);
    sequence_to_phases(seq).map(|ph| SQRT_2 * (ph * rot).re)
}

/// Fundamental-frequency RMS phasor of a sampled waveform.
///
/// Samples are taken at `t_k = k·dt` and should span a whole number of
/// mains cycles.
pub fn fundamental_phasor(samples: &[f64], dt: f64, omega: f64) -> Phasor {
    if samples.is_empty() {
        return Phasor::ZERO;
    }
    let acc = samples
        .iter()
        .enumerate()
        .fold(Phasor::ZERO, |acc, (k, &v)| {
            acc + Phasor::from_polar(v, -omega * k as f64 * dt)
        });
    acc.scale(SQRT_2 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const X_TABLE: f64 = 0.30473;

    fn filter_with_reactance(x: f64) -> FilterParams {
        let omega = 2.0 * PI * 50.0;
        FilterParams::new(0.06133, x / omega, omega).unwrap()
    }

    #[test]
    fn input_impedance_upf() {
        let z = compute_input_impedance(415.0, 100e3, 0.0).unwrap();
        assert_relative_eq!(z.r_in, 1.72225, max_relative = 1e-12);
        assert_eq!(z.b_in, 0.0);
        assert!(z.x_in().is_none());
    }

    #[test]
    fn input_impedance_with_reactive_load() {
        let z = compute_input_impedance(415.0, 100e3, 50e3).unwrap();
        assert_relative_eq!(z.x_in().unwrap(), 3.4445, max_relative = 1e-12);
    }

    #[test]
    fn input_impedance_rejects_bad_inputs() {
        assert!(compute_input_impedance(0.0, 100e3, 0.0).is_err());
        assert!(compute_input_impedance(415.0, -1.0, 0.0).is_err());
        assert!(compute_input_impedance(415.0, 100e3, -5.0).is_err());
    }

    #[test]
    fn series_form_upf_limit() {
        let z = InputImpedance::new(1.72225, 0.0).unwrap();
        let s = parallel_to_series(z, filter_with_reactance(X_TABLE));
        assert_eq!(s.r1, 1.72225);
        assert_relative_eq!(s.x1, -X_TABLE, max_relative = 1e-12);
    }

    #[test]
    fn series_form_with_reactance() {
        let z = InputImpedance::new(1.72225, 1.0 / 3.4445).unwrap();
        let s = parallel_to_series(z, filter_with_reactance(X_TABLE));
        assert_relative_eq!(s.r1, 1.37780, max_relative = 1e-6);
        assert_relative_eq!(s.x1, 0.38417, max_relative = 1e-5);
    }

    #[test]
    fn dq_voltage_without_filter_is_grid_voltage() {
        let s = SeriesImpedance { r1: 1.3, x1: 0.4 };
        let (d, q) = buffer_voltage_dq(415.0, s, 0.0).unwrap();
        assert_relative_eq!(d, 415.0, max_relative = 1e-14);
        assert_eq!(q, 0.0);
        assert_eq!(buffer_voltage_dq(0.0, s, 0.3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dq_voltage_matches_complex_divider() {
        let s = SeriesImpedance {
            r1: 1.72225,
            x1: -X_TABLE,
        };
        let (d, q) = buffer_voltage_dq(415.0, s, X_TABLE).unwrap();
        let vw = Complex64::new(415.0, 0.0) * Complex64::new(s.r1, s.x1)
            / Complex64::new(s.r1, X_TABLE + s.x1);
        assert_relative_eq!(d, vw.re, max_relative = 1e-12);
        assert_relative_eq!(q, vw.im, max_relative = 1e-12);
    }

    #[test]
    fn dq_voltage_degenerate() {
        let s = SeriesImpedance { r1: 0.0, x1: -0.3 };
        assert!(matches!(
            buffer_voltage_dq(415.0, s, 0.3),
            Err(Error::DegenerateCircuit(_))
        ));
    }

    #[test]
    fn max_power_values() {
        assert_relative_eq!(max_power(415.0, 1.72225), 100e3, max_relative = 1e-12);
        assert_relative_eq!(max_power(332.0, 1.72225), 64e3, max_relative = 1e-12);
        assert_eq!(max_power(0.0, 1.72225), 0.0);
    }

    #[test]
    fn decompose_balanced_sets() {
        let deg = PI / 180.0;
        let pos = sequence_decompose(
            Phasor::from_polar(1.0, 0.0),
            Phasor::from_polar(1.0, -120.0 * deg),
            Phasor::from_polar(1.0, 120.0 * deg),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(pos.pos_mag, 1.0, epsilon = 1e-14);
        assert!(pos.neg_mag < 1e-14);

        let neg = sequence_decompose(
            Phasor::from_polar(1.0, 0.0),
            Phasor::from_polar(1.0, 120.0 * deg),
            Phasor::from_polar(1.0, -120.0 * deg),
            1.0,
        )
        .unwrap();
        assert!(neg.pos_mag < 1e-14);
        assert_relative_eq!(neg.neg_mag, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn decompose_recovers_unbalanced_superposition() {
        let seq = SequenceVoltage::new(0.8, 0.0, 0.2, 0.0, 415.0).unwrap();
        let [a, b, c] = sequence_to_phases(&seq);
        let back = sequence_decompose(a, b, c, 415.0).unwrap();
        assert_relative_eq!(back.pos_mag, 0.8, epsilon = 1e-14);
        assert_relative_eq!(back.neg_mag, 0.2, epsilon = 1e-14);
    }

    #[test]
    fn synth_single_sequence_peak() {
        let seq = SequenceVoltage::balanced(0.8, 415.0).unwrap();
        let [va, vb, vc] = synth_waveforms(&seq, 2.0 * PI * 50.0, 0.0);
        assert_relative_eq!(va, 0.8 * 415.0 * SQRT_2, max_relative = 1e-14);
        assert_relative_eq!(va + vb + vc, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn synth_zero_sequence_is_silent() {
        let seq = SequenceVoltage::new(0.0, 0.3, 0.0, 1.1, 415.0).unwrap();
        assert_eq!(synth_waveforms(&seq, 314.0, 0.0123), [0.0, 0.0, 0.0]);
    }

    fn roundtrip_over_cycle(seq: &SequenceVoltage) -> SequenceVoltage {
        let omega = 2.0 * PI * 50.0;
        let n = 400;
        let dt = 0.02 / n as f64;
        let mut phases: [Vec<f64>; 3] = Default::default();
        for k in 0..n {
            let v = synth_waveforms(seq, omega, k as f64 * dt);
            for (ph, x) in phases.iter_mut().zip(v) {
                ph.push(x);
            }
        }
        let [a, b, c] = phases.map(|s| fundamental_phasor(&s, dt, omega));
        sequence_decompose(a, b, c, seq.base_voltage).unwrap()
    }

    #[test]
    fn synth_decompose_roundtrip_table_sag() {
        let seq = SequenceVoltage::new(0.8, 0.0, 0.2, 0.0, 415.0).unwrap();
        let back = roundtrip_over_cycle(&seq);
        assert_relative_eq!(back.pos_mag, 0.8, epsilon = 1e-9);
        assert_relative_eq!(back.neg_mag, 0.2, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn series_recombination_reproduces_parallel_impedance(
            r_in in 0.01f64..100.0,
            x_in in prop_oneof![Just(f64::INFINITY), 0.01f64..1000.0],
            x_f in 0.0f64..5.0,
        ) {
            let b = if x_in.is_infinite() { 0.0 } else { 1.0 / x_in };
            let z = InputImpedance::new(r_in, b).unwrap();
            let s = parallel_to_series(z, filter_with_reactance(x_f.max(1e-9)));
            let series = Complex64::new(s.r1, s.x1 + x_f.max(1e-9));
            let oracle = if x_in.is_infinite() {
                Complex64::new(r_in, 0.0)
            } else {
                let zr = Complex64::new(r_in, 0.0);
                let zx = Complex64::new(0.0, x_in);
                zr * zx / (zr + zx)
            };
            prop_assert!((series - oracle).norm() <= 1e-12 * oracle.norm());
        }

        #[test]
        fn max_power_scales_quadratically(v in 0.0f64..1000.0, k in 0.0f64..3.0, r in 0.01f64..10.0) {
            let lhs = max_power(k * v, r);
            let rhs = k * k * max_power(v, r);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn terminal_magnitude_is_divider_ratio(
            v_g in 1.0f64..500.0, r1 in 0.01f64..10.0, x1 in -2.0f64..2.0, x in 0.0f64..1.0,
        ) {
            let s = SeriesImpedance { r1, x1 };
            let (d, q) = buffer_voltage_dq(v_g, s, x).unwrap();
            let expected = v_g * s.as_phasor().magnitude() / Phasor::new(r1, x + x1).magnitude();
            prop_assert!((d.hypot(q) - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn decompose_inverts_synthesis(
            pos in 0.0f64..1.5, neg in 0.0f64..0.5,
            pa in -PI..PI, na in -PI..PI,
        ) {
            let seq = SequenceVoltage::new(pos, pa, neg, na, 415.0).unwrap();
            let back = roundtrip_over_cycle(&seq);
            prop_assert!((back.pos_mag - pos).abs() < 1e-9);
            prop_assert!((back.neg_mag - neg).abs() < 1e-9);
        }
    }
}
