//! Finite-level dynamic quantizers with zoom variables.
//!
//! The per-axis geometry is a uniform mid-tread grid with step `Δ/√dim`, so a
//! vector with `|v| ≤ R` is reproduced within `Δ` in the 2-norm. Inputs with
//! `|v| < Δ` map to the all-zero symbol.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_eig_extremes, Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    pub dim: usize,
    pub range: f64,
    pub sensitivity: f64,
    pub levels_per_axis: usize,
}

impl QuantizerSpec {
    pub fn new(dim: usize, range: f64, sensitivity: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("quantizer dimension must be positive".into()));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(Error::Config(format!("quantizer sensitivity {sensitivity} must be positive")));
        }
        if !(range >= sensitivity && range.is_finite()) {
            return Err(Error::Config(format!(
                "quantizer range {range} must be finite and at least the sensitivity {sensitivity}"
            )));
        }
        let step = sensitivity / (dim as f64).sqrt();
        let max_index = (range / step).ceil() as usize;
        Ok(Self {
            dim,
            range,
            sensitivity,
            levels_per_axis: 2 * max_index + 1,
        })
    }

    pub fn step(&self) -> f64 {
        self.sensitivity / (self.dim as f64).sqrt()
    }

    pub fn max_index(&self) -> i64 {
        ((self.levels_per_axis - 1) / 2) as i64
    }

    /// `⌈log₂(levels^dim + 1)⌉`; one codeword is reserved for the dead zone.
    pub fn alphabet_bits(&self) -> u32 {
        let codewords = (self.levels_per_axis as f64).powi(self.dim as i32) + 1.0;
        codewords.log2().ceil() as u32
    }

    /// `⌈log₂(R/Δ)⌉`, the level count implied by the range-to-sensitivity ratio.
    pub fn ratio_bits(&self) -> u32 {
        (self.range / self.sensitivity).log2().ceil().max(0.0) as u32
    }

    fn level(&self, index: i64) -> f64 {
        index as f64 * self.step()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomState {
    value: f64,
    update_count: u64,
}

impl ZoomState {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("zoom value {value} must be positive and finite")));
        }
        Ok(Self {
            value,
            update_count: 0,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn set(&mut self, value: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("zoom value {value} must be positive and finite")));
        }
        self.value = value;
        self.update_count += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub indices: Vec<i64>,
}

impl Symbol {
    pub fn zero(dim: usize) -> Self {
        Self {
            indices: vec![0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.indices.iter().all(|&i| i == 0)
    }

    /// Time-stamp as little-endian `f64`, then one little-endian `i32` per axis.
    pub fn to_wire(&self, time: f64) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.indices.len());
        out.extend_from_slice(&time.to_le_bytes());
        for &i in &self.indices {
            let i = i32::try_from(i).expect("symbol index fits in i32");
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn from_wire(bytes: &[u8], dim: usize) -> Result<(f64, Self)> {
        if bytes.len() != 8 + 4 * dim {
            return Err(Error::Parse(format!(
                "wire record has {} bytes, expected {}",
                bytes.len(),
                8 + 4 * dim
            )));
        }
        let time = f64::from_le_bytes(bytes[..8].try_into().unwrap());
        let indices = bytes[8..]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
            .collect();
        Ok((time, Self { indices }))
    }
}

pub fn quantize_static(spec: &QuantizerSpec, v: &Vector) -> Result<(Vector, Symbol)> {
    if v.len() != spec.dim {
        return Err(Error::Dimension(format!(
            "quantizer expects dimension {}, got {}",
            spec.dim,
            v.len()
        )));
    }
    let norm = v.norm();
    if !(norm <= spec.range) {
        return Err(Error::Saturation {
            norm,
            range: spec.range,
        });
    }
    if norm < spec.sensitivity {
        return Ok((Vector::zeros(spec.dim), Symbol::zero(spec.dim)));
    }
    let step = spec.step();
    let indices: Vec<i64> = v.iter().map(|x| (x / step).round() as i64).collect();
    let value = Vector::from_iterator(spec.dim, indices.iter().map(|&i| spec.level(i)));
    Ok((value, Symbol { indices }))
}

/// `q_ν(v) = ν q(v/ν)`.
pub fn quantize_dynamic(spec: &QuantizerSpec, zoom: &ZoomState, v: &Vector) -> Result<(Vector, Symbol)> {
    let nu = zoom.value();
    let scaled = v / nu;
    match quantize_static(spec, &scaled) {
        Ok((value, sym)) => Ok((value * nu, sym)),
        Err(Error::Saturation { norm, range }) => Err(Error::Saturation {
            norm: norm * nu,
            range: range * nu,
        }),
        Err(e) => Err(e),
    }
}

pub fn decode(spec: &QuantizerSpec, zoom: &ZoomState, symbol: &Symbol) -> Result<Vector> {
    if symbol.indices.len() != spec.dim {
        return Err(Error::Dimension(format!(
            "symbol has {} indices, quantizer dimension is {}",
            symbol.indices.len(),
            spec.dim
        )));
    }
    let max = spec.max_index();
    if let Some(&bad) = symbol.indices.iter().find(|i| i.abs() > max) {
        return Err(Error::OutOfAlphabet { index: bad, max });
    }
    let nu = zoom.value();
    Ok(Vector::from_iterator(
        spec.dim,
        symbol.indices.iter().map(|&i| spec.level(i) * nu),
    ))
}

/// One end of a quantized channel: the spec plus its own copy of the zoom.
#[derive(Debug, Clone)]
pub struct DynamicQuantizer {
    pub spec: QuantizerSpec,
    pub zoom: ZoomState,
}

impl DynamicQuantizer {
    pub fn new(spec: QuantizerSpec, zoom: f64) -> Result<Self> {
        Ok(Self {
            spec,
            zoom: ZoomState::new(zoom)?,
        })
    }

    pub fn encode(&self, v: &Vector) -> Result<(Vector, Symbol)> {
        quantize_dynamic(&self.spec, &self.zoom, v)
    }

    pub fn decode(&self, s: &Symbol) -> Result<Vector> {
        decode(&self.spec, &self.zoom, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitBudget {
    /// `Δ/R`.
    pub ratio: f64,
    /// `R/Δ`.
    pub levels: f64,
    /// `⌈log₂(R/Δ)⌉`.
    pub bits: u32,
}

fn bit_budget(p: &Mat, gain_norm: f64, chi: f64, rho: f64, what: &str) -> Result<BitBudget> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("{what}: contraction target {rho} must lie in (0, 1)")));
    }
    let (lmin, lmax) = sym_eig_extremes(p);
    if !(lmin > 0.0) {
        return Err(Error::NotSpd(format!("{what}: Lyapunov matrix has eigenvalue {lmin:e}")));
    }
    let ratio = (lmin / lmax).sqrt() * rho / (chi * gain_norm);
    let levels = 1.0 / ratio;
    Ok(BitBudget {
        ratio,
        levels,
        bits: levels.log2().ceil() as u32,
    })
}

/// `Δ_y/R_y = √(λ_min(P_o)/λ_max(P_o)) · ρ̄/(χ_o ‖C‖)`.
pub fn required_ratio_output(p_o: &Mat, c: &Mat, chi_o: f64, rho_bar: f64) -> Result<BitBudget> {
    bit_budget(p_o, spectral_norm(c), chi_o, rho_bar, "output quantizer")
}

/// `Δ_u/R_u = √(λ_min(P_c)/λ_max(P_c)) · ρ̄_u/(χ_c ‖K‖)`.
pub fn required_ratio_input(p_c: &Mat, k: &Mat, chi_c: f64, rho_bar_u: f64) -> Result<BitBudget> {
    bit_budget(p_c, spectral_norm(k), chi_c, rho_bar_u, "input quantizer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(range: f64) -> QuantizerSpec {
        QuantizerSpec::new(1, range, 1.0).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn integer_rounding() {
        let (val, sym) = quantize_static(&scalar(128.0), &v(&[3.4])).unwrap();
        assert_eq!(val[0], 3.0);
        assert_eq!(sym.indices, vec![3]);
        let (val, sym) = quantize_static(&scalar(128.0), &v(&[0.0])).unwrap();
        assert_eq!(val[0], 0.0);
        assert!(sym.is_zero());
    }

    #[test]
    fn dead_zone_in_two_dimensions() {
        let spec = QuantizerSpec::new(2, 10.0, 0.5).unwrap();
        let (val, sym) = quantize_static(&spec, &v(&[0.2, 0.1])).unwrap();
        assert_eq!(val, Vector::zeros(2));
        assert!(sym.is_zero());
    }

    #[test]
    fn saturation_is_an_error() {
        assert!(matches!(
            quantize_static(&scalar(5.0), &v(&[5.5])),
            Err(Error::Saturation { .. })
        ));
        let z = ZoomState::new(2.0).unwrap();
        assert!(matches!(
            quantize_dynamic(&scalar(5.0), &z, &v(&[10.5])),
            Err(Error::Saturation { .. })
        ));
    }

    #[test]
    fn dynamic_examples() {
        let spec = scalar(128.0);
        let z2 = ZoomState::new(2.0).unwrap();
        let (val, sym) = quantize_dynamic(&spec, &z2, &v(&[3.4])).unwrap();
        assert_eq!(val[0], 4.0);
        assert_eq!(decode(&spec, &z2, &sym).unwrap()[0], 4.0);

        let z1 = ZoomState::new(1.0).unwrap();
        assert_eq!(
            quantize_dynamic(&spec, &z1, &v(&[-7.6])).unwrap(),
            quantize_static(&spec, &v(&[-7.6])).unwrap()
        );

        let zq = ZoomState::new(0.25).unwrap();
        assert_eq!(quantize_dynamic(&spec, &zq, &v(&[0.2])).unwrap().0[0], 0.0);
    }

    #[test]
    fn decode_rejects_out_of_alphabet() {
        let spec = scalar(3.0);
        let z = ZoomState::new(1.0).unwrap();
        assert!(matches!(
            decode(&spec, &z, &Symbol { indices: vec![4] }),
            Err(Error::OutOfAlphabet { index: 4, max: 3 })
        ));
        assert_eq!(decode(&spec, &z, &Symbol::zero(1)).unwrap(), Vector::zeros(1));
    }

    #[test]
    fn zoom_counts_updates_and_stays_positive() {
        let mut z = ZoomState::new(1.0).unwrap();
        z.set(0.5).unwrap();
        z.set(0.25).unwrap();
        assert_eq!(z.update_count(), 2);
        assert!(z.set(0.0).is_err());
        assert!(ZoomState::new(-1.0).is_err());
    }

    #[test]
    fn bits() {
        let spec = QuantizerSpec::new(1, 126.4, 1.0).unwrap();
        assert_eq!(spec.ratio_bits(), 7);
        assert_eq!(spec.levels_per_axis, 255);
        assert_eq!(spec.alphabet_bits(), 8);
    }

    #[test]
    fn wire_round_trip() {
        let s = Symbol { indices: vec![-3, 0, 127] };
        let bytes = s.to_wire(1.25);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[8..12], &(-3i32).to_le_bytes());
        let (t, back) = Symbol::from_wire(&bytes, 3).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(back, s);
        assert!(Symbol::from_wire(&bytes, 2).is_err());
    }

    #[test]
    fn output_ratio_from_example_constants() {
        let p_o = Mat::from_row_slice(2, 2, &[1.63, -1.47, -1.47, 1.93]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = required_ratio_output(&p_o, &c, 37.54, 0.975).unwrap();
        assert!((b.levels - 126.4).abs() < 1.0, "{}", b.levels);
        assert_eq!(b.bits, 7);
        let b2 = required_ratio_output(&p_o, &c, 37.54, 0.4875).unwrap();
        assert!((b.ratio - 2.0 * b2.ratio).abs() < 1e-15);
    }

    #[test]
    fn ratio_rejects_degenerate_contraction() {
        let p = Mat::identity(2, 2);
        let k = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(required_ratio_input(&p, &k, 1.0, 0.0).is_err());
        assert!(required_ratio_input(&p, &k, 1.0, 1.0).is_err());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, dim)
    }

    proptest! {
        #[test]
        fn contract_and_round_trip(
            dim in 1usize..4,
            raw in vec_strategy(3),
            scale in 0.0f64..1.0,
            nu in 1e-3f64..1e3,
            delta in 0.05f64..2.0,
            ratio in 1.0f64..300.0,
        ) {
            let spec = QuantizerSpec::new(dim, delta * ratio, delta).unwrap();
            let zoom = ZoomState::new(nu).unwrap();
            let mut x = Vector::from_column_slice(&raw[..dim]);
            let n = x.norm();
            if n > 0.0 {
                x *= scale * spec.range * nu / n;
            }
            let (q, sym) = quantize_dynamic(&spec, &zoom, &x).unwrap();
            prop_assert!((&q - &x).norm() <= delta * nu * (1.0 + 1e-12));
            if x.norm() < delta * nu * (1.0 - 1e-12) {
                prop_assert!(sym.is_zero());
            }
            prop_assert_eq!(decode(&spec, &zoom, &sym).unwrap(), q.clone());
            let unit = ZoomState::new(1.0).unwrap();
            let (q1, sym1) = quantize_dynamic(&spec, &unit, &(&x / nu)).unwrap();
            prop_assert_eq!(q1 * nu, q);
            prop_assert_eq!(sym1, sym);
        }
    }
}
