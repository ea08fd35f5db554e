use std::io::Write;
use std::path::Path;

use numlin::C64;
use rustfft::FftPlanner;

/// Spectrum on a uniform grid symmetric about 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// Hz, ascending, `frequencies[i] = −frequencies[len−1−i]`
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<C64>,
    /// dwell time of the FID, s
    pub dt: f64,
    /// acquired FID points (before padding)
    pub n_points: usize,
    /// exponential broadening already applied to the FID, 1/s; informational
    pub broadening: f64,
}

impl SpectrumResult {
    pub fn resolution(&self) -> f64 {
        1.0 / (self.dt * self.frequencies.len() as f64)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm()).collect()
    }

    pub fn with_broadening(mut self, broadening: f64) -> Self {
        self.broadening = broadening;
        self
    }

    /// Index of the grid point nearest to `f`.
    pub fn nearest_bin(&self, f: f64) -> usize {
        let half = (self.frequencies.len() - 1) / 2;
        let k = (f / self.resolution()).round() + half as f64;
        k.clamp(0.0, (self.frequencies.len() - 1) as f64) as usize
    }
}

/// S(f_k) = Σ_j s_j·exp(−i2π·f_k·j·dt).
///
/// A symmetric grid needs an odd transform length, so an even-length FID gets
/// one trailing zero. Σ|s|² = Σ|S|²/N holds for the returned N bins.
pub fn spectrum_from_fid(fid: &[C64], dt: f64) -> SpectrumResult {
    spectrum_zero_filled(fid, dt, fid.len())
}

/// As [`spectrum_from_fid`], padded with zeros to at least `min_len` points
/// (then to odd length) for a finer frequency grid.
pub fn spectrum_zero_filled(fid: &[C64], dt: f64, min_len: usize) -> SpectrumResult {
    assert!(fid.len() >= 2, "a spectrum needs at least two FID points");
    assert!(dt > 0.0 && dt.is_finite(), "dwell time must be > 0");
    let mut n = min_len.max(fid.len());
    if n % 2 == 0 {
        n += 1;
    }
    let mut buf = vec![C64::new(0.0, 0.0); n];
    buf[..fid.len()].copy_from_slice(fid);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let half = (n - 1) / 2;
    // rotate so that bin k of the output is frequency (k − half)·df
    buf.rotate_right(half);
    let df = 1.0 / (n as f64 * dt);
    let frequencies = (0..n).map(|k| (k as f64 - half as f64) * df).collect();
    SpectrumResult { frequencies, amplitudes: buf, dt, n_points: fid.len(), broadening: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// parabolic estimate between grid points, Hz
    pub frequency: f64,
    pub magnitude: f64,
    pub bin: usize,
}

/// Local maxima of |S| at or above `rel_threshold` × the largest magnitude,
/// strongest first.
pub fn find_peaks(spec: &SpectrumResult, rel_threshold: f64) -> Vec<Peak> {
    let m = spec.magnitudes();
    let top = m.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Vec::new();
    }
    let df = spec.resolution();
    let mut peaks: Vec<Peak> = (1..m.len().saturating_sub(1))
        .filter(|&k| m[k] > m[k - 1] && m[k] >= m[k + 1] && m[k] >= rel_threshold * top)
        .map(|k| {
            let (a, b, c) = (m[k - 1], m[k], m[k + 1]);
            let den = a - 2.0 * b + c;
            let shift = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            Peak { frequency: spec.frequencies[k] + shift * df, magnitude: b, bin: k }
        })
        .collect();
    peaks.sort_by(|x, y| y.magnitude.total_cmp(&x.magnitude));
    peaks
}

fn num(v: f64) -> String {
    format!("{v:.11e}")
}

/// Comma-separated (frequency_Hz, real[, imag]) after `#` metadata lines.
pub fn write_spectrum<W: Write>(spec: &SpectrumResult, include_imag: bool, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# spectrum dt_s={} n_points={} n_transform={} broadening_per_s={}",
        num(spec.dt),
        spec.n_points,
        spec.frequencies.len(),
        num(spec.broadening)
    )?;
    writeln!(w, "{}", if include_imag { "frequency_Hz,real,imag" } else { "frequency_Hz,real" })?;
    for (f, a) in spec.frequencies.iter().zip(&spec.amplitudes) {
        if include_imag {
            writeln!(w, "{},{},{}", num(*f), num(a.re), num(a.im))?;
        } else {
            writeln!(w, "{},{}", num(*f), num(a.re))?;
        }
    }
    Ok(())
}

pub fn export_spectrum(path: &Path, spec: &SpectrumResult, include_imag: bool) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_spectrum(spec, include_imag, &mut f)?;
    f.flush()
}
