use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Dominant non-DC frequency of a ±1 signal sampled at `sample_rate_hz`.
///
/// The mean is removed, the signal zero-padded to the next power of two
/// `>= 4 * len`, and the magnitude peak refined by parabolic interpolation.
/// `None` for a constant signal.
pub fn dominant_frequency(signal: &[i8], sample_rate_hz: f64) -> Option<f64> {
    let len = (4 * signal.len()).next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(len);
    dominant_frequency_with(signal, sample_rate_hz, fft.as_ref())
}

pub(crate) fn dominant_frequency_with(
    signal: &[i8],
    sample_rate_hz: f64,
    fft: &dyn Fft<f64>,
) -> Option<f64> {
    let n = fft.len();
    if signal.len() < 2 || n < signal.len() {
        return None;
    }
    let mean = signal.iter().map(|&v| v as f64).sum::<f64>() / signal.len() as f64;
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .map(|&v| Complex::new(v as f64 - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut buf);

    let mags: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    let (peak, &peak_mag) =
        mags.iter().enumerate().skip(1).fold(
            (0, &0.0),
            |best, (k, m)| if *m > *best.1 { (k, m) } else { best },
        );
    if peak == 0 || peak_mag <= 1e-9 * signal.len() as f64 {
        return None;
    }
    let mut pos = peak as f64;
    if peak + 1 < mags.len() {
        let (a, b, c) = (mags[peak - 1], mags[peak], mags[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            pos += 0.5 * (a - c) / denom;
        }
    }
    Some(pos * sample_rate_hz / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal_has_no_frequency() {
        assert_eq!(dominant_frequency(&[1; 64], 1000.0), None);
        assert_eq!(dominant_frequency(&[-1; 64], 1000.0), None);
    }

    #[test]
    fn fast_square_wave() {
        // period 4 samples at 1 kHz -> 250 Hz
        let s: Vec<i8> = (0..400)
            .map(|i| if (i / 2) % 2 == 0 { 1 } else { -1 })
            .collect();
        let f = dominant_frequency(&s, 1000.0).unwrap();
        assert!((f - 250.0).abs() < 0.5, "{f}");
    }
}
