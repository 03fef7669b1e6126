//! Delay lines and the feedback-delay-network reverb.

/// Feedback delay line: `y[n] = d[n]`, `d[n + D] = x[n] + fb * d[n]`.
///
/// An impulse comes back after `D` samples at unit level and then every `D`
/// samples scaled by another factor of `feedback`.
#[derive(Debug, Clone)]
pub struct FeedbackDelay {
    buffer: Vec<f32>,
    write: usize,
    delay: usize,
    feedback: f32,
}

impl FeedbackDelay {
    /// `feedback` is clamped below 1 to keep the loop stable.
    pub fn new(delay: usize, feedback: f32) -> Self {
        let delay = delay.max(1);
        Self {
            buffer: vec![0.0; delay],
            write: 0,
            delay,
            feedback: feedback.clamp(0.0, 0.999),
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn feedback(&self) -> f32 {
        self.feedback
    }

    #[inline]
    pub fn process(&mut self, input: f32) -> f32 {
        // The buffer holds exactly `delay` samples, so the slot about to be
        // overwritten is the one written `delay` samples ago.
        let delayed = self.buffer[self.write];
        self.buffer[self.write] = input + delayed * self.feedback;
        self.write += 1;
        if self.write == self.delay {
            self.write = 0;
        }
        delayed
    }

    pub fn clear(&mut self) {
        self.buffer.fill(0.0);
        self.write = 0;
    }
}

/// Plain delay line used inside the FDN.
#[derive(Debug, Clone)]
struct DelayLine {
    buffer: Vec<f32>,
    pos: usize,
}

impl DelayLine {
    fn new(len: usize) -> Self {
        Self {
            buffer: vec![0.0; len.max(1)],
            pos: 0,
        }
    }

    #[inline]
    fn read(&self) -> f32 {
        self.buffer[self.pos]
    }

    #[inline]
    fn write_advance(&mut self, value: f32) {
        self.buffer[self.pos] = value;
        self.pos += 1;
        if self.pos == self.buffer.len() {
            self.pos = 0;
        }
    }
}

const FDN_LINES: usize = 8;

// Mutually prime lengths in samples at 48 kHz (about 30 to 61 ms).
const FDN_LENGTHS_48K: [usize; FDN_LINES] = [1423, 1637, 1861, 2053, 2273, 2473, 2707, 2917];

#[inline(always)]
fn butterfly(x: &mut [f32; FDN_LINES], i: usize, j: usize) {
    let (a, b) = (x[i], x[j]);
    x[i] = a + b;
    x[j] = a - b;
}

/// Unnormalized in-place 8-point Walsh-Hadamard transform; scaled by
/// `1/sqrt(8)` it is orthogonal.
#[inline]
fn hadamard8_raw(x: &mut [f32; FDN_LINES]) {
    for (i, j) in [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)] {
        butterfly(x, i, j);
    }
}

#[cfg(test)]
fn hadamard8(x: &mut [f32; FDN_LINES]) {
    hadamard8_raw(x);
    let norm = 1.0 / (FDN_LINES as f32).sqrt();
    for v in x.iter_mut() {
        *v *= norm;
    }
}

/// Mono 8-line feedback delay network with a Hadamard feedback matrix,
/// per-line decay gains for a target T60 and one-pole damping in the loop.
#[derive(Debug, Clone)]
pub struct FdnReverb {
    lines: [DelayLine; FDN_LINES],
    gains: [f32; FDN_LINES],
    damp_state: [f32; FDN_LINES],
    damping: f32,
}

impl FdnReverb {
    /// `decay` is the time in seconds for the tail to fall by 60 dB;
    /// `damping` in `[0, 1)` darkens the tail.
    pub fn new(sample_rate: u32, decay: f32, damping: f32) -> Self {
        let scale = sample_rate as f64 / 48_000.0;
        let lengths = FDN_LENGTHS_48K.map(|l| ((l as f64 * scale).round() as usize).max(1));
        let decay = decay.max(1e-3) as f64;
        // The Hadamard normalization is folded into the loop gains.
        let norm = 1.0 / (FDN_LINES as f64).sqrt();
        let gains = lengths.map(|l| (norm * 10f64.powf(-3.0 * l as f64 / (decay * sample_rate as f64))) as f32);
        Self {
            lines: lengths.map(DelayLine::new),
            gains,
            damp_state: [0.0; FDN_LINES],
            damping: damping.clamp(0.0, 0.99),
        }
    }

    #[inline]
    pub fn process(&mut self, input: f32) -> f32 {
        let mut taps = [0.0f32; FDN_LINES];
        let mut out = 0.0;
        for (i, line) in self.lines.iter().enumerate() {
            let v = line.read();
            out += v;
            self.damp_state[i] = v * (1.0 - self.damping) + self.damp_state[i] * self.damping;
            taps[i] = self.damp_state[i];
        }
        hadamard8_raw(&mut taps);
        for (i, line) in self.lines.iter_mut().enumerate() {
            line.write_advance(input + taps[i] * self.gains[i]);
        }
        out / FDN_LINES as f32
    }

    pub fn clear(&mut self) {
        for line in &mut self.lines {
            line.buffer.fill(0.0);
            line.pos = 0;
        }
        self.damp_state = [0.0; FDN_LINES];
    }
}

/// Two-pole resonator used for formant shaping.
#[derive(Debug, Clone, Copy)]
pub struct Resonator {
    b0: f32,
    a1: f32,
    a2: f32,
    y1: f32,
    y2: f32,
}

impl Resonator {
    pub fn new(sample_rate: u32, freq: f32, bandwidth: f32) -> Self {
        let sr = sample_rate as f32;
        let r = (-std::f32::consts::PI * bandwidth / sr).exp();
        Self {
            b0: 1.0 - r,
            a1: 2.0 * r * (std::f32::consts::TAU * freq / sr).cos(),
            a2: -r * r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f32) -> f32 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_echoes_follow_closed_form() {
        let d = 100;
        let fb = 0.6f32;
        let mut delay = FeedbackDelay::new(d, fb);
        let out: Vec<f32> = (0..d * 6 + 1)
            .map(|n| delay.process(if n == 0 { 1.0 } else { 0.0 }))
            .collect();
        for (n, &y) in out.iter().enumerate() {
            if n >= d && n % d == 0 {
                let k = (n / d - 1) as i32;
                let expected = 0.6f64.powi(k);
                assert!((y as f64 - expected).abs() < 1e-6, "echo {k}: {y} vs {expected}");
            } else {
                assert_eq!(y, 0.0, "sample {n}");
            }
        }
    }

    #[test]
    fn delay_feedback_is_clamped() {
        assert!(FeedbackDelay::new(4, 1.5).feedback() < 1.0);
        assert_eq!(FeedbackDelay::new(0, 0.5).delay(), 1);
    }

    #[test]
    fn hadamard_is_orthogonal() {
        let mut x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 2.0];
        let energy: f32 = x.iter().map(|v| v * v).sum();
        hadamard8(&mut x);
        let after: f32 = x.iter().map(|v| v * v).sum();
        assert!((energy - after).abs() < 1e-4);
        let mut twice = x;
        hadamard8(&mut twice);
        assert!((twice[1] + 2.0).abs() < 1e-5);
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn reverb_tail_decays_near_t60() {
        let sr = 48_000;
        let decay = 1.0;
        let mut fdn = FdnReverb::new(sr, decay, 0.0);
        let n = (sr as f32 * 1.6) as usize;
        let ir: Vec<f32> = (0..n).map(|i| fdn.process(if i == 0 { 1.0 } else { 0.0 })).collect();
        assert!(ir.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        let win = 4800;
        let early = rms(&ir[4800..4800 + win]);
        let late = rms(&ir[52_800..52_800 + win]);
        // 1 s between the window starts: about -60 dB.
        let drop_db = 20.0 * (late / early).log10();
        assert!((-66.0..=-54.0).contains(&drop_db), "drop {drop_db} dB");
    }

    #[test]
    fn silent_reverb_stays_silent() {
        let mut fdn = FdnReverb::new(48_000, 2.0, 0.3);
        assert!((0..10_000).all(|_| fdn.process(0.0) == 0.0));
    }

    #[test]
    fn resonator_peaks_at_centre() {
        let sr = 48_000;
        let gain_at = |f: f32| {
            let mut r = Resonator::new(sr, 1000.0, 100.0);
            let mut peak = 0.0f32;
            for n in 0..sr as usize / 4 {
                let y = r.process((std::f32::consts::TAU * f * n as f32 / sr as f32).sin());
                if n > sr as usize / 8 {
                    peak = peak.max(y.abs());
                }
            }
            peak
        };
        assert!(gain_at(1000.0) > 4.0 * gain_at(3000.0));
    }
}
