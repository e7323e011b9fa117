//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

/// Direct depthwise temporal convolution on `[B,T,P,C]` data, written from
/// the definition with explicit zero padding.
pub fn conv_oracle(
    x: &[f64],
    (b, t, p, c): (usize, usize, usize, usize),
    w: &[f64],
    bias: &[f64],
    k: usize,
    d: usize,
    same: bool,
) -> (usize, Vec<f64>) {
    let span = (k - 1) * d;
    let (t_out, left) = if same { (t, span / 2) } else { (t - span, 0) };
    let mut out = vec![0.0; b * t_out * p * c];
    for bi in 0..b {
        for to in 0..t_out {
            for pi in 0..p {
                for ci in 0..c {
                    let mut acc = bias[ci];
                    for j in 0..k {
                        let src = to as i64 + (j * d) as i64 - left as i64;
                        if src < 0 || src >= t as i64 {
                            continue;
                        }
                        acc += w[j * c + ci] * x[((bi * t + src as usize) * p + pi) * c + ci];
                    }
                    out[((bi * t_out + to) * p + pi) * c + ci] = acc;
                }
            }
        }
    }
    (t_out, out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// AP from first principles: for every positive item take the cut-off that
/// admits exactly the items ranked at or above it (higher score, or equal
/// score and smaller index), and average precision over those cut-offs.
/// Accumulated as an exact fraction.
pub fn ap_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let (mut num, mut den) = (0u64, 1u64);
    let mut positives = 0u64;
    for i in 0..n {
        if labels[i] == 0 {
            continue;
        }
        positives += 1;
        let admitted = (0..n).filter(|&j| above(i, j)).count() as u64;
        let hits = (0..n).filter(|&j| above(i, j) && labels[j] == 1).count() as u64;
        // num/den += hits/admitted
        let l = den / gcd(den, admitted) * admitted;
        num = num * (l / den) + hits * (l / admitted);
        den = l;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    (positives > 0).then(|| num as f64 / (den * positives) as f64)
}
