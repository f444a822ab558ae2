use serde::{Deserialize, Serialize};

use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "16qam",
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            "16qam" | "qam16" | "16-qam" => Ok(Modulation::Qam16),
            other => Err(format!("unknown modulation '{other}'")),
        }
    }
}

/// A unit-energy constellation with Gray labels and the box that forms its
/// convex hull.
///
/// `alpha_re`/`alpha_im` are the per-axis box radii; BPSK has a degenerate
/// box with `alpha_im == 0`.
#[derive(Debug, Clone)]
pub struct Constellation {
    pub modulation: Modulation,
    pub points: Vec<C64>,
    /// `labels[i]` holds the bits of `points[i]`, most significant first.
    pub labels: Vec<Vec<u8>>,
    pub alpha_re: f64,
    pub alpha_im: f64,
}

// Gray-coded PAM levels for two bits per axis: 00 -> -3, 01 -> -1, 11 -> 1, 10 -> 3.
const PAM4: [(f64, [u8; 2]); 4] = [(-3.0, [0, 0]), (-1.0, [0, 1]), (1.0, [1, 1]), (3.0, [1, 0])];

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        match modulation {
            Modulation::Bpsk => Constellation {
                modulation,
                points: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
                labels: vec![vec![0], vec![1]],
                alpha_re: 1.0,
                alpha_im: 0.0,
            },
            Modulation::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                let mut points = Vec::with_capacity(4);
                let mut labels = Vec::with_capacity(4);
                // bit 0 carries the in-phase sign, bit 1 the quadrature sign
                for b0 in 0..2u8 {
                    for b1 in 0..2u8 {
                        let re = if b0 == 0 { a } else { -a };
                        let im = if b1 == 0 { a } else { -a };
                        points.push(C64::new(re, im));
                        labels.push(vec![b0, b1]);
                    }
                }
                Constellation {
                    modulation,
                    points,
                    labels,
                    alpha_re: a,
                    alpha_im: a,
                }
            }
            Modulation::Qam16 => {
                let scale = 1.0 / 10f64.sqrt();
                let mut points = Vec::with_capacity(16);
                let mut labels = Vec::with_capacity(16);
                for (re, bre) in PAM4 {
                    for (im, bim) in PAM4 {
                        points.push(C64::new(re * scale, im * scale));
                        labels.push(vec![bre[0], bre[1], bim[0], bim[1]]);
                    }
                }
                Constellation {
                    modulation,
                    points,
                    labels,
                    alpha_re: 3.0 * scale,
                    alpha_im: 3.0 * scale,
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.modulation.bits_per_symbol()
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Index of the nearest point; ties go to the smaller index.
    pub fn nearest(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Projection of one entry onto the convex hull (a box).
    pub fn clamp(&self, z: C64) -> C64 {
        C64::new(
            z.re.clamp(-self.alpha_re, self.alpha_re),
            z.im.clamp(-self.alpha_im, self.alpha_im),
        )
    }

    pub fn contains(&self, z: C64, slack: f64) -> bool {
        z.re.abs() <= self.alpha_re + slack && z.im.abs() <= self.alpha_im + slack
    }
}
