//! Hyperfine level scheme of the Rb-87 D2 line restricted to the states the
//! memory protocol touches: ground F = 1, 2 and excited F' = 1, 2.
//!
//! Dipole amplitudes are normalised to the |F=2, m=2⟩ ↔ |F'=3, m=3⟩ cycling
//! transition. With this normalisation the squared amplitudes out of every
//! excited sublevel sum to one, so they double as spontaneous-emission
//! branching ratios.

use std::collections::BTreeMap;

/// A hyperfine Zeeman sublevel |F, m_F⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sublevel {
    pub f: u8,
    pub m: i8,
}

impl Sublevel {
    pub const fn new(f: u8, m: i8) -> Self {
        Self { f, m }
    }
}

/// Polarisation of a dipole transition, labelled by Δm = m_excited − m_ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    SigmaMinus,
    Pi,
    SigmaPlus,
}

impl Polarization {
    pub fn from_delta_m(dm: i8) -> Option<Self> {
        match dm {
            -1 => Some(Self::SigmaMinus),
            0 => Some(Self::Pi),
            1 => Some(Self::SigmaPlus),
            _ => None,
        }
    }

    pub fn delta_m(self) -> i8 {
        match self {
            Self::SigmaMinus => -1,
            Self::Pi => 0,
            Self::SigmaPlus => 1,
        }
    }
}

// (F, m, F', m', sign, num, den): amplitude = sign * sqrt(num/den)
#[rustfmt::skip]
const D2_TABLE: &[(u8, i8, u8, i8, i8, u32, u32)] = &[
    (1, -1, 1, -1, -1, 5, 12), (1, -1, 1, 0, 1, 5, 12),
    (1, 0, 1, -1, -1, 5, 12), (1, 0, 1, 1, 1, 5, 12),
    (1, 1, 1, 0, -1, 5, 12), (1, 1, 1, 1, 1, 5, 12),
    (1, -1, 2, -2, 1, 1, 2), (1, -1, 2, -1, -1, 1, 4), (1, -1, 2, 0, 1, 1, 12),
    (1, 0, 2, -1, 1, 1, 4), (1, 0, 2, 0, -1, 1, 3), (1, 0, 2, 1, 1, 1, 4),
    (1, 1, 2, 0, 1, 1, 12), (1, 1, 2, 1, -1, 1, 4), (1, 1, 2, 2, 1, 1, 2),
    (2, -2, 1, -1, 1, 1, 10),
    (2, -1, 1, -1, 1, 1, 20), (2, -1, 1, 0, 1, 1, 20),
    (2, 0, 1, -1, 1, 1, 60), (2, 0, 1, 0, 1, 1, 15), (2, 0, 1, 1, 1, 1, 60),
    (2, 1, 1, 0, 1, 1, 20), (2, 1, 1, 1, 1, 1, 20),
    (2, 2, 1, 1, 1, 1, 10),
    (2, -2, 2, -2, -1, 1, 3), (2, -2, 2, -1, 1, 1, 6),
    (2, -1, 2, -2, -1, 1, 6), (2, -1, 2, -1, -1, 1, 12), (2, -1, 2, 0, 1, 1, 4),
    (2, 0, 2, -1, -1, 1, 4), (2, 0, 2, 1, 1, 1, 4),
    (2, 1, 2, 0, -1, 1, 4), (2, 1, 2, 1, 1, 1, 12), (2, 1, 2, 2, 1, 1, 6),
    (2, 2, 2, 1, -1, 1, 6), (2, 2, 2, 2, 1, 1, 3),
];

/// Transition amplitudes and branching ratios for the D2 levels in use.
#[derive(Debug, Clone)]
pub struct LevelScheme {
    pub ground_states: Vec<Sublevel>,
    pub excited_states: Vec<Sublevel>,
    pub transition_table: BTreeMap<(Sublevel, Sublevel, Polarization), f64>,
    pub branching: BTreeMap<Sublevel, Vec<(Sublevel, f64)>>,
}

fn manifold(f: u8) -> impl Iterator<Item = Sublevel> {
    let f_i = f as i8;
    (-f_i..=f_i).map(move |m| Sublevel::new(f, m))
}

impl LevelScheme {
    pub fn rb87_d2() -> Self {
        let ground_states: Vec<_> = manifold(1).chain(manifold(2)).collect();
        let excited_states: Vec<_> = manifold(1).chain(manifold(2)).collect();
        let mut transition_table = BTreeMap::new();
        for &(f, m, fe, me, sign, num, den) in D2_TABLE {
            let g = Sublevel::new(f, m);
            let e = Sublevel::new(fe, me);
            let pol =
                Polarization::from_delta_m(me - m).expect("table holds dipole transitions only");
            let amp = sign as f64 * (num as f64 / den as f64).sqrt();
            transition_table.insert((g, e, pol), amp);
        }
        let mut branching = BTreeMap::new();
        for &e in &excited_states {
            let mut out: Vec<(Sublevel, f64)> = transition_table
                .iter()
                .filter(|((_, ex, _), _)| *ex == e)
                .map(|((g, _, _), a)| (*g, a * a))
                .collect();
            let total: f64 = out.iter().map(|(_, p)| p).sum();
            for entry in &mut out {
                entry.1 /= total;
            }
            branching.insert(e, out);
        }
        Self {
            ground_states,
            excited_states,
            transition_table,
            branching,
        }
    }

    /// Relative dipole amplitude between a ground and an excited sublevel (zero when forbidden).
    pub fn amplitude(&self, ground: Sublevel, excited: Sublevel) -> f64 {
        match Polarization::from_delta_m(excited.m - ground.m) {
            Some(pol) => self
                .transition_table
                .get(&(ground, excited, pol))
                .copied()
                .unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// Probability that `excited` decays into the ground manifold `f`.
    pub fn branching_to_manifold(&self, excited: Sublevel, f: u8) -> f64 {
        self.branching
            .get(&excited)
            .map(|v| v.iter().filter(|(g, _)| g.f == f).map(|(_, p)| p).sum())
            .unwrap_or(0.0)
    }
}

impl Default for LevelScheme {
    fn default() -> Self {
        Self::rb87_d2()
    }
}

/// Amplitude of the F' = 2 → F ground transitions used by the dynamics engine,
/// computed once. Index order m = −2..=2 for excited; ground index m + F.
pub(crate) fn f2_excited_amplitude(ground_f: u8, ground_m: i8, excited_m: i8) -> f64 {
    D2_TABLE
        .iter()
        .find(|&&(f, m, fe, me, ..)| f == ground_f && m == ground_m && fe == 2 && me == excited_m)
        .map(|&(.., sign, num, den)| sign as f64 * (num as f64 / den as f64).sqrt())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: Wigner 3j and 6j symbols from the Racah formulas,
    // with the hyperfine reduction for I = 3/2, J = 1/2 → J' = 3/2.
    fn fact(n: i64) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    // arguments are doubled angular momenta
    fn tri(a: i64, b: i64, c: i64) -> f64 {
        fact((a + b - c) / 2) * fact((a - b + c) / 2) * fact((-a + b + c) / 2)
            / fact((a + b + c) / 2 + 1)
    }

    fn three_j(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
        if m1 + m2 + m3 != 0 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
            return 0.0;
        }
        if j3 > j1 + j2 || j3 < (j1 - j2).abs() {
            return 0.0;
        }
        let pre = tri(j1, j2, j3).sqrt()
            * (fact((j1 + m1) / 2)
                * fact((j1 - m1) / 2)
                * fact((j2 + m2) / 2)
                * fact((j2 - m2) / 2)
                * fact((j3 + m3) / 2)
                * fact((j3 - m3) / 2))
            .sqrt();
        let mut sum = 0.0;
        for t in 0..=((j1 + j2 + j3) / 2) {
            let args = [
                t,
                (j3 - j2 + m1) / 2 + t,
                (j3 - j1 - m2) / 2 + t,
                (j1 + j2 - j3) / 2 - t,
                (j1 - m1) / 2 - t,
                (j2 + m2) / 2 - t,
            ];
            if args.iter().any(|&a| a < 0) {
                continue;
            }
            let den: f64 = args.iter().map(|&a| fact(a)).product();
            sum += if t % 2 == 0 { 1.0 } else { -1.0 } / den;
        }
        let phase = if ((j1 - j2 - m3) / 2) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        phase * pre * sum
    }

    fn six_j(j1: i64, j2: i64, j3: i64, j4: i64, j5: i64, j6: i64) -> f64 {
        let triads = [(j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3)];
        let mut pre = 1.0;
        for &(a, b, c) in &triads {
            if c > a + b || c < (a - b).abs() || (a + b + c) % 2 != 0 {
                return 0.0;
            }
            pre *= tri(a, b, c).sqrt();
        }
        let sums = [j1 + j2 + j3, j1 + j5 + j6, j4 + j2 + j6, j4 + j5 + j3];
        let pairs = [j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4];
        let lo = sums.iter().copied().max().unwrap() / 2;
        let hi = pairs.iter().copied().min().unwrap() / 2;
        let mut sum = 0.0;
        for t in lo..=hi {
            let mut den = 1.0;
            for s in sums {
                den *= fact(t - s / 2);
            }
            for p in pairs {
                den *= fact(p / 2 - t);
            }
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * fact(t + 1) / den;
        }
        pre * sum
    }

    // doubled: I = 3, J = 1, J' = 3
    fn oracle_amplitude(f: i64, m: i64, fe: i64, me: i64) -> f64 {
        let (i2, j2, je2) = (3, 1, 3);
        let (f2, m2, fe2, me2) = (2 * f, 2 * m, 2 * fe, 2 * me);
        let q2 = m2 - me2;
        let phase_a = if (f - m) % 2 == 0 { 1.0 } else { -1.0 };
        let expo = (fe2 + j2 + 2 + i2) / 2;
        let phase_b = if expo % 2 == 0 { 1.0 } else { -1.0 };
        phase_a
            * three_j(f2, 2, fe2, -m2, q2, me2)
            * phase_b
            * (((f2 + 1) * (fe2 + 1) * (j2 + 1)) as f64).sqrt()
            * six_j(j2, je2, 2, fe2, f2, i2)
    }

    #[test]
    fn table_matches_direct_clebsch_gordan() {
        let scheme = LevelScheme::rb87_d2();
        let cycling = oracle_amplitude(2, 2, 3, 3);
        assert!((cycling.abs() - 0.5f64.sqrt()).abs() < 1e-12);
        let mut checked = 0;
        for g in &scheme.ground_states {
            for e in &scheme.excited_states {
                if (e.m - g.m).abs() > 1 {
                    continue;
                }
                let want =
                    oracle_amplitude(g.f as i64, g.m as i64, e.f as i64, e.m as i64) / cycling;
                let got = scheme.amplitude(*g, *e);
                assert!(
                    (want - got).abs() < 1e-12,
                    "{g:?} -> {e:?}: {want} vs {got}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn only_dipole_allowed_entries() {
        let scheme = LevelScheme::rb87_d2();
        for ((g, e, pol), a) in &scheme.transition_table {
            assert!((g.f as i8 - e.f as i8).abs() <= 1);
            assert_eq!(e.m - g.m, pol.delta_m());
            assert!(*a != 0.0);
        }
    }

    #[test]
    fn branching_sums_to_one() {
        let scheme = LevelScheme::rb87_d2();
        for (e, dist) in &scheme.branching {
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "{e:?}");
        }
        // the raw squared amplitudes are already normalised
        for e in &scheme.excited_states {
            let raw: f64 = scheme
                .ground_states
                .iter()
                .map(|g| scheme.amplitude(*g, *e).powi(2))
                .sum();
            assert!((raw - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn f2_prime_branches_half_to_each_manifold() {
        let scheme = LevelScheme::rb87_d2();
        for m in -2..=2 {
            let e = Sublevel::new(2, m);
            assert!((scheme.branching_to_manifold(e, 2) - 0.5).abs() < 1e-12);
            assert!((scheme.branching_to_manifold(e, 1) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_transitions() {
        let scheme = LevelScheme::rb87_d2();
        let g0 = Sublevel::new(1, 0);
        assert!((scheme.amplitude(g0, Sublevel::new(2, 1)) - 0.5).abs() < 1e-12);
        assert!((scheme.amplitude(g0, Sublevel::new(2, -1)) - 0.5).abs() < 1e-12);
        // π herald transitions carry opposite signs for m = ±1 and vanish for m = 0
        let p = scheme.amplitude(Sublevel::new(2, 1), Sublevel::new(2, 1));
        let n = scheme.amplitude(Sublevel::new(2, -1), Sublevel::new(2, -1));
        assert!((p + n).abs() < 1e-12 && (p - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(
            scheme.amplitude(Sublevel::new(2, 0), Sublevel::new(2, 0)),
            0.0
        );
        assert_eq!(f2_excited_amplitude(2, 1, 1), p);
    }
}
