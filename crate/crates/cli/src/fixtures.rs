//! Built-in 5-class tabular datasets in raw record form, for runs without
//! NSL-KDD files.
//!
//! Rows have six numeric columns (two informative, four noise), one binary
//! and one three-way nominal column, so every encoding path is exercised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use zdgan_core::data::{Class, Layout, RawKind, RawTable};

use crate::config::FixtureKind;

const PROTOCOLS: [&str; 3] = ["icmp", "tcp", "udp"];

pub fn layout() -> Layout {
    let mut names: Vec<String> = (0..6).map(|i| format!("num{i}")).collect();
    names.push("flag".into());
    names.push("proto".into());
    let mut kinds = vec![RawKind::Numeric; 6];
    kinds.push(RawKind::Binary);
    kinds.push(RawKind::Nominal);
    Layout { names, kinds }
}

struct ClassShape {
    center: [f64; 2],
    std: f64,
    flag_p: f64,
    proto_w: [f64; 3],
}

fn shape(kind: FixtureKind, class: Class) -> ClassShape {
    let (center, std) = match (kind, class) {
        (FixtureKind::Blobs, Class::Normal) => ([-0.5, -0.5], 0.12),
        (FixtureKind::Blobs, Class::Dos) => ([0.5, 0.5], 0.12),
        (FixtureKind::Blobs, Class::Probe) => ([0.5, -0.5], 0.12),
        (FixtureKind::Blobs, Class::U2r) => ([-0.5, 0.5], 0.12),
        (FixtureKind::Blobs, Class::R2l) => ([0.0, 0.0], 0.12),
        (FixtureKind::Adjacent, Class::Normal) => ([0.0, 0.0], 0.15),
        (FixtureKind::Adjacent, Class::Dos) => ([1.5, 1.5], 0.15),
        // R2L sits between the two minorities, which overlap Normal's tail
        (FixtureKind::Adjacent, Class::Probe) => ([0.35, 0.25], 0.15),
        (FixtureKind::Adjacent, Class::U2r) => ([0.35, -0.25], 0.15),
        (FixtureKind::Adjacent, Class::R2l) => ([0.45, 0.0], 0.12),
    };
    let (flag_p, proto_w) = match class {
        Class::Normal => (0.2, [0.2, 0.6, 0.2]),
        Class::Dos => (0.8, [0.6, 0.3, 0.1]),
        Class::Probe => (0.5, [0.4, 0.3, 0.3]),
        Class::U2r => (0.6, [0.1, 0.8, 0.1]),
        Class::R2l => (0.6, [0.1, 0.7, 0.2]),
    };
    ClassShape { center, std, flag_p, proto_w }
}

/// Class counts for `n` rows; rounding leftovers go to Normal.
fn counts(n: usize, fractions: [f64; 5]) -> [usize; 5] {
    let mut c = [0usize; 5];
    for (i, f) in fractions.iter().enumerate().skip(1) {
        c[i] = (n as f64 * f).round() as usize;
    }
    c[0] = n.saturating_sub(c[1..].iter().sum());
    c
}

const TRAIN_FRACTIONS: [f64; 5] = [0.55, 0.30, 0.06, 0.02, 0.07];
const TEST_FRACTIONS: [f64; 5] = [0.40, 0.25, 0.10, 0.05, 0.20];

fn sample(kind: FixtureKind, n: usize, fractions: [f64; 5], rng: &mut ChaCha8Rng) -> RawTable {
    let mut table = RawTable::default();
    for (class, &count) in Class::ALL.iter().zip(&counts(n, fractions)) {
        let s = shape(kind, *class);
        for _ in 0..count {
            let mut row = Vec::with_capacity(8);
            for j in 0..6 {
                let z: f64 = rng.sample(StandardNormal);
                let v = if j < 2 { s.center[j] + s.std * z } else { 0.3 * z };
                // raw units differ per column so the min/max scaling matters
                row.push(format!("{}", v * 10f64.powi(j as i32 % 3) + 5.0 * j as f64));
            }
            row.push(if rng.gen_bool(s.flag_p) { "1" } else { "0" }.to_string());
            let u: f64 = rng.gen::<f64>() * s.proto_w.iter().sum::<f64>();
            let mut acc = 0.0;
            let mut proto = PROTOCOLS[2];
            for (p, w) in PROTOCOLS.iter().zip(s.proto_w) {
                acc += w;
                if u < acc {
                    proto = p;
                    break;
                }
            }
            row.push(proto.to_string());
            table.rows.push(row);
            table.labels.push(class.to_string());
        }
    }
    table
}

/// Train and test records of the chosen fixture.
pub fn generate(kind: FixtureKind, train_rows: usize, test_rows: usize, seed: u64) -> (RawTable, RawTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = sample(kind, train_rows, TRAIN_FRACTIONS, &mut rng);
    let test = sample(kind, test_rows, TEST_FRACTIONS, &mut rng);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use zdgan_core::data::{encode, fit_schema};

    #[test]
    fn fixture_has_all_classes_and_encodes() {
        let (train, test) = generate(FixtureKind::Blobs, 5000, 2000, 1);
        assert_eq!(train.len(), 5000);
        assert_eq!(test.len(), 2000);
        let schema = fit_schema(&train, &layout()).unwrap();
        assert_eq!(schema.encoded_width(), 6 + 1 + 3);
        let enc = encode(&train, &schema).unwrap();
        assert_eq!(enc.table.histogram().len(), 5);
        assert_eq!(enc.table.count(Class::U2r), 100);
    }

    #[test]
    fn fixture_is_deterministic() {
        assert_eq!(generate(FixtureKind::Adjacent, 100, 50, 3), generate(FixtureKind::Adjacent, 100, 50, 3));
    }
}
