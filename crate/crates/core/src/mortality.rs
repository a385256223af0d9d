//! Annual mortality tables, their sub-annual one-step matrices and the
//! table dataset used to pre-train the baseline network.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::actuarial::{Gender, PaymentStyle, TransitionMatrix};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::MinMaxScaler;

/// Highest age covered by a table.
pub const A_MAX: u32 = 121;

const HEADER: [&str; 3] = ["age", "q_male", "q_female"];

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_clamp(age: u32) {
    if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("age {age} beyond the table end; using age {A_MAX} (reported once)");
    }
}

/// Annual death probabilities per integer age `0..=A_MAX` and gender.
#[derive(Clone, Debug, PartialEq)]
pub struct MortalityTable {
    q_male: Vec<f64>,
    q_female: Vec<f64>,
}

/// `q(a) = min(1, A + B c^a)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GompertzMakeham {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GompertzMakeham {
    pub fn q(&self, age: u32) -> f64 {
        (self.a + self.b * self.c.powi(age as i32)).min(1.0)
    }
}

/// Constants of the bundled synthetic table. Shaped like a modern German
/// term-life table but not an official table.
pub const SYNTHETIC_MALE: GompertzMakeham = GompertzMakeham {
    a: 5.0e-4,
    b: 7.5e-5,
    c: 1.095,
};
pub const SYNTHETIC_FEMALE: GompertzMakeham = GompertzMakeham {
    a: 3.0e-4,
    b: 4.0e-5,
    c: 1.097,
};

impl MortalityTable {
    pub fn from_vectors(q_male: Vec<f64>, q_female: Vec<f64>) -> Result<Self> {
        let n = A_MAX as usize + 1;
        if q_male.len() != n || q_female.len() != n {
            return Err(Error::InvalidParameter(format!(
                "table needs {n} ages per gender, got {} and {}",
                q_male.len(),
                q_female.len()
            )));
        }
        for (age, q) in q_male.iter().chain(&q_female).enumerate() {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::InvalidParameter(format!(
                    "probability {q} out of range at age {}",
                    age % n
                )));
            }
        }
        Ok(MortalityTable { q_male, q_female })
    }

    pub fn from_fn(f: impl Fn(u32, Gender) -> f64) -> Result<Self> {
        let col = |g| (0..=A_MAX).map(|a| f(a, g)).collect();
        Self::from_vectors(col(Gender::Male), col(Gender::Female))
    }

    /// The bundled Gompertz–Makeham table (synthetic, for tests and demos).
    pub fn synthetic() -> Self {
        Self::from_fn(|a, g| match g {
            Gender::Male => SYNTHETIC_MALE.q(a),
            Gender::Female => SYNTHETIC_FEMALE.q(a),
        })
        .expect("synthetic constants give probabilities")
    }

    pub fn a_max(&self) -> u32 {
        A_MAX
    }

    fn column(&self, g: Gender) -> &[f64] {
        match g {
            Gender::Male => &self.q_male,
            Gender::Female => &self.q_female,
        }
    }

    pub fn q(&self, age: u32, g: Gender) -> Result<f64> {
        self.column(g)
            .get(age as usize)
            .copied()
            .ok_or_else(|| Error::Range(format!("age {age} beyond {A_MAX}")))
    }

    /// `q(min(age, A_MAX), g)`; clamping is logged once per process.
    pub fn q_clamped(&self, age: u32, g: Gender) -> f64 {
        if age > A_MAX {
            warn_clamp(age);
        }
        self.column(g)[age.min(A_MAX) as usize]
    }

    /// One-step matrix for `m` payments per year with deaths spread uniformly
    /// over the year: `pi_01 = q(a, g) / m`.
    pub fn subannual_matrix(&self, age: u32, m: PaymentStyle, g: Gender) -> TransitionMatrix {
        let q = self.q_clamped(age, g) / m.per_year() as f64;
        TransitionMatrix::from_death_prob(q).expect("table probabilities lie in [0, 1]")
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Schema {
            row: 1,
            message: e.to_string(),
        })?;
        if header.iter().map(str::trim).ne(HEADER) {
            return Err(Error::Schema {
                row: 1,
                message: format!("expected header `{}`", HEADER.join(",")),
            });
        }
        let n = A_MAX as usize + 1;
        let mut male = vec![None; n];
        let mut female = vec![None; n];
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Schema {
                row,
                message: e.to_string(),
            })?;
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            let age: usize = field(0).parse().map_err(|_| Error::Schema {
                row,
                message: format!("invalid age `{}`", field(0)),
            })?;
            if age >= n {
                return Err(Error::Schema {
                    row,
                    message: format!("age {age} beyond {A_MAX}"),
                });
            }
            if male[age].is_some() {
                return Err(Error::Schema {
                    row,
                    message: format!("duplicate age {age}"),
                });
            }
            let prob = |j: usize| -> Result<f64> {
                let q: f64 = field(j).parse().map_err(|_| Error::Schema {
                    row,
                    message: format!("invalid number `{}`", field(j)),
                })?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::Schema {
                        row,
                        message: format!("probability out of range: {q}"),
                    });
                }
                Ok(q)
            };
            male[age] = Some(prob(1)?);
            female[age] = Some(prob(2)?);
        }
        if let Some(age) = male.iter().position(Option::is_none) {
            return Err(Error::Schema {
                row: 0,
                message: format!("missing age {age}"),
            });
        }
        Self::from_vectors(
            male.into_iter().flatten().collect(),
            female.into_iter().flatten().collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push('\n');
        for age in 0..=A_MAX as usize {
            out.push_str(&format!("{age},{},{}\n", self.q_male[age], self.q_female[age]));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// One `(age, m)` grid point of the table dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRecord {
    pub age: u32,
    pub m: PaymentStyle,
    /// Min-max scaled `(age, m)`.
    pub features: [f64; 2],
    /// Alive row `(pi_00, pi_01)` of the sub-annual matrix.
    pub target: [f64; 2],
}

/// All `(age, m)` combinations of a table for one gender.
#[derive(Clone, Debug, PartialEq)]
pub struct TableDataset {
    pub gender: Gender,
    pub records: Vec<TableRecord>,
    pub scaler: MinMaxScaler,
}

/// Scaler over the raw baseline inputs `(age, m)` spanning `0..=A_MAX` and
/// every payment style.
pub fn baseline_scaler() -> MinMaxScaler {
    MinMaxScaler {
        min: vec![0.0, 1.0],
        max: vec![A_MAX as f64, 12.0],
    }
}

pub fn build_dav_dataset(tbl: &MortalityTable, g: Gender) -> TableDataset {
    let scaler = baseline_scaler();
    let mut records = Vec::with_capacity((A_MAX as usize + 1) * PaymentStyle::ALL.len());
    for age in 0..=A_MAX {
        for m in PaymentStyle::ALL {
            let p = tbl.subannual_matrix(age, m, g);
            let raw = [age as f64, m.per_year() as f64];
            records.push(TableRecord {
                age,
                m,
                features: [scaler.transform_value(0, raw[0]), scaler.transform_value(1, raw[1])],
                target: [p.p00(), p.p01()],
            });
        }
    }
    TableDataset {
        gender: g,
        records,
        scaler,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_csv(skip: Option<usize>, edit: Option<(usize, &str)>) -> String {
        let mut s = String::from("age,q_male,q_female\n");
        for a in 0..=121 {
            if Some(a) == skip {
                continue;
            }
            match edit {
                Some((age, line)) if age == a => s.push_str(line),
                _ => s.push_str(&format!("{a},0.001,0.0008")),
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_rows() {
        let t = MortalityTable::from_csv_reader(table_csv(None, Some((40, "40,0.002,0.0009"))).as_bytes()).unwrap();
        assert_eq!(t.q(40, Gender::Male).unwrap(), 0.002);
        assert_eq!(t.q(40, Gender::Female).unwrap(), 0.0009);
        assert_eq!(t.q(41, Gender::Male).unwrap(), 0.001);
    }

    #[test]
    fn schema_errors() {
        let err = MortalityTable::from_csv_reader(table_csv(Some(77), None).as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing age 77"), "{err}");

        let err = MortalityTable::from_csv_reader(table_csv(None, Some((5, "5,1.5,0.1"))).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 7, .. }), "{err}");
        assert!(err.to_string().contains("probability out of range"));

        let err = MortalityTable::from_csv_reader(table_csv(None, Some((6, "5,0.1,0.1"))).as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate age 5"), "{err}");

        let err = MortalityTable::from_csv_reader("age,qm,qf\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 1, .. }));
    }

    #[test]
    fn csv_round_trip() {
        let t = MortalityTable::synthetic();
        let back = MortalityTable::from_csv_reader(t.to_csv().as_bytes()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn subannual_division() {
        let t = MortalityTable::from_fn(|_, _| 0.012).unwrap();
        let p = t.subannual_matrix(30, PaymentStyle::Monthly, Gender::Male);
        assert!((p.p01() - 0.001).abs() < 1e-18);
        assert_eq!(p.rows()[1], [0.0, 1.0]);

        let s = MortalityTable::synthetic();
        for g in Gender::ALL {
            for a in 0..=A_MAX {
                let annual = s.subannual_matrix(a, PaymentStyle::Annual, g);
                assert_eq!(annual.p01(), s.q(a, g).unwrap());
                for m in PaymentStyle::ALL {
                    let p = s.subannual_matrix(a, m, g);
                    assert!(p.is_stochastic(1e-12));
                    let scaled = p.p01() * m.per_year() as f64;
                    assert!((scaled - annual.p01()).abs() <= 1e-15 * annual.p01().max(1e-300) * 4.0);
                }
            }
        }
    }

    #[test]
    fn clamps_beyond_table() {
        let s = MortalityTable::synthetic();
        let p = s.subannual_matrix(130, PaymentStyle::Annual, Gender::Female);
        assert_eq!(p.p01(), s.q(A_MAX, Gender::Female).unwrap());
        assert!(s.q(122, Gender::Male).is_err());
    }

    #[test]
    fn synthetic_shape() {
        let s = MortalityTable::synthetic();
        for g in Gender::ALL {
            let col: Vec<f64> = (0..=A_MAX).map(|a| s.q(a, g).unwrap()).collect();
            assert!(col.windows(2).all(|w| w[0] <= w[1]));
            assert!(col[40] > 1e-3 && col[40] < 5e-3);
            assert_eq!(col[A_MAX as usize], 1.0);
        }
        assert!(s.q(50, Gender::Male).unwrap() > s.q(50, Gender::Female).unwrap());
    }

    #[test]
    fn dataset() {
        let ds = build_dav_dataset(&MortalityTable::synthetic(), Gender::Male);
        assert_eq!(ds.records.len(), 488);
        let first = &ds.records[0];
        assert_eq!((first.age, first.features[0]), (0, 0.0));
        let last = ds.records.last().unwrap();
        assert_eq!((last.age, last.features[0], last.features[1]), (121, 1.0, 1.0));
        let r = ds.records.iter().find(|r| r.age == 40 && r.m == PaymentStyle::Monthly).unwrap();
        assert!((r.target[0] + r.target[1] - 1.0).abs() < 1e-15);
    }
}
