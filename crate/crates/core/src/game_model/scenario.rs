//! Scenario files.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "name": "lane change",
//!   "dims": {
//!     "n": 12, "T": 100, "N": 3, "m": [2, 2, 2],
//!     "a": {"stages": [0, 0, 0], "terminal": [1, 1, 1]},
//!     "b": {"stages": [1, 1, 0], "terminal": [1, 1, 0]}
//!   },
//!   "model": {"family": "unicycle-drive", "params": { ... }},
//!   "x1": [ ... ]
//! }
//! ```
//!
//! The `custom-lq` family takes its data from a `coefficients` table: a
//! `default` stage used everywhere, optional per-stage replacements keyed by
//! one-based stage number, and the `terminal` player blocks. Matrices are
//! lists of rows; omitted entries are zero.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{validate_lq, Dimensions, DrivingGame, DrivingParams, GameModel, LqGame, LqPlayerStage, LqStage};
use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, select_cols, select_rows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowCounts {
    /// Rows per player at every control stage.
    pub stages: Vec<usize>,
    /// Rows per player at the terminal stage.
    pub terminal: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSpec {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "N")]
    pub players: usize,
    pub m: Vec<usize>,
    pub a: RowCounts,
    pub b: RowCounts,
}

impl DimsSpec {
    pub fn to_dims(&self) -> Result<Dimensions> {
        let np = self.players;
        for (name, v) in [
            ("m", &self.m),
            ("a.stages", &self.a.stages),
            ("a.terminal", &self.a.terminal),
            ("b.stages", &self.b.stages),
            ("b.terminal", &self.b.terminal),
        ] {
            if v.len() != np {
                return Err(Error::Scenario(format!("dims.{name} has {} entries, expected N = {np}", v.len())));
            }
        }
        let d = Dimensions::uniform(
            self.n,
            self.horizon,
            &self.m,
            &self.a.stages,
            &self.b.stages,
            &self.a.terminal,
            &self.b.terminal,
        );
        d.check()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", deny_unknown_fields)]
pub enum ModelSpec {
    #[serde(rename = "unicycle-drive")]
    Driving(DrivingParams),
    #[serde(rename = "custom-lq")]
    CustomLq(CustomLqParams),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLqParams {
    /// Declares the own-control cost blocks positive definite. When
    /// omitted, the flag is inferred from the coefficients.
    #[serde(default)]
    pub regular: Option<bool>,
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerTable {
    #[serde(rename = "Q", default)]
    pub q_mat: Option<Rows>,
    #[serde(rename = "S", default)]
    pub s_mat: Option<Rows>,
    #[serde(rename = "R", default)]
    pub r_mat: Option<Rows>,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(rename = "Hx", default)]
    pub hx: Option<Rows>,
    #[serde(rename = "Hu", default)]
    pub hu: Option<Rows>,
    #[serde(default)]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "Gx", default)]
    pub gx: Option<Rows>,
    #[serde(rename = "Gu", default)]
    pub gu: Option<Rows>,
    #[serde(default)]
    pub g: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTable {
    #[serde(rename = "A", default)]
    pub a: Option<Rows>,
    #[serde(rename = "B", default)]
    pub b: Option<Rows>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub players: Vec<PlayerTable>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalTable {
    #[serde(default)]
    pub players: Vec<PlayerTable>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientTable {
    #[serde(default)]
    pub default: StageTable,
    /// Replacements for single stages, keyed by one-based stage number.
    #[serde(default)]
    pub stages: BTreeMap<String, StageTable>,
    #[serde(default)]
    pub terminal: TerminalTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub dims: DimsSpec,
    pub model: ModelSpec,
    pub x1: Vec<f64>,
    #[serde(default)]
    pub coefficients: Option<CoefficientTable>,
}

/// A loaded game with its initial state.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub name: String,
    pub model: Arc<dyn GameModel>,
    pub x1: DVector<f64>,
    /// Present for `custom-lq` scenarios.
    pub lq: Option<LqGame>,
    /// Present for `unicycle-drive` scenarios.
    pub driving: Option<DrivingParams>,
}

fn matrix(rows: &Option<Rows>, r: usize, c: usize, what: &str) -> Result<DMatrix<f64>> {
    let Some(data) = rows else {
        return Ok(DMatrix::zeros(r, c));
    };
    if data.len() != r || data.iter().any(|row| row.len() != c) {
        let got_c = data.first().map_or(0, Vec::len);
        return Err(Error::Scenario(format!(
            "{what} must be {r}x{c}, found {}x{got_c}",
            data.len()
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| data[i][j]))
}

fn vector(v: &Option<Vec<f64>>, len: usize, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(len)),
        Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::Scenario(format!("{what} must have length {len}, found {}", v.len()))),
    }
}

fn player_block(t: &PlayerTable, n: usize, m: usize, a: usize, b: usize, at: &str) -> Result<LqPlayerStage> {
    let f = |name: &str| format!("{name} at {at}");
    let mut p = LqPlayerStage::zeros(n, m, a, b);
    p.q_mat = matrix(&t.q_mat, n, n, &f("Q"))?;
    p.s_mat = matrix(&t.s_mat, m, n, &f("S"))?;
    p.r_mat = matrix(&t.r_mat, m, m, &f("R"))?;
    p.q = vector(&t.q, n, &f("q"))?;
    p.r = vector(&t.r, m, &f("r"))?;
    p.hx = matrix(&t.hx, a, n, &f("Hx"))?;
    p.hu = matrix(&t.hu, a, m, &f("Hu"))?;
    p.h = vector(&t.h, a, &f("h"))?;
    p.gx = matrix(&t.gx, b, n, &f("Gx"))?;
    p.gu = matrix(&t.gu, b, m, &f("Gu"))?;
    p.g = vector(&t.g, b, &f("g"))?;
    Ok(p)
}

fn build_lq(dims: Dimensions, table: &CoefficientTable, params: &CustomLqParams) -> Result<LqGame> {
    let n = dims.n;
    let np = dims.players;
    let mut overrides: BTreeMap<usize, &StageTable> = BTreeMap::new();
    for (key, st) in &table.stages {
        let t: usize = key
            .parse()
            .map_err(|_| Error::Scenario(format!("coefficients.stages key {key:?} is not a stage number")))?;
        if t == 0 || t > dims.horizon {
            return Err(Error::Scenario(format!("coefficients.stages key {t} outside 1..={}", dims.horizon)));
        }
        overrides.insert(t - 1, st);
    }
    let mut stages = Vec::with_capacity(dims.horizon);
    for t in 0..dims.horizon {
        let st = overrides.get(&t).copied().unwrap_or(&table.default);
        let m = dims.m(t);
        let at = format!("stage {}", t + 1);
        if !st.players.is_empty() && st.players.len() != np {
            return Err(Error::Scenario(format!("{at} lists {} players, expected {np}", st.players.len())));
        }
        let mut players = Vec::with_capacity(np);
        for i in 0..np {
            let empty = PlayerTable::default();
            let pt = st.players.get(i).unwrap_or(&empty);
            players.push(player_block(pt, n, m, dims.a(t, i), dims.b(t, i), &format!("({},{})", t + 1, i + 1))?);
        }
        stages.push(LqStage {
            a: matrix(&st.a, n, n, &format!("A at {at}"))?,
            b: matrix(&st.b, n, m, &format!("B at {at}"))?,
            c: vector(&st.c, n, &format!("c at {at}"))?,
            players,
        });
    }
    let tp = &table.terminal.players;
    if !tp.is_empty() && tp.len() != np {
        return Err(Error::Scenario(format!("terminal lists {} players, expected {np}", tp.len())));
    }
    let mut terminal = Vec::with_capacity(np);
    for i in 0..np {
        let empty = PlayerTable::default();
        let pt = tp.get(i).unwrap_or(&empty);
        let at = format!("({},{})", dims.horizon + 1, i + 1);
        terminal.push(player_block(pt, n, 0, dims.a(dims.horizon, i), dims.b(dims.horizon, i), &at)?);
    }
    let mut game = LqGame {
        dims,
        stages,
        terminal,
        regular: false,
    };
    game.regular = params.regular.unwrap_or_else(|| own_blocks_definite(&game));
    Ok(game)
}

fn own_blocks_definite(game: &LqGame) -> bool {
    game.stages.iter().enumerate().all(|(t, st)| {
        st.players.iter().enumerate().all(|(i, p)| {
            let own = game.dims.own_indices(t, i);
            is_positive_definite(&select_cols(&select_rows(&p.r_mat, &own), &own))
        })
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// Instantiates the model and checks it against the declared
    /// dimensions.
    pub fn build(&self) -> Result<GameSpec> {
        let dims = self.dims.to_dims()?;
        if self.x1.len() != dims.n {
            return Err(Error::Scenario(format!("x1 has length {}, expected n = {}", self.x1.len(), dims.n)));
        }
        let x1 = DVector::from_column_slice(&self.x1);
        match &self.model {
            ModelSpec::Driving(params) => {
                if self.coefficients.is_some() {
                    return Err(Error::Scenario("coefficients are only used by the custom-lq family".into()));
                }
                let game = DrivingGame::new(params.clone(), dims.horizon)?;
                if game.dims() != &dims {
                    return Err(Error::Scenario(format!(
                        "dims disagree with the unicycle-drive parameters (expected n = {}, m = {:?}, a = {:?}/{:?}, b = {:?}/{:?})",
                        game.dims().n,
                        game.dims().controls[0],
                        game.dims().equalities[0],
                        game.dims().equalities[dims.horizon],
                        game.dims().inequalities[0],
                        game.dims().inequalities[dims.horizon],
                    )));
                }
                Ok(GameSpec {
                    name: self.name.clone(),
                    model: Arc::new(game),
                    x1,
                    lq: None,
                    driving: Some(params.clone()),
                })
            }
            ModelSpec::CustomLq(params) => {
                let table = self
                    .coefficients
                    .as_ref()
                    .ok_or_else(|| Error::Scenario("custom-lq scenario needs a coefficients table".into()))?;
                let game = build_lq(dims, table, params)?;
                let report = validate_lq(&game);
                if !report.is_valid() {
                    return Err(Error::Scenario(format!("invalid LQ game: {}", report.issues.join("; "))));
                }
                Ok(GameSpec {
                    name: self.name.clone(),
                    model: Arc::new(game.clone()),
                    x1,
                    lq: Some(game),
                    driving: None,
                })
            }
        }
    }
}

/// Reads and instantiates a scenario file.
pub fn load_scenario(path: &Path) -> Result<GameSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    Scenario::parse(&text)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?
        .build()
}

/// Scenario document for the driving family with the given parameters.
pub fn driving_scenario(name: &str, params: DrivingParams, horizon: usize, x1: &DVector<f64>) -> Scenario {
    let d = params.dims(horizon);
    Scenario {
        name: name.to_string(),
        dims: DimsSpec {
            n: d.n,
            horizon,
            players: d.players,
            m: d.controls[0].clone(),
            a: RowCounts {
                stages: d.equalities[0].clone(),
                terminal: d.equalities[horizon].clone(),
            },
            b: RowCounts {
                stages: d.inequalities[0].clone(),
                terminal: d.inequalities[horizon].clone(),
            },
        },
        model: ModelSpec::Driving(params),
        x1: x1.iter().copied().collect(),
        coefficients: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "name": "scalar",
        "dims": {"n": 1, "T": 1, "N": 1, "m": [1],
                 "a": {"stages": [0], "terminal": [0]},
                 "b": {"stages": [0], "terminal": [0]}},
        "model": {"family": "custom-lq", "params": {}},
        "x1": [2.0],
        "coefficients": {
            "default": {"A": [[1.0]], "B": [[1.0]], "players": [{"R": [[2.0]]}]},
            "terminal": {"players": [{"Q": [[2.0]]}]}
        }
    }"#;

    #[test]
    fn custom_lq_round_trip() {
        let sc = Scenario::parse(SCALAR).unwrap();
        let spec = sc.build().unwrap();
        let lq = spec.lq.unwrap();
        assert!(lq.regular);
        assert_eq!(lq.stages[0].players[0].r_mat[(0, 0)], 2.0);
        let text = serde_json::to_string(&sc).unwrap();
        assert_eq!(Scenario::parse(&text).unwrap(), sc);
    }

    #[test]
    fn zero_costs_are_not_regular() {
        let text = SCALAR.replace(r#""players": [{"R": [[2.0]]}]"#, r#""players": []"#);
        let spec = Scenario::parse(&text).unwrap().build().unwrap();
        assert!(!spec.lq.unwrap().regular);
    }

    #[test]
    fn missing_x1_is_named() {
        let text = SCALAR.replace(r#""x1": [2.0],"#, "");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("x1"), "{err}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        let text = SCALAR.replace("custom-lq", "bicycle");
        assert!(Scenario::parse(&text).is_err());
    }

    #[test]
    fn wrong_matrix_shape_is_reported() {
        let text = SCALAR.replace(r#""B": [[1.0]]"#, r#""B": [[1.0], [0.0]]"#);
        let err = Scenario::parse(&text).unwrap().build().unwrap_err().to_string();
        assert!(err.contains("B at stage 1 must be 1x1"), "{err}");
    }

    #[test]
    fn driving_scenario_builds() {
        let sc = driving_scenario("lane change", DrivingParams::lane_change(5.0), 100, &DrivingParams::lane_change_start());
        let spec = sc.build().unwrap();
        let d = spec.model.dims();
        assert_eq!((d.players, d.horizon, d.n), (3, 100, 12));
        assert!(d.controls.iter().all(|c| c == &vec![2, 2, 2]));
    }
}
