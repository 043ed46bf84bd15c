use std::path::Path;

use thiserror::Error;

use super::{
    validate, BatterySpec, Bus, Diagnostic, LineBranch, LoadSpec, NetworkModel, PhaseSet,
    ProsumerSpec, TransformerBranch,
};
use crate::hems::BatteryParams;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid JSON network: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Semantic(Vec<Diagnostic>),
}

/// Parses and validates a network file. JSON is selected by a `.json`
/// extension, the sectioned text format otherwise.
pub fn parse_network(text: &str, path: Option<&Path>) -> Result<NetworkModel, ParseError> {
    let model = parse_unchecked(text, path)?;
    let diagnostics = validate(&model);
    if diagnostics.is_empty() {
        Ok(model)
    } else {
        Err(ParseError::Semantic(diagnostics))
    }
}

/// Syntax-only parse; cross references and invariants are left to [`validate`].
pub fn parse_unchecked(text: &str, path: Option<&Path>) -> Result<NetworkModel, ParseError> {
    let is_json = path
        .and_then(|p| p.extension())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_network_json(text)
    } else {
        parse_network_text(text)
    }
}

pub fn parse_network_json(text: &str) -> Result<NetworkModel, ParseError> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Network,
    Bus,
    Line,
    Transformer,
    Load,
    Battery,
    Prosumer,
}

struct Field<'a> {
    text: &'a str,
    column: usize,
}

struct Row<'a> {
    line: usize,
    fields: Vec<Field<'a>>,
    end_column: usize,
}

impl<'a> Row<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn expect_len(&self, what: &str, expected: usize) -> Result<(), ParseError> {
        if self.fields.len() == expected {
            return Ok(());
        }
        let column = self
            .fields
            .get(expected)
            .map(|f| f.column)
            .unwrap_or(self.end_column);
        Err(self.err(
            column,
            format!(
                "{what} row expects {expected} fields, found {}",
                self.fields.len()
            ),
        ))
    }

    fn str(&self, i: usize) -> String {
        self.fields[i].text.to_string()
    }

    fn num(&self, i: usize) -> Result<f64, ParseError> {
        let f = &self.fields[i];
        f.text
            .parse::<f64>()
            .map_err(|_| self.err(f.column, format!("expected a number, found '{}'", f.text)))
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, i: usize) -> Result<T, ParseError> {
        let f = &self.fields[i];
        f.text.parse::<T>().map_err(|e| self.err(f.column, e))
    }
}

fn tokenize(line_no: usize, raw: &str) -> Row<'_> {
    let content = match raw.find('#') {
        Some(pos) => &raw[..pos],
        None => raw,
    };
    let mut fields = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in content.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                fields.push(Field {
                    text: &content[s..i],
                    column: content[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        fields.push(Field {
            text: &content[s..],
            column: content[..s].chars().count() + 1,
        });
    }
    Row {
        line: line_no,
        fields,
        end_column: content.chars().count() + 1,
    }
}

/// Parses the sectioned whitespace format.
///
/// ```text
/// [network]      key value           (name, base_mva, slack_voltage_pu)
/// [bus]          id kind phases base_kv v_min_pu v_max_pu
/// [line]         id from to phases i_max_amps g_block(k*k) b_block(k*k)
/// [transformer]  id from to phases tap_min tap_max tap_fixed|- series_g series_b s_max_kva
/// [load]         bus phase p_kw q_kvar
/// [battery]      id e_max_kwh p_max_kw eta_c eta_d e_set_kwh
/// [prosumer]     id bus phase pv_kw_rating battery weight
/// ```
pub fn parse_network_text(text: &str) -> Result<NetworkModel, ParseError> {
    let mut model = NetworkModel {
        name: String::new(),
        base_mva: 1.0,
        slack_voltage_pu: 1.0,
        buses: Vec::new(),
        lines: Vec::new(),
        transformers: Vec::new(),
        loads: Vec::new(),
        batteries: Vec::new(),
        prosumers: Vec::new(),
    };
    let mut section = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let row = tokenize(i + 1, raw);
        if row.fields.is_empty() {
            continue;
        }
        let first = row.fields[0].text;
        if first.starts_with('[') {
            if row.fields.len() != 1 || !first.ends_with(']') {
                return Err(row.err(row.fields[0].column, "malformed section header"));
            }
            section = match &first[1..first.len() - 1] {
                "network" => Section::Network,
                "bus" => Section::Bus,
                "line" => Section::Line,
                "transformer" => Section::Transformer,
                "load" => Section::Load,
                "battery" => Section::Battery,
                "prosumer" => Section::Prosumer,
                other => {
                    return Err(row.err(
                        row.fields[0].column,
                        format!("unknown section '[{other}]'"),
                    ))
                }
            };
            continue;
        }

        match section {
            Section::None => {
                return Err(row.err(row.fields[0].column, "data before any section header"))
            }
            Section::Network => {
                row.expect_len("network", 2)?;
                match first {
                    "name" => model.name = row.str(1),
                    "base_mva" => model.base_mva = row.num(1)?,
                    "slack_voltage_pu" => model.slack_voltage_pu = row.num(1)?,
                    other => {
                        return Err(row.err(
                            row.fields[0].column,
                            format!("unknown network key '{other}'"),
                        ))
                    }
                }
            }
            Section::Bus => {
                row.expect_len("bus", 6)?;
                model.buses.push(Bus {
                    id: row.str(0),
                    kind: row.parsed(1)?,
                    phases: row.parsed(2)?,
                    base_kv: row.num(3)?,
                    v_min_pu: row.num(4)?,
                    v_max_pu: row.num(5)?,
                });
            }
            Section::Line => {
                if row.fields.len() < 5 {
                    row.expect_len("line", 5)?;
                }
                let phases: PhaseSet = row.parsed(3)?;
                let k = phases.len();
                row.expect_len("line", 5 + 2 * k * k)?;
                let block = |offset: usize| -> Result<Vec<Vec<f64>>, ParseError> {
                    (0..k)
                        .map(|r| (0..k).map(|c| row.num(offset + r * k + c)).collect())
                        .collect()
                };
                let g_block = block(5)?;
                let b_block = block(5 + k * k)?;
                model.lines.push(LineBranch {
                    id: row.str(0),
                    from: row.str(1),
                    to: row.str(2),
                    phases,
                    i_max_amps: row.num(4)?,
                    g_block,
                    b_block,
                });
            }
            Section::Transformer => {
                row.expect_len("transformer", 10)?;
                let tap_fixed = match row.fields[6].text {
                    "-" => None,
                    _ => Some(row.num(6)?),
                };
                model.transformers.push(TransformerBranch {
                    id: row.str(0),
                    from: row.str(1),
                    to: row.str(2),
                    phases: row.parsed(3)?,
                    tap_min: row.num(4)?,
                    tap_max: row.num(5)?,
                    tap_fixed,
                    series_g: row.num(7)?,
                    series_b: row.num(8)?,
                    s_max_kva: row.num(9)?,
                });
            }
            Section::Load => {
                row.expect_len("load", 4)?;
                model.loads.push(LoadSpec {
                    bus: row.str(0),
                    phase: row.parsed(1)?,
                    p_kw: row.num(2)?,
                    q_kvar: row.num(3)?,
                });
            }
            Section::Battery => {
                row.expect_len("battery", 6)?;
                model.batteries.push(BatterySpec {
                    id: row.str(0),
                    params: BatteryParams {
                        e_max_kwh: row.num(1)?,
                        p_max_kw: row.num(2)?,
                        eta_c: row.num(3)?,
                        eta_d: row.num(4)?,
                        e_set_kwh: row.num(5)?,
                    },
                });
            }
            Section::Prosumer => {
                row.expect_len("prosumer", 6)?;
                model.prosumers.push(ProsumerSpec {
                    id: row.str(0),
                    bus: row.str(1),
                    phase: row.parsed(2)?,
                    pv_kw_rating: row.num(3)?,
                    battery: row.str(4),
                    weight: row.num(5)?,
                });
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
[network]
name two_bus
base_mva 1

[bus]
# id kind phases base_kv vmin vmax
s1 slack a 7.2 0.95 1.05
n2 load  a 7.2 0.95 1.05

[line]
l12 s1 n2 a 400 1.0 -3.0

[load]
n2 a 100 20
";

    #[test]
    fn minimal_two_bus() {
        let model = parse_network(TWO_BUS, None).unwrap();
        assert_eq!(model.buses.len(), 2);
        assert_eq!(model.lines.len(), 1);
        assert_eq!(model.lines[0].g_block, vec![vec![1.0]]);
        assert_eq!(model.lines[0].b_block, vec![vec![-3.0]]);
        assert_eq!(model.name, "two_bus");
    }

    #[test]
    fn unknown_bus_is_named() {
        let text = TWO_BUS.replace("l12 s1 n2", "l12 s1 X");
        match parse_network(&text, None) {
            Err(ParseError::Semantic(diags)) => {
                assert!(diags.iter().any(|d| d.to_string().contains("'X'")), "{diags:?}");
            }
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = TWO_BUS.replace("n2 a 100 20", "n2 a 1o0 20");
        match parse_network(&text, None) {
            Err(ParseError::Syntax { line, column, .. }) => {
                assert_eq!(line, 14);
                assert_eq!(column, 6);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_block_size() {
        let text = TWO_BUS.replace("l12 s1 n2 a 400 1.0 -3.0", "l12 s1 n2 ab 400 1.0 -3.0");
        assert!(matches!(
            parse_network_text(&text),
            Err(ParseError::Syntax { line: 11, .. })
        ));
    }

    #[test]
    fn unknown_section() {
        let err = parse_network_text("[capacitor]\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"));
    }

    #[test]
    fn json_selected_by_extension() {
        let model = parse_network_text(TWO_BUS).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back = parse_network(&json, Some(Path::new("net.json"))).unwrap();
        assert_eq!(back, model);
    }
}
