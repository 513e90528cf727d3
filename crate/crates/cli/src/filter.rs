//! Parsing of `--filter` expressions into history events.
//!
//! Grammar: clauses joined with `&&`, each of the form
//! `<field>[t-<k>] == <token>` with field in {x, a, r} and k >= 1, or
//! `x[t] == <token>` for the current observation. Tokens may be
//! wrapped in double quotes. The action and reward of the decision
//! step itself cannot be referenced: an event must be decided before
//! the action is drawn.

use memlens::{EventPredicate, Symbol, TrajectoryDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    X,
    A,
    R,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    /// The observation at the decision step.
    XNow,
    /// A field `k` steps back.
    Past { field: Field, k: usize },
}

#[derive(Debug, Clone)]
struct Clause {
    target: Target,
    token: String,
}

/// A parsed filter, independent of any dataset.
#[derive(Debug, Clone)]
pub struct FilterExpr {
    clauses: Vec<Clause>,
}

pub fn parse(expr: &str) -> Result<FilterExpr, String> {
    let mut clauses = Vec::new();
    for raw in expr.split("&&") {
        let clause = raw.trim();
        if clause.is_empty() {
            return Err("empty clause in filter expression".into());
        }
        let (lhs, rhs) = clause
            .split_once("==")
            .ok_or_else(|| format!("clause {clause:?} is missing `==`"))?;
        let target = parse_target(lhs.trim())?;
        let token = parse_token(rhs.trim())?;
        clauses.push(Clause { target, token });
    }
    if clauses.is_empty() {
        return Err("filter expression is empty".into());
    }
    Ok(FilterExpr { clauses })
}

fn parse_target(lhs: &str) -> Result<Target, String> {
    let open = lhs
        .find('[')
        .ok_or_else(|| format!("expected `field[t-k]`, got {lhs:?}"))?;
    if !lhs.ends_with(']') {
        return Err(format!("expected `field[t-k]`, got {lhs:?}"));
    }
    let field = match &lhs[..open] {
        "x" => Field::X,
        "a" => Field::A,
        "r" => Field::R,
        other => return Err(format!("unknown field {other:?}; expected x, a, or r")),
    };
    let index = lhs[open + 1..lhs.len() - 1].trim();
    if index == "t" {
        return match field {
            Field::X => Ok(Target::XNow),
            Field::A => Err("filter cannot reference a[t]: the action at the decision \
                             step is the outcome under test, not part of the history"
                .into()),
            Field::R => Err("filter cannot reference r[t]: the reward at the decision \
                             step arrives after the action, not before it"
                .into()),
        };
    }
    let offset = index
        .strip_prefix("t-")
        .or_else(|| index.strip_prefix("t -"))
        .ok_or_else(|| format!("index {index:?} must be `t` or `t-<k>`"))?;
    let k: usize = offset
        .trim()
        .parse()
        .map_err(|_| format!("lag in {index:?} must be a positive integer"))?;
    if k == 0 {
        return Err("lag in a filter must be at least 1; use `x[t]` for the current step".into());
    }
    Ok(Target::Past { field, k })
}

fn parse_token(rhs: &str) -> Result<String, String> {
    if rhs.is_empty() {
        return Err("clause is missing a token after `==`".into());
    }
    if rhs.len() >= 2 && rhs.starts_with('"') && rhs.ends_with('"') {
        return Ok(rhs[1..rhs.len() - 1].to_owned());
    }
    Ok(rhs.to_owned())
}

impl FilterExpr {
    /// The deepest history step the filter reaches back to.
    pub fn max_depth(&self) -> usize {
        self.clauses
            .iter()
            .map(|c| match c.target {
                Target::XNow => 0,
                Target::Past { k, .. } => k,
            })
            .max()
            .unwrap_or(0)
    }

    /// Binds the filter's tokens against a dataset's alphabets.
    ///
    /// A token absent from the relevant alphabet can never match, so
    /// the clause compiles to a constant-false test.
    pub fn compile(&self, dataset: &TrajectoryDataset) -> EventPredicate {
        #[derive(Clone)]
        struct Bound {
            target: Target,
            symbol: Option<Symbol>,
        }
        let bound: Vec<Bound> = self
            .clauses
            .iter()
            .map(|clause| {
                let table = match clause.target {
                    Target::XNow | Target::Past { field: Field::X, .. } => dataset.x_alphabet(),
                    Target::Past { field: Field::A, .. } => dataset.a_alphabet(),
                    Target::Past { field: Field::R, .. } => dataset.r_alphabet(),
                };
                Bound {
                    target: clause.target.clone(),
                    symbol: table.resolve(&clause.token),
                }
            })
            .collect();
        EventPredicate::new(move |history, x_now| {
            bound.iter().all(|clause| {
                let Some(symbol) = clause.symbol else {
                    return false;
                };
                match clause.target {
                    Target::XNow => x_now == symbol,
                    Target::Past { field, k } => {
                        if k > history.len() {
                            return false;
                        }
                        let step = &history[history.len() - k];
                        let value = match field {
                            Field::X => step.x,
                            Field::A => step.a,
                            Field::R => step.r,
                        };
                        value == symbol
                    }
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use memlens::TrajectoryDataset;

    fn dataset() -> TrajectoryDataset {
        let episodes = vec![(
            "ep0".to_string(),
            vec![
                ("0".to_string(), "1".to_string(), "5".to_string()),
                ("1".to_string(), "0".to_string(), "0".to_string()),
                ("1".to_string(), "1".to_string(), "0".to_string()),
            ],
        )];
        TrajectoryDataset::from_parts(episodes).unwrap()
    }

    #[test]
    fn parses_conjunctions_and_depths() {
        let expr = parse("x[t] == 1 && a[t-2] == 0 && r[t-1] == \"0\"").unwrap();
        assert_eq!(expr.max_depth(), 2);
    }

    #[test]
    fn rejects_action_and_reward_at_the_decision_step() {
        assert!(parse("a[t] == 1").unwrap_err().contains("a[t]"));
        assert!(parse("r[t] == 1").unwrap_err().contains("r[t]"));
    }

    #[test]
    fn rejects_malformed_clauses() {
        assert!(parse("x[t] = 1").is_err());
        assert!(parse("y[t-1] == 0").is_err());
        assert!(parse("x[t-0] == 0").is_err());
        assert!(parse("x[t+1] == 0").is_err());
        assert!(parse("x[t-1] ==").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn compiled_filters_test_the_right_slots() {
        let ds = dataset();
        let samples = memlens::extract_samples(&ds, 2, 3).unwrap();
        assert_eq!(samples.len(), 1);
        let sample = &samples[0];

        let hit = parse("x[t] == 1 && x[t-2] == 0 && a[t-1] == 0").unwrap().compile(&ds);
        assert!(hit.accepts(&sample.history, sample.x_now));

        let miss = parse("x[t-1] == 0").unwrap().compile(&ds);
        assert!(!miss.accepts(&sample.history, sample.x_now));

        let unknown = parse("x[t] == zebra").unwrap().compile(&ds);
        assert!(!unknown.accepts(&sample.history, sample.x_now));

        let too_deep = parse("x[t-5] == 0").unwrap().compile(&ds);
        assert!(!too_deep.accepts(&sample.history, sample.x_now));
    }
}
