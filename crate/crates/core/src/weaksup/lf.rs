use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::txprep::TransactionGroup;

use super::matrix::{LabelMatrix, Vote};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn vote(self) -> Vote {
        match self {
            Polarity::Positive => Vote::Positive,
            Polarity::Negative => Vote::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeOp {
    Not,
    And,
}

/// Declarative labeling function, as written in a task's LF file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LfSpec {
    /// Case-insensitive regex matched with word boundaries against the
    /// rendered normalized text.
    Pattern {
        name: String,
        pattern: String,
        polarity: Polarity,
        #[serde(default)]
        hidden: bool,
    },
    /// Votes when `count >= min_count`, `mean_gap_days` lies in `gap_days`
    /// and `|coeff_var| <= max_coeff_var`.
    Frequency {
        name: String,
        gap_days: [f64; 2],
        min_count: usize,
        max_coeff_var: f64,
        polarity: Polarity,
        #[serde(default)]
        hidden: bool,
    },
    /// Votes when some token's cosine to the anchor reaches `threshold`.
    Anchor {
        name: String,
        #[serde(default)]
        anchor: Option<String>,
        #[serde(default)]
        vector: Option<Vec<f32>>,
        threshold: f64,
        polarity: Polarity,
        #[serde(default)]
        hidden: bool,
    },
    /// `not` flips its single input's vote; `and` votes `v` when every input
    /// votes `v`, otherwise abstains.
    Composite {
        name: String,
        op: CompositeOp,
        of: Vec<String>,
        #[serde(default)]
        hidden: bool,
    },
}

impl LfSpec {
    pub fn name(&self) -> &str {
        match self {
            LfSpec::Pattern { name, .. }
            | LfSpec::Frequency { name, .. }
            | LfSpec::Anchor { name, .. }
            | LfSpec::Composite { name, .. } => name,
        }
    }

    /// Hidden functions feed composites but get no matrix column.
    pub fn hidden(&self) -> bool {
        match self {
            LfSpec::Pattern { hidden, .. }
            | LfSpec::Frequency { hidden, .. }
            | LfSpec::Anchor { hidden, .. }
            | LfSpec::Composite { hidden, .. } => *hidden,
        }
    }
}

/// One document per task: `[[lf]]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfConfig {
    #[serde(default)]
    pub lf: Vec<LfSpec>,
}

impl LfConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("labeling functions: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("LF config serializes")
    }
}

enum Compiled {
    Pattern(Regex, Vote),
    Frequency {
        lo: f64,
        hi: f64,
        min_count: usize,
        cap: f64,
        vote: Vote,
    },
    Anchor {
        vector: Vec<f32>,
        threshold: f64,
        vote: Vote,
    },
    Not(usize),
    And(Vec<usize>),
}

/// Labeling functions compiled against an embedding model, evaluated in
/// dependency order.
pub struct LfSet<'m> {
    names: Vec<String>,
    compiled: Vec<Compiled>,
    order: Vec<usize>,
    visible: Vec<usize>,
    model: Option<&'m EmbeddingModel>,
}

impl<'m> LfSet<'m> {
    pub fn compile(config: &LfConfig, model: Option<&'m EmbeddingModel>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, spec) in config.lf.iter().enumerate() {
            if index.insert(spec.name().to_string(), i).is_some() {
                return Err(Error::Config(format!("duplicate labeling function name {:?}", spec.name())));
            }
        }
        let mut compiled = Vec::with_capacity(config.lf.len());
        for spec in &config.lf {
            compiled.push(compile_one(spec, &index, model)?);
        }
        let order = topological_order(&compiled, &config.lf)?;
        Ok(Self {
            names: config.lf.iter().map(|s| s.name().to_string()).collect(),
            visible: (0..config.lf.len()).filter(|&i| !config.lf[i].hidden()).collect(),
            compiled,
            order,
            model,
        })
    }

    /// Names of the functions that get a matrix column, in config order.
    pub fn names(&self) -> Vec<String> {
        self.visible.iter().map(|&i| self.names[i].clone()).collect()
    }

    /// Votes of the visible functions on one group.
    pub fn votes(&self, group: &TransactionGroup) -> Vec<Vote> {
        let text = group.normalized_text.render();
        let mut out = vec![Vote::Abstain; self.compiled.len()];
        for &i in &self.order {
            out[i] = match &self.compiled[i] {
                Compiled::Pattern(re, v) => {
                    if re.is_match(&text) {
                        *v
                    } else {
                        Vote::Abstain
                    }
                }
                Compiled::Frequency {
                    lo,
                    hi,
                    min_count,
                    cap,
                    vote,
                } => {
                    let a = &group.aggregates;
                    let gap_ok = a.mean_gap_days.is_some_and(|g| g >= *lo && g <= *hi);
                    let cv_ok = a.coeff_var.is_some_and(|c| c.abs() <= *cap);
                    if a.count >= *min_count && gap_ok && cv_ok {
                        *vote
                    } else {
                        Vote::Abstain
                    }
                }
                Compiled::Anchor { vector, threshold, vote } => {
                    let model = self.model.expect("anchor LFs are only compiled with a model");
                    if model.max_word_similarity(&group.normalized_text, vector) >= *threshold {
                        *vote
                    } else {
                        Vote::Abstain
                    }
                }
                Compiled::Not(j) => out[*j].negate(),
                Compiled::And(js) => {
                    let first = out[js[0]];
                    if !first.is_abstain() && js.iter().all(|&j| out[j] == first) {
                        first
                    } else {
                        Vote::Abstain
                    }
                }
            };
        }
        self.visible.iter().map(|&i| out[i]).collect()
    }
}

fn compile_one(spec: &LfSpec, index: &HashMap<String, usize>, model: Option<&EmbeddingModel>) -> Result<Compiled> {
    let name = spec.name();
    let cfg = |m: String| Error::Config(format!("labeling function {name:?}: {m}"));
    Ok(match spec {
        LfSpec::Pattern { pattern, polarity, .. } => {
            let re = Regex::new(&format!(r"(?i)\b(?:{pattern})\b")).map_err(|e| cfg(e.to_string()))?;
            Compiled::Pattern(re, polarity.vote())
        }
        LfSpec::Frequency {
            gap_days,
            min_count,
            max_coeff_var,
            polarity,
            ..
        } => {
            if !(gap_days[0] <= gap_days[1]) || *max_coeff_var < 0.0 {
                return Err(cfg("gap_days must be [lo, hi] with lo <= hi and max_coeff_var >= 0".into()));
            }
            Compiled::Frequency {
                lo: gap_days[0],
                hi: gap_days[1],
                min_count: *min_count,
                cap: *max_coeff_var,
                vote: polarity.vote(),
            }
        }
        LfSpec::Anchor {
            anchor,
            vector,
            threshold,
            polarity,
            ..
        } => {
            if !(*threshold > -1.0 && *threshold <= 1.0) {
                return Err(cfg(format!("threshold {threshold} must lie in (-1, 1]")));
            }
            let model = model.ok_or_else(|| cfg("anchor functions need an embedding model".into()))?;
            let vector = match (anchor, vector) {
                (Some(word), None) => model.vector(word),
                (None, Some(v)) if v.len() == model.dim() => v.clone(),
                (None, Some(v)) => return Err(cfg(format!("anchor vector has {} entries, model dim is {}", v.len(), model.dim()))),
                _ => return Err(cfg("give exactly one of `anchor` or `vector`".into())),
            };
            Compiled::Anchor {
                vector,
                threshold: *threshold,
                vote: polarity.vote(),
            }
        }
        LfSpec::Composite { op, of, .. } => {
            let refs = of
                .iter()
                .map(|r| index.get(r).copied().ok_or_else(|| cfg(format!("unknown labeling function {r:?}"))))
                .collect::<Result<Vec<_>>>()?;
            match op {
                CompositeOp::Not if refs.len() == 1 => Compiled::Not(refs[0]),
                CompositeOp::Not => return Err(cfg("`not` takes exactly one input".into())),
                CompositeOp::And if refs.is_empty() => return Err(cfg("`and` needs at least one input".into())),
                CompositeOp::And => Compiled::And(refs),
            }
        }
    })
}

fn topological_order(compiled: &[Compiled], specs: &[LfSpec]) -> Result<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn deps(c: &Compiled) -> Vec<usize> {
        match c {
            Compiled::Not(j) => vec![*j],
            Compiled::And(js) => js.clone(),
            _ => vec![],
        }
    }
    fn visit(i: usize, compiled: &[Compiled], specs: &[LfSpec], marks: &mut [Mark], order: &mut Vec<usize>) -> Result<()> {
        match marks[i] {
            Mark::Done => return Ok(()),
            Mark::Active => return Err(Error::Config(format!("labeling function {:?} is part of a reference cycle", specs[i].name()))),
            Mark::New => {}
        }
        marks[i] = Mark::Active;
        for j in deps(&compiled[i]) {
            visit(j, compiled, specs, marks, order)?;
        }
        marks[i] = Mark::Done;
        order.push(i);
        Ok(())
    }
    let mut marks = vec![Mark::New; compiled.len()];
    let mut order = Vec::with_capacity(compiled.len());
    for i in 0..compiled.len() {
        visit(i, compiled, specs, &mut marks, &mut order)?;
    }
    Ok(order)
}

/// Evaluates every visible labeling function on every group.
pub fn apply_lfs(groups: &[TransactionGroup], config: &LfConfig, model: Option<&EmbeddingModel>) -> Result<LabelMatrix> {
    let set = LfSet::compile(config, model)?;
    let rows: Vec<Vec<Vote>> = groups.par_iter().map(|g| set.votes(g)).collect();
    LabelMatrix::new(groups.iter().map(|g| g.group_id()).collect(), set.names(), rows)
}

/// Vocabulary words whose cosine to `anchor` is at least `threshold`,
/// most similar first.
pub fn expand_anchor(model: &EmbeddingModel, anchor: &str, threshold: f64) -> Result<Vec<(String, f64)>> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold {threshold} must lie in (-1, 1]")));
    }
    Ok(model.words_above(&model.vector(anchor), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txprep::{group, Cents, Day, Transaction};

    fn groups_of(rows: &[(&str, &str, (i32, u32, u32), i64)]) -> Vec<TransactionGroup> {
        let txs: Vec<Transaction> = rows
            .iter()
            .enumerate()
            .map(|(i, &(acct, desc, d, cents))| Transaction {
                account_id: acct.into(),
                transaction_id: format!("t{i}"),
                date: Day::from_ymd(d.0, d.1, d.2).unwrap(),
                amount: Cents(cents),
                description: desc.into(),
                merchant_name: None,
            })
            .collect();
        group(&txs)
    }

    fn config(text: &str) -> LfConfig {
        LfConfig::from_toml(text).unwrap()
    }

    #[test]
    fn pattern_respects_word_boundaries() {
        let g = groups_of(&[("a", "AFFORD PAYMENT", (2023, 1, 1), 100), ("b", "FORD MOTOR CREDIT", (2023, 1, 1), 100)]);
        let c = config("[[lf]]\nkind = \"pattern\"\nname = \"ford\"\npattern = \"ford\"\npolarity = \"positive\"\n");
        let m = apply_lfs(&g, &c, None).unwrap();
        assert_eq!(m.row(0), &[Vote::Abstain]);
        assert_eq!(m.row(1), &[Vote::Positive]);
    }

    #[test]
    fn frequency_on_monthly_dates() {
        let g = groups_of(&[
            ("a", "RENT", (2023, 1, 1), 150_000),
            ("a", "RENT", (2023, 2, 1), 150_000),
            ("a", "RENT", (2023, 3, 1), 150_000),
        ]);
        assert_eq!(g[0].aggregates.mean_gap_days, Some(29.5));
        let c = config(
            "[[lf]]\nkind = \"frequency\"\nname = \"monthly\"\ngap_days = [27, 34]\nmin_count = 3\nmax_coeff_var = 0.1\npolarity = \"positive\"\n",
        );
        assert_eq!(apply_lfs(&g, &c, None).unwrap().row(0), &[Vote::Positive]);
        let c = config(
            "[[lf]]\nkind = \"frequency\"\nname = \"monthly\"\ngap_days = [27, 34]\nmin_count = 4\nmax_coeff_var = 0.1\npolarity = \"positive\"\n",
        );
        assert_eq!(apply_lfs(&g, &c, None).unwrap().row(0), &[Vote::Abstain]);
    }

    #[test]
    fn composites_and_hidden() {
        let g = groups_of(&[("a", "NETFLIX", (2023, 1, 1), 100), ("b", "RENT NETFLIX", (2023, 1, 1), 100), ("c", "GYM", (2023, 1, 1), 1)]);
        let c = config(
            r#"
            [[lf]]
            kind = "composite"
            name = "not_netflix"
            op = "not"
            of = ["netflix"]
            [[lf]]
            kind = "pattern"
            name = "netflix"
            pattern = "netflix"
            polarity = "positive"
            hidden = true
            [[lf]]
            kind = "pattern"
            name = "rent"
            pattern = "rent"
            polarity = "positive"
            [[lf]]
            kind = "composite"
            name = "both"
            op = "and"
            of = ["rent", "netflix"]
            "#,
        );
        let m = apply_lfs(&g, &c, None).unwrap();
        assert_eq!(m.lf_names(), ["not_netflix", "rent", "both"]);
        assert_eq!(m.row(0), &[Vote::Negative, Vote::Abstain, Vote::Abstain]);
        assert_eq!(m.row(1), &[Vote::Negative, Vote::Positive, Vote::Positive]);
        assert_eq!(m.row(2), &[Vote::Abstain, Vote::Abstain, Vote::Abstain]);
    }

    #[test]
    fn config_errors() {
        let unknown = config("[[lf]]\nkind = \"composite\"\nname = \"x\"\nop = \"not\"\nof = [\"missing\"]\n");
        assert_eq!(apply_lfs(&[], &unknown, None).unwrap_err().exit_code(), 2);
        let cycle = config(
            "[[lf]]\nkind = \"composite\"\nname = \"x\"\nop = \"not\"\nof = [\"y\"]\n[[lf]]\nkind = \"composite\"\nname = \"y\"\nop = \"not\"\nof = [\"x\"]\n",
        );
        assert!(apply_lfs(&[], &cycle, None).is_err());
        let dup = config(
            "[[lf]]\nkind = \"pattern\"\nname = \"x\"\npattern = \"a\"\npolarity = \"positive\"\n[[lf]]\nkind = \"pattern\"\nname = \"x\"\npattern = \"b\"\npolarity = \"negative\"\n",
        );
        assert!(apply_lfs(&[], &dup, None).is_err());
        let anchor = config("[[lf]]\nkind = \"anchor\"\nname = \"a\"\nanchor = \"rent\"\nthreshold = 0.5\npolarity = \"positive\"\n");
        assert!(apply_lfs(&[], &anchor, None).is_err());
        assert!(LfConfig::from_toml("[[lf]]\nkind = \"bogus\"\nname = \"a\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = config("[[lf]]\nkind = \"pattern\"\nname = \"x\"\npattern = \"a|b\"\npolarity = \"negative\"\n");
        assert_eq!(LfConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
