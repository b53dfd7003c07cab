use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Flavor of a modal operator. Each flavor is backed by its own SDE.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Temporal,
    Epistemic(String),
    Doxastic(String),
    Deontic,
}

impl Modality {
    /// Library key: `temporal`, `epistemic:<agent>`, `doxastic:<agent>`,
    /// `deontic`.
    pub fn key(&self) -> String {
        match self {
            Modality::Temporal => "temporal".into(),
            Modality::Epistemic(a) => format!("epistemic:{a}"),
            Modality::Doxastic(a) => format!("doxastic:{a}"),
            Modality::Deontic => "deontic".into(),
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key.split_once(':') {
            None if key == "temporal" => Some(Modality::Temporal),
            None if key == "deontic" => Some(Modality::Deontic),
            Some(("epistemic", a)) if !a.is_empty() => Some(Modality::Epistemic(a.into())),
            Some(("doxastic", a)) if !a.is_empty() => Some(Modality::Doxastic(a.into())),
            _ => None,
        }
    }

    pub fn agent(&self) -> Option<&str> {
        match self {
            Modality::Epistemic(a) | Modality::Doxastic(a) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Closed time window `[start, end]` in model time units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && 0.0 <= start && start <= end) {
            return Err(Error::Contract(format!("invalid window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Formula {
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    /// Box: soft worst case over sample paths of the modality's SDE.
    Necessity { modality: Modality, window: Option<Window>, body: Box<Formula> },
    /// Diamond: soft best case over sample paths.
    Possibility { modality: Modality, window: Option<Window>, body: Box<Formula> },
    /// Dynamic-logic box `[a;b;...](body)` over chained action SDEs.
    Seq { actions: Vec<String>, body: Box<Formula> },
}

impl Formula {
    pub fn atom(name: impl Into<String>) -> Self {
        Formula::Atom(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn necessity(modality: Modality, window: Option<Window>, body: Formula) -> Self {
        Formula::Necessity { modality, window, body: Box::new(body) }
    }

    pub fn possibility(modality: Modality, window: Option<Window>, body: Formula) -> Self {
        Formula::Possibility { modality, window, body: Box::new(body) }
    }

    pub fn seq(actions: Vec<String>, body: Formula) -> Self {
        Formula::Seq { actions, body: Box::new(body) }
    }

    /// Largest number of modal operators on any root-to-leaf path.
    pub fn nesting_depth(&self) -> usize {
        match self {
            Formula::Atom(_) => 0,
            Formula::Not(f) => f.nesting_depth(),
            Formula::And(a, b) | Formula::Or(a, b) => a.nesting_depth().max(b.nesting_depth()),
            Formula::Necessity { body, .. }
            | Formula::Possibility { body, .. }
            | Formula::Seq { body, .. } => 1 + body.nesting_depth(),
        }
    }

    pub fn is_modal_free(&self) -> bool {
        self.nesting_depth() == 0
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Necessity { modality, .. } | Formula::Possibility { modality, .. } = f {
                out.insert(modality.clone());
            }
        });
        out
    }

    pub fn actions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Seq { actions, .. } = f {
                out.extend(actions.iter().cloned());
            }
        });
        out
    }

    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Atom(n) = f {
                out.insert(n.clone());
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Atom(_) => {}
            Formula::Not(a) => a.visit(f),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Formula::Necessity { body, .. }
            | Formula::Possibility { body, .. }
            | Formula::Seq { body, .. } => body.visit(f),
        }
    }

    /// Negation normal form: negations pushed down to atoms through the
    /// connectives and the Box/Diamond duality. A negated `Seq` stays as is.
    pub fn nnf(&self) -> Formula {
        self.nnf_signed(false)
    }

    fn nnf_signed(&self, negate: bool) -> Formula {
        match (self, negate) {
            (Formula::Atom(_), false) => self.clone(),
            (Formula::Atom(_), true) => Formula::not(self.clone()),
            (Formula::Not(f), n) => f.nnf_signed(!n),
            (Formula::And(a, b), false) => Formula::and(a.nnf_signed(false), b.nnf_signed(false)),
            (Formula::And(a, b), true) => Formula::or(a.nnf_signed(true), b.nnf_signed(true)),
            (Formula::Or(a, b), false) => Formula::or(a.nnf_signed(false), b.nnf_signed(false)),
            (Formula::Or(a, b), true) => Formula::and(a.nnf_signed(true), b.nnf_signed(true)),
            (Formula::Necessity { modality, window, body }, n) => {
                let body = body.nnf_signed(n);
                if n {
                    Formula::possibility(modality.clone(), *window, body)
                } else {
                    Formula::necessity(modality.clone(), *window, body)
                }
            }
            (Formula::Possibility { modality, window, body }, n) => {
                let body = body.nnf_signed(n);
                if n {
                    Formula::necessity(modality.clone(), *window, body)
                } else {
                    Formula::possibility(modality.clone(), *window, body)
                }
            }
            (Formula::Seq { actions, body }, false) => Formula::seq(actions.clone(), body.nnf()),
            (Formula::Seq { actions, body }, true) => {
                Formula::not(Formula::seq(actions.clone(), body.nnf()))
            }
        }
    }
}
