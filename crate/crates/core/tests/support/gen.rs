//! Random small documents and policies inside the supported subset.

use pacloop::rego::{parse_policy, print_policy, Builtin, CmpOp, DenyRule, Expr, HeadForm, PolicyDocument, Ref, RefHead, Scalar, Segment, Term};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

const KEYS: [&str; 3] = ["a", "b", "c"];
const STRS: [&str; 4] = ["x", "y", "xy", "vm-x"];

fn leaf(rng: &mut impl Rng) -> Value {
    match rng.random_range(0..6) {
        0 | 1 => json!(rng.random_range(0..5)),
        2 => json!(2.0),
        3 => json!(*STRS.choose(rng).unwrap()),
        4 => json!(rng.random_bool(0.5)),
        _ => Value::Null,
    }
}

fn field_value(rng: &mut impl Rng) -> Value {
    match rng.random_range(0..5) {
        0 | 1 => leaf(rng),
        2 => Value::Array((0..rng.random_range(0..3)).map(|_| leaf(rng)).collect()),
        3 => Value::Array(
            (0..rng.random_range(0..3))
                .map(|_| json!({"v": rng.random_range(0..5)}))
                .collect(),
        ),
        _ => json!(*STRS.choose(rng).unwrap()),
    }
}

/// A resource object with at most three keys.
pub fn random_resource(rng: &mut impl Rng) -> Value {
    let mut m = serde_json::Map::new();
    for k in KEYS {
        if rng.random_bool(0.7) {
            m.insert(k.to_string(), field_value(rng));
        }
    }
    Value::Object(m)
}

/// `{"resources": [...]}` with up to three resources.
pub fn random_document(rng: &mut impl Rng) -> Value {
    let n = rng.random_range(0..4);
    json!({"resources": (0..n).map(|_| random_resource(rng)).collect::<Vec<_>>()})
}

/// How a rule body reaches "its" resource.
#[derive(Clone)]
enum Handle {
    /// `r := input.resources[_]`
    Var(String),
    /// `input.resources[i]` with `i` bound by iteration
    Index(String),
}

struct RuleGen {
    handles: Vec<Handle>,
    val_vars: Vec<String>,
    idx_vars: Vec<String>,
    fresh: usize,
    /// Allows rules that look at more than one resource: a second handle or
    /// `count(input.resources)`.
    cross: bool,
}

fn field(k: &str) -> Segment {
    Segment::Field(k.to_string())
}

impl RuleGen {
    fn new(cross: bool) -> Self {
        RuleGen {
            handles: Vec::new(),
            val_vars: Vec::new(),
            idx_vars: Vec::new(),
            fresh: 0,
            cross,
        }
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn literal(&self, rng: &mut impl Rng) -> Term {
        match rng.random_range(0..3) {
            0 | 1 => Term::number(rng.random_range(0..5)),
            _ => Term::string(*STRS.choose(rng).unwrap()),
        }
    }

    fn handle_ref(h: &Handle, mut tail: Vec<Segment>) -> Term {
        match h {
            Handle::Var(r) => Term::Ref(Ref {
                head: RefHead::Var(r.clone()),
                path: tail,
            }),
            Handle::Index(i) => {
                let mut path = vec![field("resources"), Segment::Var(i.clone())];
                path.append(&mut tail);
                Term::Ref(Ref {
                    head: RefHead::Input,
                    path,
                })
            }
        }
    }

    fn resource_ref(&mut self, rng: &mut impl Rng, allow_fresh_index: bool) -> Term {
        let h = self.handles.choose(rng).unwrap().clone();
        let k = *KEYS.choose(rng).unwrap();
        let tail = match rng.random_range(0..5) {
            0 | 1 => vec![field(k)],
            2 => vec![field(k), Segment::Wildcard],
            3 => vec![field(k), Segment::Wildcard, field("v")],
            _ if allow_fresh_index => {
                let j = self.fresh("j");
                vec![field(k), Segment::Var(j)]
            }
            _ => vec![Segment::Key(Scalar::String(k.to_string()))],
        };
        Self::handle_ref(&h, tail)
    }

    fn operand(&mut self, rng: &mut impl Rng, in_not: bool) -> Term {
        match rng.random_range(0..6) {
            0 => self.literal(rng),
            1 if !self.val_vars.is_empty() => Term::var(self.val_vars.choose(rng).unwrap().clone()),
            2 => Term::Call {
                func: Builtin::Count,
                args: vec![self.resource_ref(rng, false)],
            },
            3 if self.cross && !in_not => Term::Call {
                func: Builtin::Count,
                args: vec![Term::Ref(Ref {
                    head: RefHead::Input,
                    path: vec![field("resources")],
                })],
            },
            _ => self.resource_ref(rng, in_not),
        }
    }

    fn condition(&mut self, rng: &mut impl Rng, in_not: bool) -> Expr {
        match rng.random_range(0..4) {
            0 | 1 => {
                let left = self.operand(rng, in_not);
                let right = if rng.random_bool(0.6) {
                    self.literal(rng)
                } else {
                    self.operand(rng, in_not)
                };
                Expr::Compare {
                    op: *CmpOp::ALL.choose(rng).unwrap(),
                    left,
                    right,
                }
            }
            2 => Expr::Truthy(self.resource_ref(rng, in_not)),
            _ => Expr::Truthy(Term::Call {
                func: Builtin::Contains,
                args: vec![self.resource_ref(rng, false), Term::string("x")],
            }),
        }
    }

    fn bind_resource(&mut self, rng: &mut impl Rng) -> Expr {
        if rng.random_bool(0.7) {
            let r = self.fresh("r");
            self.handles.push(Handle::Var(r.clone()));
            Expr::Assign {
                var: r,
                value: Term::Ref(Ref {
                    head: RefHead::Input,
                    path: vec![field("resources"), Segment::Wildcard],
                }),
            }
        } else {
            let i = self.fresh("i");
            self.idx_vars.push(i.clone());
            let h = Handle::Index(i);
            self.handles.push(h.clone());
            let k = *KEYS.choose(rng).unwrap();
            Expr::Compare {
                op: *CmpOp::ALL.choose(rng).unwrap(),
                left: Self::handle_ref(&h, vec![field(k)]),
                right: self.literal(rng),
            }
        }
    }
}

fn random_rule(rng: &mut impl Rng, rule_no: usize, cross: bool) -> DenyRule {
    let mut g = RuleGen::new(cross);
    let len = rng.random_range(1..=4);
    let mut body = Vec::new();
    while body.len() < len {
        let e = if g.handles.is_empty() {
            g.bind_resource(rng)
        } else {
            match rng.random_range(0..6) {
                0 => {
                    let value = g.resource_ref(rng, false);
                    let v = g.fresh("v");
                    g.val_vars.push(v.clone());
                    Expr::Assign { var: v, value }
                }
                1 => Expr::Not(Box::new(g.condition(rng, true))),
                2 if g.cross && g.handles.len() < 2 => g.bind_resource(rng),
                _ => g.condition(rng, false),
            }
        };
        body.push(e);
    }
    let mut candidates: Vec<String> = g.val_vars.clone();
    candidates.extend(g.idx_vars.iter().cloned());
    let message = if !candidates.is_empty() && rng.random_bool(0.5) {
        Term::var(candidates.choose(rng).unwrap().clone())
    } else {
        Term::string(format!("m{rule_no}-{}", rng.random_range(0..2)))
    };
    DenyRule {
        head_name: "deny".into(),
        head_form: if rng.random_bool(0.5) { HeadForm::Bracket } else { HeadForm::Contains },
        message,
        body,
    }
}

/// A parsed random policy of one to three rules. The policy goes through the
/// printer and parser, so it is also a round-trip sample.
pub fn random_policy(rng: &mut impl Rng, cross: bool) -> PolicyDocument {
    let n = rng.random_range(1..=3);
    let doc = PolicyDocument {
        source: String::new(),
        package_name: vec!["gen".into()],
        imports: Vec::new(),
        rules: (0..n).map(|i| random_rule(rng, i, cross)).collect(),
    };
    let src = print_policy(&doc);
    let parsed = parse_policy(&src).unwrap_or_else(|d| panic!("generated policy rejected: {d:?}\n{src}"));
    assert!(parsed.same_structure(&doc), "printer round trip changed structure:\n{src}");
    parsed
}
