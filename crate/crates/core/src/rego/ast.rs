use serde_json::Number;

/// A parsed policy module together with the text it came from.
#[derive(Debug, Clone)]
pub struct PolicyDocument {
    pub source: String,
    pub package_name: Vec<String>,
    pub imports: Vec<Vec<String>>,
    pub rules: Vec<DenyRule>,
}

impl PolicyDocument {
    /// Structural equality: everything except the original source text.
    pub fn same_structure(&self, other: &PolicyDocument) -> bool {
        self.package_name == other.package_name
            && self.imports == other.imports
            && self.rules == other.rules
    }

    pub fn package_path(&self) -> String {
        self.package_name.join(".")
    }

    /// Rules whose head has the given name, with their index in the module.
    pub fn rules_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (usize, &'a DenyRule)> {
        self.rules
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.head_name == name)
    }
}

/// Surface syntax used for a partial-set head. Both forms evaluate identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadForm {
    /// `deny[msg] if { ... }`
    Bracket,
    /// `deny contains msg if { ... }`
    Contains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenyRule {
    pub head_name: String,
    pub head_form: HeadForm,
    pub message: Term,
    pub body: Vec<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprKind {
    Assign,
    Comparison,
    Truthiness,
    Negation,
    BuiltinCall,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// `var := term`
    Assign { var: String, value: Term },
    Compare { op: CmpOp, left: Term, right: Term },
    /// A bare term; holds when its value is defined and not `false`.
    Truthy(Term),
    /// `not expr`. The inner expression is never an assignment or another negation.
    Not(Box<Expr>),
}

impl Expr {
    pub fn kind(&self) -> ExprKind {
        match self {
            Expr::Assign { .. } => ExprKind::Assign,
            Expr::Compare { .. } => ExprKind::Comparison,
            Expr::Truthy(Term::Call { .. }) => ExprKind::BuiltinCall,
            Expr::Truthy(_) => ExprKind::Truthiness,
            Expr::Not(_) => ExprKind::Negation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Bool(bool),
    Number(Number),
    String(String),
}

impl Scalar {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Scalar::Null => serde_json::Value::Null,
            Scalar::Bool(b) => serde_json::Value::Bool(*b),
            Scalar::Number(n) => serde_json::Value::Number(n.clone()),
            Scalar::String(s) => serde_json::Value::String(s.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Count,
    Contains,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Count => "count",
            Builtin::Contains => "contains",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Count => 1,
            Builtin::Contains => 2,
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        match name {
            "count" => Some(Builtin::Count),
            "contains" => Some(Builtin::Contains),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Scalar(Scalar),
    Array(Vec<Term>),
    Ref(Ref),
    Call { func: Builtin, args: Vec<Term> },
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Ref(Ref {
            head: RefHead::Var(name.into()),
            path: Vec::new(),
        })
    }

    pub fn string(s: impl Into<String>) -> Term {
        Term::Scalar(Scalar::String(s.into()))
    }

    pub fn number(n: i64) -> Term {
        Term::Scalar(Scalar::Number(n.into()))
    }

    /// The variable name when the term is a bare variable.
    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Ref(Ref {
                head: RefHead::Var(v),
                path,
            }) if path.is_empty() => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefHead {
    Input,
    Var(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ref {
    pub head: RefHead,
    pub path: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    /// `.name`
    Field(String),
    /// `["name"]` or `[0]`
    Key(Scalar),
    /// `[_]`: a fresh anonymous iteration variable per occurrence.
    Wildcard,
    /// `[x]`: iterates and binds `x` when unbound, looks up by its value otherwise.
    Var(String),
}
