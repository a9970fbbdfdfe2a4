use std::collections::BTreeMap;

use super::ScriptErrorKind;

/// `constant + Σ coeff · x[var]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Affine {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl Affine {
    pub fn constant(v: f64) -> Self {
        Affine { constant: v, terms: BTreeMap::new() }
    }

    pub fn var(index: usize) -> Self {
        Affine { constant: 0.0, terms: BTreeMap::from([(index, 1.0)]) }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    fn add(&self, other: &Affine, sign: f64) -> Affine {
        let mut out = self.clone();
        out.constant += sign * other.constant;
        for (&k, &v) in &other.terms {
            *out.terms.entry(k).or_default() += sign * v;
        }
        out
    }

    fn scale(&self, f: f64) -> Affine {
        Affine {
            constant: self.constant * f,
            terms: self.terms.iter().map(|(&k, &v)| (k, v * f)).collect(),
        }
    }

    fn mul(&self, other: &Affine) -> Result<Affine, ScriptErrorKind> {
        match (self.is_constant(), other.is_constant()) {
            (true, _) => Ok(other.scale(self.constant)),
            (_, true) => Ok(self.scale(other.constant)),
            _ => Err(ScriptErrorKind::Nonlinear),
        }
    }

    /// Dense coefficient vector over `n` variables.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&k, &v) in &self.terms {
            out[k] += v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(Affine),
    Vector(Vec<Affine>),
}

impl Value {
    pub fn number(v: f64) -> Self {
        Value::Scalar(Affine::constant(v))
    }

    pub fn numbers(v: &[f64]) -> Self {
        Value::Vector(v.iter().map(|&x| Affine::constant(x)).collect())
    }

    pub fn shape(&self) -> String {
        match self {
            Value::Scalar(_) => "scalar".to_string(),
            Value::Vector(v) => format!("vector of length {}", v.len()),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Value::Scalar(a) => a.is_constant(),
            Value::Vector(v) => v.iter().all(Affine::is_constant),
        }
    }

    /// Elements as a list; a scalar is a list of one.
    pub fn elements(&self) -> Vec<&Affine> {
        match self {
            Value::Scalar(a) => vec![a],
            Value::Vector(v) => v.iter().collect(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Scalar(a) => serde_json::json!(a.constant),
            Value::Vector(v) => serde_json::Value::Array(v.iter().map(|a| serde_json::json!(a.constant)).collect()),
        }
    }

    fn zip_with(
        &self,
        other: &Value,
        f: impl Fn(&Affine, &Affine) -> Result<Affine, ScriptErrorKind>,
    ) -> Result<Value, ScriptErrorKind> {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Ok(Value::Scalar(f(a, b)?)),
            (Value::Scalar(a), Value::Vector(v)) => {
                Ok(Value::Vector(v.iter().map(|b| f(a, b)).collect::<Result<_, _>>()?))
            }
            (Value::Vector(v), Value::Scalar(b)) => {
                Ok(Value::Vector(v.iter().map(|a| f(a, b)).collect::<Result<_, _>>()?))
            }
            (Value::Vector(u), Value::Vector(v)) => {
                if u.len() != v.len() {
                    return Err(ScriptErrorKind::DimensionMismatch { left: u.len(), right: v.len() });
                }
                Ok(Value::Vector(u.iter().zip(v).map(|(a, b)| f(a, b)).collect::<Result<_, _>>()?))
            }
        }
    }

    pub fn add(&self, other: &Value) -> Result<Value, ScriptErrorKind> {
        self.zip_with(other, |a, b| Ok(a.add(b, 1.0)))
    }

    pub fn sub(&self, other: &Value) -> Result<Value, ScriptErrorKind> {
        self.zip_with(other, |a, b| Ok(a.add(b, -1.0)))
    }

    pub fn mul(&self, other: &Value) -> Result<Value, ScriptErrorKind> {
        self.zip_with(other, Affine::mul)
    }

    pub fn neg(&self) -> Value {
        match self {
            Value::Scalar(a) => Value::Scalar(a.scale(-1.0)),
            Value::Vector(v) => Value::Vector(v.iter().map(|a| a.scale(-1.0)).collect()),
        }
    }

    pub fn sum(&self) -> Value {
        match self {
            Value::Scalar(_) => self.clone(),
            Value::Vector(v) => Value::Scalar(v.iter().fold(Affine::default(), |acc, a| acc.add(a, 1.0))),
        }
    }

    pub fn index(&self, idx: &Value) -> Result<Value, ScriptErrorKind> {
        let Value::Vector(items) = self else {
            return Err(ScriptErrorKind::TypeMismatch("only vectors can be indexed".to_string()));
        };
        let Value::Scalar(i) = idx else {
            return Err(ScriptErrorKind::TypeMismatch("index must be a scalar".to_string()));
        };
        if !i.is_constant() {
            return Err(ScriptErrorKind::TypeMismatch("index must not depend on variables".to_string()));
        }
        let k = i.constant;
        if k < 0.0 || k.fract() != 0.0 || k as usize >= items.len() {
            return Err(ScriptErrorKind::IndexOutOfRange { index: k, len: items.len() });
        }
        Ok(Value::Scalar(items[k as usize].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_arithmetic() {
        let x = Value::Scalar(Affine::var(0));
        let y = Value::Scalar(Affine::var(1));
        let e = x.mul(&Value::number(2.0)).unwrap().add(&y).unwrap().sub(&Value::number(1.0)).unwrap();
        let Value::Scalar(a) = e else { panic!() };
        assert_eq!(a.coefficients(2), vec![2.0, 1.0]);
        assert_eq!(a.constant, -1.0);
        assert_eq!(x.mul(&y), Err(ScriptErrorKind::Nonlinear));
    }

    #[test]
    fn broadcasting_and_dimensions() {
        let v = Value::numbers(&[1.0, 2.0]);
        let w = Value::numbers(&[1.0, 2.0, 3.0]);
        assert!(matches!(v.add(&w), Err(ScriptErrorKind::DimensionMismatch { left: 2, right: 3 })));
        assert_eq!(v.mul(&Value::number(2.0)).unwrap(), Value::numbers(&[2.0, 4.0]));
        assert_eq!(w.sum(), Value::number(6.0));
        assert_eq!(w.index(&Value::number(2.0)).unwrap(), Value::number(3.0));
        assert!(w.index(&Value::number(3.0)).is_err());
        assert!(w.index(&Value::number(0.5)).is_err());
    }
}
