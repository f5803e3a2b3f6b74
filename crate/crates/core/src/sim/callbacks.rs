//! Named pure functions that scenario files bind to by name.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Solar output `y · S · E`: radiance (W/m²) times panel surface (m²) times efficiency.
pub const SOLAR_SURFACE: &str = "getSolarSurfaceInterpolant";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CallbackArg {
    Real(f64),
    Text(String),
}

impl CallbackArg {
    fn real(&self, name: &str, idx: usize) -> Result<f64, SimError> {
        match self {
            CallbackArg::Real(v) => Ok(*v),
            CallbackArg::Text(s) => Err(SimError::BadArguments {
                name: name.to_string(),
                reason: format!("argument {idx} must be a number, got {s:?}"),
            }),
        }
    }
}

impl From<f64> for CallbackArg {
    fn from(v: f64) -> Self {
        CallbackArg::Real(v)
    }
}

pub type Callback = fn(&[CallbackArg]) -> Result<f64, SimError>;

fn arity(name: &str, args: &[CallbackArg], n: usize) -> Result<(), SimError> {
    if args.len() != n {
        return Err(SimError::BadArguments {
            name: name.to_string(),
            reason: format!("expected {n} arguments, got {}", args.len()),
        });
    }
    Ok(())
}

fn solar_surface(args: &[CallbackArg]) -> Result<f64, SimError> {
    arity(SOLAR_SURFACE, args, 3)?;
    let y = args[0].real(SOLAR_SURFACE, 0)?;
    let s = args[1].real(SOLAR_SURFACE, 1)?;
    let e = args[2].real(SOLAR_SURFACE, 2)?;
    Ok(y * s * e)
}

fn identity(args: &[CallbackArg]) -> Result<f64, SimError> {
    arity("identity", args, 1)?;
    args[0].real("identity", 0)
}

fn affine(args: &[CallbackArg]) -> Result<f64, SimError> {
    arity("affine", args, 3)?;
    let x = args[0].real("affine", 0)?;
    Ok(x * args[1].real("affine", 1)? + args[2].real("affine", 2)?)
}

fn clamp(args: &[CallbackArg]) -> Result<f64, SimError> {
    arity("clamp", args, 3)?;
    let x = args[0].real("clamp", 0)?;
    let lo = args[1].real("clamp", 1)?;
    let hi = args[2].real("clamp", 2)?;
    Ok(x.max(lo).min(hi))
}

/// Name → function table. Entries are fixed once the registry is built, so a
/// name resolves to the same function for the whole scenario.
#[derive(Clone)]
pub struct CallbackRegistry {
    entries: BTreeMap<String, Callback>,
}

impl fmt::Debug for CallbackRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl Default for CallbackRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl CallbackRegistry {
    pub fn empty() -> Self {
        CallbackRegistry { entries: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.entries.insert(SOLAR_SURFACE.to_string(), solar_surface);
        reg.entries.insert("identity".to_string(), identity);
        reg.entries.insert("affine".to_string(), affine);
        reg.entries.insert("clamp".to_string(), clamp);
        reg
    }

    /// Registers `f` under `name`. Fails if the name is taken.
    pub fn register(&mut self, name: &str, f: Callback) -> Result<(), SimError> {
        if self.entries.contains_key(name) {
            return Err(SimError::Config(format!("callback `{name}` already registered")));
        }
        self.entries.insert(name.to_string(), f);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn eval(&self, name: &str, args: &[CallbackArg]) -> Result<f64, SimError> {
        let f = self.entries.get(name).ok_or_else(|| SimError::UnknownCallback(name.to_string()))?;
        f(args)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reals(v: &[f64]) -> Vec<CallbackArg> {
        v.iter().copied().map(CallbackArg::Real).collect()
    }

    #[test]
    fn solar_surface_rated_output() {
        let reg = CallbackRegistry::with_builtins();
        let p = reg.eval(SOLAR_SURFACE, &reals(&[1000.0, 504.0, 0.16])).unwrap();
        assert!((p - 80640.0).abs() < 1e-9);
        assert_eq!(reg.eval(SOLAR_SURFACE, &reals(&[0.0, 504.0, 0.16])).unwrap(), 0.0);
    }

    #[test]
    fn unknown_name_is_an_error() {
        let reg = CallbackRegistry::with_builtins();
        assert_eq!(reg.eval("getSunsetColour", &[]), Err(SimError::UnknownCallback("getSunsetColour".into())));
    }

    #[test]
    fn wrong_arity_and_types() {
        let reg = CallbackRegistry::with_builtins();
        assert!(reg.eval(SOLAR_SURFACE, &reals(&[1.0, 2.0])).is_err());
        let args = vec![CallbackArg::Text("noon".into()), 1.0.into(), 1.0.into()];
        assert!(matches!(reg.eval(SOLAR_SURFACE, &args), Err(SimError::BadArguments { .. })));
    }

    #[test]
    fn registration_is_stable() {
        let mut reg = CallbackRegistry::with_builtins();
        fn double(a: &[CallbackArg]) -> Result<f64, SimError> {
            Ok(2.0 * a[0].real("double", 0)?)
        }
        reg.register("double", double).unwrap();
        assert!(reg.register("double", identity).is_err());
        assert_eq!(reg.eval("double", &reals(&[4.0])).unwrap(), 8.0);
    }
}
