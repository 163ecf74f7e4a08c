use serde::Deserialize;

use rrde::moduli::{osgood_classify, ModulusSpec, OsgoodOptions, OsgoodVerdict};

use crate::failure::Failure;
use crate::output::Output;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub omega: ModulusSpec,
    #[serde(default)]
    pub osgood: Option<OsgoodOptions>,
}

/// Builds a modulus from a family name and its numeric parameters.
pub fn from_args(family: &str, params: &[f64]) -> Result<ModulusSpec, Failure> {
    let one = |name: &str| match params {
        [v] => Ok(*v),
        _ => Err(Failure::Config(format!("family {family} takes exactly one parameter ({name})"))),
    };
    let spec = match family {
        "holder" => ModulusSpec::holder(one("alpha")?)?,
        "sqrt_log" => ModulusSpec::sqrt_log(one("beta")?)?,
        "zero" if params.is_empty() => ModulusSpec::Zero,
        "zero" => return Err(Failure::Config("family zero takes no parameters".into())),
        "tabulated" => return Err(Failure::Config("a tabulated modulus needs --config with its points".into())),
        other => {
            return Err(Failure::Config(format!(
                "unknown family {other:?}; expected holder, sqrt_log, tabulated or zero"
            )))
        }
    };
    Ok(spec)
}

pub fn run(omega: &ModulusSpec, opts: Option<OsgoodOptions>, out: &mut Output) -> Result<OsgoodVerdict, Failure> {
    omega.validate()?;
    let verdict = osgood_classify(omega, &opts.unwrap_or_default())?;
    out.write_json("verdict.json", &verdict)?;
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_arguments() {
        assert_eq!(from_args("holder", &[0.4]).unwrap(), ModulusSpec::holder(0.4).unwrap());
        assert!(matches!(from_args("holder", &[]), Err(Failure::Config(_))));
        assert!(matches!(from_args("holder", &[1.5]), Err(Failure::Config(_))));
        assert!(matches!(from_args("wiggly", &[0.1]), Err(Failure::Config(_))));
        assert_eq!(from_args("zero", &[]).unwrap(), ModulusSpec::Zero);
    }
}
