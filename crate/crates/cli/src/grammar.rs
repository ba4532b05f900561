//! Parser for the command-line risk-spec grammar:
//!
//! ```text
//! E                      plain expectation
//! E+<rho>*EE(<eta>)      expectation plus weighted expected excess
//! E+<rho>*CVaR(<alpha>)  expectation plus weighted conditional value-at-risk
//! E+<rho>*VaR(<alpha>)   expectation plus weighted value-at-risk
//! E+<rho>*Mad(<p>)       expectation plus weighted upper semideviation
//! ```
//!
//! Whitespace around tokens is ignored; parameters are plain decimal
//! numbers. Parsed specs are validated (levels in (0,1), `rho >= 0`,
//! `p` in {1, 2}) before they are returned.

use stochsdp_core::risk::RiskSpec;

const FORMS: &str =
    "expected one of: E, E+rho*EE(eta), E+rho*CVaR(alpha), E+rho*VaR(alpha), E+rho*Mad(p)";

pub fn parse_risk(input: &str) -> Result<RiskSpec, String> {
    let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    let spec = parse_compact(&compact)
        .map_err(|detail| format!("risk spec {input:?}: {detail}; {FORMS}"))?;
    spec.validate().map_err(|e| format!("risk spec {input:?}: {e}"))?;
    Ok(spec)
}

fn parse_compact(s: &str) -> Result<RiskSpec, String> {
    if s == "E" {
        return Ok(RiskSpec::Expectation);
    }
    let rest = s.strip_prefix("E+").ok_or("must start with \"E\" or \"E+\"")?;
    let (rho_text, term) = rest.split_once('*').ok_or("missing \"*\" after the weight")?;
    let rho: f64 = rho_text.parse().map_err(|_| format!("bad weight {rho_text:?}"))?;

    let (kind, arg_text) = term
        .strip_suffix(')')
        .and_then(|t| t.split_once('('))
        .ok_or("risk term must look like Name(argument)")?;
    let arg: f64 = arg_text.parse().map_err(|_| format!("bad argument {arg_text:?}"))?;

    match kind {
        "EE" => Ok(RiskSpec::MeanRisk {
            base: Box::new(RiskSpec::ExpectedExcess { eta: arg }),
            rho,
        }),
        "CVaR" => Ok(RiskSpec::MeanRisk { base: Box::new(RiskSpec::CVaR { alpha: arg }), rho }),
        "VaR" => Ok(RiskSpec::MeanRisk { base: Box::new(RiskSpec::VaR { alpha: arg }), rho }),
        "Mad" => {
            if arg != 1.0 && arg != 2.0 {
                return Err(format!("Mad order must be 1 or 2, got {arg_text}"));
            }
            Ok(RiskSpec::MeanUpperSemidev { p: arg as u8, rho })
        }
        other => Err(format!("unknown risk term {other:?}")),
    }
}

/// True when the spec carries binary selectors and therefore needs
/// branch-and-bound rather than a plain conic solve.
pub fn needs_binaries(spec: &RiskSpec) -> bool {
    matches!(spec, RiskSpec::MeanRisk { base, .. } if matches!(base.as_ref(), RiskSpec::VaR { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_five_forms() {
        assert_eq!(parse_risk("E").unwrap(), RiskSpec::Expectation);
        assert_eq!(
            parse_risk("E+0.5*EE(0.25)").unwrap(),
            RiskSpec::MeanRisk { base: Box::new(RiskSpec::ExpectedExcess { eta: 0.25 }), rho: 0.5 }
        );
        assert_eq!(
            parse_risk("E+1*CVaR(0.5)").unwrap(),
            RiskSpec::MeanRisk { base: Box::new(RiskSpec::CVaR { alpha: 0.5 }), rho: 1.0 }
        );
        assert_eq!(
            parse_risk("E + 2 * VaR( 0.7 )").unwrap(),
            RiskSpec::MeanRisk { base: Box::new(RiskSpec::VaR { alpha: 0.7 }), rho: 2.0 }
        );
        assert_eq!(
            parse_risk("E+0.8*Mad(2)").unwrap(),
            RiskSpec::MeanUpperSemidev { p: 2, rho: 0.8 }
        );
    }

    #[test]
    fn rejects_malformed_and_out_of_range_specs() {
        for bad in [
            "",
            "X",
            "E+CVaR(0.5)",
            "E+1*CVaR",
            "E+1*CVaR(0.5",
            "E+1*Quantile(0.5)",
            "E+1*Mad(3)",
            "E+-1*CVaR(0.5)",
            "E+1*CVaR(1.5)",
            "E+1*VaR(0)",
        ] {
            assert!(parse_risk(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn flags_binary_specs() {
        assert!(needs_binaries(&parse_risk("E+1*VaR(0.5)").unwrap()));
        assert!(!needs_binaries(&parse_risk("E+1*CVaR(0.5)").unwrap()));
        assert!(!needs_binaries(&parse_risk("E").unwrap()));
    }
}
