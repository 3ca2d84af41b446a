//! Process reward: `r = alpha * diag_delta + beta * safety - gamma * (1 - alpha_conf)`.
//!
//! The three terms are evaluated left to right in binary floating point, so
//! a record can be re-scored bit-for-bit from its stored components.

use crate::error::{ErrorCode, LanserError};
use crate::relocate::Resolution;
use serde::{Deserialize, Serialize};

pub const REWARD_VERSION: &str = "pr-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 0.5,
            beta: 0.4,
            gamma: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), LanserError> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !w.is_finite() || w < 0.0 {
                return Err(LanserError::new(
                    ErrorCode::Internal,
                    format!("reward weight {name} must be finite and non-negative, got {w}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub d_prev: u64,
    pub d_curr: u64,
    pub safety_pass: bool,
    pub alpha_conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub diag_delta: i64,
    pub safety: u8,
    pub ambiguity_penalty: f64,
    pub alpha_conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub version: String,
    pub r: f64,
    pub components: RewardComponents,
    pub weights: RewardWeights,
    pub explanation: String,
}

/// The reward scalar from stored components.
pub fn evaluate(c: &RewardComponents, w: &RewardWeights) -> f64 {
    let diag = w.alpha * c.diag_delta as f64;
    let safe = w.beta * f64::from(c.safety);
    let ambiguity = w.gamma * c.ambiguity_penalty;
    diag + safe - ambiguity
}

pub fn compute_reward(inputs: &RewardInputs, weights: &RewardWeights) -> Result<RewardRecord, LanserError> {
    weights.validate()?;
    if !(0.0..=1.0).contains(&inputs.alpha_conf) {
        return Err(LanserError::new(
            ErrorCode::Internal,
            format!("alpha_conf must lie in [0, 1], got {}", inputs.alpha_conf),
        ));
    }
    let components = RewardComponents {
        diag_delta: inputs.d_prev as i64 - inputs.d_curr as i64,
        safety: u8::from(inputs.safety_pass),
        ambiguity_penalty: 1.0 - inputs.alpha_conf,
        alpha_conf: inputs.alpha_conf,
    };
    let r = evaluate(&components, weights);
    Ok(RewardRecord {
        version: REWARD_VERSION.to_string(),
        r,
        explanation: format!(
            "diagnostics {} -> {}, safety {}, confidence {} over frozen snapshot",
            inputs.d_prev, inputs.d_curr, components.safety, inputs.alpha_conf
        ),
        components,
        weights: *weights,
    })
}

/// A server diagnostic as it appears in bundle facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub uri: String,
    pub range: [u32; 4],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub severity: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<String>,
    pub message: String,
}

/// Diagnostics in the resolved target's file; every diagnostic when the
/// target did not resolve. All severities count.
pub fn count_relevant_diagnostics(diagnostics: &[Diagnostic], target: &Resolution) -> u64 {
    match &target.resolved {
        Some(c) => diagnostics.iter().filter(|d| d.uri == c.uri).count() as u64,
        None => diagnostics.len() as u64,
    }
}

/// Re-scores a bundle's `processReward` block and checks it against the
/// stored scalar.
pub fn replay_reward(bundle: &serde_json::Value) -> Result<f64, LanserError> {
    let block = bundle
        .get("processReward")
        .filter(|v| !v.is_null())
        .ok_or_else(|| LanserError::new(ErrorCode::ReplayMismatch, "bundle carries no processReward block"))?;
    let record: RewardRecord = serde_json::from_value(block.clone())
        .map_err(|e| LanserError::new(ErrorCode::ReplayMismatch, format!("malformed processReward: {e}")))?;
    let c = &record.components;
    if c.ambiguity_penalty != 1.0 - c.alpha_conf {
        return Err(LanserError::new(
            ErrorCode::ReplayMismatch,
            "ambiguity_penalty does not equal 1 - alpha_conf",
        ));
    }
    let r = evaluate(c, &record.weights);
    if r.to_bits() != record.r.to_bits() {
        return Err(LanserError::new(
            ErrorCode::ReplayMismatch,
            format!("stored r {} but components give {r}", record.r),
        ));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(d_prev: u64, d_curr: u64, safety_pass: bool, alpha_conf: f64) -> f64 {
        compute_reward(
            &RewardInputs {
                d_prev,
                d_curr,
                safety_pass,
                alpha_conf,
            },
            &RewardWeights::default(),
        )
        .unwrap()
        .r
    }

    #[test]
    fn diagnostic_reduction_example() {
        assert!((r(5, 2, true, 0.94) - 1.894).abs() <= 1e-12);
    }

    #[test]
    fn vanishing_terms() {
        let w = RewardWeights {
            alpha: 3.0,
            beta: 0.0,
            gamma: 2.0,
        };
        let rec = compute_reward(
            &RewardInputs {
                d_prev: 4,
                d_curr: 4,
                safety_pass: false,
                alpha_conf: 1.0,
            },
            &w,
        )
        .unwrap();
        assert_eq!(rec.r, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = RewardWeights {
            alpha: -0.1,
            ..Default::default()
        };
        assert!(compute_reward(
            &RewardInputs {
                d_prev: 0,
                d_curr: 0,
                safety_pass: true,
                alpha_conf: 1.0
            },
            &w
        )
        .is_err());
        let inputs = RewardInputs {
            d_prev: 0,
            d_curr: 0,
            safety_pass: true,
            alpha_conf: 1.5,
        };
        assert!(compute_reward(&inputs, &RewardWeights::default()).is_err());
    }

    #[test]
    fn replay_detects_tampering() {
        let rec = compute_reward(
            &RewardInputs {
                d_prev: 5,
                d_curr: 2,
                safety_pass: true,
                alpha_conf: 0.94,
            },
            &RewardWeights::default(),
        )
        .unwrap();
        let mut bundle = serde_json::json!({ "processReward": rec });
        assert_eq!(replay_reward(&bundle).unwrap(), rec.r);
        bundle["processReward"]["r"] = serde_json::json!(1.9);
        assert_eq!(replay_reward(&bundle).unwrap_err().code, ErrorCode::ReplayMismatch);
    }

    #[test]
    fn relevance_rule() {
        let d = |uri: &str| Diagnostic {
            uri: uri.into(),
            range: [1, 1, 1, 2],
            severity: Some(1),
            code: None,
            source: None,
            message: "m".into(),
        };
        let diags = [d("a.py"), d("b.py"), d("a.py")];
        let unresolved = Resolution {
            original: String::new(),
            resolved: None,
            disambiguation: vec![],
            error: Some(ErrorCode::NotFound),
            message: None,
            candidates: vec![],
        };
        assert_eq!(count_relevant_diagnostics(&[], &unresolved), 0);
        assert_eq!(count_relevant_diagnostics(&diags, &unresolved), 3);
        let mut resolved = unresolved.clone();
        resolved.error = None;
        resolved.resolved = Some(crate::relocate::Candidate {
            uri: "b.py".into(),
            range: [1, 1, 1, 1],
            score: 1.0,
            features: crate::relocate::Features::ONES,
            explanation: String::new(),
            focus: [1, 1],
        });
        assert_eq!(count_relevant_diagnostics(&diags, &resolved), 1);
    }
}
