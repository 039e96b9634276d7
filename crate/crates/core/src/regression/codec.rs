use serde::{Deserialize, Serialize};

use crate::backbone::vocab;
use crate::error::{Error, Result};

/// Fixed-point decimal score strings over the digit/`.`/end alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTokenization {
    pub decimals: usize,
}

impl Default for ScoreTokenization {
    fn default() -> Self {
        ScoreTokenization { decimals: 3 }
    }
}

impl ScoreTokenization {
    /// Token count of every serialized score, end marker included.
    pub fn target_len(&self) -> usize {
        if self.decimals == 0 {
            2
        } else {
            self.decimals + 3
        }
    }

    pub fn tolerance(&self) -> f64 {
        0.5 * 10f64.powi(-(self.decimals as i32))
    }
}

/// Rounds half away from zero to `t.decimals` places.
pub fn format_score(y: f64, t: &ScoreTokenization) -> Result<String> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Argument(format!("score {y} outside [0, 1]")));
    }
    let scale = 10u64.pow(t.decimals as u32);
    let k = (y * scale as f64).round() as u64;
    Ok(if t.decimals == 0 {
        format!("{k}")
    } else {
        format!("{}.{:0width$}", k / scale, k % scale, width = t.decimals)
    })
}

pub fn serialize_score(y: f64, t: &ScoreTokenization) -> Result<Vec<usize>> {
    let s = format_score(y, t)?;
    let mut tokens: Vec<usize> = s
        .chars()
        .map(|c| vocab::token_for(c).expect("formatted scores use the score alphabet"))
        .collect();
    tokens.push(vocab::END);
    Ok(tokens)
}

/// Text for a generated token sequence, stopping at the end marker.
pub fn detokenize(tokens: &[usize]) -> String {
    tokens
        .iter()
        .take_while(|&&t| t != vocab::END)
        .map(|&t| vocab::token_str(t))
        .collect()
}

/// First maximal decimal number in `text`, clamped to `[0, 1]`.
pub fn parse_score(text: &str, _t: &ScoreTokenization) -> Result<f64> {
    let bytes = text.as_bytes();
    let Some(start) = bytes.iter().position(u8::is_ascii_digit) else {
        return Err(Error::ScoreParse(text.to_string()));
    };
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
    }
    let negative = start > 0 && bytes[start - 1] == b'-';
    let v: f64 = text[start..end]
        .parse()
        .map_err(|_| Error::ScoreParse(text.to_string()))?;
    Ok(if negative { 0.0 } else { v.clamp(0.0, 1.0) })
}
