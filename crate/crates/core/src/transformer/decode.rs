use super::model::Transformer;
use crate::error::{Error, Result};

/// Greedy continuation of `prompt`: append the argmax token (lowest id on
/// ties) until `eos` is produced or `max_new` tokens have been added. Returns
/// only the generated tokens, including a final `eos`.
pub fn decode_greedy(model: &Transformer<'_>, prompt: &[usize], max_new: usize, eos: usize) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut sequence = prompt.to_vec();
    let mut generated = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        let tape = model.forward(&sequence)?;
        let next = argmax(tape.logits().row(sequence.len() - 1));
        generated.push(next);
        sequence.push(next);
        if next == eos {
            break;
        }
    }
    Ok(generated)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
