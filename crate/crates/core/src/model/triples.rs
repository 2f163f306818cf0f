use crate::rpm::Puzzle;
use crate::tensor::Tensor;

use super::ModelError;

/// Triples per stream: two context rows (or columns) plus one per candidate.
pub const TRIPLES: usize = 10;

/// Panel indices (0..16, choices start at 8) of the row triples and the
/// column triples of a puzzle. Rows are (x1,x2,x3), (x4,x5,x6) and
/// (x7,x8,candidate); columns are (x1,x4,x7), (x2,x5,x8) and (x3,x6,candidate).
pub fn triple_indices() -> [[[usize; 3]; TRIPLES]; 2] {
    let rows = std::array::from_fn(|j| match j {
        0 => [0, 1, 2],
        1 => [3, 4, 5],
        _ => [6, 7, 8 + j - 2],
    });
    let cols = std::array::from_fn(|j| match j {
        0 => [0, 3, 6],
        1 => [1, 4, 7],
        _ => [2, 5, 8 + j - 2],
    });
    [rows, cols]
}

/// `[20, 3, S, S]` input for one puzzle: ten row triples then ten column
/// triples, each triple's panels stacked as channels and scaled to [0, 1].
pub fn form_triples(puzzle: &Puzzle) -> Result<Tensor, ModelError> {
    let s = puzzle.image_size;
    puzzle.validate_shape().map_err(|e| ModelError::Input(e.to_string()))?;
    let panels: Vec<Vec<f64>> = (0..16)
        .map(|i| puzzle.panel(i).iter().map(|&v| v as f64 / 255.0).collect())
        .collect();
    let mut data = Vec::with_capacity(2 * TRIPLES * 3 * s * s);
    for stream in triple_indices() {
        for triple in stream {
            for p in triple {
                data.extend_from_slice(&panels[p]);
            }
        }
    }
    Ok(Tensor::new(vec![2 * TRIPLES, 3, s, s], data)?)
}

/// Stacks [`form_triples`] of every puzzle along the batch axis.
pub fn batch_triples(puzzles: &[&Puzzle]) -> Result<Tensor, ModelError> {
    let first = puzzles.first().ok_or_else(|| ModelError::Input("empty batch".into()))?;
    let s = first.image_size;
    let mut data = Vec::with_capacity(puzzles.len() * 2 * TRIPLES * 3 * s * s);
    for p in puzzles {
        if p.image_size != s {
            return Err(ModelError::Input("mixed image sizes in batch".into()));
        }
        data.extend(form_triples(p)?.into_data());
    }
    Ok(Tensor::new(vec![puzzles.len() * 2 * TRIPLES, 3, s, s], data)?)
}

/// The same puzzle with its 3x3 grid transposed; candidates are unchanged.
pub fn transpose_context(puzzle: &Puzzle) -> Puzzle {
    // grid position (r, c) -> (c, r); index 8 (the blank) stays in place.
    let order = [0, 3, 6, 1, 4, 7, 2, 5];
    let mut out = puzzle.clone();
    out.context = order.iter().map(|&i| puzzle.context[i].clone()).collect();
    out.provenance = None;
    out
}

/// The puzzle with its choices reordered: new choice `k` is old choice `perm[k]`.
pub fn permute_choices(puzzle: &Puzzle, perm: &[usize; 8]) -> Puzzle {
    let mut out = puzzle.clone();
    out.choices = perm.iter().map(|&i| puzzle.choices[i].clone()).collect();
    out.answer = perm.iter().position(|&i| i == puzzle.answer as usize).expect("permutation") as u8;
    out.provenance = None;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_rows_use_x7_x8() {
        let [rows, cols] = triple_indices();
        assert_eq!(rows[0], [0, 1, 2]);
        // j = 3 (1-based) holds the first choice, panel x9.
        assert_eq!(rows[2], [6, 7, 8]);
        assert_eq!(rows[9], [6, 7, 15]);
        assert_eq!(cols[2], [2, 5, 8]);
    }

    #[test]
    fn transposition_swaps_rows_and_columns() {
        let [rows, cols] = triple_indices();
        let order = [0, 3, 6, 1, 4, 7, 2, 5];
        let map = |p: usize| if p < 8 { order[p] } else { p };
        for j in 0..TRIPLES {
            assert_eq!(rows[j].map(map), cols[j]);
        }
    }
}
