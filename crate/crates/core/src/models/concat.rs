use crate::error::{Error, Result};
use crate::ndiff::Tensor;

/// Collapses a `d·H×H'` weight over concatenated per-block embeddings to the
/// `H×H'` weight acting on their sum: the sum of its `d` row blocks.
pub fn concat_equivalence_witness(concat_weight: &Tensor, width: usize) -> Result<Tensor> {
    if width == 0 || !concat_weight.rows().is_multiple_of(width) {
        return Err(Error::shape(
            "concat_equivalence_witness",
            format!("{} rows are not a multiple of {width}", concat_weight.rows()),
        ));
    }
    let cols = concat_weight.cols();
    let mut out = Tensor::zeros(width, cols);
    for r in 0..concat_weight.rows() {
        for (o, v) in out.row_mut(r % width).iter_mut().zip(concat_weight.row(r)) {
            *o += v;
        }
    }
    Ok(out)
}
