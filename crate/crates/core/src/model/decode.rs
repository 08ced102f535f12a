use crate::corpus::level::CefrLevel;
use crate::model::vocab::Vocabulary;
use crate::scalar::Scalar;

/// Argmax over the eight label-token logits only. Ties go to the lower
/// level; NaN never wins.
pub fn constrained_decode<T: Scalar>(logits: &[T]) -> CefrLevel {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (k, id) in Vocabulary::label_ids().enumerate() {
        let v = logits.get(id).copied().unwrap_or_else(T::neg_infinity);
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    CefrLevel::ALL[best]
}
