use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum ReadOutcome<V> {
    Confirmed(V),
    Insufficient,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadError {
    #[error("two distinct values both exceed the consensus threshold")]
    ConflictingConfirmations,
}

/// Confirms the value whose replicas' stored weights exceed `ct`.
pub fn weighted_read<V: PartialEq + Clone>(
    replies: &[(V, f64)],
    ct: f64,
) -> Result<ReadOutcome<V>, ReadError> {
    let mut tally: Vec<(&V, f64)> = Vec::new();
    for (value, weight) in replies {
        match tally.iter_mut().find(|(v, _)| *v == value) {
            Some((_, sum)) => *sum += weight,
            None => tally.push((value, *weight)),
        }
    }
    let mut over = tally.into_iter().filter(|(_, sum)| *sum > ct);
    match (over.next(), over.next()) {
        (Some(_), Some(_)) => Err(ReadError::ConflictingConfirmations),
        (Some((v, _)), None) => Ok(ReadOutcome::Confirmed(v.clone())),
        (None, _) => Ok(ReadOutcome::Insufficient),
    }
}
