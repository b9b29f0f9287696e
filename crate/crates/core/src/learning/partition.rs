use serde::Serialize;

use super::{Dataset, LearningError};

/// A cycle-m assignment of samples to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub m: usize,
    pub n_classes: usize,
    /// Sorted sample indices per client.
    pub assignment: Vec<Vec<usize>>,
}

impl PartitionSpec {
    /// Classes `{(client + j) mod C : 0 <= j < m}`.
    pub fn client_classes(&self, client: usize) -> Vec<usize> {
        window(client, self.m, self.n_classes)
    }

    /// Per-client sample count for each class.
    pub fn histogram(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        self.assignment
            .iter()
            .map(|idx| {
                let mut h = vec![0; self.n_classes];
                for &i in idx {
                    h[dataset.label(i)] += 1;
                }
                h
            })
            .collect()
    }
}

fn window(client: usize, m: usize, n_classes: usize) -> Vec<usize> {
    (0..m).map(|j| (client + j) % n_classes).collect()
}

/// Non-IID split: client `i` only sees the `m` classes starting at `i mod C`.
///
/// Each class's samples, in dataset order, are cut into contiguous equal
/// chunks for the clients that claim it (ascending client index); the first
/// `count % claimants` clients get one extra sample. Classes nobody claims
/// (possible when `n_clients * m < C`) are left out.
pub fn cycle_m_partition(
    dataset: &Dataset,
    n_clients: usize,
    m: usize,
) -> Result<PartitionSpec, LearningError> {
    let n_classes = dataset.n_classes();
    if n_clients == 0 {
        return Err(LearningError::Domain("need at least one client".into()));
    }
    if m == 0 || m > n_classes {
        return Err(LearningError::Domain(format!(
            "m = {m} outside 1..={n_classes}"
        )));
    }

    let mut claimants: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for client in 0..n_clients {
        for class in window(client, m, n_classes) {
            claimants[class].push(client);
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in dataset.labels().iter().enumerate() {
        members[y].push(i);
    }

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (class, owners) in claimants.iter().enumerate() {
        if owners.is_empty() {
            continue;
        }
        let samples = &members[class];
        let base = samples.len() / owners.len();
        let extra = samples.len() % owners.len();
        let mut start = 0;
        for (rank, &client) in owners.iter().enumerate() {
            let take = base + usize::from(rank < extra);
            assignment[client].extend_from_slice(&samples[start..start + take]);
            start += take;
        }
    }
    for a in &mut assignment {
        a.sort_unstable();
    }

    Ok(PartitionSpec {
        n_clients,
        m,
        n_classes,
        assignment,
    })
}
