//! Greedy subset selection under the submodular objective, and the top-k baseline.

use super::objective::SelectionProblem;
use super::ActiveError;

/// Picks up to `budget` candidates, each round adding the candidate with the largest
/// marginal gain `F(S ∪ l) − F(S)`. Ties go to the lexicographically first candidate.
/// Gains are maintained incrementally: coverage from per-round counts and redundancy
/// from a running per-candidate distance sum. With `early_stop`, selection ends once
/// no remaining gain is positive.
pub fn greedy_select(problem: &SelectionProblem, budget: usize, early_stop: bool) -> Result<Vec<usize>, ActiveError> {
    if budget == 0 {
        return Err(ActiveError::ZeroBudget);
    }
    if problem.is_empty() {
        return Err(ActiveError::EmptyCandidates);
    }
    let w = problem.weights();
    let n = problem.len();
    let mut taken = vec![false; n];
    let mut rel_used = vec![false; problem.distinct_relations()];
    let mut ent_used = vec![false; problem.distinct_entities()];
    let mut red_acc = vec![0.0; n];
    let mut chosen = Vec::with_capacity(budget.min(n));
    while chosen.len() < budget.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for &i in problem.lex_order() {
            if taken[i] {
                continue;
            }
            let gain = w.w_c * problem.coverage_gain(!rel_used[problem.rel_of(i)], !ent_used[problem.ent_of(i)])
                + w.w_d * problem.diversity_of(i)
                - w.w_r * red_acc[i];
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((star, gain)) = best else { break };
        if early_stop && gain <= 0.0 {
            log::info!("greedy selection stopped early after {} picks", chosen.len());
            break;
        }
        taken[star] = true;
        rel_used[problem.rel_of(star)] = true;
        ent_used[problem.ent_of(star)] = true;
        for (i, acc) in red_acc.iter_mut().enumerate() {
            if !taken[i] {
                *acc += problem.pair_distance(i, star);
            }
        }
        chosen.push(star);
    }
    Ok(chosen)
}

/// The first `budget` candidates of the (uncertainty-sorted) list.
pub fn top_k(len: usize, budget: usize) -> Vec<usize> {
    (0..budget.min(len)).collect()
}
