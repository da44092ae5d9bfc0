// Solve the T-maze once and print where each branch of the plan ends, then
// run one closed-loop episode against each ground truth.

#include <cstdio>
#include <cstdlib>

#include "poddp/poddp.hpp"

int main(int argc, char** argv) {
  using namespace poddp;
  ParameterSet overrides;
  if (argc > 1) overrides["sigma_level"] = std::atof(argv[1]);
  const Scenario sc = make_scenario("tmaze", overrides);

  const SolveResult r = solve(sc.model, sc.x0, sc.prior, sc.solver);
  std::printf("config %s, cost %.3f after %d iterations (%s)\n", sc.hash().c_str(), r.cost,
              r.iterations, r.converged ? "converged" : "not converged");

  const StackedLayout lay = r.tree.layout();
  for (const HistoryPath& h : iterate_depth_first(r.tree)) {
    const TreeNode& n = r.tree.node(h);
    const Vector end = lay.branch_x(n.stacked.back(), 0);
    const Belief b(softmax(n.start.beta.beta));
    std::printf("node [%s] steps %d-%d  b(Left) %.3f  ends at (%.2f, %.2f)\n",
                h.to_string().c_str(), n.t_begin, n.t_end, b(0), end(0), end(1));
  }

  for (int z = 0; z < sc.model.num_latents(); ++z) {
    const EpisodeTrace e = execute_episode(PlannerKind::PODDP, sc, z, 1);
    std::printf("true %s: final (%.2f, %.2f), cost %.2f\n", sc.model.latents.label(z).c_str(),
                e.final_state(0), e.final_state(1), e.cumulative_cost);
  }
}
