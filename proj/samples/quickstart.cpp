// Simulates one scene, solves it with every factor family and prints the
// camera error before and after.

#include <iostream>

#include "dynba/metrics.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"

int main() {
  using namespace dynba;
  SimConfig config = preset("group1");
  config.seed = 7;
  const auto [truth, data] = generate(config);

  const FactorGraph graph = build_graph(data, contents_of(AblationMode::kFull));
  const Values init = restrict_to(perturb_initialization(truth, data, config), graph);
  const SolveResult result = solve(graph, init, SolverConfig{});

  const PoseTrajectory gt = camera_trajectory(truth);
  std::cout << graph.factors().size() << " factors, " << result.report.iterations.size()
            << " iterations\n"
            << "ATE before " << 100 * ate(camera_trajectory(init), gt) << " cm, after "
            << 100 * ate(camera_trajectory(result.values), gt) << " cm\n";
}
