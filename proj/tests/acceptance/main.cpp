#include <chrono>
#include <cstdio>
#include <exception>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "criteria.hpp"

namespace {

struct Criterion {
  int id;
  const char* name;
  acceptance::Verdict (*check)();
};

const std::vector<Criterion> kCriteria{
    {1, "tiling identity", acceptance::tiling_identity},
    {2, "fusion degeneracy", acceptance::fusion_degeneracy},
    {3, "detector oracles", acceptance::detector_oracles},
    {4, "metric oracles", acceptance::metric_oracles},
    {5, "downsampled metric stability", acceptance::metric_stability},
    {6, "subtle defects at full resolution", acceptance::subtle_defects_full_resolution},
    {7, "assignment semantics", acceptance::assignment_semantics},
    {8, "dual-branch contract", acceptance::dual_branch},
    {9, "determinism and parallelism", acceptance::determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks: one PASS/FAIL line per criterion"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());

  int failed = 0;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    acceptance::Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %d %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed ? 1 : 0;
}
