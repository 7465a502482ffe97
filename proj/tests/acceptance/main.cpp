#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <map>

#include "CLI11.hpp"
#include "acceptance.hpp"

namespace msar::acceptance {

std::string format(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

}  // namespace msar::acceptance

namespace {

using namespace msar::acceptance;

struct Criterion {
  const char* title;
  double budget_s;  // 0: no wall-clock limit of its own
  Outcome (*check)(const Context&);
};

const std::map<int, Criterion>& criteria() {
  static const std::map<int, Criterion> table{
      {1, {"attention band equivalence", 10, attention_band}},
      {2, {"CTC enumeration equivalence", 30, ctc_enumeration}},
      {3, {"PIT brute-force equivalence", 5, pit_brute_force}},
      {4, {"MVDR distortionless response", 5, mvdr_distortionless}},
      {5, {"PSD contract", 5, psd_contract}},
      {6, {"oracle-mask separation", 60, oracle_separation}},
      {7, {"WPE properties", 60, wpe_properties}},
      {8, {"gradient suite", 300, gradient_suite}},
      {9, {"toy end-to-end training", 0, toy_training}},
      {10, {"reverberant WPE ordering", 0, reverb_ordering}},
      {11, {"determinism", 0, determinism}},
  };
  return table;
}

bool run_one(int id, const Context& ctx) {
  const Criterion& c = criteria().at(id);
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = c.check(ctx);
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (c.budget_s > 0 && secs >= c.budget_s) {
    out.pass = false;
    out.detail += format("; over the %.0f s budget", c.budget_s);
  }
  std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, out.pass ? "PASS" : "FAIL", c.title, out.detail.c_str(),
              secs);
  std::fflush(stdout);
  return out.pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msar acceptance checks"};
  std::vector<int> ids;
  Context ctx;
  ctx.work = "acceptance_runs";
  ctx.configs = MSAR_CONFIG_DIR;
  app.add_option("criteria", ids, "criterion numbers (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--work", ctx.work, "scratch directory for seeded runs");
  app.add_option("--configs", ctx.configs, "directory holding the toy configs");
  CLI11_PARSE(app, argc, argv);
  if (ids.empty())
    for (const auto& [id, c] : criteria()) ids.push_back(id);
  std::filesystem::create_directories(ctx.work);
  bool ok = true;
  for (int id : ids) ok = run_one(id, ctx) && ok;
  return ok ? 0 : 1;
}
