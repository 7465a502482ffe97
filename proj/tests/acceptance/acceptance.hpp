#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace msar::acceptance {

namespace fs = std::filesystem;

struct Context {
  fs::path work;     // scratch directory shared by all criteria
  fs::path configs;  // shipped experiment configs
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome attention_band(const Context& ctx);      // 1
Outcome ctc_enumeration(const Context& ctx);     // 2
Outcome pit_brute_force(const Context& ctx);     // 3
Outcome mvdr_distortionless(const Context& ctx); // 4
Outcome psd_contract(const Context& ctx);        // 5
Outcome oracle_separation(const Context& ctx);   // 6
Outcome wpe_properties(const Context& ctx);      // 7
Outcome gradient_suite(const Context& ctx);      // 8
Outcome toy_training(const Context& ctx);        // 9
Outcome reverb_ordering(const Context& ctx);     // 10
Outcome determinism(const Context& ctx);         // 11

// Metric files written by the seeded runs, relative to their run directory.
// Criterion 11 reruns each of them into run_b and compares bytes with run_a.
struct Reproducible {
  std::string name;
  fs::path subdir;
  std::vector<fs::path> files;
  void (*run)(const Context& ctx, const fs::path& dir);
};

std::vector<Reproducible> reproducible_runs();

void run_separation(const Context& ctx, const fs::path& dir);
void run_wpe(const Context& ctx, const fs::path& dir);
void run_toy_single(const Context& ctx, const fs::path& dir);
void run_toy_multi(const Context& ctx, const fs::path& dir);
void run_reverb(const Context& ctx, const fs::path& dir);

std::string format(const char* fmt, ...);

}  // namespace msar::acceptance
