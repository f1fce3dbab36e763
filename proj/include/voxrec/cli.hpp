#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "voxrec/scene.hpp"
#include "voxrec/training.hpp"

namespace voxrec {

// Command line or config problem; maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shared run description. Config files carry these keys as flat JSON and
// command line flags override them one by one; any unknown key is rejected
// before work starts.
struct RunConfig {
  std::string subcommand;
  std::string scene;
  std::string out = ".";
  uint64_t seed = 0;
  bool deterministic = false;
  bool interpolated = true;
  int threads = 0;
  Schedules sched = make_schedules();
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Accepts a preset name (sphere, box, torus, plane) or a scene spec path.
AnalyticScene resolve_scene(const std::string& spec);

// Full driver: parses argv, dispatches, reports errors on stderr.
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace voxrec
