#pragma once

#include "config.hpp"
#include "pipeline.hpp"

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cvis::forge {

// A command runs from a fully resolved argument object (absolute paths, every
// default filled in), which is also what its manifest records. Replaying a
// manifest therefore takes exactly the path the original flags took.
using CommandFn = void (*)(const json& args, std::ostream& out);

struct CommandSpec {
    CommandFn fn;
    std::vector<std::string> outputs;  // argument keys naming output files
};

const std::map<std::string, CommandSpec>& commands();

json run_manifest(const std::string& command, const json& args);

// Re-runs the command recorded in a run manifest (or the run record inside a
// dataset manifest). With `out_dir`, outputs are redirected there.
void replay(const fs::path& manifest, const fs::path& out_dir, std::ostream& out);

struct BenchResult {
    StageTimes times;
    double setup = 0;      // templates, texel maps, net
    double synthesis = 0;  // setup through export
};

// One scene from `config` (scene count forced to 1), exported to `scratch` and
// estimated back, all on one thread.
BenchResult run_bench(const PipelineConfig& config, const fs::path& scratch);
std::string format_bench(const BenchResult& r);
json bench_to_json(const BenchResult& r);

}  // namespace cvis::forge
