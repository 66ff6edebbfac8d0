#pragma once

// The `uad` command line: gen-data, train, eval and segment.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uad/data.hpp"
#include "uad/error.hpp"
#include "uad/models.hpp"

namespace uad::cli {

enum ExitCode : int { ok = 0, runtime_failure = 1, usage_error = 2 };

/// Bad flags, missing inputs, or invalid values; maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    std::string command;
    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    Architecture arch = Architecture::dc_tae;
    Preset preset = Preset::desk;
    std::uint64_t seed = 0;
    /// Training values; defaults follow the preset.
    std::int64_t epochs = 0;
    std::int64_t batch_size = 0;
    double lr = 0;
    double percentile = 1.0;
    std::int64_t sweep = 100;
    SplitCounts counts;
    bool force = false;
    /// Keys set by a config file or a flag rather than by defaults.
    std::set<std::string> explicit_keys;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
KeyValues parse_key_values(const std::string& text);

/// Applies defaults, then `file`, then `flags`. Unknown keys and invalid
/// values raise UsageError.
RunConfig resolve(const std::string& command, const KeyValues& file, const KeyValues& flags);

/// The resolved config as key=value lines. The output directory is omitted
/// since the file is written inside it.
std::string serialize(const RunConfig& cfg);

/// Runs one command. Progress goes to `err`, reports to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace uad::cli
