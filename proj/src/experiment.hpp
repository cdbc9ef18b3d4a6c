#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ustab::exp {

enum class Mode { sweep, simulate, coherence, cnn_train, cnn_heatmap, coherence_curve, verify };

const std::vector<Mode>& all_modes();
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s); // ConfigError on unknown

struct ParamDef {
    std::string key;
    std::string def;
    std::string help;
};

// mode, seed, output, workers, emit-plot-data
const std::vector<ParamDef>& common_params();
const std::vector<ParamDef>& mode_params(Mode m);

// Keys are stored with '_' folded to '-'. Later set() wins.
class Config {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    // flat "key = value" lines, '#' comments, blank lines
    void parse(const std::string& text);
    void load(const std::string& path);
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct Resolved {
    Mode mode = Mode::simulate;
    std::vector<std::pair<std::string, std::string>> entries; // schema order, defaults filled

    const std::string& get(const std::string& key) const;
    double num(const std::string& key) const;
    long integer(const std::string& key) const;
    uint64_t u64(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> num_list(const std::string& key) const;
    std::vector<int> int_list(const std::string& key) const;
};

// ConfigError for unknown keys (all listed), unknown mode, or malformed values.
Resolved resolve(const Config& cfg);

// "# key = value" lines for every resolved key except output, workers and emit-plot-data
std::string echo(const Resolved& r);

struct RunResult {
    std::string text;                                      // echo header + CSV (or verify report)
    std::vector<std::pair<std::string, std::string>> plots; // (path suffix, content)
    bool verify_passed = true;
};

RunResult run(const Resolved& r);

// run() then write output (temp file + rename) and plot files next to it;
// writes to stdout when output is empty.
RunResult run_and_write(const Resolved& r);

std::string help_text();

} // namespace ustab::exp
