// unlearn-stab: command-line front end over libunlearnstab
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unlearnstab/unlearnstab.h"

namespace {

constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Bound {
    CLI::Option* opt = nullptr;
    std::string value;
    bool flag = false;
    bool on = false;
};

std::string shown_default(const char* def) { return def[0] ? def : "\"\""; }

bool is_flag_key(const std::string& key) { return key == "emit-plot-data" || key == "fixed-batches"; }

int report(us_status s) {
    std::fprintf(stderr, "unlearn-stab: %s\n", us_last_error());
    return s == US_ERR_CONFIG ? kExitConfig : kExitRuntime;
}

// register every schema key of `mode` (nullptr: common keys) as --key on `app`
void bind_keys(CLI::App* app, const char* mode, std::map<std::string, Bound>& out, const std::string& prefix) {
    const int n = us_param_count(mode);
    for (int i = 0; i < n; ++i) {
        const char *key, *def, *help;
        us_param_info(mode, i, &key, &def, &help);
        std::string k = key;
        if (k == "mode" || k == "full") continue;
        Bound& b = out[prefix + k];
        if (is_flag_key(k)) {
            b.flag = true;
            b.opt = app->add_flag("--" + k, b.on, std::string(help) + " [default: " + def + "]");
        } else {
            std::string names = k == "output" ? "-o,--output" : "--" + k;
            b.opt = app->add_option(names, b.value, help)->default_str(shown_default(def));
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear-stability experiments for machine unlearning.\n"
                 "Keys come from --config (flat key = value) and are overridden by flags.\n"
                 "Without a mode, the config's mode (default: simulate) runs."};
    app.set_help_all_flag("--help-all", "Show help for every mode");
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::string config_path;
    app.add_option("-c,--config", config_path, "flat key = value config file");
    std::map<std::string, Bound> keys;
    bind_keys(&app, nullptr, keys, "");

    std::map<std::string, CLI::App*> subs;
    bool quick = false, full = false;
    for (int i = 0; i < us_mode_count(); ++i) {
        const char* mode = us_mode_name(i);
        CLI::App* sub = app.add_subcommand(mode, std::string("run the ") + mode + " experiment");
        sub->fallthrough();
        bind_keys(sub, mode, keys, std::string(mode) + ":");
        if (std::string(mode) == "verify") {
            auto* q = sub->add_flag("--quick", quick, "reduced repeats, skips the 10^4-trajectory run [default]");
            sub->add_flag("--full", full, "full acceptance settings")->excludes(q);
        }
        subs[mode] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    us_config* cfg = nullptr;
    if (us_config_new(&cfg) != US_OK) return report(US_ERR_INTERNAL);
    auto done = [&](int code) {
        us_config_free(cfg);
        return code;
    };

    us_status s = US_OK;
    if (!config_path.empty() && (s = us_config_load(cfg, config_path.c_str())) != US_OK) return done(report(s));

    std::string chosen;
    for (auto& [name, sub] : subs)
        if (sub->parsed()) chosen = name;
    if (!chosen.empty()) us_config_set(cfg, "mode", chosen.c_str());
    if (chosen == "verify" && (quick || full)) us_config_set(cfg, "full", full ? "true" : "false");

    for (auto& [name, b] : keys) {
        if (!b.opt || b.opt->count() == 0) continue;
        auto colon = name.find(':');
        std::string key = colon == std::string::npos ? name : name.substr(colon + 1);
        s = us_config_set(cfg, key.c_str(), b.flag ? (b.on ? "true" : "false") : b.value.c_str());
        if (s != US_OK) return done(report(s));
    }
    if (!us_config_has(cfg, "seed")) {
        if (const char* env = std::getenv("UNLEARN_STAB_SEED"); env && *env) us_config_set(cfg, "seed", env);
    }

    int passed = 1;
    s = us_run(cfg, &passed);
    if (s != US_OK) return done(report(s));
    return done(passed ? 0 : kExitVerifyFailed);
}
