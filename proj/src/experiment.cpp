#include "experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cnnmem.hpp"
#include "dynsim.hpp"
#include "ensemble_io.hpp"
#include "error.hpp"
#include "seed.hpp"
#include "synthetic.hpp"
#include "verify.hpp"

namespace ustab::exp {

namespace {

struct ModeInfo {
    Mode mode;
    const char* name;
};

const ModeInfo kModes[] = {
    {Mode::sweep, "sweep"},
    {Mode::simulate, "simulate"},
    {Mode::coherence, "coherence"},
    {Mode::cnn_train, "cnn-train"},
    {Mode::cnn_heatmap, "cnn-heatmap"},
    {Mode::coherence_curve, "coherence-curve"},
    {Mode::verify, "verify"},
};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    auto a = s.find_first_not_of(ws);
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

std::string fold_key(std::string k) {
    k = trim(k);
    std::replace(k.begin(), k.end(), '_', '-');
    return k;
}

const std::vector<ParamDef> kTrain = {
    {"m", "10", "filters per output sign"},
    {"lr", "0.1", "training learning rate"},
    {"epochs", "100", "full-batch gradient steps"},
    {"init-scale", "0.01", "std of the normal weight init"},
};

std::vector<ParamDef> with_train(std::vector<ParamDef> v) {
    v.insert(v.end(), kTrain.begin(), kTrain.end());
    return v;
}

const std::map<Mode, std::vector<ParamDef>>& schema() {
    static const std::map<Mode, std::vector<ParamDef>> s = {
        {Mode::sweep,
         {
             {"eta", "0.5", "learning rate"},
             {"alpha", "0.1", "forget weight"},
             {"n-r", "50", "retain set size"},
             {"n-f", "50", "forget set size"},
             {"q-list", "1,2,5,10,25,50", "aligned-sample counts Q"},
             {"b-list", "2,5,10,20,40", "batch sizes B"},
             {"steps", "1000", "updates per trajectory"},
             {"repeats", "10", "trajectories per cell"},
             {"divergence-ratio", "1000", "||w_T||/||w_0|| marking divergence"},
             {"dim", "0", "ambient dimension (0: max(n_r,n_f)-Q+2)"},
         }},
        {Mode::simulate,
         {
             {"ensemble", "", "Hessian ensemble file (empty: built-in demo)"},
             {"eta", "0.5", "learning rate"},
             {"alpha", "0.1", "forget weight"},
             {"batch", "10", "expected batch size B"},
             {"steps", "1000", "updates per trajectory"},
             {"repeats", "10", "trajectories"},
             {"divergence-ratio", "1000", "||w_T||/||w_0|| marking divergence"},
         }},
        {Mode::coherence,
         {
             {"ensemble", "", "Hessian ensemble file (empty: built-in demo)"},
             {"eta", "0.5", "learning rate"},
             {"alpha", "0.1", "forget weight"},
             {"batch", "10", "expected batch size B"},
             {"path", "automatic", "automatic|literal|trace|factor"},
             {"form", "statement", "convergence threshold used to classify: statement|proof"},
             {"max-pairs", "10000", "refuse ensembles with more (retain, forget) pairs"},
         }},
        {Mode::cnn_train, with_train({
                              {"n", "50", "training samples"},
                              {"d", "500", "patch dimension"},
                              {"signal-norm", "3", "||mu||"},
                              {"noise-sigma", "1", "noise std"},
                              {"n-test", "1000", "fresh samples for the test error"},
                          })},
        {Mode::cnn_heatmap, with_train({
                                {"signal-grid", "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5", "||mu|| values"},
                                {"d-grid", "100,300,500,700,900,1100", "patch dimensions"},
                                {"repeats", "20", "runs per cell"},
                                {"n", "50", "training samples"},
                                {"noise-sigma", "1", "noise std"},
                                {"n-test", "1000", "fresh samples for the test error"},
                                {"n-forget", "25", "forget set size (first samples)"},
                                {"unlearn-batch", "5", "expected unlearning batch"},
                                {"unlearn-lr", "0.1", "unlearning learning rate"},
                                {"unlearn-alpha", "0.3", "unlearning forget weight"},
                                {"unlearn-steps", "90", "unlearning steps"},
                                {"fixed-batches", "false", "fixed-size batches instead of Bernoulli masks"},
                            })},
        {Mode::coherence_curve, with_train({
                                    {"signal-grid", "0.5,1,2,3,5", "||mu|| values"},
                                    {"d", "100", "patch dimension"},
                                    {"n-r", "10", "retain set size"},
                                    {"n-f", "10", "forget set size"},
                                    {"repeats", "20", "runs per point"},
                                    {"noise-sigma", "1", "noise std"},
                                    {"alpha", "0.3", "forget weight"},
                                    {"batch", "5", "expected batch size B"},
                                })},
        {Mode::verify,
         {
             {"full", "false", "full acceptance settings (adds the 10^4-trajectory run)"},
             {"only", "", "comma-separated criterion ids (empty: all)"},
         }},
    };
    return s;
}

const std::set<std::string> kNotEchoed = {"output", "workers", "emit-plot-data"};

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

HessianEnsemble demo_ensemble() { return build_q_construction({20, 20, 5, 0}); }

HessianEnsemble ensemble_for(const Resolved& r) {
    const auto& path = r.get("ensemble");
    return path.empty() ? demo_ensemble() : load_ensemble(path);
}

UnlearnConfig unlearn_config(const Resolved& r, const HessianEnsemble& ens) {
    return {r.num("eta"), r.num("alpha"), static_cast<int>(r.integer("batch")), ens.n_retain(), ens.n_forget()};
}

cnn::TrainParams train_params(const Resolved& r) {
    return {static_cast<int>(r.integer("m")), r.num("lr"), static_cast<int>(r.integer("epochs")),
            r.num("init-scale")};
}

int workers_of(const Resolved& r) { return static_cast<int>(r.integer("workers")); }

std::string run_simulate(const Resolved& r) {
    auto ens = ensemble_for(r);
    UnlearnConfig cfg = unlearn_config(r, ens);
    TrajectoryOptions opts{static_cast<int>(r.integer("steps")), r.num("divergence-ratio"), true};
    const long repeats = r.integer("repeats");
    std::string out = "repeat,seed,norm_0,norm_final,ratio,outcome\n";
    for (long t = 0; t < repeats; ++t) {
        uint64_t seed = derive_seed(r.u64("seed"), static_cast<uint64_t>(t));
        auto tr = run_trajectory(ens, cfg, opts, seed);
        double ratio = tr.norms.back() / tr.norms.front();
        out += std::to_string(t) + "," + std::to_string(seed) + "," + csv_number(tr.norms.front()) + "," +
               csv_number(tr.norms.back()) + "," + csv_number(ratio) + "," +
               outcome_name(tr.diverged ? Outcome::Diverge : Outcome::Converge) + "\n";
    }
    return out;
}

CoherencePath parse_path(const std::string& s) {
    if (s == "automatic") return CoherencePath::automatic;
    if (s == "literal") return CoherencePath::literal;
    if (s == "trace") return CoherencePath::trace;
    if (s == "factor") return CoherencePath::factor;
    config_error("path must be automatic|literal|trace|factor, got '" + s + "'");
}

ConvergenceForm parse_form(const std::string& s) {
    if (s == "statement") return ConvergenceForm::statement;
    if (s == "proof") return ConvergenceForm::proof;
    config_error("form must be statement|proof, got '" + s + "'");
}

std::string run_coherence(const Resolved& r) {
    auto ens = ensemble_for(r);
    UnlearnConfig cfg = unlearn_config(r, ens);
    CoherenceOptions opts{parse_path(r.get("path")), r.integer("max-pairs"), workers_of(r)};
    auto form = parse_form(r.get("form"));
    auto coh = mix_coherence(ens, cfg, opts);
    const double nan = std::nan("");
    double td = nan, ts = nan, tp = nan;
    std::string cls;
    try {
        td = divergence_threshold(cfg, coh.sigma);
        ts = convergence_threshold(cfg, coh.sigma, ConvergenceForm::statement);
        tp = convergence_threshold(cfg, coh.sigma, ConvergenceForm::proof);
        cls = classification_name(classify(coh.lambda_max_D, td, form == ConvergenceForm::statement ? ts : tp));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedThreshold) throw;
    }
    return "lambda_max_D,lambda_max_S,max_pair_lambda,sigma,thr_div,thr_conv_statement,thr_conv_proof,"
           "classification\n" +
           csv_number(coh.lambda_max_D) + "," + csv_number(coh.lambda_max_S) + "," + csv_number(coh.max_pair_lambda) +
           "," + csv_number(coh.sigma) + "," + csv_number(td) + "," + csv_number(ts) + "," + csv_number(tp) + "," +
           cls + "\n";
}

std::string run_cnn_train(const Resolved& r) {
    cnn::Rng rng(r.u64("seed"));
    cnn::DataParams dp{static_cast<int>(r.integer("n")), static_cast<int>(r.integer("d")), r.num("signal-norm"),
                       r.num("noise-sigma")};
    auto ds = cnn::generate_dataset(dp, rng);
    auto tr = cnn::train_full_batch(ds, train_params(r), rng);
    double err = cnn::test_error(tr.model, ds, static_cast<int>(r.integer("n-test")), rng);
    return "signal_norm,d,snr,train_loss,test_error\n" + csv_number(dp.mu_norm) + "," + std::to_string(dp.d) + "," +
           csv_number(ds.snr) + "," + csv_number(tr.train_loss) + "," + csv_number(err) + "\n";
}

// gnuplot: blank line between blocks of the slow index
void sweep_plots(const SweepParams& p, const std::vector<SweepCell>& cells,
                        std::vector<std::pair<std::string, std::string>>& plots) {
    std::string grid = "# q batch sigma n_diverged diverged\n";
    double lam = std::nan("");
    int last_q = -1;
    for (const auto& c : cells) {
        if (last_q != -1 && c.q != last_q) grid += "\n";
        last_q = c.q;
        grid += std::to_string(c.q) + " " + std::to_string(c.batch) + " " + csv_number(c.sigma) + " " +
                std::to_string(c.n_diverged) + " " + (c.outcome == Outcome::Diverge ? "1" : "0") + "\n";
        if (std::isnan(lam) && !std::isnan(c.lambda_max_D)) lam = c.lambda_max_D;
    }
    std::string curves = "# batch sigma_div sigma_conv_statement sigma_conv_proof\n";
    const int b_max = std::min(p.n_retain, p.n_forget) - 1;
    for (int b = 1; b <= b_max && !std::isnan(lam); ++b) {
        UnlearnConfig cfg{p.eta, p.alpha, b, p.n_retain, p.n_forget};
        curves += std::to_string(b) + " " + csv_number(sigma_at_divergence(cfg, lam)) + " " +
                  csv_number(sigma_at_convergence(cfg, lam, ConvergenceForm::statement)) + " " +
                  csv_number(sigma_at_convergence(cfg, lam, ConvergenceForm::proof)) + "\n";
    }
    plots.push_back({".grid.dat", grid});
    plots.push_back({".thresholds.dat", curves});
}

} // namespace

const std::vector<Mode>& all_modes() {
    static const std::vector<Mode> v = [] {
        std::vector<Mode> out;
        for (const auto& m : kModes) out.push_back(m.mode);
        return out;
    }();
    return v;
}

const char* mode_name(Mode m) {
    for (const auto& i : kModes)
        if (i.mode == m) return i.name;
    return "?";
}

Mode parse_mode(const std::string& s) {
    for (const auto& i : kModes)
        if (s == i.name) return i.mode;
    std::string names;
    for (const auto& i : kModes) names += std::string(names.empty() ? "" : "|") + i.name;
    config_error("unknown mode '" + s + "' (expected " + names + ")");
}

const std::vector<ParamDef>& common_params() {
    static const std::vector<ParamDef> v = {
        {"mode", "simulate", "experiment to run"},
        {"seed", "42", "master seed (env UNLEARN_STAB_SEED when unset)"},
        {"output", "", "output CSV path (empty: stdout)"},
        {"workers", "1", "worker threads; output does not depend on it"},
        {"emit-plot-data", "false", "also write gnuplot columns next to the output"},
    };
    return v;
}

const std::vector<ParamDef>& mode_params(Mode m) { return schema().at(m); }

void Config::set(const std::string& key, const std::string& value) { values_[fold_key(key)] = trim(value); }

bool Config::has(const std::string& key) const { return values_.count(fold_key(key)) > 0; }

void Config::parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos || trim(t.substr(0, eq)).empty()) {
            config_error("line " + std::to_string(lineno) + ": expected key = value");
        }
        set(t.substr(0, eq), t.substr(eq + 1));
    }
}

void Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::ConfigError, "cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    parse(ss.str());
}

const std::string& Resolved::get(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return v;
    throw Error(ErrorCode::ConfigError, "no key '" + key + "' for mode " + mode_name(mode));
}

double Resolved::num(const std::string& key) const {
    double v;
    if (!parse_number(get(key), v) || !std::isfinite(v)) config_error(key + ": not a number: '" + get(key) + "'");
    return v;
}

long Resolved::integer(const std::string& key) const {
    long v;
    if (!parse_number(get(key), v)) config_error(key + ": not an integer: '" + get(key) + "'");
    return v;
}

uint64_t Resolved::u64(const std::string& key) const {
    uint64_t v;
    if (!parse_number(get(key), v)) config_error(key + ": not an unsigned 64-bit integer: '" + get(key) + "'");
    return v;
}

bool Resolved::flag(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off" || v.empty()) return false;
    config_error(key + ": not a boolean: '" + v + "'");
}

std::vector<double> Resolved::num_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(get(key))) {
        double v;
        if (!parse_number(s, v) || !std::isfinite(v)) config_error(key + ": bad list entry '" + s + "'");
        out.push_back(v);
    }
    if (out.empty()) config_error(key + ": empty list");
    return out;
}

std::vector<int> Resolved::int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : split_list(get(key))) {
        int v;
        if (!parse_number(s, v)) config_error(key + ": bad list entry '" + s + "'");
        out.push_back(v);
    }
    if (out.empty() && key != "only") config_error(key + ": empty list");
    return out;
}

Resolved resolve(const Config& cfg) {
    Resolved r;
    auto it = cfg.values().find("mode");
    r.mode = it == cfg.values().end() ? Mode::simulate : parse_mode(it->second);

    std::vector<ParamDef> defs = common_params();
    for (const auto& d : mode_params(r.mode)) defs.push_back(d);
    std::set<std::string> known;
    for (const auto& d : defs) known.insert(d.key);
    std::string unknown;
    for (const auto& [k, v] : cfg.values())
        if (!known.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) config_error(std::string("unknown key(s) for mode ") + mode_name(r.mode) + ": " + unknown);

    for (const auto& d : defs) {
        auto v = cfg.values().find(d.key);
        r.entries.push_back({d.key, v == cfg.values().end() ? d.def : v->second});
    }
    r.entries[0].second = mode_name(r.mode);

    // type-check everything up front so a bad value never reaches a half-written run
    r.u64("seed");
    if (r.integer("workers") < 1) config_error("workers must be >= 1");
    r.flag("emit-plot-data");
    if (r.flag("emit-plot-data") && r.get("output").empty()) config_error("emit-plot-data needs an output path");
    static const std::set<std::string> lists_num = {"signal-grid"};
    static const std::set<std::string> lists_int = {"q-list", "b-list", "d-grid", "only"};
    static const std::set<std::string> text = {"ensemble", "path", "form"};
    static const std::set<std::string> flags = {"fixed-batches", "full"};
    for (const auto& d : mode_params(r.mode)) {
        if (lists_num.count(d.key)) r.num_list(d.key);
        else if (lists_int.count(d.key)) r.int_list(d.key);
        else if (flags.count(d.key)) r.flag(d.key);
        else if (d.key == "path") parse_path(r.get(d.key));
        else if (d.key == "form") parse_form(r.get(d.key));
        else if (!text.count(d.key)) r.num(d.key);
    }
    return r;
}

std::string echo(const Resolved& r) {
    std::string out;
    for (const auto& [k, v] : r.entries)
        if (!kNotEchoed.count(k)) out += "# " + k + " = " + v + "\n";
    return out;
}

RunResult run(const Resolved& r) {
    RunResult res;
    std::string body;
    const bool plots = r.flag("emit-plot-data");
    switch (r.mode) {
    case Mode::sweep: {
        SweepParams p;
        p.eta = r.num("eta");
        p.alpha = r.num("alpha");
        p.n_retain = static_cast<int>(r.integer("n-r"));
        p.n_forget = static_cast<int>(r.integer("n-f"));
        p.q_list = r.int_list("q-list");
        p.b_list = r.int_list("b-list");
        p.steps = static_cast<int>(r.integer("steps"));
        p.repeats = static_cast<int>(r.integer("repeats"));
        p.divergence_ratio = r.num("divergence-ratio");
        p.dim = static_cast<int>(r.integer("dim"));
        p.seed = r.u64("seed");
        p.workers = workers_of(r);
        auto cells = boundary_sweep(p);
        body = sweep_csv(cells);
        if (plots) sweep_plots(p, cells, res.plots);
        break;
    }
    case Mode::simulate: body = run_simulate(r); break;
    case Mode::coherence: body = run_coherence(r); break;
    case Mode::cnn_train: body = run_cnn_train(r); break;
    case Mode::cnn_heatmap: {
        cnn::HeatmapParams p;
        p.signal_grid = r.num_list("signal-grid");
        p.d_grid = r.int_list("d-grid");
        p.repeats = static_cast<int>(r.integer("repeats"));
        p.seed = r.u64("seed");
        p.n = static_cast<int>(r.integer("n"));
        p.noise_sigma = r.num("noise-sigma");
        p.n_test = static_cast<int>(r.integer("n-test"));
        p.train = train_params(r);
        p.unlearn.n_forget = static_cast<int>(r.integer("n-forget"));
        p.unlearn.batch = static_cast<int>(r.integer("unlearn-batch"));
        p.unlearn.lr = r.num("unlearn-lr");
        p.unlearn.alpha = r.num("unlearn-alpha");
        p.unlearn.steps = static_cast<int>(r.integer("unlearn-steps"));
        p.unlearn.fixed_size_batches = r.flag("fixed-batches");
        p.workers = workers_of(r);
        auto cells = cnn::snr_heatmap(p);
        body = cnn::heatmap_csv(cells);
        if (plots) {
            std::string dat = "# signal_norm d snr train_loss test_error forget_loss\n";
            for (size_t i = 0; i < cells.size(); ++i) {
                const auto& c = cells[i];
                if (i > 0 && c.signal_norm != cells[i - 1].signal_norm) dat += "\n";
                dat += csv_number(c.signal_norm) + " " + std::to_string(c.d) + " " + csv_number(c.snr) + " " +
                       csv_number(c.train_loss) + " " + csv_number(c.test_error) + " " + csv_number(c.forget_loss) +
                       "\n";
            }
            res.plots.push_back({".dat", dat});
        }
        break;
    }
    case Mode::coherence_curve: {
        cnn::CurveParams p;
        p.signal_grid = r.num_list("signal-grid");
        p.d = static_cast<int>(r.integer("d"));
        p.n_retain = static_cast<int>(r.integer("n-r"));
        p.n_forget = static_cast<int>(r.integer("n-f"));
        p.repeats = static_cast<int>(r.integer("repeats"));
        p.seed = r.u64("seed");
        p.noise_sigma = r.num("noise-sigma");
        p.alpha = r.num("alpha");
        p.batch = static_cast<int>(r.integer("batch"));
        p.train = train_params(r);
        p.workers = workers_of(r);
        auto pts = cnn::coherence_ratio_curve(p);
        body = cnn::curve_csv(pts);
        if (plots) {
            std::string dat = "# signal_norm snr lambda_max_S max_pair_lambda ratio\n";
            for (const auto& pt : pts) {
                if (pt.n_used == 0) continue;
                dat += csv_number(pt.signal_norm) + " " + csv_number(pt.snr) + " " + csv_number(pt.lambda_max_S) +
                       " " + csv_number(pt.max_pair_lambda) + " " + csv_number(pt.ratio) + "\n";
            }
            res.plots.push_back({".dat", dat});
        }
        break;
    }
    case Mode::verify: {
        verify::Options o;
        o.full = r.flag("full");
        o.seed = r.u64("seed");
        o.workers = workers_of(r);
        o.only = r.int_list("only");
        std::ostringstream ss;
        res.verify_passed = verify::run_all(o, ss);
        body = ss.str();
        break;
    }
    }
    res.text = echo(r) + body;
    return res;
}

namespace {

void write_atomic_all(const std::vector<std::pair<std::string, std::string>>& files) {
    namespace fs = std::filesystem;
    std::vector<std::string> temps;
    for (const auto& [path, content] : files) {
        std::string tmp = path + ".tmp";
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (f) f << content;
        if (!f) {
            for (const auto& t : temps) std::remove(t.c_str());
            std::remove(tmp.c_str());
            throw Error(ErrorCode::IoError, "cannot write " + path);
        }
        temps.push_back(tmp);
    }
    for (size_t i = 0; i < files.size(); ++i) {
        std::error_code ec;
        fs::rename(temps[i], files[i].first, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot rename into " + files[i].first + ": " + ec.message());
    }
}

} // namespace

RunResult run_and_write(const Resolved& r) {
    RunResult res = run(r);
    const auto& out = r.get("output");
    if (out.empty()) {
        std::cout << res.text;
        std::cout.flush();
        return res;
    }
    std::vector<std::pair<std::string, std::string>> files{{out, res.text}};
    for (const auto& [suffix, content] : res.plots) files.push_back({out + suffix, content});
    write_atomic_all(files);
    return res;
}

std::string help_text() {
    auto line = [](const ParamDef& d) {
        std::string def = d.def.empty() ? "\"\"" : d.def;
        char buf[256];
        std::snprintf(buf, sizeof buf, "  --%-18s %s [default: %s]\n", d.key.c_str(), d.help.c_str(), def.c_str());
        return std::string(buf);
    };
    std::string out = "common keys:\n";
    for (const auto& d : common_params()) out += line(d);
    for (Mode m : all_modes()) {
        out += std::string("\n") + mode_name(m) + ":\n";
        for (const auto& d : mode_params(m)) out += line(d);
    }
    return out;
}

} // namespace ustab::exp
