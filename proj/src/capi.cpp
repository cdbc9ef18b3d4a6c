#include "unlearnstab/unlearnstab.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include "dynsim.hpp"
#include "ensemble_io.hpp"
#include "experiment.hpp"
#include "synthetic.hpp"
#include "verify.hpp"

using namespace ustab;

struct us_config {
    exp::Config cfg;
};

struct us_ensemble {
    HessianEnsemble ens;
};

namespace {

thread_local std::string g_last_error;

us_status fail(us_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <class Fn>
us_status guarded(Fn&& fn) {
    try {
        g_last_error.clear();
        fn();
        return US_OK;
    } catch (const Error& e) {
        return fail(static_cast<us_status>(static_cast<int>(e.code())), e.what());
    } catch (const std::bad_alloc&) {
        return fail(US_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(US_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(US_ERR_INTERNAL, "unknown exception");
    }
}

void need(const void* p, const char* what) {
    if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

UnlearnConfig to_config(const us_ensemble* e, const us_unlearn_params* p) {
    need(e, "ensemble");
    need(p, "params");
    return {p->eta, p->alpha, p->batch, e->ens.n_retain(), e->ens.n_forget()};
}

const std::vector<exp::ParamDef>& params_of(const char* mode) {
    return mode ? exp::mode_params(exp::parse_mode(mode)) : exp::common_params();
}

us_ensemble* wrap(HessianEnsemble ens) { return new us_ensemble{std::move(ens)}; }

} // namespace

extern "C" {

const char* us_last_error(void) { return g_last_error.c_str(); }

const char* us_status_name(us_status s) {
    if (s == US_OK) return "OK";
    if (s == US_ERR_INTERNAL) return "Internal";
    if (s >= US_ERR_INVALID_ARGUMENT && s <= US_ERR_CONFIG) return error_code_name(static_cast<ErrorCode>(s));
    return "Unknown";
}

void us_string_free(char* s) { std::free(s); }

us_status us_config_new(us_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = new us_config;
    });
}

void us_config_free(us_config* cfg) { delete cfg; }

us_status us_config_set(us_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        need(value, "value");
        cfg->cfg.set(key, value);
    });
}

int us_config_has(const us_config* cfg, const char* key) { return cfg && key && cfg->cfg.has(key) ? 1 : 0; }

us_status us_config_parse(us_config* cfg, const char* text) {
    return guarded([&] {
        need(cfg, "config");
        need(text, "text");
        cfg->cfg.parse(text);
    });
}

us_status us_config_load(us_config* cfg, const char* path) {
    return guarded([&] {
        need(cfg, "config");
        need(path, "path");
        cfg->cfg.load(path);
    });
}

us_status us_config_echo(const us_config* cfg, char** out) {
    return guarded([&] {
        need(cfg, "config");
        need(out, "out");
        *out = dup(exp::echo(exp::resolve(cfg->cfg)));
    });
}

int us_mode_count(void) { return static_cast<int>(exp::all_modes().size()); }

const char* us_mode_name(int i) {
    if (i < 0 || i >= us_mode_count()) return nullptr;
    return exp::mode_name(exp::all_modes()[static_cast<size_t>(i)]);
}

int us_param_count(const char* mode) {
    try {
        return static_cast<int>(params_of(mode).size());
    } catch (...) {
        return -1;
    }
}

us_status us_param_info(const char* mode, int i, const char** key, const char** default_value, const char** help) {
    return guarded([&] {
        const auto& ps = params_of(mode);
        if (i < 0 || i >= static_cast<int>(ps.size())) throw Error(ErrorCode::InvalidArgument, "index out of range");
        const auto& p = ps[static_cast<size_t>(i)];
        if (key) *key = p.key.c_str();
        if (default_value) *default_value = p.def.c_str();
        if (help) *help = p.help.c_str();
    });
}

us_status us_help(char** out) {
    return guarded([&] {
        need(out, "out");
        *out = dup(exp::help_text());
    });
}

us_status us_run(const us_config* cfg, int* verify_passed) {
    return guarded([&] {
        need(cfg, "config");
        auto res = exp::run_and_write(exp::resolve(cfg->cfg));
        if (verify_passed) *verify_passed = res.verify_passed ? 1 : 0;
    });
}

us_status us_run_to_string(const us_config* cfg, char** out, int* verify_passed) {
    return guarded([&] {
        need(cfg, "config");
        need(out, "out");
        auto res = exp::run(exp::resolve(cfg->cfg));
        *out = dup(res.text);
        if (verify_passed) *verify_passed = res.verify_passed ? 1 : 0;
    });
}

us_status us_verify(int full, uint64_t seed, int workers, const int* criteria, int n_criteria, int* all_passed,
                    char** report) {
    return guarded([&] {
        verify::Options o;
        o.full = full != 0;
        o.seed = seed;
        o.workers = workers < 1 ? 1 : workers;
        if (criteria && n_criteria > 0) o.only.assign(criteria, criteria + n_criteria);
        std::ostringstream ss;
        bool ok = verify::run_all(o, ss);
        if (all_passed) *all_passed = ok ? 1 : 0;
        if (report) *report = dup(ss.str());
    });
}

us_status us_ensemble_parse(const char* text, us_ensemble** out) {
    return guarded([&] {
        need(text, "text");
        need(out, "out");
        *out = wrap(parse_ensemble(text));
    });
}

us_status us_ensemble_load(const char* path, us_ensemble** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = wrap(load_ensemble(path));
    });
}

us_status us_ensemble_from_dense(int d, int n_retain, int n_forget, const double* blocks, us_ensemble** out) {
    return guarded([&] {
        need(out, "out");
        if (d < 1 || n_retain < 0 || n_forget < 0) throw Error(ErrorCode::ShapeError, "bad ensemble sizes");
        if (n_retain + n_forget > 0) need(blocks, "blocks");
        std::vector<matker::SymMatrix> r, f;
        for (int i = 0; i < n_retain + n_forget; ++i) {
            matker::Matrix m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                blocks + static_cast<size_t>(i) * d * d, d, d);
            (i < n_retain ? r : f).emplace_back(m);
        }
        auto ens = HessianEnsemble::from_dense(std::move(r), std::move(f));
        ens.check_psd();
        *out = wrap(std::move(ens));
    });
}

us_status us_ensemble_from_factors(int d, int n_retain, int n_forget, const double* weights, const double* vectors,
                                   us_ensemble** out) {
    return guarded([&] {
        need(out, "out");
        if (d < 1 || n_retain < 0 || n_forget < 0) throw Error(ErrorCode::ShapeError, "bad ensemble sizes");
        if (n_retain + n_forget > 0) {
            need(weights, "weights");
            need(vectors, "vectors");
        }
        std::vector<matker::RankOneFactor> r, f;
        for (int i = 0; i < n_retain + n_forget; ++i) {
            matker::Vector v = Eigen::Map<const matker::Vector>(vectors + static_cast<size_t>(i) * d, d);
            (i < n_retain ? r : f).push_back({v, weights[i]});
        }
        *out = wrap(HessianEnsemble::from_factors(d, std::move(r), std::move(f)));
    });
}

us_status us_ensemble_q_construction(int n_retain, int n_forget, int q, int dim, us_ensemble** out) {
    return guarded([&] {
        need(out, "out");
        *out = wrap(build_q_construction({n_retain, n_forget, q, dim < 0 ? 0 : dim}));
    });
}

void us_ensemble_free(us_ensemble* ens) { delete ens; }

int us_ensemble_dim(const us_ensemble* ens) { return ens ? ens->ens.dim() : -1; }
int us_ensemble_n_retain(const us_ensemble* ens) { return ens ? ens->ens.n_retain() : -1; }
int us_ensemble_n_forget(const us_ensemble* ens) { return ens ? ens->ens.n_forget() : -1; }

us_status us_ensemble_format(const us_ensemble* ens, char** out) {
    return guarded([&] {
        need(ens, "ensemble");
        need(out, "out");
        *out = dup(format_ensemble(ens->ens));
    });
}

us_status us_ensemble_save(const us_ensemble* ens, const char* path) {
    return guarded([&] {
        need(ens, "ensemble");
        need(path, "path");
        save_ensemble(ens->ens, path);
    });
}

us_status us_coherence(const us_ensemble* ens, const us_unlearn_params* p, us_coherence_result* out) {
    return guarded([&] {
        need(out, "out");
        auto cfg = to_config(ens, p);
        auto coh = mix_coherence(ens->ens, cfg);
        *out = {coh.lambda_max_D, coh.lambda_max_S, coh.max_pair_lambda, coh.sigma};
    });
}

us_status us_stability(const us_ensemble* ens, const us_unlearn_params* p, us_form form, us_stability_report* out) {
    return guarded([&] {
        need(out, "out");
        auto f = form == US_FORM_PROOF ? ConvergenceForm::proof : ConvergenceForm::statement;
        auto cfg = to_config(ens, p);
        auto rep = stability_report(ens->ens, cfg, {}, f);
        us_classification c = US_INDETERMINATE;
        if (rep.classification == Classification::PredictDiverge) c = US_PREDICT_DIVERGE;
        if (rep.classification == Classification::ConvergencePossible) c = US_CONVERGENCE_POSSIBLE;
        *out = {rep.lambda_max_D, rep.sigma, rep.thr_div, rep.thr_conv_statement, rep.thr_conv_proof, c};
    });
}

us_status us_exact_second_moment(const us_ensemble* ens, const us_unlearn_params* p, int k_max, double* out) {
    return guarded([&] {
        need(out, "out");
        auto cfg = to_config(ens, p);
        auto tr = exact_second_moment(ens->ens, cfg, k_max);
        std::copy(tr.begin(), tr.end(), out);
    });
}

us_status us_run_trajectory(const us_ensemble* ens, const us_unlearn_params* p, int steps, double divergence_ratio,
                            uint64_t seed, double* norms, int* diverged) {
    return guarded([&] {
        need(norms, "norms");
        if (steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be >= 1");
        auto cfg = to_config(ens, p);
        auto tr = run_trajectory(ens->ens, cfg, {steps, divergence_ratio, false}, seed);
        std::copy(tr.norms.begin(), tr.norms.end(), norms);
        if (diverged) *diverged = tr.diverged ? 1 : 0;
    });
}

} // extern "C"
