#include "ensemble_io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace ustab {

using matker::Matrix;
using matker::RankOneFactor;
using matker::SymMatrix;
using matker::Vector;

namespace {

class Tokens {
public:
    explicit Tokens(const std::string& text) {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            size_t start = line.find_first_not_of(" \t\r");
            if (start == std::string::npos || line[start] == '#') continue;
            std::istringstream words(line);
            std::string w;
            while (words >> w) toks_.push_back(w);
        }
    }

    bool done() const { return pos_ >= toks_.size(); }
    const std::string& peek() const { return toks_.at(pos_); }

    std::string next() {
        if (done()) throw Error(ErrorCode::ParseError, "unexpected end of ensemble data");
        return toks_[pos_++];
    }

    double number() {
        std::string t = next();
        errno = 0;
        char* end = nullptr;
        double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0' || errno == ERANGE) {
            throw Error(ErrorCode::ParseError, "bad number '" + t + "'");
        }
        return v;
    }

    int count(const char* what, int min_value) {
        double v = number();
        if (v != static_cast<double>(static_cast<long>(v)) || v < min_value || v > 1e7) {
            throw Error(ErrorCode::ParseError, std::string("bad ") + what);
        }
        return static_cast<int>(v);
    }

private:
    std::vector<std::string> toks_;
    size_t pos_ = 0;
};

} // namespace

HessianEnsemble parse_ensemble(const std::string& text) {
    Tokens tk(text);
    if (tk.done()) throw Error(ErrorCode::ParseError, "empty ensemble file");
    const bool rank_one = tk.peek() == "RANK1";
    if (rank_one) tk.next();
    const int d = tk.count("dimension", 1);
    const int nr = tk.count("n_r", 0);
    const int nf = tk.count("n_f", 0);
    if (nr + nf == 0) throw Error(ErrorCode::ParseError, "ensemble has no members");

    HessianEnsemble ens;
    if (rank_one) {
        std::vector<RankOneFactor> retain, forget;
        for (int i = 0; i < nr + nf; ++i) {
            RankOneFactor f;
            f.weight = tk.number();
            f.vec = Vector(d);
            for (int k = 0; k < d; ++k) f.vec(k) = tk.number();
            (i < nr ? retain : forget).push_back(std::move(f));
        }
        ens = HessianEnsemble::from_factors(d, std::move(retain), std::move(forget));
    } else {
        std::vector<SymMatrix> retain, forget;
        for (int i = 0; i < nr + nf; ++i) {
            Matrix m(d, d);
            for (int r = 0; r < d; ++r) {
                for (int c = 0; c < d; ++c) m(r, c) = tk.number();
            }
            (i < nr ? retain : forget).emplace_back(std::move(m));
        }
        ens = HessianEnsemble::from_dense(std::move(retain), std::move(forget));
    }
    if (!tk.done()) throw Error(ErrorCode::ParseError, "trailing data after ensemble: '" + tk.peek() + "'");
    ens.check_psd();
    return ens;
}

HessianEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ensemble(buf.str());
}

std::string format_ensemble(const HessianEnsemble& ens) {
    std::string out;
    char buf[64];
    auto num = [&](double v, char sep) {
        std::snprintf(buf, sizeof buf, "%.17g%c", v, sep);
        out += buf;
    };
    const int d = ens.dim();
    if (ens.rank_one()) {
        out += "RANK1 " + std::to_string(d) + " " + std::to_string(ens.n_retain()) + " " +
               std::to_string(ens.n_forget()) + "\n";
        for (SetKind s : {SetKind::Retain, SetKind::Forget}) {
            for (const auto& f : ens.factors(s)) {
                num(f.weight, d > 0 ? ' ' : '\n');
                for (int k = 0; k < d; ++k) num(f.vec(k), k + 1 < d ? ' ' : '\n');
            }
        }
        return out;
    }
    out += std::to_string(d) + " " + std::to_string(ens.n_retain()) + " " + std::to_string(ens.n_forget()) + "\n";
    for (SetKind s : {SetKind::Retain, SetKind::Forget}) {
        for (int i = 0; i < ens.size(s); ++i) {
            SymMatrix h = ens.dense(s, i);
            for (int r = 0; r < d; ++r) {
                for (int c = 0; c < d; ++c) num(h(r, c), c + 1 < d ? ' ' : '\n');
            }
        }
    }
    return out;
}

void save_ensemble(const HessianEnsemble& ens, const std::string& path) {
    std::string text = format_ensemble(ens);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

} // namespace ustab
