#pragma once

#include <string>

#include "coherence.hpp"

namespace ustab {

// Dense:  "d n_r n_f" then n_r + n_f row-major d*d blocks (retain first).
// Rank-one: "RANK1 d n_r n_f" then one "weight v_1 .. v_d" line per member.
// Whitespace-separated decimals; lines starting with '#' are ignored.
HessianEnsemble parse_ensemble(const std::string& text);
HessianEnsemble load_ensemble(const std::string& path);

std::string format_ensemble(const HessianEnsemble& ens);
void save_ensemble(const HessianEnsemble& ens, const std::string& path);

} // namespace ustab
