#include "pdarts/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pdarts {

namespace {

struct EdgeChoice {
  int from;
  OpKind op;
  double score;
};

// Best eligible non-zero candidate of edge e; nullopt if there is none.
std::optional<EdgeChoice> best_on_edge(const CellArch& arch, int e) {
  const auto w = arch.weights(e);
  const auto& cands = arch.schema.candidates[static_cast<std::size_t>(e)];
  const auto& alpha = arch.alpha[static_cast<std::size_t>(e)];
  std::optional<EdgeChoice> best;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i] == OpKind::zero || std::isinf(alpha[i])) continue;
    // Candidates are sorted by index, so strict > keeps the lower index on ties.
    if (!best || w[i] > best->score) best = EdgeChoice{arch.schema.spec.edge(e).first, cands[i], w[i]};
  }
  return best;
}

}  // namespace

CellPicks derive_cell(const CellArch& arch) {
  arch.validate();
  const auto& spec = arch.schema.spec;
  CellPicks picks;
  for (int to = 2; to <= spec.nodes + 1; ++to) {
    std::vector<EdgeChoice> choices;
    for (int from = 0; from < to; ++from) {
      if (auto c = best_on_edge(arch, spec.edge_index(from, to))) choices.push_back(*c);
    }
    if (choices.size() < 2) {
      throw InvalidArgument("node " + std::to_string(to) + " has only " + std::to_string(choices.size()) +
                            " incoming edge(s) with a non-zero candidate; two are required");
    }
    std::stable_sort(choices.begin(), choices.end(),
                     [](const EdgeChoice& a, const EdgeChoice& b) { return a.score > b.score; });
    std::array<Pick, 2> node{Pick{choices[0].op, choices[0].from}, Pick{choices[1].op, choices[1].from}};
    picks.push_back(node);
  }
  return picks;
}

Genotype derive_genotype(const ArchSnapshot& arch) {
  Genotype g;
  g.normal = derive_cell(arch.normal);
  g.reduce = derive_cell(arch.reduce);
  for (int n = 2; n <= g.nodes() + 1; ++n) g.concat.push_back(n);
  return g;
}

int count_skips(const CellPicks& picks) {
  int n = 0;
  for (const auto& node : picks) {
    for (const auto& p : node) n += p.op == OpKind::skip_connect;
  }
  return n;
}

RefineResult refine_cell(const CellArch& arch, int max_skips) {
  if (max_skips < 0) throw InvalidArgument("skip limit must be non-negative, got " + std::to_string(max_skips));
  RefineResult r{derive_cell(arch), arch, 0};
  const auto& spec = arch.schema.spec;
  // Each round removes at least one skip candidate for good, so the number
  // of rounds is bounded by the number of edges.
  const int guard = spec.edge_count() + 1;
  while (count_skips(r.picks) > max_skips) {
    if (++r.iterations > guard) throw std::logic_error("skip refinement failed to terminate");
    struct SkipPick {
      int edge;
      std::size_t slot;
      double weight;
    };
    std::vector<SkipPick> skips;
    for (std::size_t k = 0; k < r.picks.size(); ++k) {
      for (const auto& p : r.picks[k]) {
        if (p.op != OpKind::skip_connect) continue;
        const int e = spec.edge_index(p.from, static_cast<int>(k) + 2);
        const auto& cands = r.arch.schema.candidates[static_cast<std::size_t>(e)];
        const auto slot = static_cast<std::size_t>(std::find(cands.begin(), cands.end(), OpKind::skip_connect) - cands.begin());
        skips.push_back({e, slot, r.arch.weights(e)[slot]});
      }
    }
    // Heaviest first; equal weights keep the earlier edge.
    std::stable_sort(skips.begin(), skips.end(), [](const SkipPick& a, const SkipPick& b) { return a.weight > b.weight; });
    for (std::size_t i = static_cast<std::size_t>(max_skips); i < skips.size(); ++i) {
      r.arch.alpha[static_cast<std::size_t>(skips[i].edge)][skips[i].slot] = -std::numeric_limits<double>::infinity();
    }
    r.picks = derive_cell(r.arch);
  }
  return r;
}

Genotype refine_skips(const ArchSnapshot& arch, const SkipLimits& limits) {
  Genotype g = derive_genotype(arch);
  if (limits.normal) g.normal = refine_cell(arch.normal, *limits.normal).picks;
  if (limits.reduce) g.reduce = refine_cell(arch.reduce, *limits.reduce).picks;
  return g;
}

std::map<int, int> connection_levels(const CellPicks& picks) {
  std::vector<int> level(picks.size() + 2, 0);
  std::map<int, int> hist;
  for (std::size_t k = 0; k < picks.size(); ++k) {
    int node_level = 0;
    for (const auto& p : picks[k]) {
      const int edge_level = 1 + level.at(static_cast<std::size_t>(p.from));
      ++hist[edge_level];
      node_level = std::max(node_level, edge_level);
    }
    level[k + 2] = node_level;
  }
  return hist;
}

std::string histogram_csv(const std::map<int, int>& hist) {
  std::ostringstream out;
  out << "level,count\n";
  for (const auto& [level, count] : hist) out << level << ',' << count << '\n';
  return out.str();
}

}  // namespace pdarts
